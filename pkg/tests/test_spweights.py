import numpy as np
import pytest
from oracles import block_objective, full_K, oracle_alternation, structured_oracle

from bspauc.pairloss import ScoreTable, weighted_aggregates
from bspauc.spweights import (
    PaceParams,
    WeightState,
    inner_bcd,
    kkt_residual,
    objective_K,
    solve_hard,
    solve_u,
    solve_v,
)


def test_solve_v_examples():
    np.testing.assert_allclose(solve_v(np.array([1.5]), 0.5, PaceParams(1.0, 1.0)), [0.25])
    np.testing.assert_array_equal(solve_v(np.array([0.0, 0.0]), 1.0, PaceParams(1.0, 0.5)), [1.0, 1.0])
    l = np.array([0.2, 0.9, 1.4])
    want, _ = structured_oracle(l, 0.6, 1.0, 0.8)
    np.testing.assert_allclose(solve_v(l, 0.6, PaceParams(1.0, 0.8)), want, atol=1e-6)


def test_solve_u_examples():
    np.testing.assert_allclose(solve_u(np.array([1.5]), 0.5, PaceParams(1.0, 1.0)), [0.25])
    p = PaceParams(0.4, 0.3)
    P = 0.7
    l = np.full(5, p.lam + 2 * p.mu * P) + np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(solve_u(l, P, p), np.zeros(5))
    rng = np.random.default_rng(6)
    l = rng.random(6) * 2
    want, _ = structured_oracle(l, 0.4, 0.9, 0.35)
    np.testing.assert_allclose(solve_u(l, 0.4, PaceParams(0.9, 0.35)), want, atol=1e-6)


def test_mu_must_be_positive():
    with pytest.raises(ValueError):
        solve_v(np.ones(3), 0.5, PaceParams(1.0, 0.0))
    with pytest.raises(ValueError):
        inner_bcd(ScoreTable([0.0], [0.0]), WeightState.ones(1, 1), PaceParams(1.0, -1.0))


def _random_block(rng):
    k = int(rng.integers(1, 9))
    losses = rng.random(k) * rng.choice([0.5, 2.0, 5.0])
    if rng.random() < 0.3:
        losses = np.round(losses, 1)  # ties
    return losses, float(rng.random()), PaceParams(float(rng.random() * 2 + 1e-3), float(rng.random() * 3 + 1e-3))


def _structure_ok(w, losses):
    order = np.argsort(losses, kind="stable")
    ws = w[order]
    frac = np.sum((ws > 1e-9) & (ws < 1 - 1e-9))
    return frac <= 1 and np.all(np.diff(ws) <= 0) and np.all((w >= 0) & (w <= 1))


def test_branch_conditions_post_hoc():
    # v at sorted position p is 1 iff l_p <= lam - 2 mu (p/n - Q), 0 iff l_p >= lam - 2 mu ((p-1)/n - Q)
    rng = np.random.default_rng(11)
    for _ in range(300):
        losses, Q, p = _random_block(rng)
        n = losses.size
        v = solve_v(losses, Q, p)
        order = np.argsort(losses, kind="stable")
        for pos, i in enumerate(order, start=1):
            hi = p.lam - 2 * p.mu * (pos / n - Q)
            lo = p.lam - 2 * p.mu * ((pos - 1) / n - Q)
            if losses[i] < hi - 1e-12:
                assert v[i] == 1.0
            elif losses[i] > lo + 1e-12:
                assert v[i] == 0.0
            else:
                assert v[i] == pytest.approx(n * (Q - (losses[i] - p.lam) / (2 * p.mu)) - (pos - 1), abs=1e-12)


def test_solve_v_is_global_block_minimizer():
    rng = np.random.default_rng(12)
    for _ in range(20):
        losses, Q, p = _random_block(rng)
        v = solve_v(losses, Q, p)
        best = block_objective(v, losses, Q, p.lam, p.mu)
        _, oracle_val = structured_oracle(losses, Q, p.lam, p.mu)
        assert best <= oracle_val + 1e-12
        others = rng.random((500, losses.size))
        vals = [block_objective(w, losses, Q, p.lam, p.mu) for w in others]
        assert best <= min(vals) + 1e-12


def test_monotone_in_lambda():
    rng = np.random.default_rng(13)
    for _ in range(200):
        losses, Q, p = _random_block(rng)
        lam2 = p.lam + rng.random()
        v1 = solve_v(losses, Q, p)
        v2 = solve_v(losses, Q, PaceParams(lam2, p.mu))
        assert np.all(v2 >= v1 - 1e-12)


def test_solve_hard():
    assert solve_hard(np.array([0.1, 0.5, 0.9]), 0.5).tolist() == [1.0, 0.0, 0.0]


def test_objective_K_examples():
    st = ScoreTable([5.0, 6.0], [0.0, 1.0, 2.0])
    p = PaceParams(0.7, 0.4)
    w = WeightState.ones(2, 3)
    assert objective_K(w, weighted_aggregates(st, w), p) == pytest.approx(-2 * 0.7)
    w = WeightState(np.zeros(2), np.zeros(3))
    assert objective_K(w, weighted_aggregates(st, w), p) == 0.0


def test_objective_K_matches_double_sum():
    rng = np.random.default_rng(4)
    pos, neg = rng.standard_normal(5), rng.standard_normal(7)
    w = WeightState(rng.random(5), rng.random(7))
    p = PaceParams(0.6, 0.9)
    K = objective_K(w, weighted_aggregates(ScoreTable(pos, neg), w), p)
    assert K == pytest.approx(full_K(pos, neg, w.v, w.u, p.lam, p.mu), rel=1e-12)


def test_inner_bcd_large_lambda_selects_everything():
    st = ScoreTable([0.1, -0.3, 0.4], [0.2, 0.0])
    p = PaceParams(10.0, 0.5)
    w, trace = inner_bcd(st, WeightState(np.zeros(3), np.zeros(2)), p)
    assert w.v.tolist() == [1.0, 1.0, 1.0] and w.u.tolist() == [1.0, 1.0]
    assert trace.converged
    assert len(trace) <= 5  # one sweep to get there, one to confirm


def _random_instance(rng):
    n, m = rng.integers(1, 9, size=2)
    st = ScoreTable(rng.standard_normal(n) * rng.random() * 2, rng.standard_normal(m) * rng.random() * 2)
    lam_inf = float(rng.random() * 2 + 0.05)
    p = PaceParams(float(lam_inf * rng.random() + 1e-3), float(lam_inf * rng.choice([0.01, 0.1, 1.0, 3.0])))
    return st, p, lam_inf


def test_inner_bcd_monotone_stationary_and_bounded():
    rng = np.random.default_rng(21)
    for _ in range(300):
        st, p, lam_inf = _random_instance(rng)
        w0 = WeightState(rng.random(st.n), rng.random(st.m)) if rng.random() < 0.5 else WeightState.ones(st.n, st.m)
        w, trace = inner_bcd(st, w0, p)
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert trace.converged
        assert kkt_residual(st, w, p) <= 1e-6
        assert min(trace) >= -2 * lam_inf
        assert _structure_ok(w.v, weighted_aggregates(st, w).l_plus)
        # one more sweep leaves the point in place
        w2, _ = inner_bcd(st, w, p, max_iter=1)
        assert np.max(np.abs(w2.v - w.v)) <= 1e-6 and np.max(np.abs(w2.u - w.u)) <= 1e-6


def test_inner_bcd_hard_threshold_path():
    st = ScoreTable([1.0, 0.0, -2.0], [0.0, 0.5])
    w, trace = inner_bcd(st, WeightState.ones(3, 2), PaceParams(1.2, 0.0))
    assert set(np.unique(w.v)) <= {0.0, 1.0} and set(np.unique(w.u)) <= {0.0, 1.0}
    assert all(b <= a for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("seed", range(8))
def test_inner_bcd_reaches_best_multistart_oracle_value(seed):
    rng = np.random.default_rng(100 + seed)
    pos, neg = rng.standard_normal(4), rng.standard_normal(4)
    p = PaceParams(float(rng.random() + 0.1), float(rng.random() + 0.1))
    w, _ = inner_bcd(ScoreTable(pos, neg), WeightState.ones(4, 4), p)
    K = full_K(pos, neg, w.v, w.u, p.lam, p.mu)
    starts = [np.ones(4)] + [rng.random(4) for _ in range(19)]
    best = min(oracle_alternation(pos, neg, u0, p.lam, p.mu)[2] for u0 in starts)
    assert K <= best + 1e-6


def test_max_iter_exhaustion_flag():
    rng = np.random.default_rng(3)
    for _ in range(50):
        st, p, _ = _random_instance(rng)
        _, trace = inner_bcd(st, WeightState(np.zeros(st.n), np.zeros(st.m)), p, max_iter=1)
        full, full_trace = inner_bcd(st, WeightState(np.zeros(st.n), np.zeros(st.m)), p)
        assert full_trace.converged
        if len(full_trace) > 3:
            assert not trace.converged
