"""Balanced self-paced weight updates.

With the model fixed, the weights of one class solve

    min_{v in [0,1]^n}  (1/n) sum_i v_i l+_i - lam * mean(v) + mu * (mean(v) - Q)^2

whose global minimizer is available in closed form: sort the losses, and
the entry at sorted position p (1-based) is

    clip(n * (Q - (l+_p - lam) / (2 mu)) - (p - 1), 0, 1).

The shift by p - 1 makes the sorted solution a run of ones, at most one
fractional entry, then zeros.  ``inner_bcd`` alternates the v and u updates
until the pair stops moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pairloss import LossAggregates, ScoreTable, l_minus, l_plus


@dataclass
class WeightState:
    v: np.ndarray
    u: np.ndarray

    @classmethod
    def ones(cls, n: int, m: int) -> "WeightState":
        return cls(np.ones(n), np.ones(m))

    def copy(self) -> "WeightState":
        return WeightState(self.v.copy(), self.u.copy())


@dataclass(frozen=True)
class PaceParams:
    lam: float
    mu: float


def _solve_block(losses: np.ndarray, other_mean: float, lam: float, mu: float) -> np.ndarray:
    if mu <= 0:
        raise ValueError(f"mu must be > 0 for the balanced solver, got {mu}")
    losses = np.asarray(losses, dtype=np.float64)
    k = losses.size
    order = np.argsort(losses, kind="stable")  # ties: ascending original index
    pos = np.arange(k, dtype=np.float64)  # p - 1
    w_sorted = np.clip(k * (other_mean - (losses[order] - lam) / (2.0 * mu)) - pos, 0.0, 1.0)
    out = np.empty(k)
    out[order] = w_sorted
    return out


def solve_v(l_plus: np.ndarray, Q: float, p: PaceParams) -> np.ndarray:
    """Optimal positive-sample weights given the negative weights' mean Q."""
    return _solve_block(l_plus, Q, p.lam, p.mu)


def solve_u(l_minus: np.ndarray, P: float, p: PaceParams) -> np.ndarray:
    """Optimal negative-sample weights given the positive weights' mean P."""
    return _solve_block(l_minus, P, p.lam, p.mu)


def solve_hard(losses: np.ndarray, lam: float) -> np.ndarray:
    """Plain self-paced selection (mu = 0): weight 1 iff loss < lam."""
    return (np.asarray(losses) < lam).astype(np.float64)


def _K(v: np.ndarray, u: np.ndarray, lp: np.ndarray, p: PaceParams) -> float:
    P = float(np.mean(v))
    Q = float(np.mean(u))
    pair = float(np.dot(v, lp)) / v.size
    return pair - p.lam * (P + Q) + p.mu * (P - Q) ** 2


def objective_K(w: WeightState, agg: LossAggregates, p: PaceParams) -> float:
    """Weight sub-objective with the model term dropped.

    ``agg.l_plus`` must be computed with ``w.u``; the pairwise double sum is
    then (1/n) v . l+.
    """
    return _K(np.asarray(w.v, dtype=np.float64), np.asarray(w.u, dtype=np.float64), agg.l_plus, p)


def kkt_residual(scores: ScoreTable, w: WeightState, p: PaceParams) -> float:
    """Max projected-gradient violation of K over the box, gradients scaled by
    the class sizes (n dK/dv_i = l+_i - lam + 2 mu (P - Q))."""
    P = float(np.mean(w.v))
    Q = float(np.mean(w.u))
    gv = l_plus(scores, w.u) - p.lam + 2.0 * p.mu * (P - Q)
    gu = l_minus(scores, w.v) - p.lam - 2.0 * p.mu * (P - Q)
    rv = np.abs(w.v - np.clip(w.v - gv, 0.0, 1.0))
    ru = np.abs(w.u - np.clip(w.u - gu, 0.0, 1.0))
    return float(max(rv.max(initial=0.0), ru.max(initial=0.0)))


class KTrace(list):
    """K values of an inner run; ``converged`` is False when max_iter ran out."""

    converged: bool = False


def _aitken_u(hist: list[np.ndarray]) -> np.ndarray | None:
    """Extrapolate the lone moving entry of u across three iterates.

    Once the 0/1 pattern has settled, a full v-then-u sweep acts on the single
    fractional u entry as an affine contraction, so Aitken's delta-squared
    step lands on its fixed point.  Returns None when that regime is not
    recognisable.
    """
    u0, u1, u2 = hist
    d0 = u1 - u0
    d1 = u2 - u1
    moving = np.flatnonzero((d0 != 0) | (d1 != 0))
    if moving.size != 1:
        return None
    q = moving[0]
    if d0[q] == 0:
        return None
    r = d1[q] / d0[q]
    if not 0.0 < r < 1.0:
        return None
    out = u2.copy()
    out[q] = min(1.0, max(0.0, u2[q] + d1[q] * r / (1.0 - r)))
    return out


def _sweep(scores: ScoreTable, u: np.ndarray, lp: np.ndarray, p: PaceParams):
    if p.mu > 0:
        v_new = solve_v(lp, float(np.mean(u)), p)
    else:
        v_new = solve_hard(lp, p.lam)
    lm = l_minus(scores, v_new)
    if p.mu > 0:
        u_new = solve_u(lm, float(np.mean(v_new)), p)
    else:
        u_new = solve_hard(lm, p.lam)
    return v_new, u_new


def inner_bcd(
    scores: ScoreTable,
    w0: WeightState,
    p: PaceParams,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> tuple[WeightState, KTrace]:
    """Alternate the v and u closed forms until max |change| <= tol.

    Returns the final weights and K after every half-step (the first entry is
    K at ``w0``).  Each half-step is a global minimization over its block, so
    K cannot go up; a candidate whose rounded K exceeds the current value is
    rejected, which keeps the trace monotone in floating point as well.
    Slow linear tails are shortcut by an extrapolated restart whose result
    is again a pair of closed-form solutions and is kept only if K does not
    increase.  With ``mu == 0`` the hard-threshold rule replaces the closed
    forms.  ``trace.converged`` tells whether the tolerance was met.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if p.mu < 0:
        raise ValueError(f"mu must be >= 0, got {p.mu}")
    v = np.asarray(w0.v, dtype=np.float64).copy()
    u = np.asarray(w0.u, dtype=np.float64).copy()
    lp = l_plus(scores, u)
    K = _K(v, u, lp, p)
    trace = KTrace([K])
    u_hist = [u]
    for _ in range(max_iter):
        if p.mu > 0:
            v_new = solve_v(lp, float(np.mean(u)), p)
        else:
            v_new = solve_hard(lp, p.lam)
        K_v = _K(v_new, u, lp, p)
        if K_v > K:
            v_new, K_v = v, K
        lm = l_minus(scores, v_new)
        if p.mu > 0:
            u_new = solve_u(lm, float(np.mean(v_new)), p)
        else:
            u_new = solve_hard(lm, p.lam)
        lp_new = l_plus(scores, u_new)
        K_u = _K(v_new, u_new, lp_new, p)
        if K_u > K_v:
            u_new, lp_new, K_u = u, lp, K_v
        trace += [K_v, K_u]
        delta = max(np.max(np.abs(v_new - v), initial=0.0), np.max(np.abs(u_new - u), initial=0.0))
        v, u, lp, K = v_new, u_new, lp_new, K_u
        if delta <= tol:
            trace.converged = True
            break

        u_hist = (u_hist + [u])[-3:]
        if len(u_hist) == 3:
            u_x = _aitken_u(u_hist)
            if u_x is not None:
                v_x, u_xx = _sweep(scores, u_x, l_plus(scores, u_x), p)
                lp_x = l_plus(scores, u_xx)
                K_x = _K(v_x, u_xx, lp_x, p)
                if K_x <= K:
                    trace.append(K_x)
                    v, u, lp, K = v_x, u_xx, lp_x, K_x
                u_hist = [u]
    return WeightState(v, u), trace
