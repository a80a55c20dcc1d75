"""Slow, independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np


def naive_aggregates(pos, neg, v, u):
    """l+_i = (1/m) sum_j u_j xi_ij and l-_j = (1/n) sum_i v_i xi_ij by double loop."""
    n, m = len(pos), len(neg)
    lp = np.zeros(n)
    lm = np.zeros(m)
    for i in range(n):
        for j in range(m):
            xi = max(1.0 - pos[i] + neg[j], 0.0)
            lp[i] += u[j] * xi
            lm[j] += v[i] * xi
    return lp / m, lm / n


def brute_auc(pos, neg, policy="half"):
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b and policy == "half":
                total += 0.5
    return total / (len(pos) * len(neg))


def block_objective(w, losses, other_mean, lam, mu):
    """Weight sub-objective of one class with the other class fixed:
    (1/k) w.l - lam (mean w + other) + mu (mean w - other)^2."""
    k = len(losses)
    P = np.sum(w) / k
    return float(np.dot(w, losses)) / k - lam * (P + other_mean) + mu * (P - other_mean) ** 2


def structured_oracle(losses, other_mean, lam, mu):
    """Minimize the block objective over weights of the form (in ascending-loss
    order, ties by index) ones, one fractional value t, zeros.

    Every split k is tried; for each the objective is a convex quadratic in t
    whose minimizer is clipped to [0, 1].
    """
    losses = np.asarray(losses, dtype=np.float64)
    k = losses.size
    order = np.argsort(losses, kind="stable")
    ls = losses[order]
    best, best_w = np.inf, None
    for split in range(k + 1):
        w = np.zeros(k)
        w[:split] = 1.0
        if split < k:
            # d/dt: (l_split - lam)/k + 2 mu ((split + t)/k - Q)/k = 0
            t = k * other_mean - split - k * (ls[split] - lam) / (2.0 * mu)
            w[split] = min(1.0, max(0.0, t))
        val = block_objective(w, ls, other_mean, lam, mu)
        if val < best - 1e-15:
            best, best_w = val, w
    out = np.empty(k)
    out[order] = best_w
    return out, best


def full_K(pos, neg, v, u, lam, mu):
    """K by explicit double sum."""
    n, m = len(pos), len(neg)
    s = 0.0
    for i in range(n):
        for j in range(m):
            s += v[i] * u[j] * max(1.0 - pos[i] + neg[j], 0.0)
    P, Q = np.mean(v), np.mean(u)
    return s / (n * m) - lam * (P + Q) + mu * (P - Q) ** 2


def oracle_alternation(pos, neg, u0, lam, mu, iters=300):
    """Alternate the structured oracle on v and u from a given start."""
    u = np.asarray(u0, dtype=np.float64)
    v = np.ones(len(pos))
    for _ in range(iters):
        lp, _ = naive_aggregates(pos, neg, v, u)
        v_new, _ = structured_oracle(lp, np.mean(u), lam, mu)
        _, lm = naive_aggregates(pos, neg, v_new, u)
        u_new, _ = structured_oracle(lm, np.mean(v_new), lam, mu)
        done = max(np.abs(v_new - v).max(), np.abs(u_new - u).max()) < 1e-12
        v, u = v_new, u_new
        if done:
            break
    return v, u, full_K(pos, neg, v, u, lam, mu)


def literal_tsgd(Xp, Xn, vp, un, cfg, rffmodel):
    """Kernel training exactly as the algorithm is stated: every iteration
    re-predicts the sampled points from scratch, regenerates the frequencies
    from their seed, appends the new coefficient and shrinks the old ones."""
    state = rffmodel.RffModelState(cfg, Xp.shape[1], cache_omegas=False)
    alphas = []
    for i in range(1, cfg.T + 1):
        rng = np.random.default_rng([cfg.master_seed, i, 1])
        ip = rng.integers(0, Xp.shape[0], cfg.pi)
        jn = rng.integers(0, Xn.shape[0], cfg.pi)
        xp, xn = Xp[ip], Xn[jn]
        fp = rffmodel.predict(xp, state)
        fn = rffmodel.predict(xn, state)
        om = rffmodel.sample_omega(cfg.master_seed, i, cfg.D, cfg.sigma, Xp.shape[1])
        grad = np.zeros(2 * cfg.D)
        for j in range(cfg.pi):
            if 1.0 - fp[j] + fn[j] > 0:
                grad += vp[ip[j]] * un[jn[j]] * (rffmodel.phi(xn[j], om) - rffmodel.phi(xp[j], om))
        eta = cfg.eta(i)
        alphas = [(1.0 - eta * cfg.tau) * a for a in alphas]
        alphas.append(-(eta / cfg.pi) * grad)
        state = rffmodel.RffModelState(cfg, Xp.shape[1], np.array(alphas), cache_omegas=False)
    return state


def flat_params(state):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(state.weights, state.biases)])


def with_params(state, theta):
    out, k = state.copy(), 0
    for i, (W, b) in enumerate(zip(state.weights, state.biases)):
        out.weights[i] = theta[k:k + W.size].reshape(W.shape)
        k += W.size
        out.biases[i] = theta[k:k + b.size]
        k += b.size
    return out


def fd_pair_gradient(state, xp, xn, forward, h=1e-5):
    """Central differences of the pair hinge argument 1 - f(x+) + f(x-)
    with respect to every network parameter, in flat_params order."""
    theta = flat_params(state)
    xi = lambda th: 1.0 - forward(xp, with_params(state, th)) + forward(xn, with_params(state, th))  # noqa: E731
    fd = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        fd[k] = (xi(theta + e) - xi(theta - e)) / (2 * h)
    return fd


def fd_probes(count, sizes, init_mlp, forward, forward_cache, seed=0, gap=1e-3):
    """Random (state, x+, x-) triples whose pre-activations are all at least
    ``gap`` away from the ReLU kink and whose hinge is active by ``gap``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        st = init_mlp(sizes, seed=int(rng.integers(1 << 30)))
        st.biases = [rng.standard_normal(b.size) * 0.3 for b in st.biases]
        xp, xn = rng.standard_normal(sizes[0]), rng.standard_normal(sizes[0])
        pre = forward_cache(np.vstack([xp, xn]), st)[1][:-1]
        if min(np.abs(z).min() for z in pre) < gap:
            continue
        if 1.0 - forward(xp, st) + forward(xn, st) < gap:
            continue
        out.append((st, xp, xn))
    return out
