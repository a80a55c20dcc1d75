"""Pairwise hinge losses, weighted loss aggregates, AUC and APD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreTable:
    pos: np.ndarray  # f(x+_i), length n
    neg: np.ndarray  # f(x-_j), length m

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64).ravel()
        self.neg = np.asarray(self.neg, dtype=np.float64).ravel()

    @property
    def n(self) -> int:
        return self.pos.size

    @property
    def m(self) -> int:
        return self.neg.size


@dataclass
class LossAggregates:
    l_plus: np.ndarray  # (1/m) sum_j u_j xi_ij
    l_minus: np.ndarray  # (1/n) sum_i v_i xi_ij
    P: float  # mean(v)
    Q: float  # mean(u)


def pairwise_hinge(s_pos, s_neg):
    """max(1 - s_pos + s_neg, 0), elementwise."""
    return np.maximum(1.0 - np.asarray(s_pos) + np.asarray(s_neg), 0.0)


def _hinge_sums(x: np.ndarray, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """For every y_k return sum_a w_a * max(x_a + y_k, 0).

    The active set {a : x_a > -y_k} is located by binary search in sorted x.
    The sum is assembled as (x_b + y_k) * W_b + G_b where b is the first
    active element, W_b the suffix weight sum and G_b = sum_{a>=b} w_a (x_a - x_b).
    G is built backwards from non-negative increments, so there is no
    cancellation beyond the single rounding of x_b + y_k that a direct
    evaluation also incurs.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = w[order]
    k = xs.size
    W = np.zeros(k + 1)
    G = np.zeros(k + 1)
    W[:k] = np.cumsum(ws[::-1])[::-1]
    # G[b] = G[b+1] + W[b+1] * (xs[b+1] - xs[b]), every increment >= 0
    G[:k - 1] = np.cumsum((W[1:k] * np.diff(xs))[::-1])[::-1]
    first = np.searchsorted(xs, -y, side="right")
    out = np.zeros(y.size)
    act = first < k
    b = first[act]
    out[act] = (xs[b] + y[act]) * W[b] + G[b]
    return out


def weighted_aggregates(scores: ScoreTable, w) -> LossAggregates:
    """Per-sample weighted hinge averages l+ and l- in O((n + m) log(n + m)).

    ``w`` is anything with ``v`` and ``u`` arrays (a ``WeightState``).
    """
    v = np.asarray(w.v, dtype=np.float64)
    u = np.asarray(w.u, dtype=np.float64)
    if v.shape != (scores.n,) or u.shape != (scores.m,):
        raise ValueError(f"weights {v.shape}/{u.shape} do not match scores ({scores.n},)/({scores.m},)")
    return LossAggregates(
        l_plus=l_plus(scores, u),
        l_minus=l_minus(scores, v),
        P=float(np.mean(v)),
        Q=float(np.mean(u)),
    )


def l_plus(scores: ScoreTable, u: np.ndarray) -> np.ndarray:
    # xi_ij = (1 - s+_i) + s-_j; the active test x_a > -y_k matches the sign of that sum
    t = 1.0 - scores.pos
    return _hinge_sums(scores.neg, np.asarray(u, dtype=np.float64), t) / scores.m


def l_minus(scores: ScoreTable, v: np.ndarray) -> np.ndarray:
    t = 1.0 - scores.pos
    return _hinge_sums(t, np.asarray(v, dtype=np.float64), scores.neg) / scores.n


def auc(scores: ScoreTable, tie_policy: str = "half") -> float:
    """Empirical AUC = 1 - pairwise misranking risk.

    Ties count as half a misranking under ``"half"`` and as a full one under
    ``"paper_strict"`` (the indicator f(x+) <= f(x-)).
    """
    if scores.n == 0 or scores.m == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    if tie_policy not in ("half", "paper_strict"):
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    neg = np.sort(scores.neg)
    below = np.searchsorted(neg, scores.pos, side="left")
    wins = int(below.sum())
    if tie_policy == "half":
        ties = int((np.searchsorted(neg, scores.pos, side="right") - below).sum())
        return (wins + 0.5 * ties) / (scores.n * scores.m)
    return wins / (scores.n * scores.m)


def apd(w) -> float:
    """Absolute proportion difference |mean(v) - mean(u)|."""
    return abs(float(np.mean(w.v)) - float(np.mean(w.u)))
