"""Gaussian-kernel random Fourier features trained by triply stochastic
functional gradient descent.

The model is f(x) = sum_i alpha_i . phi_{omega_i}(x).  The frequencies
omega_i of iteration i are never stored: they are regenerated from a
counter-based generator keyed on (master_seed, i), so a model is just its
config plus the coefficient blocks alpha_i.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

_MASK64 = (1 << 64) - 1
# keep at most this many floats per temporary (rows x features) block
_BLOCK_FLOATS = 1 << 21
# omega cache budget (floats); beyond it frequencies are regenerated on demand
_CACHE_FLOATS = 1 << 25


@dataclass(frozen=True)
class RffConfig:
    D: int = 64  # frequencies drawn per iteration
    sigma: float = 1.0
    tau: float = 1e-4
    eta0: float = 1.0
    eta_schedule: str = "inverse"  # eta0 / (1 + eta0 * tau * i), or "constant"
    pi: int = 16  # pairs per iteration
    T: int = 200
    master_seed: int = 0

    def __post_init__(self):
        if self.D < 1 or self.pi < 1 or self.T < 0:
            raise ValueError("D and pi must be >= 1, T >= 0")
        if self.sigma <= 0 or self.tau < 0:
            raise ValueError("sigma must be > 0 and tau >= 0")
        if self.eta_schedule not in ("inverse", "constant"):
            raise ValueError(f"unknown eta_schedule {self.eta_schedule!r}")

    def eta(self, i: int) -> float:
        if self.eta_schedule == "constant":
            return self.eta0
        return self.eta0 / (1.0 + self.eta0 * self.tau * i)


def sample_omega(master_seed: int, iteration_seed: int, D: int, sigma: float, dim: int) -> np.ndarray:
    """D frequency vectors (rows) from N(0, sigma^-2 I), keyed on (master_seed, i)."""
    key = ((iteration_seed & _MASK64) << 64) | (master_seed & _MASK64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((D, dim)) / sigma


def phi(X, omegas: np.ndarray) -> np.ndarray:
    """sqrt(1/D) [cos(omega_1 x) .. cos(omega_D x), sin(omega_1 x) .. sin(omega_D x)].

    ``X`` is one sample (1-D) or a matrix of rows, dense or scipy sparse.
    """
    single = isinstance(X, np.ndarray) and X.ndim == 1
    Z = np.asarray(X @ omegas.T)
    D = omegas.shape[0]
    out = np.concatenate([np.cos(Z), np.sin(Z)], axis=-1) * math.sqrt(1.0 / D)
    return out if not single else out.reshape(-1)


def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return math.exp(-float(d @ d) / (2.0 * sigma * sigma))


class RffModelState:
    """Coefficient sequence {alpha_i} plus the config that regenerates omega_i."""

    backend = "rff"

    def __init__(self, config: RffConfig, dim: int, alphas: np.ndarray | None = None, cache_omegas: bool = True):
        self.config = config
        self.dim = int(dim)
        width = 2 * config.D
        a = np.zeros((0, width)) if alphas is None else np.asarray(alphas, dtype=np.float64).reshape(-1, width)
        self._buf = np.zeros((max(16, a.shape[0]), width))
        self._buf[: a.shape[0]] = a
        self.t = a.shape[0]
        self.cache_omegas = cache_omegas
        self._omegas: list[np.ndarray] = []

    @property
    def alphas(self) -> np.ndarray:
        return self._buf[: self.t]

    @property
    def tau(self) -> float:
        return self.config.tau

    def omega(self, i: int) -> np.ndarray:
        """Frequencies of iteration ``i`` (1-based)."""
        per = self.config.D * self.dim
        if not self.cache_omegas or i * per > _CACHE_FLOATS:
            return sample_omega(self.config.master_seed, i, self.config.D, self.config.sigma, self.dim)
        while len(self._omegas) < i:
            k = len(self._omegas) + 1
            self._omegas.append(sample_omega(self.config.master_seed, k, self.config.D, self.config.sigma, self.dim))
        return self._omegas[i - 1]

    def _append(self, alpha: np.ndarray) -> None:
        if self.t == self._buf.shape[0]:
            self._buf = np.concatenate([self._buf, np.zeros_like(self._buf)])
        self._buf[self.t] = alpha
        self.t += 1

    def predict(self, X) -> np.ndarray:
        return predict(X, self)

    def penalty(self) -> float:
        """0.5 * sum_i ||alpha_i||^2."""
        return 0.5 * float(np.sum(self.alphas * self.alphas))

    def copy(self) -> "RffModelState":
        new = RffModelState(self.config, self.dim, self.alphas.copy(), self.cache_omegas)
        new._omegas = list(self._omegas)
        return new

    def train(self, Xp, Xn, vp, un, T: int | None = None) -> "RffModelState":
        cfg = self.config if T is None else _replace(self.config, T=T)
        return tsgd_train(Xp, Xn, vp, un, cfg, self)

    def to_dict(self) -> dict:
        return {
            "backend": "rff",
            "dim": self.dim,
            "config": asdict(self.config),
            "alphas": self.alphas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RffModelState":
        cfg = RffConfig(**d["config"])
        alphas = np.asarray(d["alphas"], dtype=np.float64).reshape(-1, 2 * cfg.D)
        return cls(cfg, d["dim"], alphas)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def _replace(cfg: RffConfig, **kw) -> RffConfig:
    return RffConfig(**{**asdict(cfg), **kw})


def predict(X, state: RffModelState) -> np.ndarray:
    """f(x) = sum_i alpha_i . phi_{omega_i}(x), omegas regenerated from their seeds.

    Iterations are processed in fixed-size blocks that depend only on the
    number of rows and D, so repeated calls on the same rows are bit-identical
    whether or not the omegas were cached.
    """
    single = isinstance(X, np.ndarray) and X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    rows = X.shape[0]
    f = np.zeros(rows)
    D = state.config.D
    per_block = max(1, _BLOCK_FLOATS // max(1, rows * D))
    scale = math.sqrt(1.0 / D)
    for start in range(0, state.t, per_block):
        stop = min(state.t, start + per_block)
        W = np.concatenate([state.omega(i + 1) for i in range(start, stop)])  # ((stop-start)*D, dim)
        Z = np.asarray(X @ W.T).reshape(rows, stop - start, D)
        A = state.alphas[start:stop]
        f += (np.einsum("rkd,kd->r", np.cos(Z), A[:, :D]) + np.einsum("rkd,kd->r", np.sin(Z), A[:, D:])) * scale
    return float(f[0]) if single else f


def _stack(A, B):
    if sp.issparse(A) or sp.issparse(B):
        return sp.vstack([sp.csr_matrix(A), sp.csr_matrix(B)], format="csr")
    return np.vstack([A, B])


def tsgd_train(Xp, Xn, vp, un, cfg: RffConfig, warm: RffModelState | None = None) -> RffModelState:
    """Run ``cfg.T`` iterations of weighted pairwise-hinge TSGD.

    ``Xp``/``Xn`` hold the selected positive / negative samples (rows) with
    weights ``vp``/``un``.  Each iteration draws ``cfg.pi`` pairs uniformly
    with replacement, appends one coefficient block for fresh frequencies and
    shrinks all earlier blocks by (1 - eta_i tau).  ``warm`` is not modified.
    """
    if Xp.shape[0] == 0:
        raise ValueError("no selected positive samples to train on")
    if Xn.shape[0] == 0:
        raise ValueError("no selected negative samples to train on")
    X = _stack(Xp, Xn)
    n = Xp.shape[0]
    state = _start_state(cfg, X.shape[1], warm)
    f = predict(X, state)
    train_rows(X, f, np.arange(n), np.arange(n, X.shape[0]), vp, un, cfg, state)
    return state


def _start_state(cfg: RffConfig, dim: int, warm: RffModelState | None) -> RffModelState:
    if warm is None:
        return RffModelState(cfg, dim)
    old = warm.config
    if (old.D, old.sigma, old.master_seed) != (cfg.D, cfg.sigma, cfg.master_seed):
        raise ValueError("warm start must share D, sigma and master_seed with the config")
    state = warm.copy()
    state.config = cfg
    return state


def _batch_rng(seed: int, i: int, stream: int) -> np.random.Generator:
    key = [seed & _MASK64, i, 1] if stream == 0 else [seed & _MASK64, i, 1, stream]
    return np.random.default_rng(key)


def train_rows(
    X, f: np.ndarray, pos_idx, neg_idx, vp, un, cfg: RffConfig, state: RffModelState, stream: int = 0
) -> np.ndarray:
    """TSGD on the rows ``X[pos_idx]`` / ``X[neg_idx]``, updating ``state`` in place.

    Pair batches are drawn from a generator keyed on (master_seed, i, stream);
    a caller that discards an update and retries from the same state passes a
    new ``stream`` to get fresh batches.

    ``f`` must equal ``predict(X, state)`` on entry; it is kept current for
    every row of ``X`` through f <- (1 - eta_i tau) f + alpha_i . phi_i(X),
    which is the same function Predict would evaluate, and returned.
    """
    pos_idx = np.asarray(pos_idx)
    neg_idx = np.asarray(neg_idx)
    vp = np.asarray(vp, dtype=np.float64)
    un = np.asarray(un, dtype=np.float64)
    if pos_idx.size == 0:
        raise ValueError("no selected positive samples to train on")
    if neg_idx.size == 0:
        raise ValueError("no selected negative samples to train on")
    f = np.array(f, dtype=np.float64)
    for _ in range(cfg.T):
        i = state.t + 1
        rng = _batch_rng(cfg.master_seed, i, stream)
        ip = rng.integers(0, pos_idx.size, cfg.pi)
        jn = rng.integers(0, neg_idx.size, cfg.pi)
        rp, rn = pos_idx[ip], neg_idx[jn]
        xi = 1.0 - f[rp] + f[rn]
        c = vp[ip] * un[jn] * (xi > 0)
        feats = phi(X, state.omega(i))
        eta = cfg.eta(i)
        alpha = -(eta / cfg.pi) * (c @ feats[rn] - c @ feats[rp])
        if cfg.tau:
            shrink = 1.0 - eta * cfg.tau
            state._buf[: state.t] *= shrink
            f *= shrink
        state._append(alpha)
        f += feats @ alpha
    return f


def load(d: dict | str) -> RffModelState:
    return RffModelState.from_dict(json.loads(d) if isinstance(d, str) else d)
