"""Fully connected ReLU network with hand-written backprop, trained by
doubly stochastic gradient descent on the weighted pairwise hinge loss."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (32, 32)
    tau: float = 1e-4  # weight on 0.5 * ||theta||_F^2
    eta0: float = 0.05
    eta_schedule: str = "inverse"
    pi: int = 16
    T: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.pi < 1 or self.T < 0 or self.tau < 0:
            raise ValueError("pi must be >= 1, T >= 0, tau >= 0")
        if self.eta_schedule not in ("inverse", "constant"):
            raise ValueError(f"unknown eta_schedule {self.eta_schedule!r}")

    def eta(self, i: int) -> float:
        if self.eta_schedule == "constant":
            return self.eta0
        return self.eta0 / (1.0 + self.eta0 * self.tau * i)

    def layer_sizes(self, dim: int) -> list[int]:
        return [dim, *self.hidden, 1]


@dataclass
class MlpState:
    weights: list[np.ndarray]  # (fan_in, fan_out)
    biases: list[np.ndarray]
    config: MlpConfig = field(default_factory=MlpConfig)
    t: int = 0  # iterations trained so far; keys the batch sampler

    backend = "mlp"

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def tau(self) -> float:
        return self.config.tau

    def predict(self, X) -> np.ndarray:
        return forward(X, self)

    def penalty(self) -> float:
        """0.5 * squared Frobenius norm over all weights and biases."""
        return 0.5 * float(sum(np.sum(W * W) + np.sum(b * b) for W, b in zip(self.weights, self.biases)))

    def copy(self) -> "MlpState":
        return MlpState([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.config, self.t)

    def to_dict(self) -> dict:
        flat = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "backend": "mlp",
            "layer_sizes": self.layer_sizes,
            "config": cfg,
            "t": self.t,
            # per layer: W row-major (fan_in x fan_out), then b
            "params": flat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpState":
        sizes = d["layer_sizes"]
        flat = np.asarray(d["params"], dtype=np.float64)
        weights, biases, k = [], [], 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[k:k + a * b].reshape(a, b).copy())
            k += a * b
            biases.append(flat[k:k + b].copy())
            k += b
        if k != flat.size:
            raise ValueError(f"parameter payload has {flat.size} values, layer sizes need {k}")
        return cls(weights, biases, MlpConfig(**d.get("config", {})), int(d.get("t", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    def train(self, Xp, Xn, vp, un, T: int | None = None) -> "MlpState":
        cfg = self.config if T is None else MlpConfig(**{**asdict(self.config), "T": T})
        return dsgd_train(Xp, Xn, vp, un, cfg, self)


def init_mlp(layer_sizes, seed: int = 0, config: MlpConfig | None = None) -> MlpState:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or sizes[-1] != 1:
        raise ValueError(f"layer sizes must end in a scalar output, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-lim, lim, size=(a, b)))
        biases.append(np.zeros(b))
    cfg = config or MlpConfig(hidden=tuple(sizes[1:-1]), seed=seed)
    return MlpState(weights, biases, cfg)


def _forward_cache(X, state: MlpState):
    if X.shape[-1] != state.dim:
        raise ValueError(f"input has {X.shape[-1]} features, network expects {state.dim}")
    acts = [X]
    pre = []
    h = X
    last = len(state.weights) - 1
    for k, (W, b) in enumerate(zip(state.weights, state.biases)):
        z = np.asarray(h @ W) + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(X, state: MlpState):
    """Scores for the rows of ``X`` (dense or sparse); a 1-D input gives a float."""
    single = isinstance(X, np.ndarray) and X.ndim == 1
    acts, _ = _forward_cache(X.reshape(1, -1) if single else X, state)
    out = acts[-1][:, 0]
    return float(out[0]) if single else out


def _backward(acts, pre, g: np.ndarray, state: MlpState):
    """Gradient of sum_r g_r f(x_r) w.r.t. every weight and bias."""
    dWs, dbs = [], []
    delta = g.reshape(-1, 1)
    for k in range(len(state.weights) - 1, -1, -1):
        dWs.append(np.asarray(acts[k].T @ delta))
        dbs.append(delta.sum(axis=0))
        if k:
            delta = (delta @ state.weights[k].T) * (pre[k - 1] > 0)
    return dWs[::-1], dbs[::-1]


def pair_gradient(x_pos, x_neg, state: MlpState):
    """d xi / d theta for one pair: df(x-) - df(x+) if the hinge is active, else 0.

    Returns ``(dWs, dbs)`` shaped like the network's parameters.
    """
    X = np.vstack([np.asarray(x_pos, dtype=np.float64).reshape(1, -1), np.asarray(x_neg, dtype=np.float64).reshape(1, -1)])
    acts, pre = _forward_cache(X, state)
    f = acts[-1][:, 0]
    active = 1.0 - f[0] + f[1] > 0
    g = np.array([-1.0, 1.0]) if active else np.zeros(2)
    return _backward(acts, pre, g, state)


def dsgd_train(Xp, Xn, vp, un, cfg: MlpConfig, warm: MlpState, stream: int = 0) -> MlpState:
    """``cfg.T`` steps of theta <- (1 - eta tau) theta - (eta / pi) sum_j v_j u_j dxi_jj/dtheta.

    Pairs are drawn uniformly with replacement from the selected pools.  The
    sampler is keyed on (cfg.seed, global step) so runs are reproducible and
    warm starts continue the stream; ``stream`` selects an independent batch
    sequence for retries from the same state.  ``warm`` is not modified.
    """
    if Xp.shape[0] == 0:
        raise ValueError("no selected positive samples to train on")
    if Xn.shape[0] == 0:
        raise ValueError("no selected negative samples to train on")
    vp = np.asarray(vp, dtype=np.float64)
    un = np.asarray(un, dtype=np.float64)
    state = warm.copy()
    state.config = cfg
    pi = cfg.pi
    for _ in range(cfg.T):
        i = state.t + 1
        rng = np.random.default_rng([cfg.seed, i, 2] if stream == 0 else [cfg.seed, i, 2, stream])
        ip = rng.integers(0, Xp.shape[0], pi)
        jn = rng.integers(0, Xn.shape[0], pi)
        X = _rows(Xp, ip, Xn, jn)
        acts, pre = _forward_cache(X, state)
        f = acts[-1][:, 0]
        xi = 1.0 - f[:pi] + f[pi:]
        c = vp[ip] * un[jn] * (xi > 0)
        dWs, dbs = _backward(acts, pre, np.concatenate([-c, c]), state)
        eta = cfg.eta(i)
        shrink = 1.0 - eta * cfg.tau
        step = eta / pi
        for k in range(len(state.weights)):
            state.weights[k] = shrink * state.weights[k] - step * dWs[k]
            state.biases[k] = shrink * state.biases[k] - step * dbs[k]
        state.t = i
    return state


def _rows(Xp, ip, Xn, jn):
    if sp.issparse(Xp) or sp.issparse(Xn):
        return sp.vstack([sp.csr_matrix(Xp)[ip], sp.csr_matrix(Xn)[jn]], format="csr")
    return np.vstack([Xp[ip], Xn[jn]])


def load(d: dict | str) -> MlpState:
    return MlpState.from_dict(json.loads(d) if isinstance(d, str) else d)
