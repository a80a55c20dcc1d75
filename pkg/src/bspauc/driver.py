"""Outer self-paced loop: pre-training, the lambda schedule, alternating
weight and model updates, and the full objective L.

The loop keeps scores for every training row current so the weight
solves and the objective never re-run a full predict.  A model update that
raises L (at the current lambda and the freshly solved weights) is thrown
away, which makes the reported L sequence non-increasing by construction:
the weight solve cannot raise K, the kept model update cannot raise L, and
raising lambda only lowers the -lambda (P + Q) term.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mlpmodel, rffmodel
from .dataio import SparseDataset
from .pairloss import ScoreTable, apd, auc, l_minus, l_plus
from .spweights import PaceParams, WeightState, _K, inner_bcd

BACKENDS = ("rff", "mlp", "frozen_rff", "frozen_mlp")
# densify the design matrix when it has at most this many entries
_DENSE_FLOATS = 1 << 24


class ConfigError(ValueError):
    pass


class SelectionFailure(RuntimeError):
    """The weight solve selected no sample of one class."""


@dataclass(frozen=True)
class ScheduleConfig:
    lambda0: float | str = "auto"
    c: float = 1.5
    lambda_inf: float = 1.0
    nu: float = 0.1  # mu = nu * lambda_inf
    T_outer: int = 10
    pretrain_fraction: float = 0.1
    pretrain_iters: int | None = None  # None: one backend budget (its T)
    backend: str = "rff"
    seed: int = 0
    inner_tol: float = 1e-8
    inner_max_iter: int = 100

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.c <= 1:
            raise ConfigError(f"growth factor c must be > 1, got {self.c}")
        if not self.lambda_inf > 0:
            raise ConfigError(f"lambda_inf must be > 0, got {self.lambda_inf}")
        if isinstance(self.lambda0, str):
            if self.lambda0 != "auto":
                raise ConfigError(f"lambda0 must be a number or 'auto', got {self.lambda0!r}")
        elif not 0 < self.lambda0 <= self.lambda_inf:
            raise ConfigError(f"need 0 < lambda0 <= lambda_inf, got {self.lambda0} / {self.lambda_inf}")
        if self.nu < 0:
            raise ConfigError(f"nu must be >= 0, got {self.nu}")
        if self.T_outer < 0:
            raise ConfigError("T_outer must be >= 0")
        if not 0 < self.pretrain_fraction <= 1:
            raise ConfigError(f"pretrain_fraction must lie in (0, 1], got {self.pretrain_fraction}")
        if self.pretrain_iters is not None and self.pretrain_iters < 0:
            raise ConfigError("pretrain_iters must be >= 0")

    @property
    def mu(self) -> float:
        return self.nu * self.lambda_inf

    @property
    def frozen(self) -> bool:
        return self.backend.startswith("frozen_")

    @property
    def model(self) -> str:
        return self.backend.removeprefix("frozen_")


def next_lambda(lam: float, cfg: ScheduleConfig) -> float:
    return min(cfg.c * lam, cfg.lambda_inf)


def design_matrix(ds: SparseDataset, dim: int | None = None):
    """Dense array for small problems, CSR otherwise."""
    d = ds.dim if dim is None else dim
    if len(ds) * max(d, 1) <= _DENSE_FLOATS:
        return ds.to_dense(d)
    return ds.to_csr(d)


def _penalty_term(state) -> float:
    return state.tau * state.penalty()


def _objective(scores: ScoreTable, w: WeightState, p: PaceParams, state) -> float:
    """L from scores; shares its arithmetic with the inner-loop K."""
    v = np.asarray(w.v, dtype=np.float64)
    u = np.asarray(w.u, dtype=np.float64)
    return _K(v, u, l_plus(scores, u), p) + _penalty_term(state)


def objective_L(state, w: WeightState, ds: SparseDataset, p: PaceParams) -> float:
    """Full objective: mean weighted pair hinge - lam (P + Q) + tau Omega + mu (P - Q)^2."""
    y = ds.labels
    f = np.asarray(state.predict(design_matrix(ds, state.dim)))
    return _objective(ScoreTable(f[y > 0], f[y < 0]), w, p, state)


def calibrate_lambda0(l_plus_all: np.ndarray, l_minus_all: np.ndarray) -> float:
    """Median of the pooled per-sample aggregates at v = u = 1."""
    return float(np.median(np.concatenate([np.ravel(l_plus_all), np.ravel(l_minus_all)])))


class _Runner:
    """Backend adapter working on the fixed training design matrix."""

    def __init__(self, X, cfg: ScheduleConfig, rff: rffmodel.RffConfig, mlp: mlpmodel.MlpConfig):
        self.X = X
        self.kind = cfg.model
        self.rff = rff
        self.mlp = mlp

    @property
    def T(self) -> int:
        return self.rff.T if self.kind == "rff" else self.mlp.T

    def init(self):
        dim = self.X.shape[1]
        if self.kind == "rff":
            return rffmodel.RffModelState(self.rff, dim), np.zeros(self.X.shape[0])
        state = mlpmodel.init_mlp(self.mlp.layer_sizes(dim), self.mlp.seed, self.mlp)
        return state, mlpmodel.forward(self.X, state)

    def fit(self, state, f, pos_idx, neg_idx, vp, un, T: int, stream: int):
        """Returns a new (state, scores on every row); inputs are left untouched."""
        if T == 0:
            return state, f
        if self.kind == "rff":
            cfg = rffmodel._replace(self.rff, T=T)
            new = state.copy()
            new.config = cfg
            f_new = rffmodel.train_rows(self.X, f, pos_idx, neg_idx, vp, un, cfg, new, stream)
            return new, f_new
        cfg = mlpmodel.MlpConfig(**{**asdict(self.mlp), "T": T})
        new = mlpmodel.dsgd_train(self.X[pos_idx], self.X[neg_idx], vp, un, cfg, state, stream)
        return new, mlpmodel.forward(self.X, new)


@dataclass
class TrainReport:
    records: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    weights: np.ndarray | None = None  # final per-sample weight, dataset order
    initial: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> list[float]:
        return [r["lam"] for r in self.records]

    @property
    def L(self) -> list[float]:
        return [r["L"] for r in self.records]

    def final(self, key: str):
        return self.records[-1][key] if self.records else self.initial.get(key)

    def to_jsonl(self) -> str:
        """One JSON object per outer iteration; timings are left out so the
        file depends only on the config."""
        lines = []
        for r in self.records:
            lines.append(json.dumps({k: v for k, v in r.items() if k != "wall_time"}, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def summary(self) -> dict:
        last = self.records[-1] if self.records else self.initial
        return {
            "provenance": self.provenance,
            "initial": self.initial,
            "outer_iterations": len(self.records),
            "final": {k: v for k, v in last.items() if k not in ("wall_time", "K_trace")},
            "weights": None if self.weights is None else self.weights.tolist(),
        }

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jl = out / f"{stem}.jsonl"
        sm = out / f"{stem}.summary.json"
        jl.write_text(self.to_jsonl())
        sm.write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n")
        return jl, sm


def config_hash(*parts) -> str:
    blob = json.dumps([asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _pretrain_subset(y: np.ndarray, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random subset of round(frac N) rows holding both classes."""
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    N = y.size
    k = min(N, max(2, int(math.floor(frac * N + 0.5))))
    rng = np.random.default_rng([seed, 7])
    pick = np.sort(rng.choice(N, size=k, replace=False))
    sp_, sn = pick[y[pick] > 0], pick[y[pick] < 0]
    # a tiny fraction can miss a class entirely; borrow one random sample of it
    if sp_.size == 0:
        sp_ = np.array([rng.choice(pos)])
    if sn.size == 0:
        sn = np.array([rng.choice(neg)])
    return sp_, sn


def _metrics(f: np.ndarray, pos: np.ndarray, neg: np.ndarray, prefix: str) -> dict:
    st = ScoreTable(f[pos], f[neg])
    return {f"{prefix}_auc_half": auc(st, "half"), f"{prefix}_auc_strict": auc(st, "paper_strict")}


def run_bspauc(
    train: SparseDataset,
    cfg: ScheduleConfig,
    rff: rffmodel.RffConfig | None = None,
    mlp: mlpmodel.MlpConfig | None = None,
    test: SparseDataset | None = None,
    log=None,
):
    """Pre-train, then alternate weight solves and warm-started model updates.

    Returns ``(model_state, TrainReport)``.  Raises ``SelectionFailure`` when
    a weight solve keeps no sample of one class.  ``log`` is an optional
    callable receiving one progress line per outer iteration.
    """
    rff = rff or rffmodel.RffConfig()
    mlp = mlp or mlpmodel.MlpConfig()
    y = train.labels
    pos_rows = np.flatnonzero(y > 0)
    neg_rows = np.flatnonzero(y < 0)
    n, m = pos_rows.size, neg_rows.size
    if n == 0 or m == 0:
        raise ConfigError(f"training set needs both classes, has {n} positive / {m} negative")
    X = design_matrix(train)
    runner = _Runner(X, cfg, rff, mlp)
    Xt = yt = None
    if test is not None:
        Xt = design_matrix(test, train.dim)
        yt = test.labels
        t_pos, t_neg = np.flatnonzero(yt > 0), np.flatnonzero(yt < 0)

    # (a) pre-training on a random subset with unit weights
    state, f = runner.init()
    sp_, sn = _pretrain_subset(y, cfg.pretrain_fraction, cfg.seed)
    T_pre = runner.T if cfg.pretrain_iters is None else cfg.pretrain_iters
    state, f = runner.fit(state, f, sp_, sn, np.ones(sp_.size), np.ones(sn.size), T_pre, stream=0)

    # (b) unit weights, lambda0
    w = WeightState.ones(n, m)
    scores = ScoreTable(f[pos_rows], f[neg_rows])
    if cfg.lambda0 == "auto":
        lam = min(calibrate_lambda0(l_plus(scores, w.u), l_minus(scores, w.v)), cfg.lambda_inf)
    else:
        lam = float(cfg.lambda0)
    mu = cfg.mu

    report = TrainReport(
        provenance={
            "schedule": asdict(cfg),
            "rff": asdict(rff) if cfg.model == "rff" else None,
            "mlp": asdict(mlp) if cfg.model == "mlp" else None,
            "config_hash": config_hash(cfg, rff if cfg.model == "rff" else mlp),
            "n_pos": int(n),
            "n_neg": int(m),
            "pretrain_pos": int(sp_.size),
            "pretrain_neg": int(sn.size),
            "pretrain_iters": int(T_pre),
            "lambda0": lam,
            "mu": mu,
        }
    )
    report.initial = {"lam": lam, "L": _objective(scores, w, PaceParams(lam, mu), state)}
    report.initial.update(_metrics(f, pos_rows, neg_rows, "train"))

    # (c) outer loop
    for t in range(1, cfg.T_outer + 1):
        t0 = time.perf_counter()
        p = PaceParams(lam, mu)
        scores = ScoreTable(f[pos_rows], f[neg_rows])
        if cfg.frozen:
            K_trace = [_K(w.v, w.u, l_plus(scores, w.u), p)]
            converged = True
        else:
            w, K_trace = inner_bcd(scores, w, p, cfg.inner_tol, cfg.inner_max_iter)
            converged = K_trace.converged
        sel_p = np.flatnonzero(w.v > 0)
        sel_n = np.flatnonzero(w.u > 0)
        if sel_p.size == 0 or sel_n.size == 0:
            which = "positive" if sel_p.size == 0 else "negative"
            raise SelectionFailure(
                f"outer iteration {t}: no {which} sample selected at lambda={lam:.6g}, mu={mu:.6g}; "
                "try a larger lambda0 or nu"
            )
        L_old = _objective(scores, w, p, state)
        cand, f_new = runner.fit(
            state, f, pos_rows[sel_p], neg_rows[sel_n], w.v[sel_p], w.u[sel_n], runner.T, stream=t
        )
        L_new = _objective(ScoreTable(f_new[pos_rows], f_new[neg_rows]), w, p, cand)
        reverted = not L_new <= L_old
        if not reverted:
            state, f = cand, f_new
        rec = {
            "iter": t,
            "lam": lam,
            "L": L_old if reverted else L_new,
            "K_trace": list(K_trace),
            "inner_converged": bool(converged),
            "apd": apd(w),
            "selected_pos": int(sel_p.size),
            "selected_neg": int(sel_n.size),
            "reverted": bool(reverted),
        }
        rec.update(_metrics(f, pos_rows, neg_rows, "train"))
        if Xt is not None:
            rec.update(_metrics(np.asarray(state.predict(Xt)), t_pos, t_neg, "test"))
        rec["wall_time"] = time.perf_counter() - t0
        report.records.append(rec)
        if log is not None:
            log(
                f"iter {t} lam={lam:.4g} L={rec['L']:.6g} sel={sel_p.size}/{sel_n.size} "
                f"apd={rec['apd']:.4f} reverted={reverted} ({rec['wall_time']:.2f}s)"
            )
        lam = next_lambda(lam, cfg)

    weights = np.empty(n + m)
    weights[pos_rows] = w.v
    weights[neg_rows] = w.u
    report.weights = weights
    return state, report


@dataclass
class SweepRow:
    nu: float
    lambda_inf: float
    auc: float
    apd: float
    status: str  # "ok" or "missing"


def run_sweep(
    train: SparseDataset,
    base: ScheduleConfig,
    nus,
    lambda_infs,
    rff: rffmodel.RffConfig | None = None,
    mlp: mlpmodel.MlpConfig | None = None,
    test: SparseDataset | None = None,
) -> list[SweepRow]:
    """One run per (nu, lambda_inf) point, all with the base config's seeds.

    AUC is the final test AUC (half ties) when ``test`` is given, else the
    training AUC.  A numeric lambda0 is capped at each point's lambda_inf.
    Runs aborted by a selection failure become ``missing`` rows.
    """
    nus = list(nus)
    lambda_infs = list(lambda_infs)
    if not nus or not lambda_infs:
        raise ConfigError("sweep grid must be non-empty")
    rows = []
    for li in lambda_infs:
        for nu in nus:
            lam0 = base.lambda0 if base.lambda0 == "auto" else min(float(base.lambda0), li)
            cfg = ScheduleConfig(**{**asdict(base), "nu": nu, "lambda_inf": li, "lambda0": lam0})
            try:
                _, rep = run_bspauc(train, cfg, rff, mlp, test)
            except SelectionFailure:
                rows.append(SweepRow(nu, li, math.nan, math.nan, "missing"))
                continue
            key = "test_auc_half" if test is not None else "train_auc_half"
            a = rep.final(key)
            rows.append(SweepRow(nu, li, a, rep.final("apd") if rep.records else 0.0, "ok"))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    out = ["nu,lambda_inf,auc,apd,status"]
    for r in rows:
        out.append(f"{r.nu!r},{r.lambda_inf!r},{r.auc!r},{r.apd!r},{r.status}")
    return "\n".join(out) + "\n"


def sweep_dat(rows: list[SweepRow]) -> str:
    """Whitespace table, one block per lambda_inf, NaN for missing points."""
    out = ["# nu lambda_inf auc apd"]
    prev = None
    for r in rows:
        if prev is not None and r.lambda_inf != prev:
            out.append("")
        prev = r.lambda_inf
        out.append(f"{r.nu!r} {r.lambda_inf!r} {r.auc!r} {r.apd!r}")
    return "\n".join(out) + "\n"
