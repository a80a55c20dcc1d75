"""LIBSVM ingestion and the data preparation pipeline.

Parse / serialize the sparse text format, scale features to [-1, 1],
binarize multiclass labels, split stratified train/test sets and inject
label-flip noise.  Every transform returns a new dataset and records what
it did in ``SparseDataset.meta`` so it can be written as a provenance
sidecar.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    """Malformed or unusable input data."""


class LibsvmParseError(DataError):
    def __init__(self, lineno: int, msg: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}")


@dataclass(frozen=True)
class SparseSample:
    indices: tuple[int, ...]  # 1-based, strictly increasing
    values: tuple[float, ...]
    label: int


@dataclass
class SparseDataset:
    samples: list[SparseSample]
    dim: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels == -1))

    def to_csr(self, dim: int | None = None) -> sp.csr_matrix:
        """Feature matrix with 0-based columns; ``dim`` pads or checks width."""
        width = self.dim if dim is None else dim
        if width < self.dim:
            raise DataError(f"data has {self.dim} features, model expects {width}")
        indptr = [0]
        cols: list[int] = []
        vals: list[float] = []
        for s in self.samples:
            cols.extend(i - 1 for i in s.indices)
            vals.extend(s.values)
            indptr.append(len(cols))
        return sp.csr_matrix(
            (np.asarray(vals, dtype=np.float64), np.asarray(cols, dtype=np.int64), np.asarray(indptr)),
            shape=(len(self.samples), width),
        )

    def to_dense(self, dim: int | None = None) -> np.ndarray:
        return self.to_csr(dim).toarray()

    def subset(self, idx: Sequence[int]) -> "SparseDataset":
        return SparseDataset([self.samples[i] for i in idx], self.dim, copy.deepcopy(self.meta))


def from_arrays(X: np.ndarray, y: Sequence[int]) -> SparseDataset:
    """Build a dataset from a dense matrix, dropping exact zeros."""
    X = np.asarray(X, dtype=np.float64)
    samples = []
    for row, lab in zip(X, y):
        nz = np.flatnonzero(row)
        samples.append(SparseSample(tuple(int(i) + 1 for i in nz), tuple(float(row[i]) for i in nz), int(lab)))
    return SparseDataset(samples, X.shape[1])


def two_gaussians(
    n_pos: int,
    n_neg: int,
    dim: int = 2,
    sep: float = 2.0,
    seed: int = 0,
    pos_std: float = 1.0,
    neg_std: float = 1.0,
) -> SparseDataset:
    """Isotropic Gaussian classes centred at +-sep/2 along the diagonal."""
    rng = np.random.default_rng(seed)
    centre = np.full(dim, sep / (2.0 * math.sqrt(dim)))
    X = np.vstack([
        rng.standard_normal((n_pos, dim)) * pos_std + centre,
        rng.standard_normal((n_neg, dim)) * neg_std - centre,
    ])
    y = np.r_[np.ones(n_pos, dtype=int), -np.ones(n_neg, dtype=int)]
    ds = from_arrays(X, y)
    ds.meta["synthetic"] = {
        "n_pos": n_pos, "n_neg": n_neg, "dim": dim, "sep": sep, "seed": seed, "pos_std": pos_std, "neg_std": neg_std,
    }
    return ds


# ---------------------------------------------------------------------------
# text format


def _parse_label(tok: str, lineno: int) -> int:
    try:
        x = float(tok)
    except ValueError:
        raise LibsvmParseError(lineno, f"non-numeric label {tok!r}") from None
    if not math.isfinite(x) or x != int(x):
        raise LibsvmParseError(lineno, f"label {tok!r} is not an integer")
    return int(x)


def parse_libsvm(text: str | bytes | Iterable[str]) -> SparseDataset:
    """Parse ``<label> <idx>:<val> ...`` lines.  Blank lines are skipped."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines() if isinstance(text, str) else text
    samples = []
    dim = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        label = _parse_label(toks[0], lineno)
        idx: list[int] = []
        vals: list[float] = []
        for tok in toks[1:]:
            k, sep, v = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"expected idx:value, got {tok!r}")
            try:
                i = int(k)
            except ValueError:
                raise LibsvmParseError(lineno, f"bad feature index {k!r}") from None
            if i < 1:
                raise LibsvmParseError(lineno, f"feature index {i} < 1")
            if idx and i <= idx[-1]:
                raise LibsvmParseError(lineno, f"non-increasing index {i} after {idx[-1]}")
            try:
                x = float(v)
            except ValueError:
                raise LibsvmParseError(lineno, f"unparseable value {v!r}") from None
            if not math.isfinite(x):
                raise LibsvmParseError(lineno, f"non-finite value {v!r}")
            idx.append(i)
            vals.append(x)
        if idx:
            dim = max(dim, idx[-1])
        samples.append(SparseSample(tuple(idx), tuple(vals), label))
    return SparseDataset(samples, dim)


def dump_libsvm(ds: SparseDataset) -> str:
    out = []
    for s in ds.samples:
        feats = " ".join(f"{i}:{v!r}" for i, v in zip(s.indices, s.values))
        lab = f"+{s.label}" if s.label > 0 else str(s.label)
        out.append(f"{lab} {feats}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def read_libsvm(path: str | Path) -> SparseDataset:
    with open(path, "rb") as f:
        return parse_libsvm(f.read())


def write_libsvm(path: str | Path, ds: SparseDataset, provenance: bool = True) -> None:
    """Write the data file and, if requested, ``<path>.provenance.json``."""
    path = Path(path)
    path.write_text(dump_libsvm(ds), encoding="utf-8", newline="\n")
    if provenance:
        sidecar = path.with_name(path.name + ".provenance.json")
        sidecar.write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScaleParams:
    lo: tuple[float, ...]  # per-dimension observed min, absent entries count as 0
    hi: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lo)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


def fit_scaler(ds: SparseDataset) -> ScaleParams:
    if not ds.samples:
        raise DataError("cannot fit scaling on an empty dataset")
    X = ds.to_csr()
    # sparse min/max count implicit zeros, matching svm-scale
    lo = X.min(axis=0).toarray().ravel()
    hi = X.max(axis=0).toarray().ravel()
    return ScaleParams(tuple(float(a) for a in lo), tuple(float(b) for b in hi))


def apply_scaler(ds: SparseDataset, params: ScaleParams, clip: bool = True) -> SparseDataset:
    """Map each dimension affinely so [lo, hi] -> [-1, 1]; constant dims -> 0.

    Values outside the fitted range (test data) are clipped into [-1, 1].
    Features beyond ``params.dim`` are dropped.
    """
    lo = np.asarray(params.lo)
    hi = np.asarray(params.hi)
    span = hi - lo
    const = span == 0
    safe = np.where(const, 1.0, span)
    # image of an absent (zero) entry in every dimension
    zero_img = np.where(const, 0.0, -1.0 + 2.0 * (0.0 - lo) / safe)
    if clip:
        zero_img = np.clip(zero_img, -1.0, 1.0)
    dense_zero = np.flatnonzero(zero_img != 0.0)

    samples = []
    for s in ds.samples:
        row = {}
        for j in dense_zero:
            row[int(j)] = float(zero_img[j])
        for i, x in zip(s.indices, s.values):
            j = i - 1
            if j >= params.dim:
                continue
            y = 0.0 if const[j] else -1.0 + 2.0 * (x - lo[j]) / safe[j]
            if clip:
                y = min(1.0, max(-1.0, y))
            row[j] = float(y)
        keys = sorted(k for k, y in row.items() if y != 0.0)
        samples.append(SparseSample(tuple(k + 1 for k in keys), tuple(row[k] for k in keys), s.label))
    meta = copy.deepcopy(ds.meta)
    meta["scaling"] = params.to_dict()
    return SparseDataset(samples, params.dim, meta)


def scale_features(ds: SparseDataset, params: ScaleParams | None = None) -> tuple[SparseDataset, ScaleParams]:
    """Scale ``ds`` into [-1, 1]; fits the parameters unless they are given."""
    if params is None:
        params = fit_scaler(ds)
    return apply_scaler(ds, params), params


# ---------------------------------------------------------------------------
# labels, splitting


def binarize(ds: SparseDataset, positive_label: int) -> SparseDataset:
    labels = ds.labels
    if not np.any(labels == positive_label):
        raise DataError(f"positive label {positive_label} does not occur in the data")
    samples = [
        SparseSample(s.indices, s.values, 1 if s.label == positive_label else -1) for s in ds.samples
    ]
    meta = copy.deepcopy(ds.meta)
    meta["positive_label"] = positive_label
    return SparseDataset(samples, ds.dim, meta)


def _class_train_count(count: int, frac: float) -> int:
    k = int(math.floor(frac * count))
    return min(max(k, 1), count - 1)


def split(ds: SparseDataset, train_fraction: float, seed: int) -> tuple[SparseDataset, SparseDataset]:
    """Stratified shuffled split.  Each class contributes floor(frac * count)
    samples (at least one, at most count - 1) to the training side."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = ds.labels
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    for lab in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == lab)
        if len(members) < 2:
            raise DataError(f"class {lab} has {len(members)} sample(s); cannot stratify")
        perm = rng.permutation(members)
        train_idx.extend(perm[:_class_train_count(len(members), train_fraction)].tolist())
    train_idx.sort()
    in_train = np.zeros(len(ds), dtype=bool)
    in_train[train_idx] = True
    test_idx = np.flatnonzero(~in_train).tolist()

    tr, te = ds.subset(train_idx), ds.subset(test_idx)
    info = {"seed": seed, "train_fraction": train_fraction, "train": train_idx, "test": test_idx}
    tr.meta["split"] = dict(info, side="train")
    te.meta["split"] = dict(info, side="test")
    return tr, te


# ---------------------------------------------------------------------------
# label noise


@dataclass(frozen=True)
class NoiseSpec:
    proportion: float
    seed: int
    margin_quantile: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.proportion <= 0.5:
            raise ValueError(f"noise proportion must lie in [0, 0.5], got {self.proportion}")
        if not 0.0 < self.margin_quantile <= 1.0:
            raise ValueError(f"margin_quantile must lie in (0, 1], got {self.margin_quantile}")

    def flip_count(self, size: int) -> int:
        return int(math.floor(self.proportion * size + 0.5))


def flip_labels(
    ds: SparseDataset,
    spec: NoiseSpec,
    scorer: Callable[[SparseDataset], np.ndarray] | np.ndarray,
) -> SparseDataset:
    """Flip labels of samples chosen at random among those farthest from the
    decision boundary of ``scorer``.

    ``scorer`` maps the dataset to one real score per sample (or is that
    array already).  The candidate pool is the top ``margin_quantile``
    fraction by ``|score|`` (ties broken by index); exactly
    ``round(proportion * len(ds))`` of them are flipped.
    """
    N = len(ds)
    k = spec.flip_count(N)
    scores = np.asarray(scorer(ds) if callable(scorer) else scorer, dtype=np.float64)
    if scores.shape != (N,):
        raise DataError(f"scorer returned shape {scores.shape}, expected ({N},)")
    pool_size = int(math.ceil(spec.margin_quantile * N))
    if k > pool_size:
        raise DataError(f"candidate pool of {pool_size} samples is smaller than the {k} flips requested")

    order = np.lexsort((np.arange(N), -np.abs(scores)))
    pool = np.sort(order[:pool_size])
    rng = np.random.default_rng(spec.seed)
    flipped = np.sort(rng.choice(pool, size=k, replace=False)) if k else np.array([], dtype=np.int64)

    samples = list(ds.samples)
    for i in flipped:
        s = samples[i]
        samples[i] = SparseSample(s.indices, s.values, -s.label)
    meta = copy.deepcopy(ds.meta)
    meta["noise"] = {
        "proportion": spec.proportion,
        "seed": spec.seed,
        "margin_quantile": spec.margin_quantile,
        "flipped": [int(i) for i in flipped],
        # |score| audit trail: every flipped margin is at least the pool cutoff
        "median_margin": float(np.median(np.abs(scores))),
        "flipped_margins": [float(abs(scores[i])) for i in flipped],
    }
    return SparseDataset(samples, ds.dim, meta)
