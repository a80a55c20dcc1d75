"""Command-line entry point: prepare, inject-noise, train, eval, sweep.

Every verb reads one JSON config (``--config``) and writes into ``--out``.
Config sections (all optional except what a verb needs)::

    {
      "data":     {"input": "raw.libsvm", "train": "train.libsvm", "test": "test.libsvm"},
      "prep":     {"positive_label": 1, "train_fraction": 0.75, "seed": 0},
      "noise":    {"proportion": 0.2, "seed": 0, "margin_quantile": 0.5,
                   "model": null, "scorer_iters": 300},
      "schedule": {ScheduleConfig fields},
      "rff":      {RffConfig fields},
      "mlp":      {MlpConfig fields},
      "sweep":    {"nu": [...], "lambda_inf": [...]}
    }

Relative paths are resolved against the config file's directory.  Exit
codes: 0 success, 2 config error, 3 data error, 4 selection failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataio, driver, mlpmodel, rffmodel
from .pairloss import ScoreTable, auc

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SELECTION = 0, 2, 3, 4

log = logging.getLogger("bspauc")


class _Fail(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _build(cls, section: dict | None, **override):
    section = dict(section or {})
    section.update({k: v for k, v in override.items() if v is not None})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise _Fail(EXIT_CONFIG, f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as e:
        raise _Fail(EXIT_CONFIG, f"bad {cls.__name__}: {e}") from e


class RunConfig:
    """Parsed config file with seed override and path resolution."""

    def __init__(self, raw: dict, base: Path, seed: int | None = None):
        if not isinstance(raw, dict):
            raise _Fail(EXIT_CONFIG, "config must be a JSON object")
        self.raw = raw
        self.base = base
        self.seed = seed

    @classmethod
    def load(cls, path: str | None, seed: int | None = None) -> "RunConfig":
        if path is None:
            return cls({}, Path.cwd(), seed)
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError:
            raise _Fail(EXIT_CONFIG, f"config file not found: {p}") from None
        except json.JSONDecodeError as e:
            raise _Fail(EXIT_CONFIG, f"config {p} is not valid JSON: {e}") from None
        return cls(raw, p.parent, seed)

    def section(self, name: str) -> dict:
        s = self.raw.get(name, {})
        if not isinstance(s, dict):
            raise _Fail(EXIT_CONFIG, f"config section {name!r} must be an object")
        return s

    def path(self, key: str, required: bool = True) -> Path | None:
        v = self.section("data").get(key)
        if v is None:
            if required:
                raise _Fail(EXIT_CONFIG, f"config needs data.{key}")
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    def schedule(self) -> driver.ScheduleConfig:
        try:
            return _build(driver.ScheduleConfig, self.section("schedule"), seed=self.seed)
        except driver.ConfigError as e:
            raise _Fail(EXIT_CONFIG, str(e)) from e

    def rff(self) -> rffmodel.RffConfig:
        return _build(rffmodel.RffConfig, self.section("rff"), master_seed=self.seed)

    def mlp(self) -> mlpmodel.MlpConfig:
        return _build(mlpmodel.MlpConfig, self.section("mlp"), seed=self.seed)


def _read(path: Path) -> dataio.SparseDataset:
    try:
        return dataio.read_libsvm(path)
    except FileNotFoundError:
        raise _Fail(EXIT_DATA, f"data file not found: {path}") from None
    except dataio.DataError as e:
        raise _Fail(EXIT_DATA, f"{path}: {e}") from None


def _load_model(path: Path):
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise _Fail(EXIT_CONFIG, f"model file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise _Fail(EXIT_DATA, f"model file {path} is not valid JSON: {e}") from None
    kind = d.get("backend")
    if kind == "rff":
        return rffmodel.load(d)
    if kind == "mlp":
        return mlpmodel.load(d)
    raise _Fail(EXIT_DATA, f"model file {path} has unknown backend {kind!r}")


def _scores(state, ds: dataio.SparseDataset) -> np.ndarray:
    if ds.dim > state.dim:
        raise _Fail(EXIT_DATA, f"data has {ds.dim} features, model expects {state.dim}")
    return np.asarray(state.predict(driver.design_matrix(ds, state.dim)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_prepare(cfg: RunConfig, out: Path) -> None:
    prep = cfg.section("prep")
    seed = cfg.seed if cfg.seed is not None else prep.get("seed", 0)
    ds = _read(cfg.path("input"))
    try:
        if "positive_label" in prep:
            ds = dataio.binarize(ds, int(prep["positive_label"]))
        elif set(np.unique(ds.labels)) - {1, -1}:
            raise _Fail(EXIT_CONFIG, "labels are not +-1; set prep.positive_label")
        tr, te = dataio.split(ds, float(prep.get("train_fraction", 0.75)), int(seed))
        tr, params = dataio.scale_features(tr)
        te, _ = dataio.scale_features(te, params)
    except dataio.DataError as e:
        raise _Fail(EXIT_DATA, str(e)) from None
    except ValueError as e:
        raise _Fail(EXIT_CONFIG, str(e)) from None
    dataio.write_libsvm(out / "train.libsvm", tr)
    dataio.write_libsvm(out / "test.libsvm", te)
    log.info("prepare: %d train / %d test samples written to %s", len(tr), len(te), out)


def cmd_inject_noise(cfg: RunConfig, out: Path) -> None:
    nz = dict(cfg.section("noise"))
    model_path = nz.pop("model", None)
    scorer_iters = int(nz.pop("scorer_iters", 300))
    if cfg.seed is not None:
        nz["seed"] = cfg.seed
    spec = _build(dataio.NoiseSpec, nz)
    ds = _read(cfg.path("train"))
    if model_path is not None:
        mp = Path(model_path)
        state = _load_model(mp if mp.is_absolute() else cfg.base / mp)
    else:
        # a linear scorer fitted on the clean training file
        lin = mlpmodel.MlpConfig(hidden=(), T=scorer_iters, eta0=0.1, seed=spec.seed)
        sch = driver.ScheduleConfig(backend="frozen_mlp", T_outer=0, pretrain_fraction=1.0, seed=spec.seed)
        state, _ = driver.run_bspauc(ds, sch, mlp=lin)
    try:
        noisy = dataio.flip_labels(ds, spec, lambda d: _scores(state, d))
    except dataio.DataError as e:
        raise _Fail(EXIT_DATA, str(e)) from None
    dataio.write_libsvm(out / "train.noisy.libsvm", noisy)
    _write_json(out / "train.noisy.flips.json", noisy.meta["noise"])
    log.info("inject-noise: flipped %d of %d labels", len(noisy.meta["noise"]["flipped"]), len(ds))


def cmd_train(cfg: RunConfig, out: Path) -> None:
    sch = cfg.schedule()
    rff, mlp = cfg.rff(), cfg.mlp()
    train = _read(cfg.path("train"))
    tp = cfg.path("test", required=False)
    test = _read(tp) if tp is not None else None
    if test is not None and test.dim > train.dim:
        raise _Fail(EXIT_DATA, f"test data has {test.dim} features, training data {train.dim}")
    try:
        state, report = driver.run_bspauc(train, sch, rff, mlp, test, log=log.info)
    except driver.SelectionFailure as e:
        raise _Fail(EXIT_SELECTION, str(e)) from None
    except driver.ConfigError as e:
        raise _Fail(EXIT_CONFIG, str(e)) from None
    (out / "model.json").write_text(state.dumps() + "\n")
    report.write(out, "report")
    log.info("train: final L=%s, wrote model and report to %s", report.final("L"), out)


def cmd_eval(cfg: RunConfig, out: Path, model: str | None, data: str | None) -> dict:
    mp = Path(model) if model else (out / "model.json")
    state = _load_model(mp)
    dp = Path(data) if data else cfg.path("test")
    ds = _read(dp)
    f = _scores(state, ds)
    y = ds.labels
    st = ScoreTable(f[y > 0], f[y < 0])
    try:
        metrics = {
            "auc_half": auc(st, "half"),
            "auc_paper_strict": auc(st, "paper_strict"),
        }
    except ValueError as e:
        raise _Fail(EXIT_DATA, f"{dp}: {e}") from None
    metrics.update(
        n_pos=st.n,
        n_neg=st.m,
        score_mean=float(f.mean()),
        score_std=float(f.std()),
        score_min=float(f.min()),
        score_max=float(f.max()),
    )
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return metrics


def cmd_sweep(cfg: RunConfig, out: Path) -> None:
    grid = cfg.section("sweep")
    nus, lis = grid.get("nu"), grid.get("lambda_inf")
    if not nus or not lis:
        raise _Fail(EXIT_CONFIG, "sweep needs non-empty sweep.nu and sweep.lambda_inf lists")
    sch = cfg.schedule()
    train = _read(cfg.path("train"))
    tp = cfg.path("test", required=False)
    test = _read(tp) if tp is not None else None
    rows = driver.run_sweep(train, sch, nus, lis, cfg.rff(), cfg.mlp(), test)
    (out / "sweep.csv").write_text(driver.sweep_csv(rows))
    (out / "sweep.dat").write_text(driver.sweep_dat(rows))
    log.info("sweep: %d points, %d missing", len(rows), sum(r.status == "missing" for r in rows))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bspauc", description="Balanced self-paced AUC maximization.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, help_ in (
        ("prepare", "binarize, split and scale a LIBSVM file"),
        ("inject-noise", "flip labels of confidently scored training samples"),
        ("train", "run the self-paced training loop"),
        ("eval", "AUC of a saved model on a LIBSVM file"),
        ("sweep", "grid over nu and lambda_inf"),
    ):
        p = sub.add_parser(verb, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        if verb == "eval":
            p.add_argument("--model", help="model file (default: OUT/model.json)")
            p.add_argument("--data", help="LIBSVM file (default: data.test from the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    # timings go to a log file so the artifacts themselves stay reproducible
    fh = logging.FileHandler(out / f"{args.verb}.log", mode="w")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(fh)
    try:
        cfg = RunConfig.load(args.config, args.seed)
        if args.verb == "prepare":
            cmd_prepare(cfg, out)
        elif args.verb == "inject-noise":
            cmd_inject_noise(cfg, out)
        elif args.verb == "train":
            cmd_train(cfg, out)
        elif args.verb == "eval":
            cmd_eval(cfg, out, args.model, args.data)
        else:
            cmd_sweep(cfg, out)
    except _Fail as e:
        log.error("%s", e)
        return e.code
    finally:
        log.removeHandler(fh)
        fh.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
