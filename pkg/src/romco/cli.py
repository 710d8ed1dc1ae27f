"""Command-line entry point: ``romco run | sweep | gen``.

Every random draw is derived from ``--seed`` through
``SeedSequence(seed, spawn_key=(tag, index))`` with the purpose tags below,
so one seed pins the synthetic data and every shuffle.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import HyperParams, ParameterError, Round, StructuralError, Variant
from .data import (FLOAT_FMT, DataError, Dataset, SyntheticSpec, generate_synthetic, load_dataset,
                   shuffle_rounds, write_task_svm)
from .evaluation import RunRecord, aggregate_shuffles, cumulative_error_curve, regret_diagnostic
from .learner import run_sequence, theory_rate

log = logging.getLogger("romco")

SCHEMA_LINE = "# schema=1\n"
TAG_DATA, TAG_SHUFFLE = 1, 2

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CURVE_COLUMNS = "round,instances_seen,task_id,truth,pred,loss,cum_err_rate"
SUMMARY_COLUMNS = ("variant,task_id,error_rate_mean,error_rate_std,f1_pos_mean,f1_pos_std,"
                   "f1_neg_mean,f1_neg_std,runtime_sec")
REGRET_COLUMNS = "T,regret,ratio"
SWEEP_COLUMNS = ("variant,eta1,eta2,lambda1,lambda2,error_rate_mean,error_rate_std,"
                 "f1_pos_mean,f1_neg_mean,best")

SYNTH_KEYS = {"d": "d", "m": "m", "T": "T", "k": "k", "outliers": "outlier_count", "noise": "noise_rate"}


class ConfigError(Exception):
    pass


class NumericFailure(Exception):
    pass


def derive_seed(seed: int, tag: int, index: int = 0) -> int:
    """Child seed for ``(tag, index)``; the splitting scheme is stable across versions."""
    return int(np.random.SeedSequence(seed, spawn_key=(tag, index)).generate_state(1, np.uint64)[0])


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, FLOAT_FMT)


def parse_synthetic(text: str, seed: int) -> SyntheticSpec:
    kw = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep or key.strip() not in SYNTH_KEYS:
            raise ConfigError(f"bad synthetic field {item!r}; expected keys {', '.join(SYNTH_KEYS)}")
        name = SYNTH_KEYS[key.strip()]
        try:
            kw[name] = float(val) if name == "noise_rate" else int(val)
        except ValueError:
            raise ConfigError(f"bad value in {item!r}") from None
    missing = {"d", "m", "T"} - kw.keys()
    if missing:
        raise ConfigError(f"synthetic spec needs {', '.join(sorted(missing))}")
    try:
        return SyntheticSpec(seed=derive_seed(seed, TAG_DATA), **kw)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def parse_grid(text: str) -> List[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    if not vals:
        raise ConfigError("grids must be nonempty")
    return vals


@dataclass
class ExperimentConfig:
    params: HyperParams
    shuffles: int
    seed: int
    out: Path
    synthetic: Optional[SyntheticSpec] = None
    data_path: Optional[Path] = None
    data_format: str = "task-svm"
    regret: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.shuffles < 1:
            raise ConfigError("--shuffles must be >= 1")
        if (self.synthetic is None) == (self.data_path is None):
            raise ConfigError("give exactly one of --synthetic or --data")


def config_from_args(args) -> ExperimentConfig:
    eta1, eta2 = args.eta1, args.eta2
    if args.eta_schedule == "theory":
        if args.horizon is None or args.horizon < 1:
            raise ConfigError("--eta-schedule theory needs --horizon T >= 1")
        eta1 = eta2 = theory_rate(args.horizon)
    try:
        params = HyperParams(eta1, eta2, args.lambda1, args.lambda2, Variant.parse(args.algo),
                             seed=args.seed, rho_growth=args.rho_growth)
    except (ParameterError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    synth = parse_synthetic(args.synthetic, args.seed) if args.synthetic else None
    return ExperimentConfig(params, args.shuffles, args.seed, Path(args.out), synth,
                            Path(args.data) if args.data else None, args.format,
                            getattr(args, "regret", False), getattr(args, "timing", False))


def load_source(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic)[0]
    try:
        return load_dataset(cfg.data_path, cfg.data_format)
    except StructuralError as exc:
        raise DataError(str(exc)) from None


def _threads(n: int) -> int:
    env = os.environ.get("ROMCO_THREADS")
    if env:
        try:
            return max(1, min(n, int(env)))
        except ValueError:
            raise ConfigError(f"ROMCO_THREADS must be an integer, got {env!r}") from None
    return n


def run_shuffles(data: Dataset, params: HyperParams, shuffles: int, seed: int
                 ) -> Tuple[List[List[Round]], List[RunRecord]]:
    """One run per shuffle; results come back in shuffle order regardless of threading."""
    all_rounds = [shuffle_rounds(data, derive_seed(seed, TAG_SHUFFLE, k)) for k in range(shuffles)]
    shape = (data.dim, data.num_tasks)

    def one(rounds):
        return run_sequence(params, rounds, shape, provenance=data.provenance)

    workers = _threads(shuffles)
    if workers == 1:
        records = [one(r) for r in all_rounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, all_rounds))
    for k, rec in enumerate(records):
        if not rec.valid:
            if rec.error and rec.error.startswith("NumericError"):
                raise NumericFailure(f"shuffle {k}: {rec.error}")
            raise DataError(f"shuffle {k}: {rec.error}")
    return all_rounds, records


# -- CSV writers ------------------------------------------------------------

def _write(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SCHEMA_LINE)
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def curve_rows(rec: RunRecord):
    curve = cumulative_error_curve(rec)
    for e, (seen, rate) in zip(rec.entries, curve):
        yield (e.round_id, seen, e.task_id, e.truth, e.pred, e.loss, rate)


def summary_rows(variant: Variant, records: Sequence[RunRecord], timing: bool):
    s = aggregate_shuffles(records)
    rt = s.runtime.mean if timing else math.nan

    def row(tid, st):
        return (variant.value, tid, st["error_rate"].mean, st["error_rate"].std, st["f1_pos"].mean,
                st["f1_pos"].std, st["f1_neg"].mean, st["f1_neg"].std, rt)

    rows = [row(t, st) for t, st in s.per_task.items()]
    rows.append(row("macro", s.macro))
    return rows


class AtomicDir:
    """Collect outputs in a scratch directory and move them into place on success."""

    def __init__(self, out: Path):
        self.out = out
        self.tmp: Optional[Path] = None

    def __enter__(self) -> Path:
        parent = self.out.resolve().parent
        try:
            parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=".romco-", dir=parent))
        except OSError as exc:
            raise DataError(f"cannot write to {self.out}: {exc}") from None
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for f in sorted(self.tmp.iterdir()):
                    os.replace(f, self.out / f.name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


# -- commands ---------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig) -> int:
    data = load_source(cfg)
    all_rounds, records = run_shuffles(data, cfg.params, cfg.shuffles, cfg.seed)
    with AtomicDir(cfg.out) as tmp:
        for k, rec in enumerate(records):
            _write(tmp / f"curve_{k}.csv", CURVE_COLUMNS, curve_rows(rec))
        _write(tmp / "summary.csv", SUMMARY_COLUMNS, summary_rows(cfg.params.variant, records, cfg.timing))
        if cfg.regret:
            rep = regret_diagnostic(records[0], all_rounds[0], cfg.params, (data.dim, data.num_tasks))
            log.info("max online subgradient norm %.6g", rep.max_grad_norm)
            _write(tmp / "regret.csv", REGRET_COLUMNS, ((p.T, p.regret, p.ratio) for p in rep.points))
    log.info("wrote %d shuffle(s) to %s", cfg.shuffles, cfg.out)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, lambda1_grid: Sequence[float], lambda2_grid: Sequence[float],
              eta_grid: Optional[Sequence[float]] = None) -> int:
    data = load_source(cfg)
    etas = [(e, e) for e in eta_grid] if eta_grid else [(cfg.params.eta1, cfg.params.eta2)]
    rows = []
    for eta1, eta2 in etas:
        for l1 in lambda1_grid:
            for l2 in lambda2_grid:
                try:
                    p = replace(cfg.params, eta1=eta1, eta2=eta2, lambda1=l1, lambda2=l2)
                except ParameterError as exc:
                    raise ConfigError(str(exc)) from None
                _, records = run_shuffles(data, p, cfg.shuffles, cfg.seed)
                s = aggregate_shuffles(records)
                err = s.macro["error_rate"]
                rows.append([p.variant.value, eta1, eta2, l1, l2, err.mean, err.std,
                             s.macro["f1_pos"].mean, s.macro["f1_neg"].mean])
    best = min(range(len(rows)), key=lambda i: rows[i][5])
    for i, r in enumerate(rows):
        r.append(int(i == best))
    with AtomicDir(cfg.out) as tmp:
        _write(tmp / "sweep.csv", SWEEP_COLUMNS, rows)
    return EXIT_OK


def cmd_gen(spec: SyntheticSpec, out: Path) -> int:
    data, truth = generate_synthetic(spec)
    with AtomicDir(out) as tmp:
        write_task_svm(data, tmp / "data.svm")
        d, m = truth.shape
        rows = ((comp, j, i, M[j, i]) for comp, M in (("U", truth.U), ("V", truth.V))
                for i in range(m) for j in range(d))
        _write(tmp / "ground_truth.csv", "component,row,col,value", rows)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, source: bool = True) -> None:
    if source:
        p.add_argument("--data", help="dataset file")
        p.add_argument("--format", default="task-svm", choices=["task-svm", "dense-csv"])
    p.add_argument("--synthetic", help="e.g. d=20,m=5,T=200,k=2,outliers=1,noise=0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="romco_out")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", default="nucl", help="nucl, logd, pa-global or pa-unique")
    p.add_argument("--eta1", type=float, default=0.1)
    p.add_argument("--eta2", type=float, default=0.1)
    p.add_argument("--lambda1", type=float, default=0.01)
    p.add_argument("--lambda2", type=float, default=0.01)
    p.add_argument("--eta-schedule", choices=["constant", "theory"], default="constant",
                   help="'theory' sets eta1 = eta2 = 1/sqrt(horizon)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--rho-growth", type=float, default=1.0,
                   help="factor applied to 1/rho after every log-det update (1 = fixed rho)")
    p.add_argument("--shuffles", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="romco", description="Robust online multi-task learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run shuffled experiments and write curves and a summary")
    _common(run)
    _model(run)
    run.add_argument("--regret", action="store_true", help="also write regret.csv for shuffle 0")
    run.add_argument("--timing", action="store_true",
                     help="record wall time in summary.csv (otherwise nan, keeping outputs reproducible)")

    sweep = sub.add_parser("sweep", help="grid search over lambda1 x lambda2 (and optionally eta)")
    _common(sweep)
    _model(sweep)
    sweep.add_argument("--lambda1-grid", required=True)
    sweep.add_argument("--lambda2-grid", required=True)
    sweep.add_argument("--eta-grid", help="sweep eta1 = eta2 over these values")

    gen = sub.add_parser("gen", help="write a synthetic dataset and its ground truth")
    _common(gen, source=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"romco: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen":
            if not args.synthetic:
                raise ConfigError("gen needs --synthetic")
            return cmd_gen(parse_synthetic(args.synthetic, args.seed), Path(args.out))
        cfg = config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_sweep(cfg, parse_grid(args.lambda1_grid), parse_grid(args.lambda2_grid),
                         parse_grid(args.eta_grid) if args.eta_grid else None)
    except ConfigError as exc:
        print(f"romco: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"romco: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"romco: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
