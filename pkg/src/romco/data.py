"""Datasets: file loaders, per-task shuffling into rounds, synthetic streams.

task-svm format, one instance per line::

    #d=<n>            optional, pins the dimension
    #m=<n>            optional, pins the number of tasks
    <task>\t<label>\t<idx>:<val> <idx>:<val> ...

Indices are 0-based and strictly increasing, labels are ``+1``/``1``/``-1``.
Without headers ``d`` is ``1 + max index`` and ``m`` is ``1 + max task``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .core import ParameterError, Round, StructuralError, TaskInstance, WeightState, sign

FLOAT_FMT = ".17g"


class DataError(ValueError):
    """A data file that cannot be parsed or violates the dataset invariants."""


@dataclass(eq=False)
class Dataset:
    num_tasks: int
    dim: int
    tasks: List[List[TaskInstance]]
    provenance: str = field(default="")

    def __post_init__(self):
        if len(self.tasks) != self.num_tasks:
            raise StructuralError(f"expected {self.num_tasks} task lists, got {len(self.tasks)}")
        for i, insts in enumerate(self.tasks):
            for inst in insts:
                if inst.task_id != i:
                    raise StructuralError(f"instance of task {inst.task_id} filed under task {i}")
                if inst.dim != self.dim:
                    raise StructuralError(f"instance dimension {inst.dim} != {self.dim}")

    @property
    def counts(self) -> List[int]:
        return [len(t) for t in self.tasks]

    def __len__(self):
        return sum(self.counts)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_tasks == other.num_tasks and self.dim == other.dim
                and all(a == b for a, b in zip(self.tasks, other.tasks)))


def _parse_label(tok: str, lineno: int) -> int:
    if tok in ("+1", "1"):
        return 1
    if tok == "-1":
        return -1
    raise DataError(f"line {lineno}: label must be +1 or -1, got {tok!r}")


def _parse_int(tok: str, what: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DataError(f"line {lineno}: bad {what} {tok!r}") from None


def _parse_float(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"line {lineno}: bad feature value {tok!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite feature value {tok!r}")
    return v


def _assemble(rows, dim, num_tasks, provenance) -> Dataset:
    tasks: List[List[TaskInstance]] = [[] for _ in range(num_tasks)]
    for lineno, task, label, idx, val in rows:
        try:
            tasks[task].append(TaskInstance(task, idx, val, label, dim))
        except StructuralError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    return Dataset(num_tasks, dim, tasks, provenance)


def _load_task_svm(path: Path) -> Dataset:
    pinned_d = pinned_m = None
    rows = []
    max_idx, max_task = -1, -1
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "d":
                    pinned_d = _parse_int(value.strip(), "dimension header", lineno)
                elif key.strip() == "m":
                    pinned_m = _parse_int(value.strip(), "task-count header", lineno)
                continue
            parts = raw.rstrip("\r\n").split("\t")
            if len(parts) not in (2, 3):
                raise DataError(f"line {lineno}: expected 'task<TAB>label<TAB>features'")
            task = _parse_int(parts[0].strip(), "task id", lineno)
            if task < 0 or (pinned_m is not None and task >= pinned_m):
                raise DataError(f"line {lineno}: unknown task id {task}")
            label = _parse_label(parts[1].strip(), lineno)
            idx, val = [], []
            feats = parts[2].split() if len(parts) == 3 else []
            for tok in feats:
                i_tok, sep, v_tok = tok.partition(":")
                if not sep:
                    raise DataError(f"line {lineno}: malformed feature {tok!r}")
                i = _parse_int(i_tok, "feature index", lineno)
                if i < 0 or (pinned_d is not None and i >= pinned_d):
                    raise DataError(f"line {lineno}: feature index {i} out of range")
                if idx and i <= idx[-1]:
                    raise DataError(f"line {lineno}: feature indices must be strictly increasing")
                idx.append(i)
                val.append(_parse_float(v_tok, lineno))
            if idx:
                max_idx = max(max_idx, idx[-1])
            max_task = max(max_task, task)
            rows.append((lineno, task, label, idx, val))
    dim = pinned_d if pinned_d is not None else max_idx + 1
    num_tasks = pinned_m if pinned_m is not None else max_task + 1
    return _assemble(rows, max(dim, 0), max(num_tasks, 0), str(path))


def _load_dense_csv(path: Path) -> Dataset:
    rows = []
    dim, max_task = 0, -1
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Dataset(0, 0, [], str(path))
        header = [h.strip() for h in header]
        if header[:2] != ["task", "label"] or any(h != f"f{j}" for j, h in enumerate(header[2:])):
            raise DataError("line 1: header must be task,label,f0,f1,...")
        dim = len(header) - 2
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            task = _parse_int(rec[0].strip(), "task id", lineno)
            if task < 0:
                raise DataError(f"line {lineno}: unknown task id {task}")
            label = _parse_label(rec[1].strip(), lineno)
            x = np.array([_parse_float(t, lineno) for t in rec[2:]])
            nz = np.flatnonzero(x)
            max_task = max(max_task, task)
            rows.append((lineno, task, label, nz, x[nz]))
    return _assemble(rows, dim, max_task + 1, str(path))


def load_dataset(path, fmt: str = "task-svm") -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such data file: {path}")
    if fmt == "task-svm":
        return _load_task_svm(path)
    if fmt == "dense-csv":
        return _load_dense_csv(path)
    raise DataError(f"unknown data format {fmt!r}")


def write_task_svm(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#d={data.dim}\n#m={data.num_tasks}\n")
        for insts in data.tasks:
            for inst in insts:
                feats = " ".join(f"{i}:{format(v, FLOAT_FMT)}" for i, v in zip(inst.indices, inst.values))
                lab = "+1" if inst.label == 1 else "-1"
                fh.write(f"{inst.task_id}\t{lab}\t{feats}\n")


def shuffle_rounds(data: Dataset, seed: int) -> List[Round]:
    """Permute each task's instances independently and bundle them into rounds.

    Round ``t`` holds the ``t``-th permuted instance of every task that still
    has one, so rounds thin out as the smaller tasks run dry.
    """
    rng = np.random.default_rng(seed)
    permuted = [[insts[j] for j in rng.permutation(len(insts))] for insts in data.tasks]
    horizon = max((len(p) for p in permuted), default=0)
    return [Round(t + 1, tuple(p[t] for p in permuted if t < len(p))) for t in range(horizon)]


def ordered_rounds(data: Dataset) -> List[Round]:
    """Rounds in file order, without shuffling."""
    horizon = max(data.counts, default=0)
    return [Round(t + 1, tuple(insts[t] for insts in data.tasks if t < len(insts))) for t in range(horizon)]


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    m: int
    T: int
    k: int = 1
    outlier_count: int = 0
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.m) < 1 or self.T < 0:
            raise ParameterError("d, m must be >= 1 and T >= 0")
        if not 1 <= self.k <= min(self.d, self.m):
            raise ParameterError(f"rank k must be in [1, min(d, m)], got {self.k}")
        if not 0 <= self.outlier_count <= self.m:
            raise ParameterError("outlier_count must be in [0, m]")
        if not 0 <= self.noise_rate < 0.5:
            raise ParameterError("noise_rate must be in [0, 0.5)")


OUTLIER_NORM = 5.0


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, WeightState]:
    """Planted low-rank-plus-outlier tasks with noisy linear labels.

    Draw order from ``default_rng(seed)``: A (d x k), B (m x k), outlier
    columns, their directions, features (m x T x d), flip uniforms (m x T).
    """
    rng = np.random.default_rng(spec.seed)
    d, m, T, k = spec.d, spec.m, spec.T, spec.k
    A = rng.standard_normal((d, k))
    B = rng.standard_normal((m, k))
    U_true = (A @ B.T) / math.sqrt(k)
    V_true = np.zeros((d, m))
    outliers = np.sort(rng.choice(m, size=spec.outlier_count, replace=False))
    for j in outliers:
        v = rng.standard_normal(d)
        V_true[:, j] = OUTLIER_NORM * v / np.linalg.norm(v)
    X = rng.standard_normal((m, T, d))
    flips = rng.random((m, T)) < spec.noise_rate
    Z = U_true + V_true
    tasks = []
    for i in range(m):
        scores = X[i] @ Z[:, i]
        insts = []
        for t in range(T):
            y = sign(scores[t])
            if flips[i, t]:
                y = -y
            insts.append(TaskInstance(i, np.arange(d), X[i, t], y, d))
        tasks.append(insts)
    prov = (f"synthetic:d={d},m={m},T={T},k={k},outliers={spec.outlier_count},"
            f"noise={spec.noise_rate},seed={spec.seed}")
    return Dataset(m, d, tasks, prov), WeightState(U_true, V_true)


def numerical_rank(M, cutoff: float = 1e-10) -> int:
    s = np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s >= cutoff * s[0]))


def all_instances(rounds: Sequence[Round]) -> List[TaskInstance]:
    return [inst for rnd in rounds for inst in rnd.instances]
