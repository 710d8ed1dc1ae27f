"""Run records, prequential metrics, shuffle aggregation and the regret diagnostic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core import HyperParams, Round, Variant, WeightState, dense_batch
from .prox import group_norm, logdet_penalty, nuclear_norm, prox_group_lasso, prox_logdet, prox_nuclear


class Entry(NamedTuple):
    round_id: int
    task_id: int
    truth: int
    pred: int
    score: float
    loss: float
    cum_errors: int


class RoundTrace(NamedTuple):
    round_id: int
    loss: float
    composite: float  # L_t(W_t) + r(W_t), evaluated before the update
    updated: bool
    grad_norm: float
    seconds: float


@dataclass
class RunRecord:
    params: Optional[HyperParams] = None
    provenance: str = ""
    num_tasks: int = 0
    entries: List[Entry] = field(default_factory=list)
    rounds: List[RoundTrace] = field(default_factory=list)
    valid: bool = True
    error: Optional[str] = None
    final_state: Optional[WeightState] = None
    runtime_sec: float = 0.0
    update_count: int = 0

    def add(self, round_id, task_id, truth, pred, score, loss) -> None:
        prev = self.entries[-1].cum_errors if self.entries else 0
        self.entries.append(Entry(round_id, task_id, truth, pred, score, loss, prev + (truth != pred)))

    @property
    def total_errors(self) -> int:
        return self.entries[-1].cum_errors if self.entries else 0

    def task_ids(self) -> List[int]:
        return sorted({e.task_id for e in self.entries})


def _filtered(rec: RunRecord, tasks) -> List[Entry]:
    if tasks is None:
        return rec.entries
    if isinstance(tasks, int):
        tasks = {tasks}
    tasks = set(tasks)
    return [e for e in rec.entries if e.task_id in tasks]


def cumulative_error_curve(rec: RunRecord, tasks=None) -> List[Tuple[int, float]]:
    """``(n, errors among the first n entries / n)`` over the filtered entries."""
    out = []
    errors = 0
    for n, e in enumerate(_filtered(rec, tasks), 1):
        errors += e.truth != e.pred
        out.append((n, errors / n))
    return out


def error_rate(rec: RunRecord, tasks=None) -> float:
    entries = _filtered(rec, tasks)
    if not entries:
        return 0.0
    return sum(e.truth != e.pred for e in entries) / len(entries)


def f1_per_class(rec: RunRecord, cls: int, tasks=None) -> Tuple[float, float, float]:
    """Precision, recall and F1 for class ``cls``; empty denominators give 0."""
    tp = fp = fn = 0
    for e in _filtered(rec, tasks):
        if e.pred == cls and e.truth == cls:
            tp += 1
        elif e.pred == cls:
            fp += 1
        elif e.truth == cls:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


METRICS = ("error_rate", "precision_pos", "recall_pos", "f1_pos", "precision_neg", "recall_neg", "f1_neg")


def run_metrics(rec: RunRecord, tasks=None) -> Dict[str, float]:
    pp, rp, fp = f1_per_class(rec, 1, tasks)
    pn, rn, fn = f1_per_class(rec, -1, tasks)
    return dict(error_rate=error_rate(rec, tasks), precision_pos=pp, recall_pos=rp, f1_pos=fp,
                precision_neg=pn, recall_neg=rn, f1_neg=fn)


class Stat(NamedTuple):
    mean: float
    std: float


@dataclass
class MetricSummary:
    per_task: Dict[int, Dict[str, Stat]]
    macro: Dict[str, Stat]
    overall: Dict[str, Stat]
    runtime: Stat
    n_shuffles: int

    @property
    def single_shuffle(self) -> bool:
        return self.n_shuffles == 1


class ProvenanceError(ValueError):
    pass


def _stat(values: Sequence[float]) -> Stat:
    arr = np.asarray(values, dtype=np.float64)
    return Stat(float(arr.mean()), float(arr.std()))  # population std


def aggregate_shuffles(records: Sequence[RunRecord]) -> MetricSummary:
    """Mean and population standard deviation of every metric across runs.

    ``macro`` averages the per-task metrics within each run first; ``overall``
    pools all entries of a run.
    """
    if not records:
        raise ValueError("no records to aggregate")
    first = records[0]
    for rec in records:
        if not rec.valid:
            raise ProvenanceError("cannot aggregate an invalid record")
        if rec.provenance != first.provenance or rec.params != first.params:
            raise ProvenanceError("records come from different datasets or hyperparameters")
    tasks = sorted(set().union(*(r.task_ids() for r in records)))
    per_run = [{t: run_metrics(r, t) for t in tasks} for r in records]
    per_task = {t: {k: _stat([run[t][k] for run in per_run]) for k in METRICS} for t in tasks}
    macro_runs = [{k: float(np.mean([run[t][k] for t in tasks])) if tasks else 0.0 for k in METRICS}
                  for run in per_run]
    macro = {k: _stat([mr[k] for mr in macro_runs]) for k in METRICS}
    overall_runs = [run_metrics(r) for r in records]
    overall = {k: _stat([o[k] for o in overall_runs]) for k in METRICS}
    return MetricSummary(per_task, macro, overall, _stat([r.runtime_sec for r in records]), len(records))


# -- regularizers and the hindsight comparator -------------------------------

def regularizer_value(state: WeightState, params: HyperParams) -> float:
    """``lambda1 * r1(U) + lambda2 * ||V||_{2,1}`` for the run's variant.

    The PA baselines carry no regularizer.
    """
    if not params.variant.is_romco:
        return 0.0
    low_rank = logdet_penalty(state.U) if params.variant is Variant.LOGD else nuclear_norm(state.U)
    return params.lambda1 * low_rank + params.lambda2 * group_norm(state.V)


class _Batch(NamedTuple):
    X: np.ndarray
    tasks: np.ndarray
    labels: np.ndarray
    n_rounds: int


def _batch(rounds: Sequence[Round], d: int) -> _Batch:
    insts = [inst for rnd in rounds for inst in rnd.instances]
    X, tasks, labels = dense_batch(insts, d)
    return _Batch(X, tasks, labels, len(rounds))


def _batch_loss_grad(Z: np.ndarray, b: _Batch):
    margins = b.labels * np.einsum("nd,dn->n", b.X, Z[:, b.tasks])
    losses = np.maximum(0.0, 1.0 - margins)
    coef = np.where(losses > 0, -b.labels, 0.0)
    G = np.zeros_like(Z)
    for i in range(Z.shape[1]):
        sel = b.tasks == i
        if np.any(sel):
            G[:, i] = b.X[sel].T @ coef[sel]
    return float(losses.sum()), G


def composite_objective(state: WeightState, rounds: Sequence[Round], params: HyperParams) -> float:
    """``sum_t [L_t(W) + r(W)]`` for a fixed ``W`` over ``rounds``."""
    if not rounds:
        return 0.0
    b = _batch(rounds, state.shape[0])
    loss, _ = _batch_loss_grad(state.Z, b)
    return loss + b.n_rounds * regularizer_value(state, params)


@dataclass
class Comparator:
    state: WeightState
    objective: float
    history: List[float]
    converged: bool
    step: float


def hindsight_comparator(rounds: Sequence[Round], params: HyperParams, shape: Tuple[int, int],
                         max_iter: int = 500, rtol: float = 1e-8, step: Optional[float] = None) -> Comparator:
    """Batch proximal subgradient on the whole-sequence composite objective.

    Each iteration takes a full subgradient step on ``sum_t L_t`` and then the
    same prox pair as the online learner, with the regularizer scaled by the
    number of rounds. The default step is ``1 / (T * max ||x||^2)``. Stops
    after ``max_iter`` iterations or once the relative objective change falls
    below ``rtol``; returns the best iterate seen.
    """
    d, m = shape
    state = WeightState.zeros(d, m)
    if not rounds:
        return Comparator(state, 0.0, [0.0], True, 0.0)
    b = _batch(rounds, d)
    T = b.n_rounds
    if step is None:
        max_sq = float(np.max(np.einsum("nd,nd->n", b.X, b.X)))
        step = 1.0 / (T * max_sq) if max_sq > 0 else 1.0
    U, V = state.U, state.V
    logd = params.variant is Variant.LOGD

    def objective(U, V):
        loss, G = _batch_loss_grad(U + V, b)
        return loss + T * regularizer_value(WeightState(U, V), params), G

    obj, G = objective(U, V)
    history = [obj]
    best = (obj, U, V)
    converged = False
    for _ in range(max_iter):
        U_hat = U - step * G
        V_hat = V - step * G
        if logd:
            U_new = prox_logdet(U_hat, step, T * params.lambda1)
        else:
            U_new = prox_nuclear(U_hat, step * T * params.lambda1)
        V_new = prox_group_lasso(V_hat, step * T * params.lambda2)
        new_obj, G_new = objective(U_new, V_new)
        U, V, G = U_new, V_new, G_new
        history.append(new_obj)
        if new_obj < best[0]:
            best = (new_obj, U, V)
        if abs(obj - new_obj) <= rtol * max(abs(obj), 1e-300):
            converged = True
            break
        obj = new_obj
    return Comparator(WeightState(best[1], best[2]), best[0], history, converged, step)


# -- regret -----------------------------------------------------------------

class RegretPoint(NamedTuple):
    T: int
    regret: float
    ratio: float  # regret(T) / regret(previous checkpoint); nan for the first


def regret_curve(rec: RunRecord, comparator_objectives: Dict[int, float]) -> List[RegretPoint]:
    """Online composite loss minus the prefix comparator at each checkpoint."""
    cum = np.cumsum([r.composite for r in rec.rounds]) if rec.rounds else np.zeros(0)
    out: List[RegretPoint] = []
    prev = None
    for T in sorted(comparator_objectives):
        online = float(cum[T - 1]) if T > 0 else 0.0
        regret = online - comparator_objectives[T]
        ratio = regret / prev if prev not in (None, 0.0) else math.nan
        out.append(RegretPoint(T, regret, ratio))
        prev = regret
    return out


def default_checkpoints(T: int, levels: int = 4) -> List[int]:
    """``T / 2^j`` for ``j = levels-1 .. 0`` (distinct, positive)."""
    pts = sorted({T >> j for j in range(levels) if T >> j > 0})
    return pts


@dataclass
class RegretReport:
    points: List[RegretPoint]
    comparators: Dict[int, Comparator]
    max_grad_norm: float

    @property
    def final_ratio(self) -> float:
        return self.points[-1].ratio if self.points else math.nan


def regret_diagnostic(rec: RunRecord, rounds: Sequence[Round], params: HyperParams, shape: Tuple[int, int],
                      checkpoints: Optional[Iterable[int]] = None, max_iter: int = 500) -> RegretReport:
    """Regret of a finished run against prefix comparators.

    The comparator uses the run's own regularizer. ``max_grad_norm`` is the
    largest Frobenius norm of the stacked online subgradient seen in the run.
    """
    rounds = list(rounds)
    if checkpoints is None:
        checkpoints = default_checkpoints(len(rounds))
    comps = {T: hindsight_comparator(rounds[:T], params, shape, max_iter=max_iter) for T in checkpoints}
    points = regret_curve(rec, {T: c.objective for T, c in comps.items()})
    gmax = max((r.grad_norm for r in rec.rounds), default=0.0)
    return RegretReport(points, comps, gmax)
