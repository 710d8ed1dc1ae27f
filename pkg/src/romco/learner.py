"""Online learners: ROMCO with nuclear-norm or log-det low-rank prox, and PA baselines.

Every learner is prequential: all predictions for a round come from the
state before that round's update.
"""
from __future__ import annotations

import math
import time
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import numpy as np

from .core import (HyperParams, NumericError, Round, StructuralError, Variant, WeightState, hinge_loss,
                   round_loss_and_subgradient, score, sign)
from .evaluation import RoundTrace, RunRecord, regularizer_value
from .prox import prox_group_lasso, prox_logdet, prox_nuclear


class StepResult(NamedTuple):
    predictions: Dict[int, int]
    updated: bool
    scores: Dict[int, float]
    losses: Dict[int, float]
    composite: float
    grad_norm: float


def theory_rate(horizon: int) -> float:
    """Constant step ``1 / sqrt(T)`` giving the ``O(sqrt(T))`` regret rate."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return 1.0 / math.sqrt(horizon)


class Learner:
    """Shared bookkeeping; subclasses implement :meth:`_step`."""

    def __init__(self, params: HyperParams, d: int, m: int):
        self.params = params
        self.d, self.m = d, m
        self.round_counter = 0
        self.update_counter = 0

    @property
    def state(self) -> WeightState:
        raise NotImplementedError

    def step(self, rnd: Round) -> StepResult:
        result = self._step(rnd)
        self.round_counter += 1
        self.update_counter += result.updated
        return result

    def _step(self, rnd: Round) -> StepResult:
        raise NotImplementedError


class RomcoLearner(Learner):
    """Low-rank ``U`` plus column-sparse ``V``, one prox step per erring round."""

    def __init__(self, params: HyperParams, d: int, m: int):
        if not params.variant.is_romco:
            raise ValueError(f"{params.variant} is not a ROMCO variant")
        super().__init__(params, d, m)
        self._state = WeightState.zeros(d, m)
        self.inv_rho = 1.0 / params.rho if params.rho > 0 else math.inf

    @property
    def state(self) -> WeightState:
        return self._state

    def _step(self, rnd: Round) -> StepResult:
        p = self.params
        st = self._state
        rl = round_loss_and_subgradient(st, rnd)
        preds = {t: sign(s) for t, s in rl.scores.items()}
        composite = rl.total_loss + regularizer_value(st, p)
        grad_norm = math.sqrt(2.0) * float(np.linalg.norm(rl.grad_U))
        if not any(loss > 0 for loss in rl.per_task_loss.values()):
            return StepResult(preds, False, rl.scores, rl.per_task_loss, composite, grad_norm)
        with np.errstate(over="ignore", invalid="ignore"):
            U_hat = st.U - p.eta1 * rl.grad_U
            V_hat = st.V - p.eta2 * rl.grad_V
        if not (np.all(np.isfinite(U_hat)) and np.all(np.isfinite(V_hat))):
            raise NumericError(f"non-finite gradient step in round {rnd.round_id}")
        if p.variant is Variant.LOGD:
            U = prox_logdet(U_hat, p.eta1, p.lambda1, rho=1.0 / self.inv_rho)
        else:
            U = prox_nuclear(U_hat, p.eta1 * p.lambda1)
        V = prox_group_lasso(V_hat, p.eta2 * p.lambda2)
        new = WeightState(U, V)
        if not new.is_finite():
            raise NumericError(f"non-finite state after round {rnd.round_id}")
        self._state = new
        if p.variant is Variant.LOGD:
            self.inv_rho *= p.rho_growth
        return StepResult(preds, True, rl.scores, rl.per_task_loss, composite, grad_norm)


def pa_update(w: np.ndarray, x_idx: np.ndarray, x_val: np.ndarray, y: int, C: float) -> bool:
    """PA-I step in place: ``w += min(C, loss / ||x||^2) * y * x``.

    Returns whether ``w`` changed; zero-norm inputs are skipped.
    """
    loss = hinge_loss(float(x_val @ w[x_idx]), y)
    sq = float(x_val @ x_val)
    if loss <= 0 or sq == 0:
        return False
    tau = min(C, loss / sq)
    w[x_idx] += tau * y * x_val
    return True


class PAUnique(Learner):
    """Independent PA classifier per task."""

    def __init__(self, params: HyperParams, d: int, m: int):
        super().__init__(params, d, m)
        self.W = np.zeros((d, m))

    @property
    def state(self) -> WeightState:
        return WeightState(self.W.copy(), np.zeros_like(self.W))

    def _step(self, rnd: Round) -> StepResult:
        st = WeightState(self.W, np.zeros_like(self.W))
        scores = {inst.task_id: score(st, inst) for inst in rnd.instances}
        losses = {inst.task_id: hinge_loss(scores[inst.task_id], inst.label) for inst in rnd.instances}
        W = self.W.copy()
        updated = False
        for inst in rnd.instances:
            col = W[:, inst.task_id]
            updated |= pa_update(col, inst.indices, inst.values, inst.label, self.params.pa_c)
            W[:, inst.task_id] = col
        self.W = W
        return StepResult({t: sign(s) for t, s in scores.items()}, updated, scores, losses,
                          sum(losses.values()), 0.0)


class PAGlobal(Learner):
    """A single PA classifier shared by all tasks.

    Instances of a round are applied in task order, each against the
    weights left by the previous one.
    """

    def __init__(self, params: HyperParams, d: int, m: int):
        super().__init__(params, d, m)
        self.w = np.zeros(d)

    @property
    def state(self) -> WeightState:
        return WeightState(np.tile(self.w[:, None], (1, self.m)), np.zeros((self.d, self.m)))

    def _step(self, rnd: Round) -> StepResult:
        scores, losses = {}, {}
        for inst in rnd.instances:
            if inst.task_id >= self.m or inst.dim != self.d:
                raise StructuralError(f"instance (task {inst.task_id}, dim {inst.dim}) does not fit "
                                      f"d={self.d}, m={self.m}")
            s = float(inst.values @ self.w[inst.indices])
            scores[inst.task_id] = s
            losses[inst.task_id] = hinge_loss(s, inst.label)
        w = self.w.copy()
        updated = False
        for inst in sorted(rnd.instances, key=lambda i: i.task_id):
            updated |= pa_update(w, inst.indices, inst.values, inst.label, self.params.pa_c)
        self.w = w
        return StepResult({t: sign(s) for t, s in scores.items()}, updated, scores, losses,
                          sum(losses.values()), 0.0)


def make_learner(params: HyperParams, d: int, m: int) -> Learner:
    if params.variant is Variant.PA_GLOBAL:
        return PAGlobal(params, d, m)
    if params.variant is Variant.PA_UNIQUE:
        return PAUnique(params, d, m)
    return RomcoLearner(params, d, m)


def run_sequence(params: HyperParams, rounds: Iterable[Round], shape: Tuple[int, int],
                 record: Optional[RunRecord] = None, provenance: str = "") -> RunRecord:
    """Drive a fresh learner over ``rounds`` and record every prediction.

    A structural or numeric failure stops the run; the partial record is
    returned with ``valid=False`` and the error message.
    """
    d, m = shape
    learner = make_learner(params, d, m)
    rec = record if record is not None else RunRecord(params=params, provenance=provenance, num_tasks=m)
    start = time.perf_counter()
    try:
        for rnd in rounds:
            t0 = time.perf_counter()
            res = learner.step(rnd)
            elapsed = time.perf_counter() - t0
            for inst in sorted(rnd.instances, key=lambda i: i.task_id):
                t = inst.task_id
                rec.add(rnd.round_id, t, inst.label, res.predictions[t], res.scores[t], res.losses[t])
            rec.rounds.append(RoundTrace(rnd.round_id, sum(res.losses.values()), res.composite,
                                         res.updated, res.grad_norm, elapsed))
    except (StructuralError, NumericError) as exc:
        rec.valid = False
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.runtime_sec = time.perf_counter() - start
    rec.final_state = learner.state
    rec.update_count = learner.update_counter
    return rec
