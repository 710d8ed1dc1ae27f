"""Domain types, prediction, hinge loss and the per-round subgradient.

The learner's weight matrix is split into a correlative part ``U`` and a
personalized part ``V`` (both ``d x m``); task ``i`` predicts with the column
``u_i + v_i``.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Dict, NamedTuple, Sequence, Tuple

import numpy as np


class StructuralError(ValueError):
    """Inputs whose shapes, indices or labels are inconsistent."""


class ParameterError(ValueError):
    """Hyperparameters outside their admissible range."""


class NumericError(ArithmeticError):
    """Non-finite values appeared in the learner state."""


class Variant(str, enum.Enum):
    NUCL = "nucl"
    LOGD = "logd"
    PA_GLOBAL = "pa-global"
    PA_UNIQUE = "pa-unique"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("_", "-")
        aliases = {"romco-nucl": "nucl", "romco-logd": "logd", "paglobal": "pa-global", "paunique": "pa-unique"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown variant {name!r}") from None

    @property
    def is_romco(self) -> bool:
        return self in (Variant.NUCL, Variant.LOGD)


@dataclass(frozen=True, eq=False)
class TaskInstance:
    """One labelled example for one task, with a sparse feature vector.

    ``indices`` are strictly increasing positions in ``[0, dim)`` and
    ``values`` the matching entries.
    """

    task_id: int
    indices: np.ndarray
    values: np.ndarray
    label: int
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape:
            raise StructuralError("indices and values differ in length")
        if self.label not in (1, -1):
            raise StructuralError(f"label must be +1 or -1, got {self.label!r}")
        if self.task_id < 0:
            raise StructuralError(f"negative task id {self.task_id}")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise StructuralError(f"feature index out of range [0, {self.dim})")
            if np.any(np.diff(idx) <= 0):
                raise StructuralError("feature indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise StructuralError("non-finite feature value")

    @classmethod
    def from_dense(cls, task_id: int, x, label: int) -> "TaskInstance":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        nz = np.flatnonzero(x)
        return cls(int(task_id), nz, x[nz], int(label), x.size)

    def dense(self) -> np.ndarray:
        x = np.zeros(self.dim)
        x[self.indices] = self.values
        return x

    def sq_norm(self) -> float:
        return float(self.values @ self.values)

    def __eq__(self, other):
        if not isinstance(other, TaskInstance):
            return NotImplemented
        return (self.task_id == other.task_id and self.label == other.label
                and self.dim == other.dim
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class Round:
    round_id: int
    instances: Tuple[TaskInstance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = [inst.task_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise StructuralError(f"round {self.round_id}: duplicate task ids {ids}")
        if self.round_id < 1:
            raise StructuralError("round ids start at 1")


@dataclass
class WeightState:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.U.shape != self.V.shape:
            raise StructuralError(f"U {self.U.shape} and V {self.V.shape} must be matrices of equal shape")

    @classmethod
    def zeros(cls, d: int, m: int) -> "WeightState":
        return cls(np.zeros((d, m)), np.zeros((d, m)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.U.shape

    @property
    def Z(self) -> np.ndarray:
        return self.U + self.V

    def column(self, task_id: int) -> np.ndarray:
        return self.U[:, task_id] + self.V[:, task_id]

    def copy(self) -> "WeightState":
        return WeightState(self.U.copy(), self.V.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V)))

    def fingerprint(self) -> str:
        """Hash of the exact bytes of both matrices."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.U).tobytes())
        h.update(np.ascontiguousarray(self.V).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class HyperParams:
    eta1: float
    eta2: float
    lambda1: float
    lambda2: float
    variant: Variant = Variant.NUCL
    seed: int = 0
    # multiplicative growth of 1/rho per update (log-det only); 1.0 keeps rho fixed
    rho_growth: float = 1.0
    pa_c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant) if isinstance(self.variant, str) else self.variant)
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ParameterError("learning rates must be positive")
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ParameterError("regularization weights must be nonnegative")
        if not self.rho_growth >= 1.0:
            raise ParameterError("rho_growth must be >= 1")
        if not self.pa_c > 0:
            raise ParameterError("PA aggressiveness must be positive")

    @property
    def rho(self) -> float:
        return self.eta1 * self.lambda1


def _check(state: WeightState, inst: TaskInstance) -> None:
    d, m = state.shape
    if inst.task_id >= m:
        raise StructuralError(f"task id {inst.task_id} out of range for m={m}")
    if inst.dim != d:
        raise StructuralError(f"instance dimension {inst.dim} does not match d={d}")


def score(state: WeightState, inst: TaskInstance) -> float:
    _check(state, inst)
    i = inst.task_id
    return float(inst.values @ (state.U[inst.indices, i] + state.V[inst.indices, i]))


def sign(s: float) -> int:
    return 1 if s >= 0 else -1


def predict(state: WeightState, inst: TaskInstance) -> Tuple[float, int]:
    """Return ``(score, label)``; a zero score predicts +1."""
    s = score(state, inst)
    return s, sign(s)


def hinge_loss(score: float, label: int) -> float:
    return max(0.0, 1.0 - label * score)


class RoundLoss(NamedTuple):
    total_loss: float
    grad_U: np.ndarray
    grad_V: np.ndarray
    per_task_loss: Dict[int, float]
    scores: Dict[int, float]


def round_loss_and_subgradient(state: WeightState, rnd: Round) -> RoundLoss:
    """Hinge loss summed over the tasks present in ``rnd`` and its subgradient.

    Active tasks get column ``-y x`` in both gradients; tasks at or beyond
    the hinge kink, and tasks absent from the round, get zeros.
    """
    d, m = state.shape
    grad = np.zeros((d, m))
    per_task: Dict[int, float] = {}
    scores: Dict[int, float] = {}
    total = 0.0
    for inst in rnd.instances:
        s = score(state, inst)
        loss = hinge_loss(s, inst.label)
        scores[inst.task_id] = s
        per_task[inst.task_id] = loss
        total += loss
        if loss > 0:
            grad[inst.indices, inst.task_id] = -inst.label * inst.values
    return RoundLoss(total, grad, grad.copy(), per_task, scores)


def round_loss(state: WeightState, rnd: Round) -> float:
    return sum(hinge_loss(score(state, inst), inst.label) for inst in rnd.instances)


def dense_batch(instances: Sequence[TaskInstance], d: int):
    """Stack instances into ``(X, task_ids, labels)`` arrays."""
    X = np.zeros((len(instances), d))
    tasks = np.empty(len(instances), dtype=np.int64)
    labels = np.empty(len(instances))
    for n, inst in enumerate(instances):
        if inst.dim != d:
            raise StructuralError(f"instance dimension {inst.dim} does not match d={d}")
        X[n, inst.indices] = inst.values
        tasks[n] = inst.task_id
        labels[n] = inst.label
    return X, tasks, labels
