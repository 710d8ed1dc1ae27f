"""Online multi-task learning with low-rank plus column-sparse weights."""
from .core import (HyperParams, NumericError, ParameterError, Round, StructuralError, TaskInstance,
                   Variant, WeightState, hinge_loss, predict, round_loss_and_subgradient)

__version__ = "0.1.0"
