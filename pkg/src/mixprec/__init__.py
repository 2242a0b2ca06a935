"""Mixed-precision accumulation for MLP inference.

Emulates reduced-precision floating-point arithmetic bit-exactly, runs MLP
forward passes whose inner products accumulate in per-component precisions
chosen by estimated condition numbers, and verifies the componentwise
forward error bounds that justify the precision switch.
"""

from .activations import ActivationKind
from .backends import active_backend, available_backends, use_backend
from .bounds import (
    eps_closed_form,
    eps_recurrence_step,
    eps_scalar_recurrence,
    measure_empirical_error,
    mixed_cost,
    tolerance_from_target,
)
from .conditioning import (
    EstimatorMode,
    KappaEstimator,
    kappa_dot,
    kappa_layer_exact,
    kappa_layer_practical,
    kappa_phi,
)
from .data import Dataset, load_dataset, load_model, save_model, synthetic_net
from .linalg import Matrix, SaturationCounter, Vector, abs_mma, mma, mma_mixed, mma_row
from .network import (
    Layer,
    LayerTrace,
    Network,
    activate,
    forward_mixed,
    forward_multi,
    forward_oracle,
    forward_uniform,
)
from .precision import (
    FORMATS,
    FP8_E4M3,
    FP16,
    FP32,
    FloatFormat,
    OverflowPolicy,
    quantize,
    rounded_add,
    rounded_mul,
    unit_roundoff,
)
from .trainer import TrainConfig, TrainingDivergedError, train

__version__ = "0.1.0"
