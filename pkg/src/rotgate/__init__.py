"""Rotation-group numerics with a rotation-gated residual correction benchmark."""

from . import errors, jsonio, metrics, se3, so3
from .config import BenchConfig, load_config
from .data import (
    Identity3D,
    Observation,
    SynthDataset,
    ToyBackbone,
    extract_features,
    generate_dataset,
    split_identities,
)
from .experiment import EvalReport, evaluate_split, run_experiment
from .gating import GateKind, PoseAngles, effective_angle, gate
from .optim import (
    OptimizerConfig,
    OptimizerTrace,
    RotationObjective,
    minimize,
    numeric_gradient,
    perturbation_step,
    wahba_objective,
)
from .residual import (
    SubnetParams,
    TrainConfig,
    TrainedModel,
    frontalize,
    residual_forward,
    train_end_to_end,
    train_subnet,
)
from .se3 import Transform, se3_exp, se3_log, twist_hat
from .so3 import (
    bch_compose_left,
    check_algebra_properties,
    exp_map,
    geodesic_distance,
    hat,
    left_jacobian,
    left_jacobian_inv,
    log_map,
    perturbation_derivative,
    rotate_point,
    vee,
)

__version__ = "0.1.0"
