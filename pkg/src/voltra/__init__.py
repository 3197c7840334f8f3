"""voltra: volume-preserving transformer integrators for divergence-free ODEs.

The package trains three small sequence models on rigid-body trajectories
and verifies, numerically, that the volume-preserving variants keep the
Jacobian determinant of their forward map at one.
"""

from .dynamics import (
    RigidBodyParams,
    Trajectory,
    WindowBatch,
    generate_dataset,
    implicit_midpoint_step,
    make_windows,
    moments_to_coeffs,
    rigid_body_field,
)
from .errors import VoltraError
from .estimators import (
    StandardTransformer,
    VolumePreservingFeedforward,
    VolumePreservingTransformer,
)
from .evaluation import (
    RolloutResult,
    invariant_series,
    rollout,
    rollout_error,
    verify_volume_preservation,
)
from .gradcheck import GradReport, grad_check
from .layers import ModelSpec, count_params, default_spec, init_params, forward_numpy
from .linalg import SkewSymParam, StrictLowerParam, StrictUpperParam, cayley, materialize
from .params import ParamGroup, ParamStore
from .training import RunRecord, TrainConfig, lr_schedule, relative_l2_loss, train

__version__ = "0.1.0"

__all__ = [
    "GradReport",
    "ModelSpec",
    "ParamGroup",
    "ParamStore",
    "RigidBodyParams",
    "RolloutResult",
    "RunRecord",
    "SkewSymParam",
    "StandardTransformer",
    "StrictLowerParam",
    "StrictUpperParam",
    "TrainConfig",
    "Trajectory",
    "VoltraError",
    "VolumePreservingFeedforward",
    "VolumePreservingTransformer",
    "WindowBatch",
    "cayley",
    "count_params",
    "default_spec",
    "forward_numpy",
    "generate_dataset",
    "grad_check",
    "implicit_midpoint_step",
    "init_params",
    "invariant_series",
    "lr_schedule",
    "make_windows",
    "materialize",
    "moments_to_coeffs",
    "relative_l2_loss",
    "rigid_body_field",
    "rollout",
    "rollout_error",
    "train",
    "verify_volume_preservation",
]
