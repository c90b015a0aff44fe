"""Lyapunov-spectrum robustness analysis and co-design for small controlled
dynamical systems.

The pipeline: a differentiable transition map is iterated into a trajectory,
forward-mode jets extract exact per-step Jacobians, QR- or SVD-based
accumulators turn those into a Lyapunov spectrum, and the signed sum of the
exponents serves as a robustness metric that an Adam loop can optimize over
hardware and controller parameters alike.
"""

from ._backend import COMPILED_ACTIVE, backend_name
from .jets import (
    JacobianMatrix,
    Jet,
    finite_diff_jacobian,
    grad_scalar_fd,
    jacobian_params,
    jacobian_state,
)
from .decomp import QRFactors, SVDFactors, log_singular_values, qr, svd
from .optimize import (
    CodesignResult,
    LossSpec,
    LossTerm,
    OptimizerState,
    adam_step,
    codesign,
    eval_loss,
)
from .spectrum import (
    InvarianceResult,
    LyapunovSpectrum,
    RobustnessMetric,
    Trajectory,
    estimate_spectrum,
    invariance_study,
    robustness_metric,
    rollout,
    spectrum_from_jacobians,
    spectrum_qr_local,
    spectrum_qr_propagated,
    spectrum_svd_local,
    trajectory_jacobians,
)
from .systems import (
    GaitParams,
    Hopper1D,
    HopperParams,
    LinearMap,
    LogisticMap,
    HenonMap,
    Manipulator2R,
    ManipulatorParams,
    TransitionMap,
    VanDerPolMap,
    gait_reference,
    hopper_contact_force,
    hopper_step,
    make_system,
    manipulator_control,
    manipulator_fk,
    manipulator_step,
    step,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
