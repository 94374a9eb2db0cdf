"""DeepTensor: low-rank matrix/tensor decomposition with untrained
generator-network priors, classical baselines, degradation models and
linear inverse-problem operators."""

from .autograd import ConvSpec, Tensor
from .decompose import (
    DecompositionProblem,
    DecompositionResult,
    DivergenceError,
    compose_matrix,
    cp_compose,
    loss_eval,
    run_decomposition,
    run_inverse_problem,
    split_compose,
)
from .generators import FactorNetwork, NetworkSpec, build_factor_network, sample_latent
from .kernels import active_backend
from .metrics import QualityReport, psnr, ssim
from .optim import AdamState, LrSchedule, adam_step, schedule_lr

__all__ = [
    "AdamState",
    "ConvSpec",
    "DecompositionProblem",
    "DecompositionResult",
    "DivergenceError",
    "FactorNetwork",
    "LrSchedule",
    "NetworkSpec",
    "QualityReport",
    "Tensor",
    "active_backend",
    "adam_step",
    "build_factor_network",
    "compose_matrix",
    "cp_compose",
    "loss_eval",
    "psnr",
    "run_decomposition",
    "run_inverse_problem",
    "sample_latent",
    "schedule_lr",
    "split_compose",
    "ssim",
]

__version__ = "0.1.0"
