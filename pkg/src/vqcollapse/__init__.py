"""Simulator and analysis toolkit for dimensional collapse in VQ autoencoders."""

__version__ = "0.1.0"

from .ae_flow import (
    DiagState,
    InitConfig,
    ae_derivatives,
    closed_form_activation,
    integrate_ae,
    warmup_checkpoint,
)
from .errors import DivergenceError
from .rdae_dense import (
    DenseChannel,
    DenseRunResult,
    DenseSimConfig,
    DenseState,
    dense_channel,
    dense_eigenvalue_rate,
    dense_rdae_derivatives,
    dense_water_level_log_derivative,
    integrate_dense_rdae,
)
from .rdae_diag import (
    ConvergenceReport,
    DiagSimConfig,
    diag_rdae_derivatives,
    integrate_diag_rdae,
    logistic_rate,
    plateau_loss,
    reconstruction_loss_diag,
)
from .spectral import (
    Spectrum,
    effective_dimension,
    eigen_spectrum,
    load_latents,
    power_law_spectrum,
)
from .toyvq import (
    Codebook,
    VQReport,
    VQTrainConfig,
    export_codebook_csv,
    kmeans_init,
    quantize,
    respawn_dead_codes,
    run_vq_experiment,
    vq_train_step,
)
from .trajectory import Trajectory, median_trajectory
from .warmup import (
    SwitchAdvice,
    WarmupPrediction,
    advise_switch,
    loss_lower_bound,
    predict_from_spectrum,
    predict_surviving_modes,
    predict_warmup,
)
from .waterfill import (
    RDChannel,
    channel_params,
    shannon_distortion,
    solve_water_level,
    water_level_log_derivative,
)

__all__ = [
    "__version__",
    "Spectrum",
    "power_law_spectrum",
    "eigen_spectrum",
    "effective_dimension",
    "load_latents",
    "RDChannel",
    "solve_water_level",
    "shannon_distortion",
    "channel_params",
    "water_level_log_derivative",
    "DiagState",
    "InitConfig",
    "ae_derivatives",
    "closed_form_activation",
    "integrate_ae",
    "warmup_checkpoint",
    "DiagSimConfig",
    "ConvergenceReport",
    "diag_rdae_derivatives",
    "reconstruction_loss_diag",
    "logistic_rate",
    "integrate_diag_rdae",
    "plateau_loss",
    "DenseState",
    "DenseChannel",
    "DenseSimConfig",
    "DenseRunResult",
    "dense_channel",
    "dense_rdae_derivatives",
    "dense_eigenvalue_rate",
    "dense_water_level_log_derivative",
    "integrate_dense_rdae",
    "WarmupPrediction",
    "SwitchAdvice",
    "predict_surviving_modes",
    "loss_lower_bound",
    "predict_warmup",
    "predict_from_spectrum",
    "advise_switch",
    "Codebook",
    "VQTrainConfig",
    "VQReport",
    "quantize",
    "kmeans_init",
    "vq_train_step",
    "respawn_dead_codes",
    "run_vq_experiment",
    "export_codebook_csv",
    "Trajectory",
    "median_trajectory",
    "DivergenceError",
]
