"""Diffusion with depth-dependent B-map noise schedules for ultrasound-like images."""

__version__ = "0.1.0"

from .core import (
    DimensionError,
    NumericDegenerateError,
    ParameterError,
    RngStream,
    gaussian_field,
    grid_fill,
    hadamard,
    to_signed,
    to_unit,
)
from .schedule import (
    BMapSpec,
    BMapStack,
    Cone,
    ScheduleTable,
    alpha_schedule,
    build_bmap,
    build_bmap_stack,
    gamma_trajectory,
    per_pixel_snr,
)
from .diffusion import (
    ForwardSample,
    PosteriorParams,
    ancestral_sample,
    forward_closed,
    forward_step,
    iterated_equals_closed_check,
    marginal_kl,
    posterior_bayes_oracle,
    posterior_params,
    predict_x0_from_eps,
    training_pair,
)
from .denoiser import (
    DenoiserParams,
    OptimizerState,
    TrainConfig,
    adam_init,
    adam_step,
    denoiser_forward,
    denoiser_init,
    loss_and_grads,
    train,
)
from .phantom import Inclusion, PhantomSpec, depth_profile, phantom_dataset, phantom_generate
from .metrics import FeatureStats, feature_embed, frechet_distance, matrix_sqrt_psd, psnr, ssim
