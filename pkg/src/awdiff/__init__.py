"""Wavelet-conditioned denoising diffusion for grayscale ultrasound images."""

from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    ema_update,
    forward_marginal,
    forward_step,
    linear_beta_schedule,
    predict_x0,
    reverse_step,
    sample,
)
from .errors import (
    AwdiffError,
    CorruptionError,
    DivergenceError,
    FormatError,
    InvariantError,
    ParameterError,
)
from .image import load_image, make_rng, save_image, standard_normal_field
from .wavelet import (
    WaveletPyramid,
    atrous_convolve,
    dwt2_forward,
    dwt2_inverse,
    encoder_features,
    starlet_decompose,
    starlet_reconstruct,
)

__version__ = "0.1.0"
