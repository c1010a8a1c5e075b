from nnd.denoise.analytic import (
    GaussianLatentPrior,
    IdentityDenoiser,
    MixtureLatentPrior,
    analytic_denoise,
    analytic_vjp,
    prior_from_json,
)
from nnd.denoise.neural import NeuralDenoiser, n_params
from nnd.denoise.training import TrainOptions, TrainResult, train

__all__ = [
    "GaussianLatentPrior",
    "IdentityDenoiser",
    "MixtureLatentPrior",
    "NeuralDenoiser",
    "TrainOptions",
    "TrainResult",
    "analytic_denoise",
    "analytic_vjp",
    "n_params",
    "prior_from_json",
    "train",
]
