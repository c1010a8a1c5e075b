"""Nonnegative diffusion: annealed Langevin dynamics in a log-latent space."""

from nnd.errors import DivergenceError, NNDError, ValidationError
from nnd.latent import (
    DEFAULT_EPS,
    Field,
    LatentField,
    ScaleSpec,
    apply_scale,
    from_latent,
    read_nndf,
    to_latent,
    write_nndf,
)
from nnd.schedule import AnnealSchedule, TrainSigmas, anneal_schedule, train_sigmas

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_EPS",
    "AnnealSchedule",
    "DivergenceError",
    "Field",
    "LatentField",
    "NNDError",
    "ScaleSpec",
    "TrainSigmas",
    "ValidationError",
    "anneal_schedule",
    "apply_scale",
    "from_latent",
    "read_nndf",
    "to_latent",
    "train_sigmas",
    "write_nndf",
]
