"""Annealed Langevin samplers: latent generation, latent posterior sampling, direct-space baseline."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from nnd import rng as rngmod
from nnd.errors import DivergenceError, ValidationError
from nnd.forward import Measurement
from nnd.latent import DEFAULT_EPS, Field, ScaleSpec, apply_scale, from_latent
from nnd.schedule import AnnealSchedule, anneal_schedule
from nnd.score import denoise_with_pullback, likelihood_grad

log = logging.getLogger(__name__)

INIT_MODES = ("latent-eps-centered", "latent-zero-centered", "direct")


@dataclass
class RunConfig:
    schedule: AnnealSchedule = field(default_factory=anneal_schedule)
    eps: float = DEFAULT_EPS
    init: str = "latent-eps-centered"
    seed: int = 0
    dims: tuple = (16, 16, 16)
    channels: tuple = ("x",)
    scale: ScaleSpec | None = None
    likelihood_weight: float = 1.0
    divergence_bound: float = 1e3
    trace: bool = True
    snapshot_every: int = 0
    # Index of an independent run sharing ``seed``; selects separate init/noise substreams.
    run: int = 0

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ValidationError(f"unknown init mode {self.init!r}; expected one of {INIT_MODES}")
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if not self.divergence_bound > 0:
            raise ValidationError("divergence_bound must be positive")
        self.dims = tuple(int(d) for d in self.dims)
        self.channels = tuple(self.channels)

    @property
    def shape(self) -> tuple:
        return self.dims + (len(self.channels),)

    def stream(self, name: str) -> str:
        return name if self.run == 0 else f"{name}/run{self.run}"


@dataclass
class Trace:
    """Per-iteration statistics of the state entering iteration t (so the first row is the init)."""

    seed: int = 0
    rng: str = rngmod.ALGORITHM
    rows: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    COLUMNS = ("t", "sigma", "alpha", "min", "max", "mean", "neg_frac",
               "prior_score_norm", "lik_grad_norm", "noise_std", "residual_norm")

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=np.float64)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                            for c in self.COLUMNS])


def initial_state(config: RunConfig, shape=None) -> np.ndarray:
    """rho_T (or x_T for the direct baseline) drawn from the ``init`` substream."""
    shape = config.shape if shape is None else shape
    gen = rngmod.substream(config.seed, config.stream("init"))
    sigma_T = config.schedule.sigma(config.schedule.T)
    center = math.log(config.eps) if config.init == "latent-eps-centered" else 0.0
    return center + sigma_T * gen.standard_normal(shape)


def _norm(v) -> float:
    return float(np.sqrt(np.sum(np.square(v))))


def _run(config: RunConfig, denoiser, state, fm=None, y=None, latent=True):
    trace = Trace(seed=config.seed)
    use_lik = fm is not None and config.likelihood_weight != 0
    if use_lik:
        y = y if isinstance(y, Measurement) else Measurement(y)
        if np.any(y.values <= 0):
            raise ValidationError("measurements must be strictly positive")
    residuals = []
    for t, sigma, alpha in config.schedule.countdown():
        if use_lik:
            rho_hat, pullback = denoise_with_pullback(denoiser, state, sigma)
        else:
            rho_hat = denoiser.denoise(state, sigma)
        drift = (rho_hat - state) / sigma ** 2
        prior_norm = _norm(drift) if config.trace else 0.0
        lik_norm = 0.0
        residual = float("nan")
        if use_lik:
            g = likelihood_grad(denoiser, fm, y, state, sigma, rho_hat=rho_hat, pullback=pullback)
            lik_norm = _norm(g)
            drift = drift + config.likelihood_weight * g
            if config.trace:
                residual = _norm(y.values - fm.apply(np.exp(rho_hat)))
                residuals.append(residual)
        gen = rngmod.substream(config.seed, config.stream("noise"), t)
        noise = math.sqrt(2.0 * alpha) * gen.standard_normal(state.shape)
        if config.trace:
            trace.rows.append({
                "t": t, "sigma": sigma, "alpha": alpha,
                "min": float(state.min()), "max": float(state.max()), "mean": float(state.mean()),
                "neg_frac": float(np.mean(state < 0)),
                "prior_score_norm": prior_norm, "lik_grad_norm": lik_norm,
                "noise_std": float(noise.std()), "residual_norm": residual,
            })
            if config.snapshot_every and (config.schedule.T - t) % config.snapshot_every == 0:
                trace.snapshots[t] = state.copy()
        state = state + alpha * drift + noise
        if latent:
            peak = np.max(np.abs(state)) if state.size else 0.0
            if not np.isfinite(peak) or peak > config.divergence_bound:
                raise DivergenceError(
                    f"latent magnitude {peak:.4g} exceeded bound {config.divergence_bound:g} at t={t}")
    if len(residuals) > 1 and np.all(np.diff(residuals) > 0):
        log.warning("data residual grew monotonically over the whole run")
        trace.notes["residual_monotone_growth"] = True
    return state, trace


def _to_output(config: RunConfig, rho0):
    x = from_latent(rho0)
    if x.ndim == 4 and x.shape[3] == len(config.channels):
        f = Field(x, config.channels)
        if config.scale is not None:
            f = apply_scale(f, config.scale, "inverse")
        return f
    return x


def generate(config: RunConfig, denoiser):
    """Latent ALD: rho <- rho + alpha_t (D(rho) - rho) / sigma_t^2 + sqrt(2 alpha_t) eta; x0 = exp(rho_0).

    Returns (Field, Trace). The Field is rescaled to physical units when
    ``config.scale`` is set.
    """
    if config.init == "direct":
        raise ValidationError("init mode 'direct' is only valid for the direct-space baseline")
    rho, trace = _run(config, denoiser, initial_state(config))
    trace.notes["latent_final"] = rho
    return _to_output(config, rho), trace


def invert(config: RunConfig, denoiser, fm, y):
    """Latent ALD with the data term alpha_t * w * grad log p(y | exp(D(rho))) added."""
    if config.init == "direct":
        raise ValidationError("init mode 'direct' is only valid for the direct-space baseline")
    rho, trace = _run(config, denoiser, initial_state(config), fm=fm, y=y)
    trace.notes["latent_final"] = rho
    return _to_output(config, rho), trace


def generate_direct_baseline(config: RunConfig, denoiser_on_x):
    """Object-space ALD started from N(0, sigma_T^2). Output may contain negative values."""
    if config.init != "direct":
        raise ValidationError("the direct-space baseline requires init mode 'direct'")
    x, trace = _run(config, denoiser_on_x, initial_state(config), latent=False)
    return x, trace
