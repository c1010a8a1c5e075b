"""Closed-form posterior-mean denoisers for element-wise latent priors.

With rho ~ prior and rho_noisy = rho + N(0, sigma^2), the optimal denoiser is
E[rho | rho_noisy]. For a Gaussian prior that is a linear shrinkage; for a
Gaussian mixture it is a responsibility-weighted sum of per-component
shrinkages. Both act independently on every element, so any array shape works.
"""

import math
from dataclasses import dataclass

import numpy as np

from nnd.errors import ValidationError


class IdentityDenoiser:
    """D(rho) = rho. Turns the prior score off; used for pure noise walks and tests."""

    def denoise(self, rho_noisy, sigma):
        return np.array(rho_noisy, dtype=np.float64, copy=True)

    def vjp(self, rho_noisy, sigma, cotangent):
        return np.array(cotangent, dtype=np.float64, copy=True)

    def to_json(self) -> dict:
        return {"kind": "identity"}


@dataclass(frozen=True)
class GaussianLatentPrior:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not np.all(np.asarray(self.std) > 0):
            raise ValidationError(f"prior std must be positive, got {self.std}")

    def denoise(self, rho_noisy, sigma):
        return analytic_denoise(self, rho_noisy, sigma)

    def vjp(self, rho_noisy, sigma, cotangent):
        return analytic_vjp(self, rho_noisy, sigma, cotangent)

    def log_marginal(self, rho_noisy, sigma):
        """log density of rho_noisy, i.e. N(mean, std^2 + sigma^2)."""
        var = np.asarray(self.std) ** 2 + sigma ** 2
        r = np.asarray(rho_noisy, dtype=np.float64) - self.mean
        return -0.5 * r ** 2 / var - 0.5 * np.log(2 * math.pi * var)

    def marginal_score(self, rho_noisy, sigma):
        var = np.asarray(self.std) ** 2 + sigma ** 2
        return -(np.asarray(rho_noisy, dtype=np.float64) - self.mean) / var

    def sample(self, rng, size):
        return self.mean + self.std * rng.standard_normal(size)

    def to_json(self) -> dict:
        return {"kind": "gaussian", "mean": float(self.mean), "std": float(self.std)}


@dataclass(frozen=True)
class MixtureLatentPrior:
    weights: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (len(self.weights) == len(self.means) == len(self.stds) and len(w) > 0):
            raise ValidationError("mixture weights, means and stds must have equal nonzero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must be positive and sum to 1, got {self.weights}")
        if np.any(np.asarray(self.stds) <= 0):
            raise ValidationError(f"mixture stds must be positive, got {self.stds}")
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        object.__setattr__(self, "means", tuple(float(v) for v in self.means))
        object.__setattr__(self, "stds", tuple(float(v) for v in self.stds))

    @classmethod
    def from_components(cls, components):
        """Build from [(weight, mean, std), ...]."""
        w, m, s = zip(*components)
        return cls(w, m, s)

    def _component(self, values, ndim):
        return np.asarray(values, dtype=np.float64).reshape((-1,) + (1,) * ndim)

    def _parts(self, rho_noisy, sigma):
        # Component axis first: reductions over a short leading axis are fast in numpy.
        x = np.asarray(rho_noisy, dtype=np.float64)
        w = self._component(self.weights, x.ndim)
        mu = self._component(self.means, x.ndim)
        s2 = self._component(self.stds, x.ndim) ** 2
        var = s2 + sigma ** 2
        logp = np.log(w) - 0.5 * (x - mu) ** 2 / var - 0.5 * np.log(2 * math.pi * var)
        peak = logp.max(axis=0)
        e = np.exp(logp - peak)
        total = e.sum(axis=0)
        resp = e / total
        post_mean = (s2 * x + sigma ** 2 * mu) / var
        return x, var, s2, resp, post_mean, peak + np.log(total)

    def denoise(self, rho_noisy, sigma):
        return analytic_denoise(self, rho_noisy, sigma)

    def vjp(self, rho_noisy, sigma, cotangent):
        return analytic_vjp(self, rho_noisy, sigma, cotangent)

    def log_marginal(self, rho_noisy, sigma):
        return self._parts(rho_noisy, sigma)[5]

    def marginal_score(self, rho_noisy, sigma):
        x, var, _, resp, _, _ = self._parts(rho_noisy, sigma)
        mu = self._component(self.means, x.ndim)
        return np.sum(resp * (-(x - mu) / var), axis=0)

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return np.asarray(self.means)[comp] + np.asarray(self.stds)[comp] * rng.standard_normal(size)

    def to_json(self) -> dict:
        return {"kind": "mixture", "weights": list(self.weights), "means": list(self.means),
                "stds": list(self.stds)}


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")


def analytic_denoise(prior, rho_noisy, sigma):
    """Posterior mean E[rho | rho_noisy] under ``prior`` with Gaussian noise of std ``sigma``."""
    _check_sigma(sigma)
    if isinstance(prior, GaussianLatentPrior):
        s2 = np.asarray(prior.std, dtype=np.float64) ** 2
        rho_noisy = np.asarray(rho_noisy, dtype=np.float64)
        return (s2 * rho_noisy + sigma ** 2 * prior.mean) / (s2 + sigma ** 2)
    if isinstance(prior, MixtureLatentPrior):
        _, _, _, resp, post_mean, _ = prior._parts(rho_noisy, sigma)
        return np.sum(resp * post_mean, axis=0)
    raise TypeError(f"no closed-form denoiser for {type(prior).__name__}")


def analytic_vjp(prior, rho_noisy, sigma, cotangent):
    """cotangent * dD/drho_noisy; the Jacobian is diagonal for element-wise priors."""
    _check_sigma(sigma)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if isinstance(prior, GaussianLatentPrior):
        s2 = np.asarray(prior.std, dtype=np.float64) ** 2
        return cotangent * (s2 / (s2 + sigma ** 2))
    if isinstance(prior, MixtureLatentPrior):
        x, var, s2, resp, post_mean, _ = prior._parts(rho_noisy, sigma)
        # d resp_j / dx = resp_j (g_j - sum_k resp_k g_k), g_j = -(x - mu_j) / var_j
        g = -(x - prior._component(prior.means, x.ndim)) / var
        g_bar = np.sum(resp * g, axis=0)
        d_mean = s2 / var
        deriv = np.sum(resp * (d_mean + (g - g_bar) * post_mean), axis=0)
        return cotangent * deriv
    raise TypeError(f"no closed-form vjp for {type(prior).__name__}")


def prior_from_json(spec: dict):
    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianLatentPrior(float(spec.get("mean", 0.0)), float(spec.get("std", 1.0)))
    if kind == "mixture":
        return MixtureLatentPrior(tuple(spec["weights"]), tuple(spec["means"]), tuple(spec["stds"]))
    if kind == "identity":
        return IdentityDenoiser()
    raise ValidationError(f"unknown analytic denoiser kind {kind!r}")
