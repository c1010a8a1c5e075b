"""Latent-space gradient terms: prior score from a denoiser and the data-term gradient."""

import numpy as np

from nnd.errors import ValidationError
from nnd.forward import Measurement


def prior_score(denoiser, rho_noisy, sigma, rho_hat=None):
    """(D(rho_noisy, sigma) - rho_noisy) / sigma^2. Pass ``rho_hat`` to reuse a denoiser output."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    rho_noisy = np.asarray(rho_noisy, dtype=np.float64)
    if rho_hat is None:
        rho_hat = denoiser.denoise(rho_noisy, sigma)
    return (rho_hat - rho_noisy) / sigma ** 2


def denoise_with_pullback(denoiser, rho_noisy, sigma):
    """Return (rho_hat, pullback) where pullback(v) = v^T dD/drho_noisy."""
    if hasattr(denoiser, "denoise_and_vjp"):
        return denoiser.denoise_and_vjp(rho_noisy, sigma)
    rho_hat = denoiser.denoise(rho_noisy, sigma)
    return rho_hat, lambda v: denoiser.vjp(rho_noisy, sigma, v)


def likelihood_grad(denoiser, fm, y, rho_noisy, sigma, rho_hat=None, pullback=None):
    """Gradient wrt rho_noisy of log p(y | exp(D(rho_noisy))), variance approximated by y.

    The chain is: residual (y - F(x_hat)) / y, pulled back through the forward
    model at x_hat = exp(rho_hat), times x_hat (d exp / d rho_hat), then pulled
    back through the denoiser.
    """
    yv = np.asarray(y.values if isinstance(y, Measurement) else y, dtype=np.float64).ravel()
    if np.any(yv <= 0):
        raise ValidationError("measurements must be strictly positive")
    if rho_hat is None or pullback is None:
        rho_hat, pullback = denoise_with_pullback(denoiser, rho_noisy, sigma)
    x_hat = np.exp(rho_hat)
    f = fm.apply(x_hat)
    if not np.all(np.isfinite(f)):
        raise ValidationError("forward model produced non-finite output")
    g_x = fm.vjp(x_hat, (yv - f) / yv)
    return pullback(g_x * x_hat)
