"""Brute-force reference computations used to check the analytic and sampled results.

Nothing here imports the denoisers, score terms or samplers it is used to
check. Everything is scalar/1D: quadrature on a dense grid, central
differences, and empirical distribution distances.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from nnd.errors import ValidationError

_LOG_TINY = math.log(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int = 10_000

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValidationError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.n < 1000:
            raise ValidationError(f"oracle grids need at least 1000 points, got {self.n}")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @classmethod
    def around(cls, mean, std, n=10_000, width=12.0):
        """mean +- width*std; Gaussian tails beyond 12 std are below 1e-30."""
        return cls(mean - width * std, mean + width * std, n)


def normal_pdf(x, mean, std):
    return np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))


def gaussian_density(grid: Grid1D, mean, std):
    return normal_pdf(grid.points, mean, std)


def mixture_density(grid: Grid1D, weights, means, stds):
    x = grid.points
    return sum(w * normal_pdf(x, m, s) for w, m, s in zip(weights, means, stds))


def _check_density(grid, density, tol=1e-6):
    density = np.asarray(density, dtype=np.float64)
    if density.shape != (grid.n,):
        raise ValidationError(f"density has shape {density.shape}, grid has {grid.n} points")
    mass = trapezoid(density, grid.points)
    if abs(mass - 1.0) > tol:
        raise ValidationError(f"prior density integrates to {mass:.9g}, not 1")
    return density


def oracle_posterior_mean(grid: Grid1D, prior_density, rho_noisy, sigma):
    """E[rho | rho_noisy] for rho ~ prior, rho_noisy = rho + N(0, sigma^2), by trapezoidal quadrature.

    ``rho_noisy`` may be an array; each entry is an independent query.
    """
    density = _check_density(grid, prior_density)
    x = grid.points
    q = np.atleast_1d(np.asarray(rho_noisy, dtype=np.float64))
    out = np.empty(q.shape)
    with np.errstate(divide="ignore"):
        log_prior = np.log(density)
    for idx, r in np.ndenumerate(q):
        logw = log_prior - 0.5 * ((r - x) / sigma) ** 2
        # Shifting by the max cancels in the ratio; the unshifted normalizer must still be representable.
        peak = logw.max()
        w = np.exp(logw - peak)
        z = trapezoid(w, x)
        if not z > 0 or not np.isfinite(z) or peak + math.log(z) < _LOG_TINY:
            raise ValidationError(f"posterior normalizer underflowed at rho_noisy={r}; widen the grid")
        out[idx] = trapezoid(x * w, x) / z
    return out if np.ndim(rho_noisy) else float(out[0])


def oracle_bayes_posterior(grid: Grid1D, prior_density, fm, y, y_var):
    """Posterior density of a scalar latent rho on ``grid`` given y = fm(exp(rho)) + N(0, y_var)."""
    density = _check_density(grid, prior_density)
    x = grid.points
    with np.errstate(divide="ignore"):
        logp = np.log(density) - (y - fm(np.exp(x))) ** 2 / (2.0 * y_var)
    if not np.any(np.isfinite(logp)):
        raise ValidationError("posterior is zero everywhere on the grid")
    post = np.exp(logp - np.max(logp))
    z = trapezoid(post, x)
    if not z > 0:
        raise ValidationError("posterior normalizer is zero")
    return post / z


def density_moments(grid: Grid1D, density):
    x = grid.points
    mean = trapezoid(x * density, x)
    var = trapezoid((x - mean) ** 2 * density, x)
    return float(mean), float(math.sqrt(var))


def density_cdf(grid: Grid1D, density):
    cdf = cumulative_trapezoid(density, grid.points, initial=0.0)
    return cdf / cdf[-1]


def finite_diff_grad(f, point, step=1e-5):
    """Central-difference gradient of scalar ``f`` at ``point`` (any array shape)."""
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    point = np.array(point, dtype=np.float64)
    grad = np.empty_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(point)
        flat[i] = orig - step
        fm = f(point)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad if grad.ndim else float(grad)


def _samples(x, name="samples"):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError(f"{name} is empty")
    return x


def ks_distance(samples, reference):
    """Kolmogorov-Smirnov statistic against reference samples or a CDF callable."""
    s = _samples(samples)
    if callable(reference):
        return float(stats.kstest(s, reference).statistic)
    return float(stats.ks_2samp(s, _samples(reference, "reference")).statistic)


def wasserstein1(samples, reference, grid: Grid1D | None = None):
    """W1 distance: area between the empirical CDF and the reference CDF.

    ``reference`` is either a sample array or, together with ``grid``, a
    density tabulated on that grid.
    """
    s = _samples(samples)
    if grid is None:
        return float(stats.wasserstein_distance(s, _samples(reference, "reference")))
    ref_cdf = density_cdf(grid, reference)
    gx = grid.points
    pts = np.union1d(gx, s)
    pts = np.union1d(pts, [min(gx[0], s.min()), max(gx[-1], s.max())])
    f_ref = np.interp(pts, gx, ref_cdf, left=0.0, right=1.0)
    f_emp = np.searchsorted(np.sort(s), pts, side="right") / s.size
    # Empirical CDF is constant on [pts[i], pts[i+1]); reference CDF is linear there.
    d0 = f_emp[:-1] - f_ref[:-1]
    d1 = f_emp[:-1] - f_ref[1:]
    h = np.diff(pts)
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * h * np.abs(d0 + d1),
                    0.5 * h * (d0 ** 2 + d1 ** 2) / np.maximum(np.abs(d0) + np.abs(d1), 1e-300))
    return float(area.sum())
