"""Oracle-backed self-checks: each row compares an implementation against an independent oracle."""

from dataclasses import dataclass

import numpy as np

from nnd import forward, oracle
from nnd.denoise.analytic import GaussianLatentPrior, IdentityDenoiser, MixtureLatentPrior
from nnd.schedule import anneal_schedule, train_sigmas
from nnd.score import likelihood_grad, prior_score

SIGMAS = (0.1, 1.0, 10.0)
SWEEP = np.linspace(-6.0, 6.0, 121)
GAUSS = GaussianLatentPrior(0.0, 1.0)
MIXTURE = MixtureLatentPrior((0.5, 0.5), (-2.0, 2.0), (0.3, 0.3))


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b.ravel()), 1e-300)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def denoiser_vs_quadrature(prior, density_fn, sigmas=SIGMAS, sweep=SWEEP) -> float:
    worst = 0.0
    for sigma in sigmas:
        grid = density_fn()
        expected = oracle.oracle_posterior_mean(grid[0], grid[1], sweep, sigma)
        worst = max(worst, float(np.max(np.abs(prior.denoise(sweep, sigma) - expected))))
    return worst


def gaussian_grid():
    g = oracle.Grid1D.around(0.0, 1.0)
    return g, oracle.gaussian_density(g, 0.0, 1.0)


def mixture_grid():
    # Covers both components with 12 std margins of the mixture spread.
    g = oracle.Grid1D(-2.0 - 12 * 2.1, 2.0 + 12 * 2.1)
    return g, oracle.mixture_density(g, MIXTURE.weights, MIXTURE.means, MIXTURE.stds)


def tweedie_gap() -> float:
    x = np.linspace(-5, 5, 100)
    worst = 0.0
    for sigma in SIGMAS:
        closed = -(x - GAUSS.mean) / (GAUSS.std ** 2 + sigma ** 2)
        worst = max(worst, float(np.max(np.abs(prior_score(GAUSS, x, sigma) - closed))))
    return worst


def mixture_vjp_error() -> float:
    worst = 0.0
    for r in (-3.0, 0.0, 3.0):
        for sigma in SIGMAS:
            fd = oracle.finite_diff_grad(lambda v: float(MIXTURE.denoise(v, sigma)), r, 1e-5)
            worst = max(worst, rel_err(MIXTURE.vjp(r, sigma, 1.0), fd))
    return worst


def likelihood_case(denoiser, fm, shape, gen, sigma=1.0, center=-1.0, photon=1.0):
    """Random instance: returns (analytic gradient, finite-difference gradient)."""
    rho = center + 0.3 * gen.standard_normal(shape)
    x_true = np.exp(center + 0.3 * gen.standard_normal(shape))
    clean = fm.apply(x_true)
    y = np.maximum(clean * (1 + 0.1 * gen.standard_normal(clean.shape)), 1e-3) * photon

    def logp(r):
        return forward.log_likelihood(y, np.exp(denoiser.denoise(r, sigma)), fm)

    g = likelihood_grad(denoiser, fm, y, rho, sigma)
    fd = oracle.finite_diff_grad(logp, rho, 1e-5)
    return g, fd


def likelihood_grad_errors(n_cases=10, seed=0) -> dict:
    gen = np.random.default_rng(seed)
    fms = {
        "identity": forward.fm_identity(),
        "projection": forward.fm_linear_projection("z"),
        "beer_lambert": forward.fm_beer_lambert("z", I0=100.0),
    }
    dens = {"gaussian": GaussianLatentPrior(-1.0, 1.0),
            "mixture": MixtureLatentPrior((0.3, 0.7), (-2.0, -0.5), (0.5, 0.8))}
    out = {}
    for fname, fm in fms.items():
        for dname, den in dens.items():
            for shape_name, shape in (("scalar", (1, 1, 1, 1)), ("4^3", (4, 4, 4, 1))):
                worst = 0.0
                for _ in range(n_cases):
                    g, fd = likelihood_case(den, fm, shape, gen, photon=50.0)
                    worst = max(worst, rel_err(g, fd))
                out[f"{fname}/{dname}/{shape_name}"] = worst
    return out


def adjoint_errors(seed=0) -> dict:
    gen = np.random.default_rng(seed)
    x = gen.uniform(0, 1, (4, 5, 6, 2))
    out = {}
    for fm in (forward.fm_identity(), forward.fm_linear_projection("z"),
               forward.fm_linear_projection("x", weights=gen.uniform(0.5, 2, (4 * 5 * 2,)))):
        u = gen.standard_normal(fm.apply(x).shape)
        lhs = float(np.dot(fm.apply(x), u))
        rhs = float(np.sum(x * fm.vjp(x, u)))
        out[f"adjoint/{fm.name}/{getattr(fm, 'axis', '-')}"] = abs(lhs - rhs) / abs(lhs)
    return out


def schedule_endpoint_error() -> float:
    s = anneal_schedule()
    ts = train_sigmas()
    errs = [abs(s.sigma(1) / 1e-2 - 1), abs(s.sigma(600) / 1e2 - 1),
            abs(ts.values[0] / 1e-2 - 1), abs(ts.values[-1] / 1e2 - 1),
            abs(s.alpha(1) / 2e-6 - 1), abs(s.alpha(600) / 200 - 1)]
    return max(errs)


def identity_likelihood_error() -> float:
    """Identity denoiser: likelihood_grad equals d/d rho of log p(y | exp(rho))."""
    gen = np.random.default_rng(1)
    rho = gen.normal(0, 0.5, (3, 3, 3, 1))
    y = np.exp(gen.normal(0, 0.5, 27)) + 0.5
    fm = forward.fm_identity()
    fd = oracle.finite_diff_grad(lambda r: forward.log_likelihood(y, np.exp(r), fm), rho, 1e-5)
    return rel_err(likelihood_grad(IdentityDenoiser(), fm, y, rho, 1.0), fd)


def run_all() -> list:
    rows = [
        CheckResult("gaussian denoiser vs quadrature", denoiser_vs_quadrature(GAUSS, gaussian_grid), 1e-8),
        CheckResult("mixture denoiser vs quadrature", denoiser_vs_quadrature(MIXTURE, mixture_grid), 1e-6),
        CheckResult("tweedie: prior score vs marginal score", tweedie_gap(), 1e-10),
        CheckResult("mixture vjp vs finite differences", mixture_vjp_error(), 1e-6),
        CheckResult("identity-denoiser likelihood grad vs FD", identity_likelihood_error(), 1e-6),
        CheckResult("schedule endpoints", schedule_endpoint_error(), 1e-12),
    ]
    rows += [CheckResult(f"likelihood grad {k}", v, 1e-5) for k, v in likelihood_grad_errors().items()]
    rows += [CheckResult(k, v, 1e-10) for k, v in adjoint_errors().items()]
    return rows


def format_table(rows) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check'.ljust(width)}  {'error':>10}  {'tol':>8}  result"]
    for r in rows:
        lines.append(f"{r.name.ljust(width)}  {r.error:10.3e}  {r.tolerance:8.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


__all__ = ["CheckResult", "format_table", "run_all"]
