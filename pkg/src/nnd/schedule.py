"""Training noise levels and the staircase annealing schedule."""

from dataclasses import dataclass

import numpy as np

from nnd.errors import ValidationError


@dataclass(frozen=True)
class TrainSigmas:
    """Geometric sequence of training noise levels; ``values[i - 1]`` is sigma^(i)."""

    L: int
    sigma_1: float
    sigma_L: float
    values: np.ndarray

    def to_json(self) -> dict:
        return {"L": self.L, "sigma_1": self.sigma_1, "sigma_L": self.sigma_L}


def train_sigmas(L: int = 150, sigma_1: float = 1e-2, sigma_L: float = 1e2) -> TrainSigmas:
    if L < 2:
        raise ValidationError(f"L must be at least 2, got {L}")
    if not (sigma_1 > 0 and sigma_L > 0):
        raise ValidationError("training sigma endpoints must be positive")
    if sigma_1 == sigma_L:
        raise ValidationError("training sigma endpoints must differ")
    i = np.arange(1, L + 1)
    values = sigma_L * (sigma_1 / sigma_L) ** ((L - i) / (L - 1))
    values.setflags(write=False)
    return TrainSigmas(int(L), float(sigma_1), float(sigma_L), values)


@dataclass(frozen=True)
class AnnealSchedule:
    """Staircase sigma_t and step sizes alpha_t for the countdown t = T..1.

    Arrays are stored in ascending t: ``sigmas[t - 1]`` is sigma_t. Use
    :meth:`sigma` / :meth:`alpha` to index by t directly.
    """

    T: int
    K: int
    sigma_1: float
    sigma_T: float
    zeta: float
    sigmas: np.ndarray
    alphas: np.ndarray

    def sigma(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise IndexError(f"t={t} outside 1..{self.T}")
        return float(self.sigmas[t - 1])

    def alpha(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise IndexError(f"t={t} outside 1..{self.T}")
        return float(self.alphas[t - 1])

    def countdown(self):
        """Yield (t, sigma_t, alpha_t) for t = T, T-1, ..., 1."""
        for t in range(self.T, 0, -1):
            yield t, float(self.sigmas[t - 1]), float(self.alphas[t - 1])

    def to_json(self) -> dict:
        return {"T": self.T, "K": self.K, "sigma_1": self.sigma_1,
                "sigma_T": self.sigma_T, "zeta": self.zeta}


def anneal_schedule(T: int = 600, K: int = 5, sigma_1: float = 1e-2,
                    sigma_T: float = 1e2, zeta: float = 2e-6) -> AnnealSchedule:
    """sigma_t = sigma_1 (sigma_T/sigma_1)^(K/(T-K) floor((t-1)/K)), alpha_t = zeta (sigma_t/sigma_1)^2.

    When T is not a multiple of K the trailing partial block reuses the
    sigma of the last full block, so sigma_T is still reached.
    """
    if K < 1:
        raise ValidationError(f"K must be positive, got {K}")
    if T <= K:
        raise ValidationError(f"T must exceed K (T={T}, K={K})")
    if not (sigma_1 > 0 and sigma_T > 0 and zeta > 0):
        raise ValidationError("sigma_1, sigma_T and zeta must be positive")
    t = np.arange(1, T + 1)
    last_block = T // K - 1
    block = np.minimum((t - 1) // K, last_block)
    sigmas = sigma_1 * (sigma_T / sigma_1) ** (block / last_block)
    alphas = zeta * (sigmas / sigma_1) ** 2
    sigmas.setflags(write=False)
    alphas.setflags(write=False)
    return AnnealSchedule(int(T), int(K), float(sigma_1), float(sigma_T), float(zeta),
                          sigmas, alphas)
