"""Denoiser training loop: sample a scene, a noise level, a noisy latent; descend the MSE."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from nnd import rng as rngmod
from nnd.errors import DivergenceError, ValidationError
from nnd.schedule import TrainSigmas

log = logging.getLogger(__name__)


@dataclass
class TrainOptions:
    batch: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    steps: int = 5000
    seed: int = 0
    eval_every: int = 50
    # Stop early once the smoothed validation loss has dropped by this fraction (None: never).
    stop_at_reduction: float | None = None
    smooth: int = 100
    # Wall-clock budget in seconds (None: unlimited). Stopping early this way is not reproducible.
    max_seconds: float | None = None


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    val_steps: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    stopped: str = "steps"

    def smoothed_losses(self, window: int = 100) -> np.ndarray:
        return moving_average(np.asarray(self.losses), window)

    def smoothed_val(self, window: int = 5) -> np.ndarray:
        return moving_average(np.asarray(self.val_losses), window)


def moving_average(x, window):
    x = np.asarray(x, dtype=np.float64)
    if x.size < window:
        return np.array([x.mean()]) if x.size else x
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def make_noisy_batch(clean_latent, sigmas: TrainSigmas, gen, batch):
    """Draw (scene ids, sigma indices, noisy latents) for one step; clean_latent is (N, ...)."""
    ids = gen.integers(0, clean_latent.shape[0], size=batch)
    i = gen.integers(1, sigmas.L + 1, size=batch)
    sig = sigmas.values[i - 1]
    target = clean_latent[ids]
    noisy = target + sig[:, None, None, None, None] * gen.standard_normal(target.shape)
    return ids, i, sig, noisy, target


def validation_set(clean_latent, sigmas: TrainSigmas, seed, size=32):
    gen = rngmod.substream(seed, "validation")
    _, _, sig, noisy, target = make_noisy_batch(clean_latent, sigmas, gen, size)
    return sig, noisy, target


def train(net, clean_latent, sigmas: TrainSigmas, opts: TrainOptions | None = None,
          val_latent=None, callback=None) -> TrainResult:
    """Fit ``net`` to map noisy latents back to ``clean_latent`` = log(x_train + eps).

    ``clean_latent`` is a stacked array (N, nz, ny, nx, C) already in latent
    space. Every step draws from its own substream, so runs are reproducible
    per seed. Returns per-step training losses and periodic validation losses.
    """
    opts = opts or TrainOptions()
    clean_latent = np.asarray(clean_latent, dtype=np.float64)
    if clean_latent.ndim != 5 or clean_latent.shape[0] == 0:
        raise ValidationError("training needs a nonempty (N, nz, ny, nx, C) latent dataset")
    result = TrainResult()
    val = None
    if val_latent is not None and opts.eval_every > 0:
        val = validation_set(val_latent, sigmas, opts.seed)

    def evaluate(step):
        loss = sum(net.loss(val[1][j:j + 8], val[0][j:j + 8], val[2][j:j + 8]) * len(val[0][j:j + 8])
                   for j in range(0, len(val[0]), 8)) / len(val[0])
        result.val_steps.append(step)
        result.val_losses.append(loss)
        return loss

    if val is not None:
        evaluate(0)
    start = time.monotonic()
    for step in range(opts.steps):
        gen = rngmod.substream(opts.seed, "train", step)
        ids, idx, sig, noisy, target = make_noisy_batch(clean_latent, sigmas, gen, opts.batch)
        loss, grad = net.loss_and_grad(noisy, sig, target)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(
                f"non-finite loss at step {step}: sigma indices {idx.tolist()}, scenes {ids.tolist()}")
        net.adam_step(grad, opts.lr, opts.weight_decay)
        result.losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if val is not None and (step + 1) % opts.eval_every == 0:
            vloss = evaluate(step + 1)
            log.debug("step %d train %.4g val %.4g", step + 1, loss, vloss)
            if opts.stop_at_reduction is not None and reduction(result.smoothed_val()) >= opts.stop_at_reduction:
                result.stopped = "reduction"
                break
        if opts.max_seconds is not None and time.monotonic() - start > opts.max_seconds:
            result.stopped = "time"
            break
    return result


def reduction(smoothed) -> float:
    """Fractional drop from the first to the last entry of a smoothed loss curve."""
    smoothed = np.asarray(smoothed)
    if smoothed.size < 2 or smoothed[0] <= 0:
        return 0.0
    return float(1.0 - smoothed[-1] / smoothed[0])
