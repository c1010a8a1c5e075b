"""Small convolutional denoiser with hand-written reverse-mode gradients.

Architecture (fixed): the latent grid plus one constant channel holding
log(sigma) goes through three 3x3x3 convolutions, C+1 -> 16 -> 16 -> C, with
softplus after the first two and a linear output. Borders use replicate
padding. Arrays are channels-last, (B, nz, ny, nx, C), matching NNDF order.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np
from scipy.special import expit

from nnd import rng as rngmod
from nnd.errors import DivergenceError, ValidationError
from nnd.latent import DEFAULT_EPS, ScaleSpec

NNDM_MAGIC = b"NNDM0001"
HIDDEN = 16
KSIZE = 3
ADAM_DEFAULTS = {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


def param_shapes(channels: int) -> list:
    c_in = channels + 1
    k = KSIZE ** 3
    return [
        ("w1", (k, c_in, HIDDEN)), ("b1", (HIDDEN,)),
        ("w2", (k, HIDDEN, HIDDEN)), ("b2", (HIDDEN,)),
        ("w3", (k, HIDDEN, channels)), ("b3", (channels,)),
    ]


def n_params(channels: int) -> int:
    return sum(math.prod(shape) for _, shape in param_shapes(channels))


def _softplus(z):
    # max(z, 0) + log1p(exp(-|z|)), in place; about 3x faster than logaddexp
    out = np.abs(z)
    np.negative(out, out)
    np.exp(out, out)
    np.log1p(out, out)
    out += np.maximum(z, 0.0)
    return out


def _sigmoid(z):
    # d softplus / dz
    return expit(z)


def _pad(x):
    """Replicate-pad the three spatial axes by one voxel (same as np.pad mode="edge", less overhead)."""
    bsz, nz, ny, nx, c = x.shape
    p = np.empty((bsz, nz + 2, ny + 2, nx + 2, c), dtype=x.dtype)
    p[:, 1:-1, 1:-1, 1:-1] = x
    p[:, 0, 1:-1, 1:-1] = x[:, 0]
    p[:, -1, 1:-1, 1:-1] = x[:, -1]
    p[:, :, 0, 1:-1] = p[:, :, 1, 1:-1]
    p[:, :, -1, 1:-1] = p[:, :, -2, 1:-1]
    p[:, :, :, 0] = p[:, :, :, 1]
    p[:, :, :, -1] = p[:, :, :, -2]
    return p


def _unpad_adjoint(g):
    """Adjoint of replicate padding by one voxel on the three spatial axes."""
    for axis in (1, 2, 3):
        inner = np.take(g, np.arange(1, g.shape[axis] - 1), axis=axis)
        first = [slice(None)] * 5
        last = [slice(None)] * 5
        first[axis] = 0
        last[axis] = -1
        src_first = [slice(None)] * 5
        src_last = [slice(None)] * 5
        src_first[axis] = 0
        src_last[axis] = g.shape[axis] - 1
        inner[tuple(first)] += g[tuple(src_first)]
        inner[tuple(last)] += g[tuple(src_last)]
        g = inner
    return g


def _offsets():
    for a in range(KSIZE):
        for b in range(KSIZE):
            for c in range(KSIZE):
                yield a, b, c


def conv3d(x, w, bias):
    """Replicate-padded 3x3x3 convolution. x: (B,Z,Y,X,Ci), w: (27,Ci,Co)."""
    bsz, nz, ny, nx, _ = x.shape
    p = _pad(x)
    out = np.empty((bsz, nz, ny, nx, w.shape[2]), dtype=np.float64)
    out[...] = bias
    for k, (a, b, c) in enumerate(_offsets()):
        out += p[:, a:a + nz, b:b + ny, c:c + nx, :] @ w[k]
    return out


def conv3d_backward(x, w, dout, need_dx=True):
    """Gradients of conv3d wrt (x, w, bias) given the output cotangent."""
    bsz, nz, ny, nx, c_in = x.shape
    c_out = w.shape[2]
    p = _pad(x)
    d2 = dout.reshape(-1, c_out)
    dw = np.empty_like(w)
    dp = np.zeros_like(p) if need_dx else None
    for k, (a, b, c) in enumerate(_offsets()):
        sl = (slice(None), slice(a, a + nz), slice(b, b + ny), slice(c, c + nx))
        dw[k] = p[sl].reshape(-1, c_in).T @ d2
        if need_dx:
            # 2-D product then reshape: measurably faster than a batched 5-D matmul
            dp[sl] += (d2 @ w[k].T).reshape(bsz, nz, ny, nx, c_in)
    db = d2.sum(axis=0)
    dx = _unpad_adjoint(dp) if need_dx else None
    return dx, dw, db


class NeuralDenoiser:
    """Trainable denoiser D_theta(rho_noisy, sigma) with a flat parameter vector ``theta``."""

    def __init__(self, channels, theta=None, seed=0, eps=DEFAULT_EPS, scale=None,
                 sigma_config=None, adam=None, init="identity"):
        if isinstance(channels, int):
            channels = tuple(f"c{i}" for i in range(channels))
        self.channel_names = tuple(channels)
        self.channels = len(self.channel_names)
        self.eps = float(eps)
        self.scale = scale if isinstance(scale, ScaleSpec) else (
            ScaleSpec(scale) if scale else ScaleSpec.ones(self.channel_names))
        self.sigma_config = dict(sigma_config or {})
        self.seed = int(seed)
        self.adam = dict(ADAM_DEFAULTS, **(adam or {}))
        n = n_params(self.channels)
        if theta is None:
            theta = self.init_params(self.channels, seed, init)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise ValidationError(f"expected {n} parameters, got shape {theta.shape}")
        self.theta = theta
        self.adam_m = np.zeros(n)
        self.adam_v = np.zeros(n)
        self.step = 0

    @staticmethod
    def init_params(channels, seed, mode="identity", noise=0.01):
        """Random weights scaled by 1/sqrt(fan_in); biases zero.

        ``mode="identity"`` additionally wires two hidden units per channel
        through the centre taps so that the untrained net computes
        sp(sp(r) + 5) - sp(sp(-r) + 5) ~ r, with sp = softplus; the random part
        is then scaled by ``noise``. ``mode="random"`` uses the plain random weights.
        """
        if mode not in ("identity", "random"):
            raise ValidationError(f"unknown init mode {mode!r}")
        gen = rngmod.substream(seed, "params")
        params = {}
        for name, shape in param_shapes(channels):
            if name.startswith("w"):
                fan_in = shape[0] * shape[1]
                w = gen.standard_normal(shape) / math.sqrt(fan_in)
                params[name] = w * noise if mode == "identity" else w
            else:
                params[name] = np.zeros(shape)
        if mode == "identity":
            if 2 * channels > HIDDEN:
                raise ValidationError(f"identity init needs 2*C <= {HIDDEN} hidden units")
            centre = (KSIZE ** 3) // 2
            for c in range(channels):
                up, down = 2 * c, 2 * c + 1
                params["w1"][centre, c, up] = 1.0
                params["w1"][centre, c, down] = -1.0
                params["w2"][centre, up, up] = 1.0
                params["w2"][centre, down, down] = 1.0
                params["b2"][up] = params["b2"][down] = 5.0
                params["w3"][centre, up, c] = 1.0
                params["w3"][centre, down, c] = -1.0
        return np.concatenate([params[name].ravel() for name, _ in param_shapes(channels)])

    def params(self, theta=None):
        theta = self.theta if theta is None else theta
        out, i = {}, 0
        for name, shape in param_shapes(self.channels):
            size = math.prod(shape)
            out[name] = theta[i:i + size].reshape(shape)
            i += size
        return out

    def _inputs(self, rho, sigma):
        rho = np.asarray(rho, dtype=np.float64)
        single = rho.ndim == 4
        if single:
            rho = rho[None]
        if rho.ndim != 5 or rho.shape[-1] != self.channels:
            raise ValidationError(
                f"expected (B, nz, ny, nx, {self.channels}) latent, got {rho.shape}")
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (rho.shape[0],))
        if np.any(sig <= 0):
            raise ValidationError("sigma must be positive")
        logsig = np.broadcast_to(np.log(sig)[:, None, None, None, None], rho.shape[:4] + (1,))
        return np.concatenate([rho, logsig], axis=-1), single

    def _forward(self, rho, sigma):
        if not np.all(np.isfinite(self.theta)):
            raise DivergenceError("network parameters are not finite")
        p = self.params()
        h0, single = self._inputs(rho, sigma)
        z1 = conv3d(h0, p["w1"], p["b1"])
        a1 = _softplus(z1)
        z2 = conv3d(a1, p["w2"], p["b2"])
        a2 = _softplus(z2)
        out = conv3d(a2, p["w3"], p["b3"])
        return out, (h0, z1, a1, z2, a2), single

    def _backward(self, cache, dout, need_input=True):
        p = self.params()
        h0, z1, a1, z2, a2 = cache
        da2, dw3, db3 = conv3d_backward(a2, p["w3"], dout)
        dz2 = da2 * _sigmoid(z2)
        da1, dw2, db2 = conv3d_backward(a1, p["w2"], dz2)
        dz1 = da1 * _sigmoid(z1)
        dh0, dw1, db1 = conv3d_backward(h0, p["w1"], dz1, need_dx=need_input)
        grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}
        dtheta = np.concatenate([grads[name].ravel() for name, _ in param_shapes(self.channels)])
        dinput = dh0[..., :self.channels] if need_input else None
        return dinput, dtheta

    def denoise(self, rho_noisy, sigma):
        out, _, single = self._forward(rho_noisy, sigma)
        return out[0] if single else out

    __call__ = denoise

    def vjp(self, rho_noisy, sigma, cotangent):
        _, cache, single = self._forward(rho_noisy, sigma)
        cot = np.asarray(cotangent, dtype=np.float64)
        dinput, _ = self._backward(cache, cot[None] if single else cot)
        return dinput[0] if single else dinput

    def denoise_and_vjp(self, rho_noisy, sigma):
        """Denoised output plus a pullback sharing the same forward pass."""
        out, cache, single = self._forward(rho_noisy, sigma)

        def pullback(cotangent):
            cot = np.asarray(cotangent, dtype=np.float64)
            dinput, _ = self._backward(cache, cot[None] if single else cot)
            return dinput[0] if single else dinput

        return (out[0] if single else out), pullback

    def loss_and_grad(self, rho_noisy, sigma, target):
        """Mean squared error to ``target`` and its gradient wrt theta."""
        out, cache, single = self._forward(rho_noisy, sigma)
        target = np.asarray(target, dtype=np.float64)
        if single:
            target = target[None]
        resid = out - target
        loss = float(np.mean(resid ** 2))
        dout = 2.0 * resid / resid.size
        _, dtheta = self._backward(cache, dout, need_input=False)
        return loss, dtheta

    def loss(self, rho_noisy, sigma, target):
        out = self.denoise(rho_noisy, sigma)
        return float(np.mean((out - np.asarray(target)) ** 2))

    def adam_step(self, grad, lr, weight_decay):
        """One ADAM update with decoupled weight decay."""
        b1, b2, eps = self.adam["beta1"], self.adam["beta2"], self.adam["eps"]
        self.step += 1
        self.adam_m = b1 * self.adam_m + (1 - b1) * grad
        self.adam_v = b2 * self.adam_v + (1 - b2) * grad * grad
        m_hat = self.adam_m / (1 - b1 ** self.step)
        v_hat = self.adam_v / (1 - b2 ** self.step)
        self.theta = self.theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * self.theta)

    def to_json(self) -> dict:
        return {
            "kind": "neural",
            "architecture": {"layers": [self.channels + 1, HIDDEN, HIDDEN, self.channels],
                             "kernel": KSIZE, "activation": "softplus", "padding": "replicate",
                             "conditioning": "log_sigma_channel"},
            "channels": list(self.channel_names),
            "eps": self.eps,
            "scale": self.scale.to_json(),
            "sigma_config": self.sigma_config,
            "adam": dict(self.adam),
            "step": self.step,
            "seed": self.seed,
            "n_params": int(self.theta.size),
        }

    def save(self, path):
        header = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as f:
            f.write(NNDM_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(self.theta.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if data[:8] != NNDM_MAGIC:
            raise ValidationError(f"{path}: not an NNDM v1 model file")
        (hlen,) = struct.unpack("<I", data[8:12])
        try:
            header = json.loads(data[12:12 + hlen])
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: malformed model header: {e}") from None
        for key in ("channels", "eps", "scale"):
            if key not in header:
                raise ValidationError(f"{path}: model metadata missing {key!r}")
        theta = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(np.float64)
        net = cls(tuple(header["channels"]), theta=theta, seed=header.get("seed", 0),
                  eps=header["eps"], scale=header["scale"],
                  sigma_config=header.get("sigma_config"), adam=header.get("adam"))
        net.step = int(header.get("step", 0))
        return net
