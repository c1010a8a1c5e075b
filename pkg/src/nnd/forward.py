"""Differentiable forward models, photon-noise synthesis and the per-datum likelihood.

Forward models take a physical field as an (nz, ny, nx, C) array and return a
flat measurement vector. ``vjp`` pulls a cotangent over data back to a
field-shaped gradient. All models refuse negative inputs: there is no
physical meaning to them.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nnd import rng as rngmod
from nnd.errors import ValidationError

AXES = {"z": 0, "y": 1, "x": 2}
DEFAULT_Y_MIN = 1e-3


def _as_field_array(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("forward model input contains non-finite values")
    if np.any(x < 0):
        raise ValidationError("forward model input contains negative values")
    return x


def _axis(axis):
    if isinstance(axis, str):
        if axis not in AXES:
            raise ValidationError(f"unknown axis {axis!r}; expected one of z, y, x")
        return AXES[axis]
    if axis not in (0, 1, 2):
        raise ValidationError(f"axis must be 0, 1 or 2, got {axis}")
    return int(axis)


class IdentityFM:
    name = "identity"

    def apply(self, x):
        return _as_field_array(x).ravel().copy()

    def vjp(self, x, cotangent):
        return np.asarray(cotangent, dtype=np.float64).reshape(np.shape(x))

    def to_json(self):
        return {"kind": self.name}


class LinearProjectionFM:
    """Ray sums along one grid axis, one datum per (ray, channel), optionally weighted."""

    name = "projection"

    def __init__(self, axis="z", weights=None):
        self.axis = _axis(axis)
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)

    def apply(self, x):
        x = _as_field_array(x)
        if x.ndim != 4:
            raise ValidationError(f"projection expects (nz, ny, nx, C), got {x.shape}")
        y = x.sum(axis=self.axis).ravel()
        return y * self.weights.ravel() if self.weights is not None else y

    def vjp(self, x, cotangent):
        shape = np.shape(x)
        ray_shape = tuple(n for i, n in enumerate(shape) if i != self.axis)
        u = np.asarray(cotangent, dtype=np.float64)
        if self.weights is not None:
            u = u * self.weights.ravel()
        u = np.expand_dims(u.reshape(ray_shape), self.axis)
        return np.broadcast_to(u, shape).copy()

    def to_json(self):
        out = {"kind": self.name, "axis": "zyx"[self.axis]}
        if self.weights is not None:
            out["weights"] = self.weights.ravel().tolist()
        return out


class BeerLambertFM:
    """Transmitted intensity I0 * exp(-k * path sum) along axis-aligned rays of one channel."""

    name = "beer_lambert"

    def __init__(self, axis="z", I0=100.0, channel=0, extinction=1.0):
        self.axis = _axis(axis)
        self.I0 = float(I0)
        self.channel = int(channel)
        self.extinction = float(extinction)

    def apply(self, x):
        x = _as_field_array(x)
        if x.ndim != 4:
            raise ValidationError(f"beer_lambert expects (nz, ny, nx, C), got {x.shape}")
        if not 0 <= self.channel < x.shape[3]:
            raise ValidationError(f"channel {self.channel} out of range for {x.shape[3]} channels")
        path = x[..., self.channel].sum(axis=self.axis)
        return (self.I0 * np.exp(-self.extinction * path)).ravel()

    def vjp(self, x, cotangent):
        x = np.asarray(x, dtype=np.float64)
        y = self.apply(x)
        ray_shape = tuple(n for i, n in enumerate(x.shape[:3]) if i != self.axis)
        g = (-self.extinction * y * np.asarray(cotangent, dtype=np.float64)).reshape(ray_shape)
        out = np.zeros_like(x)
        out[..., self.channel] = np.broadcast_to(np.expand_dims(g, self.axis), x.shape[:3])
        return out

    def to_json(self):
        return {"kind": self.name, "axis": "zyx"[self.axis], "I0": self.I0,
                "channel": self.channel, "extinction": self.extinction}


def fm_identity():
    return IdentityFM()


def fm_linear_projection(axis="z", weights=None):
    return LinearProjectionFM(axis, weights)


def fm_beer_lambert(axis="z", I0=100.0, channel=0, extinction=1.0):
    return BeerLambertFM(axis, I0, channel, extinction)


def fm_from_json(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "identity":
            return IdentityFM()
        if kind == "projection":
            return LinearProjectionFM(**spec)
        if kind == "beer_lambert":
            return BeerLambertFM(**spec)
    except TypeError as e:
        raise ValidationError(f"bad forward model parameters for {kind!r}: {e}") from None
    raise ValidationError(f"unknown forward model {kind!r}")


@dataclass
class Measurement:
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    seed: int | None = None
    y_min: float = DEFAULT_Y_MIN

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("measurement contains non-finite values")

    def save(self, path):
        """Write ``path`` (JSON header) and ``path`` with suffix .f64 (raw little-endian values)."""
        path = Path(path)
        raw = path.with_suffix(".f64")
        header = {"format": "nnd-measurement-v1", "fm": self.meta, "seed": self.seed,
                  "y_min": self.y_min, "count": int(self.values.size), "values_file": raw.name}
        path.write_text(json.dumps(header, indent=2, sort_keys=True))
        raw.write_bytes(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            header = json.loads(path.read_text())
            values = np.frombuffer((path.parent / header["values_file"]).read_bytes(), dtype="<f8")
        except (OSError, KeyError, json.JSONDecodeError) as e:
            raise ValidationError(f"{path}: cannot read measurement: {e}") from None
        if values.size != header.get("count", values.size):
            raise ValidationError(f"{path}: expected {header['count']} values, found {values.size}")
        return cls(values.astype(np.float64), header.get("fm", {}), header.get("seed"),
                   header.get("y_min", DEFAULT_Y_MIN))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("k,y\n")
            for k, v in enumerate(self.values):
                f.write(f"{k},{v!r}\n")


def add_photon_noise(clean, seed, y_min=DEFAULT_Y_MIN, mode="gaussian", meta=None) -> Measurement:
    """y = clean + N(0, clean) per datum (variance equals the signal), floored at ``y_min``."""
    clean = np.asarray(clean, dtype=np.float64).ravel()
    if np.any(clean < 0) or not np.all(np.isfinite(clean)):
        raise ValidationError("clean measurement must be finite and nonnegative")
    if not y_min > 0:
        raise ValidationError(f"y_min must be positive, got {y_min}")
    gen = rngmod.substream(seed, "measurement")
    if mode == "gaussian":
        y = clean + np.sqrt(clean) * gen.standard_normal(clean.shape)
    elif mode == "poisson":
        y = gen.poisson(clean).astype(np.float64)
    else:
        raise ValidationError(f"unknown noise mode {mode!r}")
    return Measurement(np.maximum(y, y_min), dict(meta or {}, noise=mode), seed, y_min)


def _check_y(y):
    y = np.asarray(y.values if isinstance(y, Measurement) else y, dtype=np.float64).ravel()
    if np.any(y <= 0):
        raise ValidationError("likelihood needs strictly positive measurements")
    return y


def log_likelihood(y, x, fm) -> float:
    """sum_k -(y_k - F_k(x))^2 / (2 y_k) - log(2 pi y_k) / 2, with variance approximated by y."""
    y = _check_y(y)
    f = fm.apply(x)
    if not np.all(np.isfinite(f)):
        raise ValidationError("forward model produced non-finite output")
    return float(np.sum(-(y - f) ** 2 / (2 * y) - 0.5 * np.log(2 * math.pi * y)))


def log_likelihood_grad(y, x, fm):
    """Gradient of :func:`log_likelihood` with respect to the physical field x."""
    y = _check_y(y)
    f = fm.apply(x)
    return fm.vjp(x, (y - f) / y)
