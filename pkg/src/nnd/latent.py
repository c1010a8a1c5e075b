"""Physical <-> latent bridge (x = exp(rho), rho = log(x + eps)) and the NNDF file format."""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from nnd.errors import DivergenceError, ValidationError

DEFAULT_EPS = math.exp(-10.0)

NNDF_MAGIC = b"NNDF0001"

# exp() stays finite above zero in float64 only for arguments in this range.
_EXP_MAX = math.log(np.finfo(np.float64).max)
_EXP_MIN = math.log(np.finfo(np.float64).smallest_subnormal)


def _check_grid(values: np.ndarray, channels: Sequence[str]) -> None:
    if values.ndim != 4:
        raise ValidationError(f"expected a (nz, ny, nx, C) array, got shape {values.shape}")
    if len(channels) != values.shape[3]:
        raise ValidationError(
            f"{len(channels)} channel names for {values.shape[3]} channels")
    if len(set(channels)) != len(channels):
        raise ValidationError(f"duplicate channel names: {list(channels)}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("grid contains non-finite values")


@dataclass
class Field:
    """Nonnegative multi-channel voxel grid, values shaped (nz, ny, nx, C)."""

    values: np.ndarray
    channels: tuple = ("x",)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.channels = tuple(self.channels)
        _check_grid(self.values, self.channels)
        if np.any(self.values < 0):
            raise ValidationError("Field values must be nonnegative")

    @property
    def dims(self) -> tuple:
        return tuple(self.values.shape[:3])


@dataclass
class LatentField:
    """Real-valued latent grid with the same layout as :class:`Field`."""

    values: np.ndarray
    channels: tuple = ("x",)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.channels = tuple(self.channels)
        _check_grid(self.values, self.channels)

    @property
    def dims(self) -> tuple:
        return tuple(self.values.shape[:3])


@dataclass
class ScaleSpec:
    """Per-channel multiplicative factors mapping physical units to training units."""

    factors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.factors = {str(k): float(v) for k, v in self.factors.items()}
        bad = {k: v for k, v in self.factors.items() if not (v > 0 and math.isfinite(v))}
        if bad:
            raise ValidationError(f"scale factors must be positive and finite: {bad}")

    @classmethod
    def ones(cls, channels: Sequence[str]) -> "ScaleSpec":
        return cls({c: 1.0 for c in channels})

    @classmethod
    def from_percentile(cls, values: np.ndarray, channels: Sequence[str],
                        q: float = 95.0) -> "ScaleSpec":
        """Factors that send each channel's q-th percentile of positive values to 1.

        ``values`` has channels on the last axis. Zeros are excluded because
        the corpus is sparse by design; a channel with no positive values gets 1.
        """
        values = np.asarray(values)
        factors = {}
        for i, name in enumerate(channels):
            v = values[..., i]
            v = v[v > 0]
            factors[name] = 1.0 / float(np.percentile(v, q)) if v.size else 1.0
        return cls(factors)

    def vector(self, channels: Sequence[str]) -> np.ndarray:
        missing = [c for c in channels if c not in self.factors]
        if missing:
            raise ValidationError(f"unknown channel(s) for ScaleSpec: {missing}")
        return np.array([self.factors[c] for c in channels], dtype=np.float64)

    def to_json(self) -> dict:
        return dict(self.factors)


def to_latent(x: Field, eps: float = DEFAULT_EPS) -> LatentField:
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if not isinstance(x, Field):
        x = Field(np.asarray(x, dtype=np.float64))
    return LatentField(np.log(x.values + eps), x.channels)


def from_latent(rho: LatentField) -> Field:
    values = rho.values if isinstance(rho, LatentField) else np.asarray(rho, dtype=np.float64)
    channels = rho.channels if isinstance(rho, LatentField) else None
    if not np.all(np.isfinite(values)):
        raise DivergenceError("latent contains non-finite values")
    if values.size and values.max() > _EXP_MAX:
        raise DivergenceError(
            f"latent value {values.max():.4g} overflows exp (limit {_EXP_MAX:.4g})")
    if values.size and values.min() < _EXP_MIN:
        raise DivergenceError(
            f"latent value {values.min():.4g} underflows exp to zero (limit {_EXP_MIN:.4g})")
    x = np.exp(values)
    if channels is None:
        return x
    return Field(x, channels)


def apply_scale(x: Field, s: ScaleSpec, direction: str = "forward") -> Field:
    """Multiply (forward) or divide (inverse) each channel by its scale factor."""
    factors = s.vector(x.channels)
    if direction == "forward":
        return Field(x.values * factors, x.channels)
    if direction == "inverse":
        return Field(x.values / factors, x.channels)
    raise ValidationError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_nndf(path, grid, scale: ScaleSpec | Mapping | None = None,
               eps: float | None = None) -> None:
    """Write a Field or LatentField as NNDF v1 (values stored as float32 LE)."""
    if isinstance(scale, ScaleSpec):
        scale = scale.to_json()
    header = {
        "dims": [int(n) for n in grid.values.shape[:3]],
        "channels": list(grid.channels),
        "dtype": "f32le",
        "order": "zyxc",
        "scale": dict(scale or {}),
        "eps": None if eps is None else float(eps),
        "kind": "latent" if isinstance(grid, LatentField) else "field",
    }
    if grid.values.size and np.max(np.abs(grid.values)) > np.finfo(np.float32).max:
        raise ValidationError("values exceed the float32 range of the NNDF raster")
    hbytes = _dumps(header)
    raster = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(NNDF_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        f.write(raster)


def read_nndf_with_header(path) -> tuple:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != NNDF_MAGIC:
        raise ValidationError(f"{path}: not an NNDF v1 file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"{path}: malformed NNDF header: {e}") from None
    for key in ("dims", "channels", "dtype", "order"):
        if key not in header:
            raise ValidationError(f"{path}: NNDF header missing {key!r}")
    if header["dtype"] != "f32le" or header["order"] != "zyxc":
        raise ValidationError(f"{path}: unsupported dtype/order {header['dtype']}/{header['order']}")
    nz, ny, nx = (int(n) for n in header["dims"])
    nc = len(header["channels"])
    raster = data[12 + hlen:]
    expected = nz * ny * nx * nc * 4
    if len(raster) != expected:
        raise ValidationError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    values = np.frombuffer(raster, dtype="<f4").reshape(nz, ny, nx, nc).astype(np.float64)
    cls = LatentField if header.get("kind") == "latent" else Field
    return cls(values, header["channels"]), header


def read_nndf(path):
    return read_nndf_with_header(path)[0]
