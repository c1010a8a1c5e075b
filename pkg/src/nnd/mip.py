"""Maximum intensity projections written as 16-bit binary PGM images."""

import json
from pathlib import Path

import numpy as np

from nnd.errors import ValidationError
from nnd.forward import AXES

PGM_MAXVAL = 65535


def mip(values: np.ndarray, axis: str) -> np.ndarray:
    """Max-reduce a (nz, ny, nx) or (nz, ny, nx, C) array along ``axis`` ('z', 'y' or 'x')."""
    if axis not in AXES:
        raise ValidationError(f"unknown axis {axis!r}; expected one of z, y, x")
    return np.max(values, axis=AXES[axis])


def to_pixels(image: np.ndarray, gamma: float = 1.0) -> tuple:
    """Map an image to uint16 by (v / max)^(1/gamma) * 65535. Returns (pixels, max)."""
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    vmax = float(np.max(image)) if image.size else 0.0
    if vmax <= 0:
        return np.zeros(image.shape, dtype=np.uint16), vmax
    norm = np.clip(image / vmax, 0.0, 1.0) ** (1.0 / gamma)
    return np.round(norm * PGM_MAXVAL).astype(np.uint16), vmax


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary P5 PGM, maxval 65535, big-endian samples."""
    if pixels.ndim != 2:
        raise ValidationError(f"PGM needs a 2D image, got shape {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(pixels.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype).reshape(h, w)


def render_field(field, out_dir, axis="z", channels=None, gamma=1.0, stem="mip") -> list:
    """Write one PGM plus JSON sidecar per channel; returns the sidecar dicts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(field.channels) if channels is None else list(channels)
    unknown = [c for c in names if c not in field.channels]
    if unknown:
        raise ValidationError(f"unknown channel(s) {unknown}; field has {list(field.channels)}")
    sidecars = []
    for name in names:
        image = mip(field.values[..., field.channels.index(name)], axis)
        pixels, vmax = to_pixels(image, gamma)
        base = f"{stem}_{name}_{axis}"
        write_pgm(out_dir / f"{base}.pgm", pixels)
        meta = {
            "channel": name, "axis": axis, "gamma": gamma,
            "max": vmax, "min": float(image.min()) if image.size else 0.0,
            "width": int(image.shape[1]), "height": int(image.shape[0]),
            "mapping": "pixel = round(65535 * (value / max) ** (1 / gamma))",
            "file": f"{base}.pgm",
        }
        (out_dir / f"{base}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        sidecars.append(meta)
    return sidecars
