"""Synthetic sparse "blob" scenes used as a small training corpus.

Each scene holds 0-3 truncated 3D Gaussian blobs. Channel 0 is the blob
density with a lognormal peak; every further channel is a size-like quantity
that grows with height inside the blob. Voxels outside all blob supports are
exactly zero in every channel.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from nnd import rng as rngmod
from nnd.errors import ValidationError
from nnd.latent import Field, ScaleSpec, read_nndf_with_header, write_nndf


@dataclass(frozen=True)
class BlobParams:
    max_blobs: int = 3
    width_min: float = 1.5
    width_max: float = 3.0
    cutoff: float = 2.0  # support radius in blob widths
    peak_log_mean: float = -1.0
    peak_log_std: float = 0.5
    size_log_mean: float = 2.0
    size_log_std: float = 0.2
    height_gain: float = 1.0


def make_scene(dims, channels, gen, params: BlobParams) -> np.ndarray:
    nz, ny, nx = dims
    nc = len(channels)
    out = np.zeros((nz, ny, nx, nc))
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    for _ in range(gen.integers(0, params.max_blobs + 1)):
        center = gen.uniform(0, 1, size=3) * np.array([nz - 1, ny - 1, nx - 1])
        width = gen.uniform(params.width_min, params.width_max)
        peak = gen.lognormal(params.peak_log_mean, params.peak_log_std)
        size0 = gen.lognormal(params.size_log_mean, params.size_log_std, size=max(nc - 1, 0))
        r2 = ((z - center[0]) ** 2 + (y - center[1]) ** 2 + (x - center[2]) ** 2) / width ** 2
        inside = r2 <= params.cutoff ** 2
        density = np.where(inside, peak * np.exp(-0.5 * r2), 0.0)
        out[..., 0] += density
        # Relative height inside the blob, 0 at its bottom and 1 at its top.
        rel_h = np.clip((z - center[0]) / (2 * params.cutoff * width) + 0.5, 0.0, 1.0)
        for c in range(1, nc):
            size = size0[c - 1] * (1.0 + params.height_gain * rel_h)
            out[..., c] = np.where(inside, np.maximum(out[..., c], size), out[..., c])
    return out


def make_blob_dataset(n_scenes, dims=(16, 16, 16), channels=("lwc", "re"), seed=0,
                      params: BlobParams | None = None) -> np.ndarray:
    """Stacked (n_scenes, nz, ny, nx, C) array; scene k depends only on (seed, k)."""
    params = params or BlobParams()
    dims = tuple(int(d) for d in dims)
    if n_scenes < 0 or len(dims) != 3 or min(dims) < 1:
        raise ValidationError(f"bad dataset request: n_scenes={n_scenes}, dims={dims}")
    scenes = np.zeros((n_scenes,) + dims + (len(channels),))
    for k in range(n_scenes):
        scenes[k] = make_scene(dims, channels, rngmod.substream(seed, "dataset", k), params)
    return scenes


def write_dataset(out_dir, scenes, channels, seed, params: BlobParams | None = None,
                  scale: ScaleSpec | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = params or BlobParams()
    if scale is None:
        scale = ScaleSpec.from_percentile(scenes, channels) if len(scenes) else ScaleSpec.ones(channels)
    files = []
    for k, scene in enumerate(scenes):
        name = f"scene_{k:05d}.nndf"
        write_nndf(out_dir / name, Field(scene.astype(np.float32), channels), scale=scale)
        files.append(name)
    dims = [int(n) for n in scenes.shape[1:4]]
    manifest = {
        "format": "nnd-dataset-v1",
        "count": len(files),
        "dims": dims,
        "channels": list(channels),
        "seed": int(seed),
        "params": asdict(params),
        "scale": scale.to_json(),
        "rng": rngmod.describe(seed),
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_dataset(path) -> tuple:
    """Load (scenes array, channels, ScaleSpec, manifest) from a dataset directory."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"{path}: cannot read dataset manifest: {e}") from None
    channels = tuple(manifest["channels"])
    scale = ScaleSpec(manifest["scale"])
    fields = []
    for name in manifest["files"]:
        f, _ = read_nndf_with_header(path / name)
        if f.channels != channels:
            raise ValidationError(f"{name}: channels {f.channels} differ from manifest {channels}")
        fields.append(f.values)
    dims = tuple(manifest["dims"] or (0, 0, 0))
    scenes = np.stack(fields) if fields else np.zeros((0,) + dims + (len(channels),))
    return scenes, channels, scale, manifest
