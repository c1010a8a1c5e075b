"""Command-line entry point: ``nnd <subcommand> [--config F] [--seed N] [--out DIR] [--override k=v]``.

Exit codes: 0 success, 1 failed oracle checks, 2 validation error, 3 numerical divergence.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from nnd import checks, config as cfgmod, forward, rng as rngmod
from nnd.denoise import NeuralDenoiser, TrainOptions, prior_from_json, train
from nnd.denoise.training import reduction
from nnd.errors import DivergenceError, ValidationError
from nnd.latent import Field, LatentField, ScaleSpec, apply_scale, read_nndf_with_header, write_nndf
from nnd.mip import render_field
from nnd.sampler import generate, invert
from nnd.synthdata import BlobParams, make_blob_dataset, read_dataset, write_dataset

log = logging.getLogger("nnd")

SUBCOMMANDS = ("make-dataset", "train", "generate", "invert", "oracle-check", "render-mip", "trace-plot")


def _threads() -> int:
    raw = os.environ.get("NND_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"NND_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- make-dataset -----------------------------------------------------------

def cmd_make_dataset(cfg, explicit, out):
    ds = cfg["dataset"]
    try:
        params = BlobParams(**ds.get("params", {}))
    except TypeError as e:
        raise ValidationError(f"bad dataset params: {e}") from None
    channels = tuple(cfg["channels"])
    scenes = make_blob_dataset(int(ds["n_scenes"]), tuple(cfg["dims"]), channels, cfg["seed"], params)
    manifest = write_dataset(out, scenes, channels, cfg["seed"], params)
    print(f"wrote {manifest['count']} scenes to {out}")


# ---- train ------------------------------------------------------------------

def _identity_ratio(net, clean, sigma, seed):
    """Held-out MSE of the denoiser divided by that of the identity map (sigma^2)."""
    gen = rngmod.substream(seed, "validation", 1)
    noisy = clean + sigma * gen.standard_normal(clean.shape)
    mse = np.mean([np.mean((net.denoise(noisy[j:j + 8], sigma) - clean[j:j + 8]) ** 2)
                   for j in range(0, len(clean), 8)])
    return float(mse / sigma ** 2)


def cmd_train(cfg, explicit, out):
    scenes, channels, scale, manifest = read_dataset(cfg["dataset"]["path"])
    if "scale" in explicit and cfg["scale"]:
        scale = ScaleSpec(cfg["scale"])
    tr = cfg["train"]
    n_val = int(tr["val_scenes"])
    if len(scenes) <= n_val:
        raise ValidationError(f"dataset has {len(scenes)} scenes; need more than val_scenes={n_val}")
    eps = float(cfg["eps"])
    latent = np.log(scenes * scale.vector(channels) + eps)
    train_lat, val_lat = latent[:-n_val], latent[-n_val:] if n_val else None
    sig = cfgmod.train_sigmas_from(cfg)
    net = NeuralDenoiser(channels, seed=cfg["seed"], eps=eps, scale=scale,
                         sigma_config=cfg["train_sigmas"], init=tr["init"])
    opts = TrainOptions(batch=int(tr["batch"]), lr=float(tr["lr"]),
                        weight_decay=float(tr["weight_decay"]), steps=int(tr["steps"]),
                        seed=cfg["seed"], eval_every=int(tr["eval_every"]),
                        stop_at_reduction=tr["stop_at_reduction"])
    result = train(net, train_lat, sig, opts, val_latent=val_lat)
    net.save(out / "model.nndm")
    with open(out / "losses.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        w.writerows((i, repr(v)) for i, v in enumerate(result.losses))
    with open(out / "validation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "val_loss"])
        w.writerows(zip(result.val_steps, map(repr, result.val_losses)))
    summary = {"steps": len(result.losses), "final_loss": result.losses[-1] if result.losses else None}
    if val_lat is not None and len(result.val_losses) > 1:
        summary["val_reduction"] = reduction(result.smoothed_val())
        summary["mse_over_identity"] = {str(s): _identity_ratio(net, val_lat, s, cfg["seed"])
                                        for s in (0.1, 1.0, 10.0)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))


# ---- generate / invert ------------------------------------------------------

def load_denoiser(cfg, explicit):
    """Build the denoiser and reconcile eps, scale and channels with a model file."""
    spec = cfg["denoiser"]
    if spec.get("kind") != "neural":
        return prior_from_json(spec)
    path = spec.get("model")
    if not path:
        raise ValidationError("denoiser.kind is 'neural' but denoiser.model is not set")
    net = NeuralDenoiser.load(path)
    if "eps" in explicit and float(cfg["eps"]) != net.eps:
        raise ValidationError(f"eps {cfg['eps']!r} differs from the model's {net.eps!r}")
    if "scale" in explicit and cfg["scale"] is not None and dict(cfg["scale"]) != net.scale.to_json():
        raise ValidationError(f"scale {cfg['scale']} differs from the model's {net.scale.to_json()}")
    if "channels" in explicit and tuple(cfg["channels"]) != net.channel_names:
        raise ValidationError(f"channels {cfg['channels']} differ from the model's {list(net.channel_names)}")
    cfg["eps"] = net.eps
    cfg["scale"] = net.scale.to_json()
    cfg["channels"] = list(net.channel_names)
    return net


def load_measurement(cfg, out, fm):
    m = cfg["measurement"]
    if m.get("path"):
        return forward.Measurement.load(m["path"])
    if not m.get("truth"):
        raise ValidationError("invert needs measurement.path or measurement.truth")
    truth, _ = read_nndf_with_header(m["truth"])
    if not isinstance(truth, Field):
        raise ValidationError(f"{m['truth']}: truth must be a physical field, not a latent grid")
    if list(truth.channels) != list(cfg["channels"]):
        raise ValidationError(f"truth channels {truth.channels} differ from {cfg['channels']}")
    if cfg.get("scale"):
        truth = apply_scale(truth, ScaleSpec(cfg["scale"]), "forward")
    y = forward.add_photon_noise(fm.apply(truth.values), cfg["seed"], float(m["y_min"]),
                                 m["noise"], meta=fm.to_json())
    y.save(out / "measurement.json")
    return y


def _run_many(cfg, out, job):
    count = int(cfg["count"])
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}")
    runs = list(range(count))
    workers = min(count, _threads())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, runs))
    else:
        results = [job(k) for k in runs]
    for k, (field_out, trace) in zip(runs, results):
        write_nndf(out / f"sample_{k:03d}.nndf", field_out, scale=cfg.get("scale"), eps=cfg["eps"])
        trace.to_csv(out / f"trace_{k:03d}.csv")
        for t, snap in sorted(trace.snapshots.items()):
            write_nndf(out / f"snapshot_{k:03d}_t{t:04d}.nndf", LatentField(snap, field_out.channels),
                       eps=cfg["eps"])
    print(f"wrote {count} sample(s) to {out}")


def _as_field(x, cfg):
    return x if isinstance(x, Field) else Field(x.reshape(tuple(cfg["dims"]) + (-1,)), cfg["channels"])


def cmd_generate(cfg, explicit, out):
    den = load_denoiser(cfg, explicit)

    def job(k):
        rc = cfgmod.run_config_from(cfg, run=k)
        x, trace = generate(rc, den)
        return _as_field(x, cfg), trace

    return job


def cmd_invert(cfg, explicit, out):
    den = load_denoiser(cfg, explicit)
    fm = forward.fm_from_json(cfg["forward"])
    y = load_measurement(cfg, out, fm)

    def job(k):
        rc = cfgmod.run_config_from(cfg, run=k)
        x, trace = invert(rc, den, fm, y)
        return _as_field(x, cfg), trace

    return job


# ---- oracle-check / render-mip / trace-plot ---------------------------------

def cmd_oracle_check(cfg, explicit, out):
    rows = checks.run_all()
    print(checks.format_table(rows))
    with open(out / "oracle_check.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["check", "error", "tolerance", "passed"])
        w.writerows((r.name, repr(r.error), repr(r.tolerance), r.passed) for r in rows)
    return 0 if all(r.passed for r in rows) else 1


def cmd_render_mip(cfg, explicit, out):
    m = cfg["mip"]
    if not m.get("input"):
        raise ValidationError("render-mip needs an input NNDF (positional or mip.input=...)")
    grid, _ = read_nndf_with_header(m["input"])
    if not isinstance(grid, Field):
        raise ValidationError(f"{m['input']}: render-mip expects a physical field, not a latent grid")
    written = render_field(grid, out, axis=m["axis"], channels=m.get("channels"),
                           gamma=float(m["gamma"]), stem=Path(m["input"]).stem)
    for p in written:
        print(p)


def cmd_trace_plot(cfg, explicit, out):
    """Long-format CSV (t, series, value) with log10 columns added for sigma and alpha."""
    src = cfg.get("trace_input")
    if not src:
        raise ValidationError("trace-plot needs a trace CSV (positional or trace_input=...)")
    try:
        with open(src, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise ValidationError(f"cannot read trace {src}: {e}") from None
    if not rows or "t" not in rows[0]:
        raise ValidationError(f"{src}: not a trace CSV")
    dest = out / (Path(src).stem + "_long.csv")
    with open(dest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "series", "value"])
        for row in rows:
            t = int(row["t"])
            for key, raw in row.items():
                if key == "t":
                    continue
                w.writerow([t, key, raw])
                if key in ("sigma", "alpha"):
                    w.writerow([t, f"log10_{key}", repr(math.log10(float(raw)))])
    print(dest)


COMMANDS = {
    "make-dataset": cmd_make_dataset, "train": cmd_train, "generate": cmd_generate,
    "invert": cmd_invert, "oracle-check": cmd_oracle_check,
    "render-mip": cmd_render_mip, "trace-plot": cmd_trace_plot,
}


def build_parser():
    p = argparse.ArgumentParser(prog="nnd", description="Latent-space annealed Langevin sampling toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run-config file")
        s.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        s.add_argument("--out", default="nnd_out", help="output directory")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dot-path config override, value parsed as JSON when possible")
        if name in ("generate", "invert"):
            s.add_argument("--count", type=int, help="number of independent runs")
        if name in ("render-mip", "trace-plot"):
            s.add_argument("input", nargs="?", help="input file")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    if getattr(args, "count", None) is not None:
        overrides.append(f"count={args.count}")
    if getattr(args, "input", None):
        key = "mip.input" if args.command == "render-mip" else "trace_input"
        overrides.append(f"{key}={json.dumps(args.input)}")
    cfg, explicit = cfgmod.load_config(args.config, overrides, args.seed)
    out = _out_dir(args)
    result = COMMANDS[args.command](cfg, explicit, out)
    cfgmod.dump_config(cfg, out / "resolved_config.json")
    if callable(result):
        _run_many(cfg, out, result)
        return 0
    return int(result or 0)


def main(argv=None) -> int:
    try:
        return run(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
