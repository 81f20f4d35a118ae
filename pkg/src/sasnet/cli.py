"""``sasnet`` command line: fit, render, metrics, spectrum, sweep-omega0, contrib, masks, toy."""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .imaging import (
    error_map,
    fd_gradient,
    load_png,
    normalize,
    pixel_coords,
    save_png,
    to_gray,
    toy_image,
)
from .metrics import CannyParams, MetricReport, edge_partition, noisiness, psnr, psnr_edge, ssim
from .training import (
    CheckpointError,
    ConfigError,
    Evaluator,
    NumericalFailure,
    TrainConfig,
    ablation_configs,
    build_model,
    dump_config_toml,
    load_checkpoint,
    load_config,
    load_training_image,
    model_from_checkpoint,
    predict,
    save_checkpoint,
    toy_config,
    train,
    write_metrics_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    """Bad command-line input that is not a TrainConfig field problem."""

# -- run directories -----------------------------------------------------------------


@contextlib.contextmanager
def locked(directory: Path):
    """Exclusive ownership of a run directory for the lifetime of one command."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{directory} is in use by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def versions() -> dict:
    import numba
    import scipy

    return {"sasnet": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(directory: Path, command: str, cfg: TrainConfig | None = None, **extra):
    doc = {"command": command, "versions": versions(), **extra}
    if cfg is not None:
        doc.update(config_hash=cfg.digest(), seed=cfg.seed, config=cfg.to_dict())
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _finite_or_none(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}

# -- rendering ------------------------------------------------------------------------


def render_coords(w: int, h: int, margin: float, scale: int = 1, shift: float = 0.0,
                  crop: tuple[int, int, int, int] | None = None):
    """Lattice coordinates for an optionally cropped, upsampled, shifted render.

    ``crop`` = (x0, y0, cw, ch) in training pixels. Returns (coords, out_w, out_h).
    """
    if scale < 1 or int(scale) != scale:
        raise UsageError(f"scale must be an integer >= 1, got {scale}")
    if not 0 <= shift < 1:
        raise UsageError(f"shift must be in [0, 1), got {shift}")
    full = pixel_coords(w, h, margin, shift=shift, scale=scale)
    if crop is None:
        return full, w * scale, h * scale
    x0, y0, cw, ch = crop
    if cw < 1 or ch < 1 or x0 < 0 or y0 < 0 or x0 + cw > w or y0 + ch > h:
        raise UsageError(f"crop {crop} lies outside the {w}x{h} image domain")
    rows = np.arange(y0 * scale, (y0 + ch) * scale)
    cols = np.arange(x0 * scale, (x0 + cw) * scale)
    idx = (rows[:, None] * (w * scale) + cols[None, :]).ravel()
    return full[idx], cw * scale, ch * scale


def render(model, cfg: TrainConfig, w: int, h: int, scale=1, shift=0.0, crop=None) -> np.ndarray:
    coords, ow, oh = render_coords(w, h, cfg.margin, scale, shift, crop)
    out = predict(model, coords)
    return np.clip(out.reshape(oh, ow, -1), 0.0, 1.0)


def _training_size(ckpt) -> tuple[int, int]:
    cfg = ckpt.config
    if "image_shape" in ckpt.header:
        h, w = ckpt.header["image_shape"][:2]
        return int(w), int(h)
    return cfg.resolution, cfg.resolution

# -- commands -------------------------------------------------------------------------


def fit_one(cfg: TrainConfig, runs_dir: Path) -> MetricReport:
    image = load_training_image(cfg)
    run = runs_dir / cfg.name
    with locked(run):
        write_manifest(run, "fit", cfg, image_shape=list(image.shape))
        (run / "config.toml").write_text(dump_config_toml(cfg))
        try:
            result = train(cfg, image)
        except NumericalFailure as exc:
            save_checkpoint(run / "checkpoint.failed.sasn", exc.state)
            raise
        ckpt = result.checkpoint()
        ckpt.header["image_shape"] = list(image.shape)
        save_checkpoint(run / "checkpoint.sasn", ckpt)
        write_metrics_csv(run / "metrics.csv", result.history)
        np.savetxt(run / "loss.csv", result.losses, delimiter=",", header="total,mse,l1,sparse", comments="")
        h, w, _ = image.shape
        recon = render(result.model, cfg, w, h)
        save_png(run / "recon.png", recon)
        save_png(run / "error.png", error_map(image, recon))
        final = result.history[-1]
        (run / "report.json").write_text(json.dumps(_finite_or_none(final.as_dict()), indent=2) + "\n")
    return final


def cmd_fit(args) -> int:
    cfg = config_from_args(args)
    configs = ablation_configs(cfg) if args.ablation == "table3" else [cfg]
    runs_dir = Path(args.runs_dir)
    for c in configs:
        rep = fit_one(c, runs_dir)
        print(json.dumps({"name": c.name, **_finite_or_none(rep.as_dict())}))
    return EXIT_OK


def cmd_render(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ckpt)
    w, h = _training_size(ckpt)
    crop = tuple(_int_list(args.crop)) if args.crop else None
    if crop is not None and len(crop) != 4:
        raise UsageError("--crop takes x0,y0,width,height")
    img = render(model, cfg, w, h, args.scale, args.shift, crop)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, img)
    write_manifest(out.parent, "render", cfg, checkpoint=str(args.checkpoint), scale=args.scale,
                   shift=args.shift, crop=list(crop) if crop else None, output=out.name)
    print(f"wrote {out} ({img.shape[1]}x{img.shape[0]})")
    return EXIT_OK


def cmd_metrics(args) -> int:
    gt = load_png(args.gt)
    params = CannyParams(args.canny_sigma, args.canny_low, args.canny_high, args.dilation_radius)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model, cfg = model_from_checkpoint(ckpt)
        cfg = dataclasses.replace(cfg, canny_sigma=params.sigma, canny_low=params.low, canny_high=params.high,
                                  dilation_radius=params.dilation_radius)
        if gt.shape[2] != model.head.W.shape[0]:
            gt = to_gray(gt) if model.head.W.shape[0] == 1 else np.repeat(gt, 3, axis=2)
        ev = Evaluator(gt, cfg)
        row = ev.report(model, int(ckpt.step)).as_dict()
    else:
        if not args.pred:
            raise UsageError("metrics needs --pred or --checkpoint")
        pred = load_png(args.pred)
        if pred.shape != gt.shape:
            raise UsageError(f"dimension mismatch: gt {gt.shape} vs pred {pred.shape}")
        row = image_pair_metrics(gt, pred, params)
    if isinstance(row.get("psnr_edge"), float) and math.isnan(row["psnr_edge"]):
        print("warning: no edge pixels found in the ground truth; psnr_edge is undefined", file=sys.stderr)
    print(json.dumps(_finite_or_none(row)))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(list(row))
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    return EXIT_OK


def image_pair_metrics(gt: np.ndarray, pred: np.ndarray, params: CannyParams | None = None) -> dict:
    """Metrics without a model; gradient terms use finite differences on both images."""
    part = edge_partition(to_gray(gt), params)
    if part.smooth.any():
        n_mean, n_std = noisiness(fd_gradient(to_gray(gt)), fd_gradient(to_gray(pred)), part)
    else:
        n_mean = n_std = float("nan")
    return {"psnr": psnr(gt, pred), "ssim": ssim(gt, pred), "psnr_edge": psnr_edge(gt, pred, part),
            "noisiness_fd_mean": n_mean, "noisiness_fd_std": n_std}


def cmd_spectrum(args) -> int:
    from .embedding import spectrum

    if args.checkpoint:
        model, cfg = model_from_checkpoint(load_checkpoint(args.checkpoint))
    else:
        cfg = config_from_args(args)
        model = build_model(cfg, 1)
    spec = spectrum(lambda xy: predict(model, xy)[:, 0], args.fft_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "spectrum.png", normalize(np.log10(spec.power + 1e-30)))
    summary = {"fft_size": args.fft_size, "band_limit": cfg.band_limit,
               "band_fraction": spec.band_fraction(cfg.band_limit), "dc_fraction": spec.dc_fraction()}
    (out / "spectrum.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "spectrum", cfg, fft_size=args.fft_size)
    print(json.dumps(summary))
    return EXIT_OK


def final_psnr(model, cfg: TrainConfig, image: np.ndarray) -> float:
    h, w, _ = image.shape
    return psnr(image, render(model, cfg, w, h))


def sweep_omega0(cfg: TrainConfig, omegas: list[float], image: np.ndarray | None = None) -> list[dict]:
    if not omegas:
        raise UsageError("the omega0 list is empty")
    image = load_training_image(cfg) if image is None else image
    rows = []
    for w0 in omegas:
        for model in ("siren", "sasnet"):
            c = cfg.replace(model=model, omega0=float(w0), name=f"{cfg.name}_{model}_w{w0:g}")
            res = train(c, image, evaluate=False)
            rows.append({"model": model, "omega0": float(w0), "psnr": final_psnr(res.model, c, image)})
    return rows


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    rows = sweep_omega0(cfg, [float(v) for v in args.omegas.split(",") if v.strip()])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["model", "omega0", "psnr"], lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    write_manifest(out.parent, "sweep-omega0", cfg, omegas=args.omegas)
    for r in rows:
        print(f"{r['model']:6s} omega0={r['omega0']:g} psnr={r['psnr']:.3f}")
    return EXIT_OK


def cmd_contrib(args) -> int:
    from .network import contribution_map

    ckpt = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ckpt)
    if not hasattr(model, "bindings"):
        raise UsageError("contribution maps need a SASNet checkpoint")
    w, h = _training_size(ckpt)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "contrib"
    out.mkdir(parents=True, exist_ok=True)
    coords = pixel_coords(w, h, cfg.margin)
    layers = [args.layer] if args.layer is not None else range(1 + len(model.hidden))
    entries = []
    for layer in layers:
        maps = contribution_map(model, coords, layer)
        neurons = range(maps.shape[1]) if args.neurons is None else _int_list(args.neurons)
        for j in neurons:
            name = f"layer{layer}_neuron{j:04d}.png"
            save_png(out / name, normalize(maps[:, j].reshape(h, w)))
            bind = model.bindings[layer]
            entries.append({"file": name, "layer": layer, "neuron": j,
                            "group": None if bind is None else int(bind[j])})
    write_manifest(out, "contrib", cfg, checkpoint=str(args.checkpoint), panels=entries)
    print(f"wrote {len(entries)} contribution maps to {out}")
    return EXIT_OK


def mask_panels(model) -> list[dict]:
    """One entry per mask channel: layer, group within the layer, fixed flag."""
    if getattr(model, "mask_field", None) is None:
        return []
    fixed = set(model.mask_field.decoder.fixed)
    out = []
    for layer, chans in enumerate(model.layer_groups):
        for g, c in enumerate(chans):
            out.append({"channel": c, "layer": layer, "group": g, "fixed": c in fixed})
    return out


def cmd_masks(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ckpt)
    w, h = _training_size(ckpt)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "masks"
    out.mkdir(parents=True, exist_ok=True)
    panels = mask_panels(model)
    masks = model.masks(pixel_coords(w, h, cfg.margin)) if panels else None
    for p in panels:
        p["file"] = f"layer{p['layer']}_group{p['group']}.png"
        # masks already live in [0, 1]; no rescaling so a fixed channel stays white
        save_png(out / p["file"], masks[:, p["channel"]].reshape(h, w))
    write_manifest(out, "masks", cfg, checkpoint=str(args.checkpoint), panels=panels)
    print(f"wrote {len(panels)} mask panels to {out}")
    return EXIT_OK


def toy_benchmark(cfg: TrainConfig, siren_omegas=(30.0, 60.0, 120.0)) -> list[dict]:
    """SASNet vs SIREN baselines on the ring image at a matched parameter budget."""
    image = toy_image(cfg.resolution)
    rows = []
    runs = [cfg.replace(model="sasnet")] + [cfg.replace(model="siren", omega0=float(w)) for w in siren_omegas]
    for c in runs:
        res = train(c, image, evaluate=False)
        snn = sum(p.data.size for p in res.optimizer.params.values())
        rows.append({"model": c.model, "omega0": c.omega0, "trainable": snn,
                     "psnr": final_psnr(res.model, c, image)})
    return rows


def cmd_toy(args) -> int:
    if not args.run:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_png(out, toy_image(args.size))
        print(f"wrote {out}")
        return EXIT_OK
    cfg = toy_config(resolution=args.size, steps=args.steps, seed=args.seed)
    rows = toy_benchmark(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    write_manifest(out.parent, "toy", cfg)
    for r in rows:
        print(f"{r['model']:6s} omega0={r['omega0']:g} params={r['trainable']} psnr={r['psnr']:.3f}")
    return EXIT_OK

# -- argument plumbing -----------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML file mirroring TrainConfig")
    p.add_argument("--preset", choices=["toy"], help="start from a named preset instead of the defaults")
    g = p.add_argument_group("TrainConfig overrides")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(TrainConfig(), f.name)
        if isinstance(default, bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            g.add_argument(flag, dest=f.name, type=_int_list, default=None, metavar="N,N,...")
        else:
            g.add_argument(flag, dest=f.name, type=type(default), default=None)


def config_from_args(args) -> TrainConfig:
    if getattr(args, "config", None):
        base = load_config(args.config).to_dict()
    elif getattr(args, "preset", None) == "toy":
        base = toy_config().to_dict()
    else:
        base = TrainConfig().to_dict()
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return TrainConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sasnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train one model (or the 9 ablation rows)")
    add_config_flags(f)
    f.add_argument("--runs-dir", default="runs")
    f.add_argument("--ablation", choices=["table3"])
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="evaluate a checkpoint on a (finer, shifted, cropped) lattice")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--scale", type=int, default=1)
    r.add_argument("--shift", type=float, default=0.0, help="lattice offset in output pixels, [0, 1)")
    r.add_argument("--crop", help="x0,y0,width,height in training pixels")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    m = sub.add_parser("metrics", help="PSNR/SSIM/PSNR_edge/noisiness for an image pair or a checkpoint")
    m.add_argument("--gt", required=True)
    m.add_argument("--pred")
    m.add_argument("--checkpoint")
    m.add_argument("--csv")
    for name, default in (("canny_sigma", 1.4), ("canny_low", 0.1), ("canny_high", 0.2)):
        m.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=default)
    m.add_argument("--dilation-radius", type=int, default=3)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("spectrum", help="2D power spectrum of a checkpoint or an untrained model")
    add_config_flags(s)
    s.add_argument("--checkpoint")
    s.add_argument("--fft-size", type=int, default=256, help="samples per axis over one period (power of two)")
    s.add_argument("--out", default="spectrum")
    s.set_defaults(func=cmd_spectrum)

    w = sub.add_parser("sweep-omega0", help="final PSNR of SIREN and SASNet per omega0")
    add_config_flags(w)
    w.add_argument("--omegas", default="30,43,60")
    w.add_argument("--out", default="sweep_omega0.csv")
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("contrib", help="per-neuron contribution maps")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--layer", type=int)
    c.add_argument("--neurons", help="comma-separated neuron indices (default: all)")
    c.add_argument("--out")
    c.set_defaults(func=cmd_contrib)

    k = sub.add_parser("masks", help="per-group mask panels")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--out")
    k.set_defaults(func=cmd_masks)

    t = sub.add_parser("toy", help="write the ring image, or with --run compare SASNet and SIREN on it")
    t.add_argument("--size", type=int, default=256)
    t.add_argument("--run", action="store_true")
    t.add_argument("--steps", type=int, default=5000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="toy.png")
    t.set_defaults(func=cmd_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
