"""``shlight`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 input error, 4 numeric failure.
Errors are reported as a single ``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidArgument, InvalidState, NumericError, ParseError, ShapeError, ShlError

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("shlight")


class UsageError(Exception):
    pass


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    # show defaults even for flags without help text
    def _get_help_string(self, action):
        text = action.help or ""
        if "%(default)" not in text and action.default not in (None, argparse.SUPPRESS) \
                and action.option_strings and action.nargs != 0:
            text += " (default: %(default)s)"
        return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get("SHL_THREADS")
        if not env:
            return nullcontext()
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"SHL_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise UsageError("thread count must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def _parse_bbox(text: str) -> tuple[int, int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bbox must be x,y,w,h integers, got {text!r}") from exc
    if len(vals) != 4:
        raise UsageError(f"bbox must be x,y,w,h, got {text!r}")
    return vals


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


# --------------------------------------------------------------------------
# Commands


def cmd_project(args) -> None:
    from .hdrio import load_radiance_map
    from .sh import project_panorama
    envmap = load_radiance_map(_require_file(args.input), args.exposure_scale)
    c = project_panorama(envmap, args.order)
    c.meta["source"] = Path(args.input).name
    c.save(args.out)


def cmd_reconstruct(args) -> None:
    from .hdrio import save_radiance_map
    from .sh import SHCoeffs, convolve_irradiance, reconstruct_envmap
    c = SHCoeffs.load(_require_file(args.sh))
    if args.irradiance and c.domain == "radiance":
        c = convolve_irradiance(c)
    m = reconstruct_envmap(c, args.width, args.height)
    m.data = np.maximum(m.data, 0.0)
    save_radiance_map(args.out, m)


def _load_normals(path: Path) -> tuple[np.ndarray, np.ndarray]:
    from .hdrio import load_png, load_radiance_map
    if path.suffix.lower() == ".png":
        n = load_png(path).astype(np.float64) / 255.0 * 2.0 - 1.0
    else:
        n = load_radiance_map(path).data.astype(np.float64)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    mask = norm[..., 0] > 0.5
    return np.where(mask[..., None], n / np.maximum(norm, 1e-12), 0.0), mask


def cmd_render(args) -> None:
    from .evaluate import display_encode
    from .hdrio import save_png
    from .sh import IRRADIANCE, SHCoeffs, convolve_irradiance, shade_diffuse, sphere_normals
    c = SHCoeffs.load(_require_file(args.sh))
    if c.domain != IRRADIANCE:
        c = convolve_irradiance(c)
    if args.object == "sphere":
        normals, mask = sphere_normals(args.size)
    else:
        normals, mask = _load_normals(_require_file(args.object))
    img = shade_diffuse(c, normals, args.albedo)
    img[~mask] = 0.0
    if not np.isfinite(img).all():
        raise NumericError("render produced non-finite values")
    peak = float(img.max())
    save_png(args.out, display_encode(img, peak if args.normalize else 1.0, args.gamma))


def _camera(args):
    from .panorama import CameraSpec
    return CameraSpec(args.yaw, args.pitch, args.fov, args.width, args.height)


def cmd_mrv(args) -> None:
    from .hdrio import load_radiance_map, save_png, save_radiance_map
    from .panorama import mixed_reality_view
    from .sh import project_panorama
    envmap = load_radiance_map(_require_file(args.input), args.exposure_scale)
    cam = _camera(args)
    v = mixed_reality_view(envmap, args.yaw, args.pitch, args.t, cam, args.gamma, args.exposure_percentile,
                           args.beta)
    save_png(args.out, v.ldr)
    if args.warped_out:
        save_radiance_map(args.warped_out, v.warped)
    if args.sh_out:
        c = project_panorama(v.warped, args.order)
        c.meta.update(yaw=v.yaw, pitch=v.pitch, beta=v.beta, t=v.t, exposure=v.exposure)
        c.save(args.sh_out)


def cmd_gen_dataset(args) -> None:
    from .dataset import ViewConfig, build_dataset_from_dir, build_synthetic_dataset
    from .panorama import CameraSpec
    if (args.input_dir is None) == (args.synthetic is None):
        raise UsageError("gen-dataset: give exactly one of --input-dir or --synthetic")
    if args.views < 1:
        raise UsageError("gen-dataset: --views must be >= 1")
    cfg = ViewConfig(CameraSpec(0.0, 0.0, args.fov, args.width, args.height), args.t, args.gamma,
                     args.exposure_percentile)
    if args.synthetic is not None:
        if args.synthetic < 3:
            raise UsageError("gen-dataset: --synthetic needs at least 3 panoramas")
        m = build_synthetic_dataset(args.out, args.synthetic, args.views, args.seed, cfg, args.pano_width)
    else:
        if not Path(args.input_dir).is_dir():
            raise FileNotFoundError(f"no such directory: {args.input_dir}")
        m = build_dataset_from_dir(args.out, args.input_dir, args.views, args.seed, cfg, args.exposure_scale)
    print(json.dumps({"samples": len(m.samples), "norm_scale": m.norm_scale,
                      "splits": {k: len(v) for k, v in m.splits.items()}}))


def load_train_config(path: str | None) -> tuple[dict, dict]:
    """Read a YAML training config with optional ``model`` and ``train`` maps."""
    if path is None:
        return {}, {}
    with open(_require_file(path)) as fh:
        try:
            doc = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - {"model", "train"}:
        raise InvalidArgument(f"{path}: top-level keys must be 'model' and/or 'train'")
    return dict(doc.get("model") or {}), dict(doc.get("train") or {})


def resolve_train_config(args):
    from .model import PROFILES, ModelConfig, with_loss
    from .train import TrainRun
    model_d, train_d = load_train_config(args.config)
    profile = model_d.pop("profile", None)
    if args.profile:
        profile = args.profile
    if profile and profile not in PROFILES:
        raise InvalidArgument(f"unknown profile {profile!r}")
    base = PROFILES[profile] if profile else ModelConfig()
    if model_d:
        merged = base.to_dict()
        loss = dict(merged["loss"])
        loss.update(model_d.pop("loss", {}) or {})
        merged.update(model_d)
        merged["loss"] = loss
        base = ModelConfig.from_dict(merged)
    overrides = {k: v for k, v in (("mode", args.loss), ("alpha", args.alpha)) if v is not None}
    config = with_loss(base, **overrides) if overrides else base
    if args.dropout is not None:
        config = replace(config, dropout=args.dropout)
    run = TrainRun.from_dict(train_d)
    for key in ("batch_size", "lr", "max_epochs", "patience", "seed"):
        val = getattr(args, key)
        if val is not None:
            setattr(run, key, val)
    config.validate()
    run.validate()
    return config, run


def cmd_train(args) -> None:
    from . import checkpoint as ckpt_io
    from .dataset import Manifest
    from .train import train
    config, run = resolve_train_config(args)
    manifest = Manifest.load(args.data)
    res = train(manifest, config, run, args.history)
    ckpt_io.save(args.out, res.checkpoint)
    last = res.history[-1]
    print(json.dumps({"epochs": len(res.history), "best_epoch": res.best_epoch,
                      "val_loss": res.checkpoint.meta["val_loss"], "last_val_sh_mse": last["val_sh_mse"]}))


def cmd_infer(args) -> None:
    from .hdrio import load_png
    from .train import Predictor, infer, infer_local
    pred = Predictor.from_checkpoint(_require_file(args.checkpoint))
    img = load_png(_require_file(args.image))
    if args.bbox:
        results = infer_local(pred, img, [_parse_bbox(b) for b in args.bbox])
        doc = [{"bbox": list(_parse_bbox(b)), "normalized": n.to_dict(), "sh": d.to_dict()}
               for b, (n, d) in zip(args.bbox, results)]
        text = json.dumps(doc, indent=2)
        Path(args.out).write_text(text + "\n") if args.out else print(text)
        return
    norm, denorm = infer(pred, img)
    chosen = norm if args.normalized else denorm
    if args.out:
        chosen.save(args.out)
    else:
        print(json.dumps(chosen.to_dict()))


def cmd_eval(args) -> None:
    from .dataset import Manifest
    from .evaluate import evaluate, write_rows
    from .train import Predictor
    pred = Predictor.from_checkpoint(_require_file(args.checkpoint))
    res = evaluate(pred, Manifest.load(args.data), args.split, args.sphere_size)
    if args.out:
        res.report.save(args.out)
    if args.rows:
        write_rows(args.rows, res.rows)
    print(res.report.table1())
    print()
    print(res.report.table2())


def cmd_bench(args) -> None:
    from .bench import bench_inference, parse_resolution, write_bench_csv
    from .train import Predictor
    if args.repetitions < 1:
        raise UsageError("bench: --repetitions must be >= 1")
    resolutions = [parse_resolution(r) for r in args.resolutions.split(",") if r]
    batches = _csv_ints(args.batches)
    pred = Predictor.from_checkpoint(_require_file(args.checkpoint))
    rows = bench_inference(pred, resolutions, batches, args.repetitions, args.warmup)
    if args.out:
        write_bench_csv(args.out, rows)
    for r in rows:
        print(f"{r.resolution:>10s} batch {r.batch:4d}: {r.mean_ms:10.2f} ± {r.sd_ms:.2f} ms "
              f"({r.per_frame_ms:.2f} ms/frame)")


# --------------------------------------------------------------------------
# Parser


def _view_flags(p, camera_defaults: bool = True) -> None:
    p.add_argument("--t", type=float, default=0.3, help="camera translation inside the unit sphere")
    p.add_argument("--fov", type=float, default=90.0, help="horizontal field of view, degrees")
    p.add_argument("--width", type=int, default=256, help="view width in pixels")
    p.add_argument("--height", type=int, default=192, help="view height in pixels")
    p.add_argument("--gamma", type=float, default=2.2, help="tone-mapping gamma")
    p.add_argument("--exposure-percentile", type=float, default=90.0,
                   help="luminance percentile mapped to 0.8 after gamma")
    p.add_argument("--exposure-scale", type=float, default=1.0, help="multiplier applied to loaded radiance")


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    ap = _Parser(prog="shlight", description="Spherical-harmonics lighting estimation toolkit.",
                 formatter_class=fmt)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap.add_argument("--threads", type=int, default=None, help="worker thread cap (default: $SHL_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="project an HDR panorama onto SH", formatter_class=fmt)
    p.add_argument("input", help=".hdr or .pfm equirect panorama")
    p.add_argument("--order", type=int, default=2, help="SH order")
    p.add_argument("--exposure-scale", type=float, default=1.0, help="multiplier applied to loaded radiance")
    p.add_argument("--out", required=True, help="output SH JSON")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("reconstruct", help="rebuild an equirect map from SH", formatter_class=fmt)
    p.add_argument("sh", help="SH JSON")
    p.add_argument("--width", type=int, default=512, help="output width in pixels")
    p.add_argument("--height", type=int, default=256, help="output height in pixels")
    p.add_argument("--irradiance", action="store_true", help="convolve radiance SH to irradiance first")
    p.add_argument("--out", required=True, help="output .pfm or .hdr")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("render", help="diffuse render lit by SH", formatter_class=fmt)
    p.add_argument("sh", help="SH JSON (radiance or irradiance)")
    p.add_argument("--object", default="sphere", help="'sphere' or a normal-map file (.pfm/.png)")
    p.add_argument("--size", type=int, default=128, help="sphere image size")
    p.add_argument("--albedo", type=float, nargs=3, default=(1.0, 1.0, 1.0), help="diffuse RGB reflectance")
    p.add_argument("--gamma", type=float, default=2.2, help="display gamma")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="skip scaling the brightest pixel to 1")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("mrv", help="extract one mixed-reality view", formatter_class=fmt)
    p.add_argument("input", help=".hdr or .pfm equirect panorama")
    p.add_argument("--yaw", type=float, default=0.0, help="camera yaw, degrees")
    p.add_argument("--pitch", type=float, default=0.0, help="camera pitch, degrees")
    p.add_argument("--beta", type=float, default=None,
                   help="warp direction from nadir, degrees (default: lowest visible point)")
    _view_flags(p)
    p.add_argument("--order", type=int, default=2, help="SH order for --sh-out")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--warped-out", default=None, help="optional warped HDR panorama (.pfm/.hdr)")
    p.add_argument("--sh-out", default=None, help="optional SH JSON of the warped panorama")
    p.set_defaults(fn=cmd_mrv)

    p = sub.add_parser("gen-dataset", help="generate MRV samples and a manifest", formatter_class=fmt)
    p.add_argument("--input-dir", default=None, help="directory of .hdr/.pfm panoramas")
    p.add_argument("--synthetic", type=int, default=None, help="number of synthetic panoramas")
    p.add_argument("--views", type=int, default=8, help="views drawn per panorama")
    p.add_argument("--seed", type=int, default=0, help="seed for views, splits and synthetic scenes")
    p.add_argument("--pano-width", type=int, default=512, help="synthetic panorama width")
    _view_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the lighting model", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory or manifest.jsonl")
    p.add_argument("--config", default=None, help="YAML training config (flags win)")
    p.add_argument("--profile", choices=("desk", "full", "tiny"), default=None, help="model size (default: desk)")
    p.add_argument("--loss", choices=("render", "weighted", "banded"), default=None, help="default: render")
    p.add_argument("--alpha", type=float, default=None, help="SH weight in the loss (default 0.7)")
    p.add_argument("--dropout", type=float, default=None, help="default 0.5")
    p.add_argument("--batch-size", type=int, default=None, help="default 64")
    p.add_argument("--lr", type=float, default=None, help="default 1e-4")
    p.add_argument("--max-epochs", type=int, default=None, help="default 100")
    p.add_argument("--patience", type=int, default=None, help="default 10")
    p.add_argument("--seed", type=int, default=None, help="default 0")
    p.add_argument("--history", default=None, help="CSV of per-epoch losses")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="estimate SH lighting from an LDR image", formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("image", help="PNG image")
    p.add_argument("--bbox", action="append", default=None, help="x,y,w,h crop; repeat for several objects")
    p.add_argument("--normalized", action="store_true", help="write normalized instead of radiance-scale SH")
    p.add_argument("--out", default=None, help="output JSON (default: stdout)")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="coefficient and render metrics on a split", formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True, help="dataset directory or manifest.jsonl")
    p.add_argument("--split", default="test", choices=("train", "val", "test"), help="manifest split to score")
    p.add_argument("--sphere-size", type=int, default=128, help="rendered sphere size in pixels")
    p.add_argument("--out", default=None, help="JSON report")
    p.add_argument("--rows", default=None, help="CSV of per-sample rows")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="time preprocessing + inference", formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("--resolutions", default="256x192,1280x720,1920x1080", help="comma-separated WxH list")
    p.add_argument("--batches", default="1,128", help="comma-separated batch sizes")
    p.add_argument("--repetitions", type=int, default=100, help="timed runs per setting")
    p.add_argument("--warmup", type=int, default=3, help="untimed runs per setting")
    p.add_argument("--out", default=None, help="CSV output")
    p.set_defaults(fn=cmd_bench)
    return ap


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"error: {kind}: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with _thread_limit(args.threads):
            args.fn(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(EXIT_INPUT, "input", exc)
    except (ParseError, InvalidArgument, ShapeError, InvalidState) as exc:
        return _fail(EXIT_INPUT, "input", exc)
    except ShlError as exc:
        return _fail(EXIT_INPUT, "input", exc)
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
