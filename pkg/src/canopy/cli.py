"""Command-line pipeline: synth, train, tune, detect, evaluate, gradcheck.

Every subcommand can be driven from a flat key-value config file
(--config); explicit flags override file values, and the effective
configuration is echoed next to the outputs so a run is reproducible
from its artifacts alone.  The CANOPY_SEED environment variable
overrides all seeds (for CI).  Outputs are never silently overwritten
without --force.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (non-finite losses, failed gradient checks).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import get_typed, load_config, save_config
from .data import load_dataset, load_points, load_raster, points_to_pixel, save_points
from .detect import PeakParams, TileGrid, detect_tiled, model_forward_fn, tiled_confidence
from .errors import FormatError, NumericError
from .metrics import metrics_report
from .model import load_weights
from .synth import SceneSpec, generate_dataset
from .train import TrainConfig, train
from .tune import TuneConfig, TuneResult, tune


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _log(msg):
    print(msg, flush=True)


def _no_clobber(paths, force):
    if force:
        return
    for p in paths:
        if p is not None and os.path.exists(p):
            raise UsageError(f"refusing to overwrite existing {p} (use --force)")


def _env_seed(seed):
    env = os.environ.get("CANOPY_SEED")
    return int(env) if env else seed


def _cfg(args):
    return load_config(args.config) if args.config else {}


def _pick(flag_value, cfg, key, kind, default):
    """Explicit flag wins, then config file, then the default."""
    if flag_value is not None:
        return flag_value
    return get_typed(cfg, key, kind, default)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic ground-truthed dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="square scene size, px")
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--pixel-size", type=float, default=None)
    p.add_argument("--radius-min", type=float, default=None, help="canopy radius, m")
    p.add_argument("--radius-max", type=float, default=None)
    p.add_argument("--min-separation", type=float, default=None, help="px")
    p.add_argument("--shadow-prob", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--nir-boost", type=float, default=None)
    p.add_argument("--grass-patches", type=int, default=None)
    p.add_argument("--roofs", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")


def _run_synth(args):
    cfg = _cfg(args)
    n_scenes = _pick(args.scenes, cfg, "synth.scenes", int, 8)
    size = _pick(args.size, cfg, "synth.size", int, 256)
    spec = SceneSpec(
        width=size,
        height=size,
        pixel_size=_pick(args.pixel_size, cfg, "synth.pixel_size", float, 0.6),
        n_trees=_pick(args.trees, cfg, "synth.trees", int, 18),
        radius_range_m=(
            _pick(args.radius_min, cfg, "synth.radius_min", float, 1.5),
            _pick(args.radius_max, cfg, "synth.radius_max", float, 3.6),
        ),
        min_separation_px=_pick(args.min_separation, cfg, "synth.min_separation", float, 9.0),
        shadow_prob=_pick(args.shadow_prob, cfg, "synth.shadow_prob", float, 0.35),
        noise_sigma=_pick(args.noise_sigma, cfg, "synth.noise_sigma", float, 2.0),
        nir_boost=_pick(args.nir_boost, cfg, "synth.nir_boost", float, 0.8),
        n_grass=_pick(args.grass_patches, cfg, "synth.grass_patches", int, 3),
        n_roofs=_pick(args.roofs, cfg, "synth.roofs", int, 3),
        seed=_env_seed(_pick(args.seed, cfg, "synth.seed", int, 0)),
    )
    os.makedirs(args.out, exist_ok=True)
    _no_clobber([os.path.join(args.out, "manifest.json")], args.force)
    generate_dataset(n_scenes, spec, args.out, log=_log)
    effective = {
        "synth.scenes": n_scenes, "synth.size": size,
        "synth.pixel_size": spec.pixel_size, "synth.trees": spec.n_trees,
        "synth.radius_min": spec.radius_range_m[0],
        "synth.radius_max": spec.radius_range_m[1],
        "synth.min_separation": spec.min_separation_px,
        "synth.shadow_prob": spec.shadow_prob, "synth.noise_sigma": spec.noise_sigma,
        "synth.nir_boost": spec.nir_boost, "synth.grass_patches": spec.n_grass,
        "synth.roofs": spec.n_roofs, "synth.seed": spec.seed,
    }
    save_config({k: str(v) for k, v in effective.items()},
                os.path.join(args.out, "effective.cfg"), header="canopy synth")
    _log(f"wrote {n_scenes} scenes to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _add_train(sub):
    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    for flag, kind in [("--epochs", int), ("--batch-size", int), ("--lr", float),
                       ("--alpha", float), ("--tau", float), ("--sigma-m", float),
                       ("--val-fraction", float), ("--seed", int),
                       ("--subsample-fraction", float), ("--width-scale", float)]:
        p.add_argument(flag, type=kind, default=None)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")


def _train_config(args, cfg):
    return TrainConfig(
        batch_size=_pick(args.batch_size, cfg, "train.batch_size", int, 8),
        epochs=_pick(args.epochs, cfg, "train.epochs", int, 500),
        lr=_pick(args.lr, cfg, "train.lr", float, 1e-4),
        alpha=_pick(args.alpha, cfg, "train.alpha", float, 0.01),
        tau=_pick(args.tau, cfg, "train.tau", float, 0.001),
        sigma_m=_pick(args.sigma_m, cfg, "train.sigma_m", float, 1.8),
        val_fraction=_pick(args.val_fraction, cfg, "train.val_fraction", float, 0.10),
        seed=_env_seed(_pick(args.seed, cfg, "train.seed", int, 0)),
        subsample_fraction=_pick(args.subsample_fraction, cfg,
                                 "train.subsample_fraction", float, 1.0),
        width_scale=_pick(args.width_scale, cfg, "train.width_scale", float, 1.0),
    )


def _run_train(args):
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"dataset path does not exist: {args.data}")
    cfg = _cfg(args)
    config = _train_config(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    weights_path = os.path.join(args.out, "best.weights")
    report_json = os.path.join(args.out, "report.json")
    report_csv = os.path.join(args.out, "report.csv")
    _no_clobber([weights_path, report_json, report_csv], args.force)

    dataset = load_dataset(args.data)
    _log(f"training on {len(dataset)} tiles from {args.data}")
    params, report = train(dataset, config, checkpoint_path=weights_path, log=_log)

    _write_json(report_json, report.to_dict())
    with open(report_csv, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss\n")
        for i, (tl, vl) in enumerate(zip(report.train_loss, report.val_loss), start=1):
            f.write(f"{i},{tl!r},{vl!r}\n")
    effective = {f"train.{k}": str(v) for k, v in vars(config).items()}
    save_config(effective, os.path.join(args.out, "effective.cfg"), header="canopy train")
    _log(f"best val loss {report.best_val_loss:.6f} at epoch {report.best_epoch}; "
         f"weights -> {weights_path}")
    return 0


# ---------------------------------------------------------------------------
# tune


def _add_tune(sub):
    p = sub.add_parser("tune", help="search peak-finding hyperparameters")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True, help="validation dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-from-report", help="train report.json; restrict to its val tiles")
    p.add_argument("--max-dist", type=float, default=None, help="matching gate, m")
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")


def _run_tune(args):
    for path in (args.weights, args.data):
        if not os.path.exists(path):
            raise FileNotFoundError(f"input path does not exist: {path}")
    cfg = _cfg(args)
    _no_clobber([args.out], args.force)
    tcfg = TuneConfig(
        iterations=_pick(args.iterations, cfg, "tune.iterations", int, 200),
        seed=_env_seed(_pick(args.seed, cfg, "tune.seed", int, 0)),
    )
    max_dist = _pick(args.max_dist, cfg, "tune.max_dist", float, 6.0)
    params = load_weights(args.weights)
    dataset = load_dataset(args.data)
    if args.val_from_report:
        with open(args.val_from_report, "r", encoding="utf-8") as f:
            idx = json.load(f)["val_indices"]
        dataset = [dataset[i] for i in idx]
    fwd = model_forward_fn(params)
    maps, gts, pixel_sizes = [], [], set()
    for tile, pts in dataset:
        maps.append(tiled_confidence(tile, fwd, TileGrid(2112, 32)))
        gts.append(pts)
        pixel_sizes.add(tile.geotransform.pixel_size)
    if len(pixel_sizes) != 1:
        raise FormatError(f"validation tiles disagree on pixel size: {sorted(pixel_sizes)}")
    result = tune(maps, gts, tcfg, pixel_size=pixel_sizes.pop(), max_dist_m=max_dist)
    result.save(args.out)
    effective = {"tune.iterations": str(tcfg.iterations), "tune.seed": str(tcfg.seed),
                 "tune.max_dist": str(max_dist), "tune.weights": args.weights,
                 "tune.data": args.data}
    save_config(effective, args.out + ".cfg", header="canopy tune")
    _log(f"best f={result.best_f:.4f} at trial {result.best_trial}: "
         f"{result.best.to_dict()} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# detect


def _add_detect(sub):
    p = sub.add_parser("detect", help="find trees in a raster")
    p.add_argument("--weights", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--out", required=True, help="output points CSV")
    p.add_argument("--peaks", help="TuneResult JSON with the peak parameters")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--mode", choices=["absolute", "relative"], default=None)
    p.add_argument("--t-abs", type=float, default=None)
    p.add_argument("--t-rel", type=float, default=None)
    p.add_argument("--tile-size", type=int, default=None)
    p.add_argument("--overlap", type=int, default=None)
    p.add_argument("--peak-tile-size", type=int, default=None)
    p.add_argument("--peak-overlap", type=int, default=None)
    p.add_argument("--frame", choices=["geographic", "pixel"], default="geographic")
    p.add_argument("--geojson", help="also write a GeoJSON FeatureCollection")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")


def _peak_params(args, cfg):
    if args.peaks:
        base = TuneResult.load(args.peaks).best
    else:
        base = PeakParams(
            d=get_typed(cfg, "peaks.d", int, 3),
            mode=get_typed(cfg, "peaks.mode", str, "absolute"),
            t_abs=get_typed(cfg, "peaks.t_abs", float, 0.2),
            t_rel=get_typed(cfg, "peaks.t_rel", float, 0.5),
        )
    if args.d is not None:
        base.d = args.d
    if args.mode is not None:
        base.mode = args.mode
    if args.t_abs is not None:
        base.t_abs = args.t_abs
    if args.t_rel is not None:
        base.t_rel = args.t_rel
    base.validate()
    return base


def _write_geojson(points, path):
    features = []
    conf = points.confidence if points.confidence is not None else [None] * len(points)
    for (x, y), c in zip(points.xy, conf):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(x), float(y)]},
            "properties": {"confidence": None if c is None else float(c)},
        })
    obj = {"type": "FeatureCollection", "features": features}
    if points.crs:
        obj["crs"] = {"type": "name", "properties": {"name": points.crs}}
    _write_json(path, obj)


def _run_detect(args):
    for path in (args.weights, args.raster):
        if not os.path.exists(path):
            raise FileNotFoundError(f"input path does not exist: {path}")
    cfg = _cfg(args)
    _no_clobber([args.out, args.geojson], args.force)
    pk = _peak_params(args, cfg)
    grid = TileGrid(_pick(args.tile_size, cfg, "detect.tile_size", int, 2112),
                    _pick(args.overlap, cfg, "detect.overlap", int, 32))
    peak_grid = TileGrid(_pick(args.peak_tile_size, cfg, "detect.peak_tile_size", int, 256),
                         _pick(args.peak_overlap, cfg, "detect.peak_overlap", int, 32))
    params = load_weights(args.weights)
    raster = load_raster(args.raster)
    points, conf = detect_tiled(raster, params, pk, grid=grid, peak_grid=peak_grid,
                                jobs=args.jobs)
    if not np.all(np.isfinite(conf)):
        raise NumericError("confidence raster contains non-finite values")
    if args.frame == "pixel":
        points = points_to_pixel(points, raster)
    save_points(points, args.out)
    if args.geojson:
        _write_geojson(points, args.geojson)
    summary = {
        "raster": args.raster, "weights": args.weights, "n_points": len(points),
        "frame": args.frame, "peak_params": pk.to_dict(),
        "grid": {"tile_size": grid.tile_size, "overlap": grid.overlap},
        "peak_grid": {"tile_size": peak_grid.tile_size, "overlap": peak_grid.overlap},
        "confidence_max": float(conf.max()), "out": args.out,
    }
    _write_json(args.out + ".json", summary)
    _log(f"{len(points)} detections -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--gt", required=True, nargs="+")
    p.add_argument("--max-dist", type=float, default=6.0, help="matching gate, m")
    p.add_argument("--pixel-size", type=float, default=0.6,
                   help="meters per pixel for pixel-frame files")
    p.add_argument("--out", help="write the metrics report JSON here")
    p.add_argument("--force", action="store_true")


def _load_metric_points(path, pixel_size):
    ps = load_points(path)
    xy = ps.xy * pixel_size if ps.frame == "pixel" else ps.xy
    return xy, ps.confidence, ps.frame


def _run_evaluate(args):
    if len(args.pred) != len(args.gt):
        raise UsageError(f"got {len(args.pred)} --pred files but {len(args.gt)} --gt files")
    for path in args.pred + args.gt:
        if not os.path.exists(path):
            raise FileNotFoundError(f"points file does not exist: {path}")
    _no_clobber([args.out], args.force)
    pairs = []
    for ppath, gpath in zip(args.pred, args.gt):
        pxy, pconf, pframe = _load_metric_points(ppath, args.pixel_size)
        gxy, _, gframe = _load_metric_points(gpath, args.pixel_size)
        if pframe != gframe:
            raise FormatError(
                f"frame mismatch: {ppath} is {pframe} but {gpath} is {gframe}")
        pairs.append(((pxy, pconf), gxy))
    rep = metrics_report(pairs, max_dist=args.max_dist)
    d = rep.to_dict()
    d["n_pairs"] = len(pairs)
    d["max_dist"] = args.max_dist
    _log("tp={tp} fp={fp} fn={fn}".format(**d))
    _log(f"precision={rep.precision:.4f} recall={rep.recall:.4f} "
         f"f_score={rep.f_score:.4f}")
    _log(f"rmse={'n/a' if d['rmse'] is None else f'{rep.rmse:.4f}'} "
         f"ap={'n/a' if rep.ap is None else f'{rep.ap:.4f}'}")
    if args.out:
        _write_json(args.out, d)
    else:
        _log(json.dumps(d))
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--skip-network", action="store_true")
    p.add_argument("--out", help="write results JSON here")
    p.add_argument("--force", action="store_true")


def _run_gradcheck(args):
    from .gradcheck import run_suite

    _no_clobber([args.out], args.force)
    results = run_suite(seeds=args.seeds, include_network=not args.skip_network)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        _log(f"{status} {r.name:<20} seed={r.seed} rel_err={r.rel_err:.3e}")
        failed += not r.ok
    if args.out:
        _write_json(args.out, [
            {"name": r.name, "seed": r.seed, "rel_err": r.rel_err, "ok": r.ok}
            for r in results
        ])
    _log(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


# ---------------------------------------------------------------------------


def build_parser():
    parser = Parser(prog="canopy",
                    description="confidence-map tree detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_train(sub)
    _add_tune(sub)
    _add_detect(sub)
    _add_evaluate(sub)
    _add_gradcheck(sub)
    return parser


_RUNNERS = {
    "synth": _run_synth,
    "train": _run_train,
    "tune": _run_tune,
    "detect": _run_detect,
    "evaluate": _run_evaluate,
    "gradcheck": _run_gradcheck,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _RUNNERS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
