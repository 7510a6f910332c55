"""Command line interface: ``plantcat <subcommand>``.

Every stage of the pipeline is available on its own and reads or writes the
same JSON/PNG intermediates the full ``run`` produces.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from plant_catalog import __version__, evalkit, export, synth, tiles
from plant_catalog.app_state import configure_logging
from plant_catalog.catalog import build_catalog, load_catalog, save_catalog
from plant_catalog.config_loader import PipelineConfig, load_pipeline_config
from plant_catalog.detect import BlurSpec, detect_layer, load_peaks, save_peaks
from plant_catalog.errors import ConfigError, PlantCatalogError
from plant_catalog.growth import fit_growth, save_growth
from plant_catalog.lines import SeedingLines, filter_weed, load_lines, recognize_lines, save_lines
from plant_catalog.pipeline import run_pipeline, run_plots
from plant_catalog.raster import acquisitions_from_dates, load_mask, load_raster, save_mask
from plant_catalog.register import (
    align_all,
    centralize,
    load_alignment,
    load_transforms,
    order_by_cover,
    save_alignment,
    save_transforms,
)
from plant_catalog.vegidx import VIKind, segment_raster

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _global_options() -> argparse.ArgumentParser:
    """Flags accepted before and after the subcommand."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", action="append", default=argparse.SUPPRESS,
                        help="pipeline INI file (repeat for several plots with 'run')")
    parent.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads")
    parent.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    parent.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="debug logging")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="plantcat", parents=[common],
                                     description="Plant cataloging from UAV orthomosaic time series")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic field with ground truth")
    p.add_argument("--spec", help="FieldSpec JSON (default: reference field)")
    p.add_argument("--small", action="store_true", help="compact field instead of the reference one")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("segment", parents=[common], help="plant/soil mask and cover ratio")
    p.add_argument("--input", required=True, help="raster (PNG/TIFF with world file)")
    p.add_argument("--vi", type=str.upper, choices=[k.value for k in VIKind])
    p.add_argument("--date", help="acquisition date (default: file stem)")
    p.add_argument("--channels", help="comma separated channel names")
    p.add_argument("--worldfile")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--fixed-threshold", type=float)
    p.add_argument("--out", required=True, help="mask PNG")
    p.add_argument("--stats", required=True, help="stats JSON")
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("fit-growth", parents=[common], help="growth function from stats files")
    p.add_argument("--stats", nargs="+", required=True)
    p.add_argument("--no-dying", action="store_true", help="fit the growing branch only")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit_growth)

    p = sub.add_parser("detect", parents=[common], help="plant centers from a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--cover", type=float, required=True)
    p.add_argument("--date", help="acquisition date (default: mask file stem)")
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--sigma-max", type=float)
    p.add_argument("--min-distance", type=float, help="suppression radius in pixels")
    p.add_argument("--min-intensity", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("align", parents=[common], help="register all peak layers")
    p.add_argument("--peaks", nargs="+", required=True)
    p.add_argument("--d-register", type=float)
    p.add_argument("--d-group", type=float)
    p.add_argument("--out", required=True, help="aligned JSON")
    p.add_argument("--transforms", required=True, help="transforms JSON")
    p.set_defaults(handler=cmd_align)

    p = sub.add_parser("lines", parents=[common], help="seeding lines and weed filter")
    p.add_argument("--aligned", required=True)
    p.add_argument("--theta-d", type=float)
    p.add_argument("--bin-width", type=float)
    p.add_argument("--spacing", type=float, help="inter-row spacing fallback")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_lines)

    p = sub.add_parser("catalog", parents=[common], help="cluster, sort and complete plants")
    p.add_argument("--aligned", required=True)
    p.add_argument("--lines", required=True)
    p.add_argument("--transforms", required=True)
    p.add_argument("--dates", nargs="*", help="all acquisition dates (default: aligned dates)")
    p.add_argument("--d-max", type=float)
    p.add_argument("--min-direct", type=int)
    p.add_argument("--annotations", help="CSV with an id column")
    p.add_argument("--crs-note", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_catalog)

    p = sub.add_parser("extract", parents=[common], help="per-plant tiles from the rasters")
    p.add_argument("--catalog", required=True)
    p.add_argument("--raster", action="append", default=[], metavar="DATE=PATH",
                   help="raster of one date (default: acquisitions of --config)")
    p.add_argument("--frame", type=int)
    p.add_argument("--sheet", action="store_true", help="also render a contact sheet")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("eval", parents=[common], help="precision and recall against ground truth")
    p.add_argument("--catalog", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--preset", choices=sorted(evalkit.TOLERANCE_PRESETS))
    p.add_argument("--plot", help="precision-vs-recall PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="full pipeline for one or more plots")
    p.add_argument("--output-dir", help="override the output directory (single plot only)")
    p.set_defaults(handler=cmd_run)
    return parser


# Helpers

def _config(args) -> Optional[PipelineConfig]:
    """First --config file, with --jobs/--seed applied."""
    paths = getattr(args, "config", None)
    if not paths:
        return None
    return load_pipeline_config(paths[0], jobs=getattr(args, "jobs", None), seed=getattr(args, "seed", None))


def _pick(value, fallback):
    return fallback if value is None else value


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _write_json(data, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)


# Subcommands

def cmd_synth(args) -> int:
    spec = synth.FieldSpec.from_json(args.spec) if args.spec else (
        synth.small_spec() if args.small else synth.reference_spec()
    )
    seed = getattr(args, "seed", 42)
    synthetic = synth.generate(spec, seed)
    paths = synth.write_field(synthetic, args.out)
    for name, path in paths.items():
        logger.info(f"  {name}: {path}")
    return EXIT_OK


def cmd_segment(args) -> int:
    config = _config(args)
    settings = config.segmentation if config else None
    channels = tuple(c.strip().upper() for c in args.channels.split(",")) if args.channels else (
        config.channels if config else None
    )
    date = args.date or _stem(args.input)
    raster = load_raster(args.input, channels=channels, worldfile=args.worldfile,
                         geotransform=config.geotransform if config else None,
                         nodata=config.nodata if config else 0)
    vi = VIKind.parse(args.vi) if args.vi else (settings.vi if settings else VIKind.GLI)
    cutoff = _pick(args.cutoff, settings.cover_cutoff if settings else 0.75)
    fixed = _pick(args.fixed_threshold, settings.fixed_threshold if settings else None)
    result = segment_raster(raster, vi, settings.osavi_y if settings else 0.6, fixed, cutoff)
    save_mask(result.mask, raster.geo, args.out)
    _write_json(result.stats(date), args.stats)
    logger.info(f"✓ {date}: cover {result.cover_ratio:.4f} ({result.threshold_source.value}), "
                f"usable={result.usable}")
    return EXIT_OK


def cmd_fit_growth(args) -> int:
    stats = []
    for path in args.stats:
        with open(path, "r", encoding="utf-8") as handle:
            stats.append(json.load(handle))
    acquisitions = {a.key: a for a in acquisitions_from_dates([s["date"] for s in stats])}
    stats.sort(key=lambda s: s["date"])
    days = [acquisitions[s["date"]].day for s in stats]
    covers = [float(s["cover_ratio"]) for s in stats]
    fit = fit_growth(days, covers, allow_dying=not args.no_dying)
    save_growth(fit, args.out, (days, covers))
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _config(args)
    mask, geo = load_mask(args.mask)
    sigma_min = _pick(args.sigma_min, config.blur.sigma_min if config else None)
    sigma_max = _pick(args.sigma_max, config.blur.sigma_max if config else None)
    if sigma_min is None or sigma_max is None:
        raise ConfigError("--sigma-min and --sigma-max are required without --config")
    cutoff = config.blur.cover_cutoff if config else 0.75
    try:
        spec = BlurSpec(sigma_min, sigma_max, cutoff)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    min_distance = args.min_distance
    if min_distance is None:
        min_distance = config.min_distance / abs(geo.px_w) if config else 1.0
    min_intensity = _pick(args.min_intensity, config.min_intensity if config else 0.1)
    date = args.date or _stem(args.mask)
    layer = detect_layer(mask, args.cover, spec, geo, date, max(1.0, min_distance), min_intensity)
    save_peaks(layer, args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    config = _config(args)
    layers = [load_peaks(path) for path in args.peaks]
    d_register = _pick(args.d_register, config.alignment.d_register if config else None)
    d_group = _pick(args.d_group, config.alignment.d_group if config else None)
    if d_register is None or d_group is None:
        raise ConfigError("--d-register and --d-group are required without --config")
    if not d_group < d_register:
        raise ConfigError(f"d_group ({d_group}) must be smaller than d_register ({d_register})")

    clouds = centralize({layer.date: layer.positions_crs for layer in layers})
    cover = {layer.date: layer.cover_ratio for layer in layers}
    kwargs = {}
    if config:
        a = config.alignment
        kwargs = dict(w=a.cpd_w, max_iter=a.cpd_max_iter, tol=a.cpd_tol,
                      scale_bounds=(a.scale_min, a.scale_max))
    result = align_all(clouds, order_by_cover(cover), d_register, d_group, **kwargs)
    save_alignment(result, clouds, args.out, cover)
    save_transforms(result.transforms, args.transforms, result.flags)
    return EXIT_OK


def cmd_lines(args) -> int:
    config = _config(args)
    aligned, _, _, order, _ = load_alignment(args.aligned)
    settings = config.lines if config else None
    points = np.vstack([aligned[date] for date in order])
    options = {}
    if settings:
        options = dict(n_b=settings.n_b, n_plus=settings.n_plus, n_angles=settings.hough_angles,
                       threshold_ratio=settings.hough_threshold, window=settings.window,
                       step=settings.step)
    bin_width = _pick(args.bin_width, settings.bin_width if settings else 0.02)
    spacing = _pick(args.spacing, config.inter_row_spacing if config else None)
    lines = recognize_lines(points, bin_width=bin_width, spacing_hint=spacing, **options)
    theta_d = _pick(args.theta_d, settings.theta_d if settings else 0.2)
    masks = {date: filter_weed(aligned[date], lines, theta_d) for date in order}
    save_lines(lines, args.out, masks)
    return EXIT_OK


def _weed_masks(path: str, lines: SeedingLines, aligned: Dict[str, np.ndarray],
                theta_d: float) -> Dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as handle:
        stored = json.load(handle).get("weed_mask") or {}
    valid = {}
    for date, points in aligned.items():
        if date in stored and len(stored[date]) == len(points):
            valid[date] = np.asarray(stored[date], dtype=bool)
        else:
            valid[date] = filter_weed(points, lines, theta_d).valid
    return valid


def cmd_catalog(args) -> int:
    config = _config(args)
    aligned, raw, x_mean, order, _ = load_alignment(args.aligned)
    lines = load_lines(args.lines)
    transforms = load_transforms(args.transforms)
    theta_d = config.lines.theta_d if config else 0.2
    valid = _weed_masks(args.lines, lines, aligned, theta_d)

    d_max = _pick(args.d_max, config.catalog.d_max if config else None)
    if d_max is None:
        raise ConfigError("--d-max is required without --config")
    min_direct = _pick(args.min_direct, config.catalog.min_direct if config else 2)
    dates = sorted(set(args.dates or []) | set(order))
    catalog = build_catalog(aligned, raw, valid, order, transforms, x_mean, lines, dates, d_max, min_direct)
    save_catalog(catalog, args.out)

    annotations_path = args.annotations or (config.catalog.annotations if config else None)
    annotations = export.load_annotations(annotations_path) if annotations_path else None
    crs_note = args.crs_note or (config.crs_note if config else "")
    export.export_all(catalog, os.path.dirname(os.path.abspath(args.out)), annotations, crs_note)
    return EXIT_OK


def _raster_paths(args, config: Optional[PipelineConfig]) -> Dict[str, dict]:
    sources = {}
    if config:
        for acquisition in config.acquisitions:
            sources[acquisition.date] = {"path": acquisition.path, "worldfile": acquisition.worldfile}
    for item in args.raster:
        date, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--raster expects DATE=PATH, got {item!r}")
        sources[date.strip()] = {"path": path.strip(), "worldfile": None}
    if not sources:
        raise ConfigError("No rasters given; use --raster DATE=PATH or --config")
    return sources


def cmd_extract(args) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    sources = _raster_paths(args, config)
    rasters = {
        date: load_raster(source["path"], channels=config.channels if config else None,
                          worldfile=source["worldfile"],
                          geotransform=config.geotransform if config else None,
                          nodata=config.nodata if config else 0)
        for date, source in sorted(sources.items())
    }
    frame = _pick(args.frame, config.catalog.frame_px if config else tiles.DEFAULT_FRAME)
    jobs = getattr(args, "jobs", None) or (config.jobs if config else 1)
    extracted = tiles.extract_tiles(catalog, rasters, frame, jobs)
    tiles.write_tiles(extracted, rasters, args.out)
    if args.sheet and rasters:
        channels = next(iter(rasters.values())).channels
        tiles.render_tile_sheet(extracted, os.path.join(args.out, "sheet.png"), channels)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    truth = evalkit.load_truth(args.truth)
    if args.tolerance is not None:
        tolerance = args.tolerance
    elif args.preset:
        tolerance = evalkit.TOLERANCE_PRESETS[args.preset]
    else:
        tolerance = config.evaluation.tolerance if config else evalkit.TOLERANCE_PRESETS["sugar_beet"]
    days = {a.key: a.day for a in acquisitions_from_dates(catalog.dates)} if catalog.dates else None
    summary = evalkit.report(evalkit.evaluate_catalog(catalog, truth, tolerance, days))
    evalkit.write_report_csv(summary, args.out)
    if args.plot:
        evalkit.plot_precision_recall(summary, args.plot)
    return EXIT_OK


def cmd_run(args) -> int:
    paths: List[str] = getattr(args, "config", None) or []
    if not paths:
        raise ConfigError("run needs at least one --config")
    if args.output_dir and len(paths) > 1:
        raise ConfigError("--output-dir only applies to a single --config")
    jobs = getattr(args, "jobs", None)
    seed = getattr(args, "seed", None)
    configs = [load_pipeline_config(path, output_dir=args.output_dir, jobs=jobs, seed=seed)
               for path in paths]
    if len(configs) == 1:
        run_pipeline(configs[0])
    else:
        run_plots(configs, jobs=min(len(configs), jobs or 1))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    configure_logging(verbose)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}", exc_info=verbose)
        return EXIT_CONFIG
    except (PlantCatalogError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=verbose)
        return EXIT_STAGE
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {e}", exc_info=True)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
