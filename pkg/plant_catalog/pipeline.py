"""Full cataloging run for one plot.

Stages run in a fixed sequence and each writes its artifact under the output
directory before the next one starts:

    masks/ stats/ growth.json peaks/ aligned.json transforms.json lines.json
    catalog.json catalog.{csv,geojson,kml} tiles/ report.csv manifest.json
"""
import datetime as dt
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, TypeVar

import numpy as np

import plant_catalog
from plant_catalog import evalkit, export, tiles
from plant_catalog.app_state import StageTimer, banner
from plant_catalog.catalog import PlantCatalog, build_catalog, save_catalog
from plant_catalog.config_loader import PipelineConfig
from plant_catalog.detect import PeakLayer, detect_layer, empty_layer, save_peaks
from plant_catalog.errors import DegenerateInputError, PlantCatalogError, StageError
from plant_catalog.growth import GrowthFit, fit_growth, save_growth, smooth_cover_ratios
from plant_catalog.lines import filter_weed, recognize_lines, save_lines
from plant_catalog.raster import GeoTransform, Raster, acquisitions_from_dates, load_raster, save_mask, save_raster
from plant_catalog.register import align_all, centralize, order_by_cover, save_alignment, save_transforms
from plant_catalog.vegidx import SegmentationResult, check_usable, segment_raster

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class RunResult:
    catalog: PlantCatalog
    output_dir: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    summary: Optional[evalkit.EvalSummary] = None
    growth: Optional[GrowthFit] = None
    flags: Dict[str, str] = field(default_factory=dict)


def per_date(stage: str, dates: Sequence[str], work: Callable[[str], T], jobs: int) -> Dict[str, T]:
    """Run ``work`` for every date with ``jobs`` threads; results keep date order.

    Raises:
        StageError: first failing date in date order
    """
    def guarded(date: str):
        try:
            return work(date)
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, str(e) or type(e).__name__, date) from e

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [(date, pool.submit(guarded, date)) for date in dates]
        return {date: future.result() for date, future in futures}


class PlotRun:
    """State of one plot's run; each ``stage_*`` method reads only earlier stages' output."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = config.output_dir
        self.timer = StageTimer()
        self.artifacts: Dict[str, str] = {}
        self.started = _utc_now()

        self.acquisitions = {a.key: a for a in acquisitions_from_dates(config.dates)}
        self.sources = {a.date: a for a in config.acquisitions}
        self.dates = sorted(self.acquisitions)

        self.rasters: Dict[str, Raster] = {}
        self.segmentation: Dict[str, SegmentationResult] = {}
        self.usable: List[str] = []
        self.growth: Optional[GrowthFit] = None
        self.layers: Dict[str, PeakLayer] = {}
        self.flags: Dict[str, str] = {}

    def path(self, *parts: str) -> str:
        return os.path.join(self.out, *parts)

    def record(self, name: str, path: str) -> str:
        self.artifacts[name] = os.path.relpath(path, self.out)
        return path

    def stage(self, name: str):
        return _Stage(self.timer, name)

    # Stages

    def stage_load(self) -> None:
        config = self.config

        def load(date: str) -> Raster:
            source = self.sources[date]
            return load_raster(
                source.path,
                channels=config.channels,
                worldfile=source.worldfile,
                geotransform=config.geotransform,
                nodata=config.nodata,
                acquisition=self.acquisitions[date],
            )

        self.rasters = per_date("load", self.dates, load, config.jobs)

    def stage_segment(self) -> None:
        settings = self.config.segmentation

        def run(date: str) -> SegmentationResult:
            raster = self.rasters[date]
            result = segment_raster(raster, settings.vi, settings.osavi_y, settings.fixed_threshold,
                                    settings.cover_cutoff, settings.otsu_bins)
            save_mask(result.mask, raster.geo, self.path("masks", f"{date}.png"))
            _write_json(result.stats(date), self.path("stats", f"{date}.json"))
            return result

        self.segmentation = per_date("segment", self.dates, run, self.config.jobs)
        self.artifacts["masks"] = "masks"
        self.artifacts["stats"] = "stats"

        for date in self.dates:
            ok, reason = check_usable(self.segmentation[date], settings.cover_cutoff)
            if ok:
                self.usable.append(date)
            else:
                self.flags[date] = reason
                logger.warning(f"○ {date} not usable: {reason}")
        if not self.usable:
            raise StageError("segment", "no acquisition is usable for plant detection")
        logger.info(f"✓ {len(self.usable)}/{len(self.dates)} acquisitions usable")

    def stage_growth(self) -> None:
        days = [self.acquisitions[d].day for d in self.dates]
        covers = [self.segmentation[d].cover_ratio for d in self.dates]
        try:
            self.growth = fit_growth(days, covers)
        except DegenerateInputError as e:
            logger.warning(f"○ Growth fit skipped: {e}")
            return
        save_growth(self.growth, self.record("growth", self.path("growth.json")), (days, covers))

    def stage_detect(self) -> None:
        config = self.config

        def run(date: str) -> PeakLayer:
            raster = self.rasters[date]
            result = self.segmentation[date]
            day = self.acquisitions[date].day
            min_distance = max(1.0, config.min_distance / abs(raster.geo.px_w))
            if not result.mask.any():
                layer = empty_layer(date, result.cover_ratio, day=day)
            else:
                layer = detect_layer(result.mask, result.cover_ratio, config.blur, raster.geo, date,
                                     min_distance, config.min_intensity, day)
            save_peaks(layer, self.path("peaks", f"{date}.json"))
            return layer

        self.layers = per_date("detect", self.usable, run, config.jobs)
        self.artifacts["peaks"] = "peaks"

    def registration_order(self) -> List[str]:
        cover = {date: self.segmentation[date].cover_ratio for date in self.usable}
        if self.config.order_by == "growth":
            if self.growth is None:
                logger.warning("○ No growth fit, ordering acquisitions by measured cover")
            else:
                days = [self.acquisitions[d].day for d in self.usable]
                cover = dict(zip(self.usable, smooth_cover_ratios(self.growth, days).tolist()))
        return order_by_cover(cover)

    def stage_align(self):
        alignment = self.config.alignment
        clouds = centralize({date: self.layers[date].positions_crs for date in self.usable})
        result = align_all(
            clouds,
            self.registration_order(),
            alignment.d_register,
            alignment.d_group,
            w=alignment.cpd_w,
            max_iter=alignment.cpd_max_iter,
            tol=alignment.cpd_tol,
            scale_bounds=(alignment.scale_min, alignment.scale_max),
        )
        self.flags.update(result.flags)
        cover = {date: self.segmentation[date].cover_ratio for date in self.usable}
        save_alignment(result, clouds, self.record("aligned", self.path("aligned.json")), cover)
        save_transforms(result.transforms, self.record("transforms", self.path("transforms.json")),
                        result.flags)
        return clouds, result

    def stage_lines(self, aligned: Mapping[str, np.ndarray]):
        settings = self.config.lines
        points = np.vstack([aligned[date] for date in self.usable])
        lines = recognize_lines(
            points,
            bin_width=settings.bin_width,
            n_b=settings.n_b,
            n_plus=settings.n_plus,
            n_angles=settings.hough_angles,
            threshold_ratio=settings.hough_threshold,
            window=settings.window,
            step=settings.step,
            spacing_hint=self.config.inter_row_spacing,
        )
        masks = {date: filter_weed(aligned[date], lines, settings.theta_d) for date in self.usable}
        rejected = sum(int((~m.valid).sum()) for m in masks.values())
        logger.info(f"✓ Weed filter rejected {rejected} of {len(points)} detections")
        save_lines(lines, self.record("lines", self.path("lines.json")), masks)
        return lines, masks

    def stage_catalog(self, clouds, alignment, lines, masks) -> PlantCatalog:
        settings = self.config.catalog
        catalog = build_catalog(
            aligned=alignment.aligned,
            raw={date: clouds.restore(date) for date in self.usable},
            valid={date: masks[date].valid for date in self.usable},
            order=alignment.order,
            transforms=alignment.transforms,
            x_mean=alignment.x_mean,
            lines=lines,
            dates=self.dates,
            d_max=settings.d_max,
            min_direct=settings.min_direct,
        )
        save_catalog(catalog, self.record("catalog", self.path("catalog.json")))
        return catalog

    def stage_export(self, catalog: PlantCatalog) -> None:
        annotations = None
        if self.config.catalog.annotations:
            annotations = export.load_annotations(self.config.catalog.annotations)
        paths = export.export_all(catalog, self.out, annotations, self.config.crs_note)
        for name, path in paths.items():
            self.record(f"catalog_{name}", path)

    def stage_tiles(self, catalog: PlantCatalog) -> None:
        settings = self.config.catalog
        tile_dir = self.path("tiles")
        extracted = tiles.extract_tiles(catalog, self.rasters, settings.frame_px, self.config.jobs)
        self.record("tiles", tiles.write_tiles(extracted, self.rasters, tile_dir))
        channels = next(iter(self.rasters.values())).channels
        tiles.render_tile_sheet(extracted, self.record("tile_sheet", os.path.join(tile_dir, "sheet.png")),
                                channels)
        if settings.augment > 0:
            self._augment(catalog, os.path.join(tile_dir, "augmented"))

    def _augment(self, catalog: PlantCatalog, out_dir: str) -> None:
        rng = np.random.default_rng(self.config.seed)
        frame = self.config.catalog.frame_px
        os.makedirs(out_dir, exist_ok=True)
        written = 0
        for cluster in catalog.clusters:
            for date, member in sorted(cluster.members.items()):
                raster = self.rasters[date]
                ext = ".png" if len(raster.channels) <= 4 else ".tif"
                for copy in range(self.config.catalog.augment):
                    samples = tiles.augment_tile(raster, member.position, frame, rng)
                    name = f"plant{cluster.plant_id:05d}_{date}_aug{copy:02d}{ext}"
                    save_raster(Raster(raster.channels, samples, GeoTransform.identity(), nodata=None),
                                os.path.join(out_dir, name), worldfile=False)
                    written += 1
        self.artifacts["augmented_tiles"] = os.path.relpath(out_dir, self.out)
        logger.info(f"✓ Wrote {written} augmented tiles")

    def stage_evaluate(self, catalog: PlantCatalog) -> Optional[evalkit.EvalSummary]:
        settings = self.config.evaluation
        truth = evalkit.load_truth(settings.truth)
        days = {date: self.acquisitions[date].day for date in self.dates}
        reports = evalkit.evaluate_catalog(catalog, truth, settings.tolerance, days)
        summary = evalkit.report(reports)
        evalkit.write_report_csv(summary, self.record("report", self.path("report.csv")))
        evalkit.plot_precision_recall(summary, self.record("report_plot", self.path("precision_recall.png")))
        return summary

    def write_manifest(self, summary: Optional[evalkit.EvalSummary], status: str = "ok",
                       error: Optional[str] = None) -> str:
        manifest = {
            "status": status,
            "error": error,
            "versions": library_versions(),
            "parameters": self.config.to_dict(),
            "dates": self.dates,
            "usable_dates": self.usable,
            "flags": self.flags,
            "artifacts": self.artifacts,
            "timings": self.timer.timings,
            "started_utc": self.started,
            "finished_utc": _utc_now(),
        }
        if summary is not None:
            manifest["evaluation"] = {
                "precision": summary.precision,
                "recall": summary.recall,
                "series": summary.series(),
            }
        path = self.path("manifest.json")
        _write_json(manifest, path)
        return path


class _Stage:
    """Timed stage that turns unexpected failures into :class:`StageError`."""

    def __init__(self, timer: StageTimer, name: str):
        self._context = timer.stage(name)
        self.name = name

    def __enter__(self):
        self._context.__enter__()
        return self

    def __exit__(self, exc_type, exc, tb):
        self._context.__exit__(exc_type, exc, tb)
        if exc is None or isinstance(exc, StageError):
            return False
        raise StageError(self.name, str(exc) or exc_type.__name__) from exc


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Segment, detect, align, recognize lines, filter weed, catalog and export one plot.

    Raises:
        StageError: any stage failure; artifacts written so far stay on disk and
            the manifest records the failure
    """
    banner(f"Plant catalog run: {config.source}")
    os.makedirs(config.output_dir, exist_ok=True)
    run = PlotRun(config)
    summary = None
    try:
        with run.stage("load"):
            run.stage_load()
        with run.stage("segment"):
            run.stage_segment()
        with run.stage("growth"):
            run.stage_growth()
        with run.stage("detect"):
            run.stage_detect()
        with run.stage("align"):
            clouds, alignment = run.stage_align()
        with run.stage("lines"):
            lines, masks = run.stage_lines(alignment.aligned)
        with run.stage("catalog"):
            catalog = run.stage_catalog(clouds, alignment, lines, masks)
        with run.stage("export"):
            run.stage_export(catalog)
        with run.stage("tiles"):
            run.stage_tiles(catalog)
        if config.evaluation.truth:
            with run.stage("evaluate"):
                summary = run.stage_evaluate(catalog)
    except PlantCatalogError as e:
        run.write_manifest(None, status="failed", error=str(e))
        raise

    run.record("manifest", run.write_manifest(summary))
    logger.info(f"✓ Run finished, artifacts in {config.output_dir}")
    return RunResult(catalog=catalog, output_dir=config.output_dir, artifacts=run.artifacts,
                     summary=summary, growth=run.growth, flags=run.flags)


def run_plots(configs: Sequence[PipelineConfig], jobs: int = 1) -> List[RunResult]:
    """Independent plots in parallel; results in input order."""
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(run_pipeline, configs))


def library_versions() -> Dict[str, str]:
    import matplotlib
    import rasterio
    import scipy
    import simplekml

    return {
        "plant_catalog": plant_catalog.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "rasterio": rasterio.__version__,
        "matplotlib": matplotlib.__version__,
        "simplekml": getattr(simplekml, "__version__", "unknown"),
    }


def _utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(data, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
