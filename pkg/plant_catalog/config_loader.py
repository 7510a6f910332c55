"""Configuration Loader for the plant cataloging pipeline

Loads one plot's pipeline configuration.
- Stage parameters and acquisitions from an INI file (e.g. plantcat.ini)
- Run-level overrides from the environment (.env file or shell)
"""
import configparser
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from plant_catalog.detect import BlurSpec
from plant_catalog.errors import ConfigError
from plant_catalog.evalkit import TOLERANCE_PRESETS
from plant_catalog.raster import GeoTransform, parse_date
from plant_catalog.vegidx import VIKind

logger = logging.getLogger(__name__)

ACQUISITION_PREFIX = "Acquisition_"
KNOWN_SECTIONS = (
    "pipeline", "raster", "field", "segmentation", "detection",
    "alignment", "lines", "catalog", "evaluation",
)
ORDER_CHOICES = ("cover", "growth")

ENV_OUTPUT_DIR = "PLANTCAT_OUTPUT_DIR"
ENV_JOBS = "PLANTCAT_JOBS"
ENV_SEED = "PLANTCAT_SEED"


@dataclass
class AcquisitionConfig:
    """One orthomosaic of the time series."""
    name: str
    path: str
    date: str  # ISO yyyy-mm-dd
    worldfile: Optional[str] = None


@dataclass
class SegmentationSettings:
    vi: VIKind = VIKind.GLI
    osavi_y: float = 0.6
    fixed_threshold: Optional[float] = None
    cover_cutoff: float = 0.75
    otsu_bins: int = 256


@dataclass
class AlignmentSettings:
    d_register: float
    d_group: float
    cpd_w: float = 0.1
    cpd_max_iter: int = 100
    cpd_tol: float = 1e-8
    scale_min: float = 0.9
    scale_max: float = 1.1


@dataclass
class LineSettings:
    bin_width: float = 0.02
    n_b: int = 18
    n_plus: int = 1
    hough_angles: int = 180
    hough_threshold: float = 0.3
    window: Optional[float] = None  # metres; 0.25 x Hough line distance when unset
    step: Optional[float] = None
    theta_d: float = 0.2


@dataclass
class CatalogSettings:
    d_max: float
    min_direct: int = 2
    frame_px: int = 128
    augment: int = 0  # extra shifted/rotated tiles per plant and date
    annotations: Optional[str] = None


@dataclass
class EvaluationSettings:
    truth: Optional[str] = None
    tolerance: float = TOLERANCE_PRESETS["sugar_beet"]


@dataclass
class PipelineConfig:
    """Resolved configuration of one plot."""
    source: str
    output_dir: str
    jobs: int
    seed: int
    order_by: str

    # Raster input
    channels: Optional[Tuple[str, ...]]
    nodata: Optional[float]
    crs_note: str
    geotransform: Optional[GeoTransform]

    # Field geometry (metres)
    intra_row_spacing: Optional[float]
    inter_row_spacing: Optional[float]

    segmentation: SegmentationSettings
    blur: BlurSpec
    min_distance: float  # metres, converted per raster
    min_intensity: float
    alignment: AlignmentSettings
    lines: LineSettings
    catalog: CatalogSettings
    evaluation: EvaluationSettings
    acquisitions: List[AcquisitionConfig] = field(default_factory=list)

    @property
    def dates(self) -> List[str]:
        return [a.date for a in self.acquisitions]

    def to_dict(self) -> dict:
        """Plain parameters for the run manifest."""
        data = asdict(self)
        data["segmentation"]["vi"] = self.segmentation.vi.value
        data["channels"] = list(self.channels) if self.channels else None
        data["geotransform"] = self.geotransform.to_dict() if self.geotransform else None
        return data


class PipelineConfigLoader:
    """Reads and validates a pipeline INI file."""

    def __init__(self, config_file: str = "plantcat.ini"):
        """Load configuration from INI file.

        Args:
            config_file: Path to configuration file

        Raises:
            ConfigError: missing or unreadable file
        """
        load_dotenv()

        # inline comments like "theta_d = 0.2 ; band half width" must not break getfloat
        self.config = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        self.config_file = config_file
        self.base_dir = os.path.dirname(os.path.abspath(config_file))

        if not os.path.exists(config_file):
            logger.error(f"Config file not found: {config_file}")
            raise ConfigError(f"Config file not found: {config_file}")

        try:
            self.config.read(config_file, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse {config_file}: {e}") from e
        logger.info(f"Loaded configuration from {config_file}")

    def load(self, output_dir: Optional[str] = None, jobs: Optional[int] = None,
             seed: Optional[int] = None) -> PipelineConfig:
        """Resolve all sections; explicit arguments override environment and file."""
        try:
            config = self._build(output_dir, jobs, seed)
        except (ValueError, configparser.Error) as e:
            raise ConfigError(f"{self.config_file}: {e}") from e
        self._validate(config)
        logger.info(
            f"✓ {len(config.acquisitions)} acquisitions, output to {config.output_dir} "
            f"({config.jobs} jobs)"
        )
        return config

    # Sections

    def _build(self, output_dir, jobs, seed) -> PipelineConfig:
        for section in self.config.sections():
            if section not in KNOWN_SECTIONS and not section.startswith(ACQUISITION_PREFIX):
                logger.warning(f"Skipping unknown section: {section}")

        intra = self._optional_float("field", "intra_row_spacing")
        inter = self._optional_float("field", "inter_row_spacing")

        return PipelineConfig(
            source=os.path.abspath(self.config_file),
            output_dir=self._output_dir(output_dir),
            jobs=self._jobs(jobs),
            seed=self._seed(seed),
            order_by=self._order_by(),
            channels=self._channels(),
            nodata=self._nodata(),
            crs_note=self.config.get("raster", "crs_note", fallback=""),
            geotransform=self._geotransform(),
            intra_row_spacing=intra,
            inter_row_spacing=inter,
            segmentation=self._segmentation(),
            blur=self._blur(),
            min_distance=self._derived("detection", "min_distance", intra, 0.5),
            min_intensity=self.config.getfloat("detection", "min_intensity", fallback=0.1),
            alignment=self._alignment(intra),
            lines=self._lines(),
            catalog=self._catalog(intra),
            evaluation=self._evaluation(),
            acquisitions=self._load_acquisitions(),
        )

    def _load_acquisitions(self) -> List[AcquisitionConfig]:
        acquisitions = []
        for section in self.config.sections():
            if not section.startswith(ACQUISITION_PREFIX):
                continue
            acquisition = self._load_acquisition(section)
            acquisitions.append(acquisition)
            logger.debug(f"✓ Acquisition {acquisition.date}: {acquisition.path}")
        return sorted(acquisitions, key=lambda a: a.date)

    def _load_acquisition(self, section: str) -> AcquisitionConfig:
        name = section[len(ACQUISITION_PREFIX):]
        path = self.config.get(section, "path", fallback="").strip()
        if not path:
            raise ConfigError(f"{section}: missing path")
        date = self.config.get(section, "date", fallback=name).strip()
        try:
            date = parse_date(date).isoformat()
        except ValueError as e:
            raise ConfigError(f"{section}: invalid date {date!r}") from e
        worldfile = self.config.get(section, "worldfile", fallback="").strip()
        return AcquisitionConfig(
            name=name,
            path=self._resolve(path),
            date=date,
            worldfile=self._resolve(worldfile) if worldfile else None,
        )

    def _segmentation(self) -> SegmentationSettings:
        section = "segmentation"
        vi_str = self.config.get(section, "vi", fallback="GLI")
        try:
            vi = VIKind.parse(vi_str)
        except ValueError:
            logger.warning(f"{section}: Invalid vi={vi_str}, defaulting to GLI")
            vi = VIKind.GLI
        return SegmentationSettings(
            vi=vi,
            osavi_y=self.config.getfloat(section, "osavi_y", fallback=0.6),
            fixed_threshold=self._optional_float(section, "fixed_threshold"),
            cover_cutoff=self.config.getfloat(section, "cover_cutoff", fallback=0.75),
            otsu_bins=self.config.getint(section, "otsu_bins", fallback=256),
        )

    def _blur(self) -> BlurSpec:
        sigma_min = self._optional_float("detection", "sigma_min")
        sigma_max = self._optional_float("detection", "sigma_max")
        if sigma_min is None or sigma_max is None:
            raise ConfigError("[detection] sigma_min and sigma_max are required")
        cutoff = self.config.getfloat("segmentation", "cover_cutoff", fallback=0.75)
        try:
            return BlurSpec(sigma_min, sigma_max, cutoff)
        except ValueError as e:
            raise ConfigError(f"[detection] {e}") from e

    def _alignment(self, intra: Optional[float]) -> AlignmentSettings:
        section = "alignment"
        return AlignmentSettings(
            d_register=self._derived(section, "d_register", intra, 0.5),
            d_group=self._derived(section, "d_group", intra, 0.25),
            cpd_w=self.config.getfloat(section, "cpd_w", fallback=0.1),
            cpd_max_iter=self.config.getint(section, "cpd_max_iter", fallback=100),
            cpd_tol=self.config.getfloat(section, "cpd_tol", fallback=1e-8),
            scale_min=self.config.getfloat(section, "scale_min", fallback=0.9),
            scale_max=self.config.getfloat(section, "scale_max", fallback=1.1),
        )

    def _lines(self) -> LineSettings:
        section = "lines"
        return LineSettings(
            bin_width=self.config.getfloat(section, "bin_width", fallback=0.02),
            n_b=self.config.getint(section, "n_b", fallback=18),
            n_plus=self.config.getint(section, "n_plus", fallback=1),
            hough_angles=self.config.getint(section, "hough_angles", fallback=180),
            hough_threshold=self.config.getfloat(section, "hough_threshold", fallback=0.3),
            window=self._optional_float(section, "window"),
            step=self._optional_float(section, "step"),
            theta_d=self.config.getfloat(section, "theta_d", fallback=0.2),
        )

    def _catalog(self, intra: Optional[float]) -> CatalogSettings:
        section = "catalog"
        annotations = self.config.get(section, "annotations", fallback="").strip()
        return CatalogSettings(
            d_max=self._derived(section, "d_max", intra, 0.4),
            min_direct=self.config.getint(section, "min_direct", fallback=2),
            frame_px=self.config.getint(section, "frame_px", fallback=128),
            augment=self.config.getint(section, "augment", fallback=0),
            annotations=self._resolve(annotations) if annotations else None,
        )

    def _evaluation(self) -> EvaluationSettings:
        section = "evaluation"
        truth = self.config.get(section, "truth", fallback="").strip()
        preset = self.config.get(section, "preset", fallback="").strip().lower()
        default = TOLERANCE_PRESETS["sugar_beet"]
        if preset:
            if preset in TOLERANCE_PRESETS:
                default = TOLERANCE_PRESETS[preset]
            else:
                logger.warning(f"{section}: Invalid preset={preset}, defaulting to sugar_beet")
        return EvaluationSettings(
            truth=self._resolve(truth) if truth else None,
            tolerance=self.config.getfloat(section, "tolerance", fallback=default),
        )

    # Pipeline-level values with environment overrides

    def _output_dir(self, override: Optional[str]) -> str:
        value = override or os.getenv(ENV_OUTPUT_DIR) or self.config.get(
            "pipeline", "output_dir", fallback="output"
        )
        return self._resolve(value)

    def _jobs(self, override: Optional[int]) -> int:
        if override is not None:
            return int(override)
        env = os.getenv(ENV_JOBS)
        if env:
            return int(env)
        return self.config.getint("pipeline", "jobs", fallback=os.cpu_count() or 1)

    def _seed(self, override: Optional[int]) -> int:
        if override is not None:
            return int(override)
        env = os.getenv(ENV_SEED)
        if env:
            return int(env)
        return self.config.getint("pipeline", "seed", fallback=0)

    def _order_by(self) -> str:
        order_by = self.config.get("pipeline", "order_by", fallback="cover").strip().lower()
        if order_by not in ORDER_CHOICES:
            logger.warning(f"pipeline: Invalid order_by={order_by}, defaulting to cover")
            order_by = "cover"
        return order_by

    def _channels(self) -> Optional[Tuple[str, ...]]:
        value = self.config.get("raster", "channels", fallback="")
        channels = tuple(c.strip().upper() for c in value.split(",") if c.strip())
        return channels or None

    def _nodata(self) -> Optional[float]:
        value = self.config.get("raster", "nodata", fallback="0").strip()
        if value.lower() in ("", "none"):
            return None
        return float(value)

    def _geotransform(self) -> Optional[GeoTransform]:
        value = self.config.get("raster", "geotransform", fallback="").strip()
        if not value:
            return None
        parts = [float(v) for v in value.split(",") if v.strip()]
        if len(parts) != 6:
            raise ConfigError(f"[raster] geotransform needs six world-file values, got {len(parts)}")
        return GeoTransform.from_world_values(parts)

    # Helpers

    def _optional_float(self, section: str, key: str) -> Optional[float]:
        value = self.config.get(section, key, fallback="").strip()
        return float(value) if value else None

    def _derived(self, section: str, key: str, intra: Optional[float], factor: float) -> float:
        """Explicit value, or ``factor`` times the intra-row spacing."""
        value = self._optional_float(section, key)
        if value is not None:
            return value
        if intra is None:
            raise ConfigError(
                f"[{section}] {key} is not set and [field] intra_row_spacing is missing"
            )
        return factor * intra

    def _resolve(self, path: str) -> str:
        path = os.path.expanduser(path)
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    def _validate(self, config: PipelineConfig) -> None:
        problems = []
        if not config.acquisitions:
            problems.append(f"no [{ACQUISITION_PREFIX}<id>] sections")
        seen: Dict[str, str] = {}
        for acquisition in config.acquisitions:
            if acquisition.date in seen:
                problems.append(f"date {acquisition.date} used by {seen[acquisition.date]} and {acquisition.name}")
            seen[acquisition.date] = acquisition.name
            if not os.path.exists(acquisition.path):
                problems.append(f"raster not found: {acquisition.path}")
            if acquisition.worldfile and not os.path.exists(acquisition.worldfile):
                problems.append(f"world file not found: {acquisition.worldfile}")
        for label, path in (("truth", config.evaluation.truth), ("annotations", config.catalog.annotations)):
            if path and not os.path.exists(path):
                problems.append(f"{label} file not found: {path}")

        alignment = config.alignment
        if not 0 < alignment.d_group < alignment.d_register:
            problems.append(
                f"need 0 < d_group < d_register, got {alignment.d_group} and {alignment.d_register}"
            )
        if not 0 < alignment.scale_min <= 1 <= alignment.scale_max:
            problems.append("scale bounds must enclose 1")
        if not 0 <= alignment.cpd_w < 1:
            problems.append(f"cpd_w must be in [0, 1), got {alignment.cpd_w}")
        if config.lines.theta_d <= 0:
            problems.append(f"theta_d must be positive, got {config.lines.theta_d}")
        if config.lines.bin_width <= 0 or config.lines.n_b < 2 or config.lines.n_plus < 0:
            problems.append("lines: need bin_width > 0, n_b >= 2, n_plus >= 0")
        if config.catalog.d_max <= 0 or config.catalog.min_direct < 1:
            problems.append("catalog: need d_max > 0 and min_direct >= 1")
        if config.catalog.frame_px <= 0 or config.catalog.frame_px % 2:
            problems.append(f"frame_px must be positive and even, got {config.catalog.frame_px}")
        if config.min_distance <= 0:
            problems.append(f"min_distance must be positive, got {config.min_distance}")
        if config.evaluation.tolerance <= 0:
            problems.append(f"tolerance must be positive, got {config.evaluation.tolerance}")
        if config.jobs < 1:
            problems.append(f"jobs must be at least 1, got {config.jobs}")

        if problems:
            for problem in problems:
                logger.error(f"{self.config_file}: {problem}")
            raise ConfigError(f"{self.config_file}: " + "; ".join(problems))


def load_pipeline_config(config_file: str, **overrides) -> PipelineConfig:
    return PipelineConfigLoader(config_file).load(**overrides)


_config_cache: Dict[str, PipelineConfig] = {}


def get_pipeline_config(config_file: str = "plantcat.ini") -> PipelineConfig:
    """Get or create the cached configuration of ``config_file``."""
    key = os.path.abspath(config_file)
    if key not in _config_cache:
        _config_cache[key] = load_pipeline_config(config_file)
    return _config_cache[key]
