"""Exception hierarchy for the plant cataloging pipeline."""
from typing import Optional


class PlantCatalogError(Exception):
    """Base class for every error raised by plant_catalog."""


class ConfigError(PlantCatalogError):
    """Invalid or inconsistent pipeline configuration."""


class RasterError(PlantCatalogError, ValueError):
    """A raster or its georeferencing cannot be used."""


class DegenerateInputError(PlantCatalogError, ValueError):
    """Input data admits no meaningful result (constant image, collinear cloud, ...)."""


class StageError(PlantCatalogError, RuntimeError):
    """A pipeline stage failed; carries the stage name and acquisition date."""

    def __init__(self, stage: str, message: str, date: Optional[str] = None):
        self.stage = stage
        self.date = date
        where = f"{stage} [{date}]" if date else stage
        super().__init__(f"{where}: {message}")
