#!/usr/bin/env python
"""Fit and plot the plant cover growth of a finished run."""
import argparse
import glob
import json
import logging
import os

import numpy as np
from matplotlib.figure import Figure

from plant_catalog.app_state import configure_logging
from plant_catalog.growth import fit_growth, growth_eval
from plant_catalog.raster import acquisitions_from_dates

logger = logging.getLogger("samples.growth_curve")

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir", help="output directory of a pipeline run")
    parser.add_argument("--plot", default="growth.png")
    args = parser.parse_args()

    configure_logging()
    stats = []
    for path in sorted(glob.glob(os.path.join(args.run_dir, "stats", "*.json"))):
        with open(path, "r", encoding="utf-8") as handle:
            stats.append(json.load(handle))
    days = [a.day for a in acquisitions_from_dates([s["date"] for s in stats])]
    covers = [s["cover_ratio"] for s in stats]

    fit = fit_growth(days, covers)
    logger.info(f"✓ {fit.branch} branch, residual {fit.residual:.5f}: {fit.params}")

    t = np.linspace(min(days), max(days), 200)
    fig = Figure(figsize=(5, 3.5))
    ax = fig.subplots()
    ax.plot(days, covers, "o", label="measured")
    ax.plot(t, growth_eval(fit.params, t), "-", label="fitted")
    ax.set_xlabel("day")
    ax.set_ylabel("cover ratio")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.plot, dpi=150)
    logger.info(f"✓ Wrote {args.plot}")
