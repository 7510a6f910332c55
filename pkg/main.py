"""Main entry point for the plant catalog pipeline.

Same as the ``plantcat`` console script; without arguments it runs the full
pipeline on ``plantcat.ini`` in the working directory.
"""
import sys

from plant_catalog.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:] or ["run", "--config", "plantcat.ini"]))
