"""Plant cataloging for UAV orthomosaic time series.

Identifies crop plants per acquisition date, aligns the dates, recognizes the
seeding lines and links every plant across time into a catalog.
"""
__version__ = "0.1.0"
