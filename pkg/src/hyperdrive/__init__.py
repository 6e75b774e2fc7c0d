"""Snapshot hyperspectral processing: raw mosaic frames to registered,
reflectance-calibrated composite datacubes."""

__version__ = "0.1.0"
