"""Composite datacube assembly in the RGB reference frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError, MaskedPixelError
from .geometry import Homography, homography_remap
from .mosaic import BandStack

__all__ = ["DataCube", "compose", "slice_spectrum", "VNIR_BANDS", "SWIR_BANDS"]

VNIR_BANDS = 24
SWIR_BANDS = 9


@dataclass
class DataCube:
    """``(H, W, C)`` spectral samples with per-channel metadata.

    ``band_valid`` marks channels that could be computed at all; invalid
    channels hold NaN. ``qe`` is an optional per-channel quantum-efficiency
    table carried alongside the data.
    """

    data: np.ndarray
    wavelengths_nm: np.ndarray
    fwhm_nm: np.ndarray
    timestamp_ns: int = 0
    validity_mask: Optional[np.ndarray] = None
    band_valid: Optional[np.ndarray] = None
    qe: Optional[np.ndarray] = None
    frame_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidArgumentError("cube data must be (height, width, channels)")
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.fwhm_nm = np.asarray(self.fwhm_nm, dtype=float)
        c = self.channels
        if self.wavelengths_nm.shape != (c,) or self.fwhm_nm.shape != (c,):
            raise InvalidArgumentError("channels, wavelengths and FWHM lengths differ")
        if c > 1 and np.any(np.diff(self.wavelengths_nm) <= 0):
            raise InvalidArgumentError("cube wavelengths must be strictly increasing")
        if self.validity_mask is None:
            self.validity_mask = np.ones(self.data.shape[:2], dtype=bool)
        else:
            self.validity_mask = np.asarray(self.validity_mask, dtype=bool)
            if self.validity_mask.shape != self.data.shape[:2]:
                raise InvalidArgumentError("validity mask must be (height, width)")
        if self.band_valid is None:
            self.band_valid = np.ones(c, dtype=bool)
        else:
            self.band_valid = np.asarray(self.band_valid, dtype=bool)
        if self.qe is not None:
            self.qe = np.asarray(self.qe, dtype=float)
            if self.qe.shape != (c,):
                raise InvalidArgumentError("QE table needs one value per channel")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape


def compose(vnir: BandStack, swir: BandStack, h_vnir: Homography, h_swir: Homography,
            out_dims: tuple = (1012, 1666), remaps: Optional[tuple] = None) -> DataCube:
    """Warp both undistorted stacks into the RGB frame and concatenate by wavelength.

    The output validity mask is the intersection of both warps' in-bounds
    masks and the stacks' own validity (pulled through the same maps).
    ``remaps`` may supply the two precomputed warps when many frames share
    one rig.
    """
    if vnir.band_count != VNIR_BANDS:
        raise ConfigurationError(f"VNIR stack has {vnir.band_count} bands, expected {VNIR_BANDS}")
    if swir.band_count != SWIR_BANDS:
        raise ConfigurationError(f"SWIR stack has {swir.band_count} bands, expected {SWIR_BANDS}")
    out_h, out_w = int(out_dims[0]), int(out_dims[1])

    valid = np.ones((out_h, out_w), dtype=bool)
    wavelengths, fwhm, parts = [], [], []
    if remaps is None:
        remaps = (homography_remap(h_vnir, vnir.bands.shape[1:], out_h, out_w),
                  homography_remap(h_swir, swir.bands.shape[1:], out_h, out_w))
    for stack, remap in ((vnir, remaps[0]), (swir, remaps[1])):
        if remap.out_shape != (out_h, out_w) or remap.src_shape != stack.bands.shape[1:]:
            raise InvalidArgumentError("precomputed remap does not fit these stacks")
        # gather whole spectra per pixel: contiguous rows in and out
        parts.append(remap.apply_last(np.moveaxis(stack.bands, 0, -1)))
        valid &= remap.valid
        if not stack.valid.all():
            # a pixel is valid only if every contributing source pixel was
            valid &= _all_corners_valid(remap, stack.valid)
        wavelengths.append(stack.wavelengths_nm)
        fwhm.append(stack.fwhm_nm)
    data = np.concatenate(parts, axis=-1)

    wl = np.concatenate(wavelengths)
    fw = np.concatenate(fwhm)
    order = np.argsort(wl, kind="stable")
    if not np.array_equal(order, np.arange(len(wl))):
        data = data[..., order]
        wl, fw = wl[order], fw[order]
    return DataCube(data, wl, fw, vnir.timestamp_ns, valid)


def _all_corners_valid(remap, src_valid: np.ndarray) -> np.ndarray:
    # corners carrying zero interpolation weight do not contribute
    flat = src_valid.ravel()
    fx, fy = remap.fx, remap.fy
    ok = ((flat[remap.idx00] | ((fx == 1) | (fy == 1)))
          & (flat[remap.idx01] | ((fx == 0) | (fy == 1)))
          & (flat[remap.idx10] | ((fx == 1) | (fy == 0)))
          & (flat[remap.idx11] | ((fx == 0) | (fy == 0))))
    return ok.reshape(remap.out_shape)


def slice_spectrum(cube: DataCube, row: int, col: int) -> np.ndarray:
    """``(C, 2)`` array of ``(wavelength_nm, value)`` at one pixel."""
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise InvalidArgumentError(f"pixel ({row}, {col}) outside {cube.height}x{cube.width} cube")
    if not cube.validity_mask[row, col]:
        raise MaskedPixelError(f"pixel ({row}, {col}) is masked invalid")
    return np.column_stack([cube.wavelengths_nm, cube.data[row, col, :].astype(float)])
