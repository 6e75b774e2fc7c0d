"""White-reference stitching and reflectance conversion.

Two point spectrometers look at a 99% Spectralon tile. The silicon device
is kept below the crossover wavelength and the InGaAs device above it; the
InGaAs segment is rescaled so both agree in the overlap window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .cube import DataCube
from .errors import DegenerateInputError, InvalidArgumentError, SpectralCoverageError, StitchError

__all__ = [
    "SPECTRALON_REFLECTANCE",
    "SpectrometerReading",
    "WhiteReference",
    "stitch",
    "resample_to_bands",
    "to_reflectance",
    "REFLECTANCE_CLIP",
]

SPECTRALON_REFLECTANCE = 0.99
REFLECTANCE_CLIP = (0.0, 1.5)
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass
class SpectrometerReading:
    wavelengths_nm: np.ndarray
    counts: np.ndarray
    timestamp_ns: int = 0
    integration_time_us: Optional[float] = None
    humidity_pct: Optional[float] = None
    temperature_c: Optional[float] = None
    device: str = ""

    def __post_init__(self):
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.wavelengths_nm.ndim != 1 or self.wavelengths_nm.shape != self.counts.shape:
            raise InvalidArgumentError("wavelengths and counts must be equal-length vectors")
        if np.any(np.diff(self.wavelengths_nm) <= 0):
            raise InvalidArgumentError("spectrometer wavelengths must be strictly increasing")
        if np.any(self.counts < 0):
            raise InvalidArgumentError("raw counts must be non-negative")
        if self.integration_time_us is not None and not self.integration_time_us > 0:
            raise InvalidArgumentError("integration time must be positive")

    def normalized(self) -> np.ndarray:
        """Counts per microsecond of integration (raw counts if unknown)."""
        if self.integration_time_us is None:
            return self.counts.copy()
        return self.counts / self.integration_time_us


@dataclass
class WhiteReference:
    wavelengths_nm: np.ndarray
    values: np.ndarray
    reflectance_factor: float = SPECTRALON_REFLECTANCE
    gain: float = 1.0
    crossover_nm: float = 950.0
    source: np.ndarray = field(default=None, repr=False)  # 0 = VIS-NIR, 1 = NIR

    def __post_init__(self):
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.wavelengths_nm) <= 0):
            raise InvalidArgumentError("reference grid must be strictly increasing")
        if self.source is None:
            self.source = np.zeros(len(self.wavelengths_nm), dtype=np.uint8)


def stitch(visnir: SpectrometerReading, nir: SpectrometerReading, crossover_nm: float = 950.0,
           window_nm: tuple = (930.0, 970.0)) -> WhiteReference:
    """Splice the two spectrometers at ``crossover_nm``.

    The NIR segment is multiplied by ``g = mean(VIS-NIR) / mean(NIR)``, both
    means taken over the part of ``window_nm`` that both devices cover.
    """
    v_wl, v = visnir.wavelengths_nm, visnir.normalized()
    n_wl, n = nir.wavelengths_nm, nir.normalized()
    lo = max(window_nm[0], v_wl[0], n_wl[0])
    hi = min(window_nm[1], v_wl[-1], n_wl[-1])
    v_sel = (v_wl >= lo) & (v_wl <= hi)
    n_sel = (n_wl >= lo) & (n_wl <= hi)
    if lo > hi or not v_sel.any() or not n_sel.any():
        raise StitchError(
            f"no overlap samples from both spectrometers in [{window_nm[0]}, {window_nm[1]}] nm"
        )
    v_mean, n_mean = v[v_sel].mean(), n[n_sel].mean()
    if v_mean == 0 or n_mean == 0:
        raise DegenerateInputError("zero mean signal in the overlap window")
    g = v_mean / n_mean

    keep_v = v_wl < crossover_nm
    keep_n = n_wl >= crossover_nm
    wl = np.concatenate([v_wl[keep_v], n_wl[keep_n]])
    values = np.concatenate([v[keep_v], g * n[keep_n]])
    source = np.concatenate([np.zeros(keep_v.sum(), np.uint8), np.ones(keep_n.sum(), np.uint8)])
    return WhiteReference(wl, values, gain=float(g), crossover_nm=crossover_nm, source=source)


def _gauss_moments(a, b, mu, sigma):
    """Integrals of g and (x - mu) g over [a, b] for g = exp(-(x-mu)^2 / 2 sigma^2)."""
    s2 = sigma * np.sqrt(2.0)
    m0 = sigma * np.sqrt(np.pi / 2.0) * (erf((b - mu) / s2) - erf((a - mu) / s2))
    ga = np.exp(-((a - mu) ** 2) / (2 * sigma**2))
    gb = np.exp(-((b - mu) ** 2) / (2 * sigma**2))
    m1 = sigma**2 * (ga - gb)
    return m0, m1


def resample_to_bands(ref: WhiteReference, wavelengths_nm, fwhm_nm) -> np.ndarray:
    """Gaussian-window average of the reference for each band.

    The reference is treated as piecewise linear between its samples and the
    window integrals are evaluated in closed form; windows are truncated at
    the ends of the reference grid and renormalized.
    """
    centers = np.asarray(wavelengths_nm, dtype=float)
    fwhm = np.asarray(fwhm_nm, dtype=float)
    if centers.shape != fwhm.shape:
        raise InvalidArgumentError("wavelength and FWHM lists differ in length")
    grid, vals = ref.wavelengths_nm, ref.values
    outside = (centers < grid[0]) | (centers > grid[-1])
    if np.any(outside):
        raise SpectralCoverageError(
            f"bands {centers[outside].tolist()} nm outside reference coverage "
            f"[{grid[0]:.1f}, {grid[-1]:.1f}] nm"
        )
    a, b = grid[:-1], grid[1:]
    va, vb = vals[:-1], vals[1:]
    slope = (vb - va) / (b - a)
    point = fwhm <= 0
    mu = centers[:, None]
    sigma = np.where(point, 1.0, fwhm * FWHM_TO_SIGMA)[:, None]
    m0, m1 = _gauss_moments(a, b, mu, sigma)  # (bands, segments)
    # value on a segment: va + slope * (x - a) = (va + slope * (mu - a)) + slope * (x - mu)
    num = np.sum((va + slope * (mu - a)) * m0 + slope * m1, axis=1)
    den = np.sum(m0, axis=1)
    direct = np.interp(centers, grid, vals)
    ok = ~point & (den > 0)
    out = np.where(ok, num / np.where(ok, den, 1.0), direct)
    return out


def to_reflectance(cube: DataCube, ref: WhiteReference, dark=None) -> DataCube:
    """``R = 0.99 * (S - dark) / (W - dark)`` per band, clipped to [0, 1.5].

    Bands where ``W - dark <= 0`` are flagged invalid and filled with NaN.
    """
    white = resample_to_bands(ref, cube.wavelengths_nm, cube.fwhm_nm)
    dark = np.zeros(cube.channels) if dark is None else np.asarray(dark, dtype=float)
    if dark.shape != (cube.channels,):
        raise InvalidArgumentError("dark needs one value per channel")
    denom = white - dark
    band_ok = denom > 0
    safe = np.where(band_ok, denom, 1.0)
    r = ref.reflectance_factor * (cube.data.astype(np.float64) - dark) / safe
    np.clip(r, *REFLECTANCE_CLIP, out=r)
    r[..., ~band_ok] = np.nan
    return DataCube(r, cube.wavelengths_nm.copy(), cube.fwhm_nm.copy(), cube.timestamp_ns,
                    cube.validity_mask.copy(), cube.band_valid & band_ok, cube.qe)
