"""Snapshot-mosaic demosaicing.

A mosaic sensor tiles an ``M x N`` filter pattern over the pixel array, so
each raw band is sampled on a regular sub-lattice. Demosaicing interpolates
every band back to full resolution and then applies a linear spectral
correction that folds the raw filter responses (including the weaker
secondary transmission peak of each Fabry-Perot filter) into the output
bands.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

__all__ = [
    "MosaicPattern",
    "SpectralCorrectionMatrix",
    "MosaicFrame",
    "BandStack",
    "SparseBand",
    "extract_sparse_band",
    "interpolate_band",
    "interpolate_all",
    "apply_spectral_correction",
    "demosaic",
    "read_sensor_config",
    "write_sensor_config",
    "sensor_config_text",
]


@dataclass(frozen=True)
class MosaicPattern:
    """Filter tile layout.

    ``layout[i, j]`` is the raw-band index sampled by tile cell ``(i, j)``
    and ``raw_wavelengths_nm[k]`` the central wavelength of raw band ``k``.
    """

    layout: np.ndarray
    raw_wavelengths_nm: np.ndarray
    name: str = "pattern"
    sensor_range_nm: tuple = (0.0, np.inf)

    def __post_init__(self):
        layout = np.array(self.layout, dtype=np.int64)
        if layout.ndim != 2 or layout.size == 0:
            raise InvalidArgumentError("tile layout must be a non-empty 2-D grid")
        if not np.array_equal(np.sort(layout.ravel()), np.arange(layout.size)):
            raise InvalidArgumentError("tile layout must be a bijection onto 0..M*N-1")
        wl = np.array(self.raw_wavelengths_nm, dtype=float)
        if wl.shape != (layout.size,):
            raise InvalidArgumentError(
                f"need {layout.size} raw wavelengths, got {wl.size}"
            )
        lo, hi = self.sensor_range_nm
        if np.any(wl < lo) or np.any(wl > hi):
            raise InvalidArgumentError(f"raw wavelengths must lie in [{lo}, {hi}] nm")
        layout.setflags(write=False)
        wl.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "raw_wavelengths_nm", wl)

    @property
    def tile_rows(self) -> int:
        return self.layout.shape[0]

    @property
    def tile_cols(self) -> int:
        return self.layout.shape[1]

    @property
    def raw_band_count(self) -> int:
        return self.layout.size

    def band_at(self, row: int, col: int) -> int:
        return int(self.layout[row % self.tile_rows, col % self.tile_cols])

    def cell_of(self, band: int) -> tuple[int, int]:
        r, c = np.argwhere(self.layout == band)[0]
        return int(r), int(c)

    def index_image(self, height: int, width: int) -> np.ndarray:
        """Raw-band index of every pixel of a ``height x width`` frame."""
        reps = (-(-height // self.tile_rows), -(-width // self.tile_cols))
        return np.tile(self.layout, reps)[:height, :width]


@dataclass(frozen=True)
class SpectralCorrectionMatrix:
    matrix: np.ndarray
    out_wavelengths_nm: np.ndarray
    out_fwhm_nm: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InvalidArgumentError("correction matrix must be 2-D")
        rows, cols = m.shape
        if rows > cols:
            raise InvalidArgumentError("correction matrix cannot have more rows than columns")
        if np.any(np.all(m == 0, axis=1)):
            raise InvalidArgumentError("every correction row needs a nonzero entry")
        wl = np.array(self.out_wavelengths_nm, dtype=float)
        fw = np.array(self.out_fwhm_nm, dtype=float)
        if wl.shape != (rows,) or fw.shape != (rows,):
            raise InvalidArgumentError("output wavelength/FWHM lists must match the row count")
        for a in (m, wl, fw):
            a.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "out_wavelengths_nm", wl)
        object.__setattr__(self, "out_fwhm_nm", fw)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def identity(cls, wavelengths_nm, fwhm_nm) -> "SpectralCorrectionMatrix":
        n = len(wavelengths_nm)
        return cls(np.eye(n), wavelengths_nm, fwhm_nm)


@dataclass
class MosaicFrame:
    values: np.ndarray
    timestamp_ns: int = 0
    pattern_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise InvalidArgumentError("mosaic frame must be a single 2-D plane")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class BandStack:
    """``(B, H, W)`` full-resolution band planes with per-band metadata."""

    bands: np.ndarray
    wavelengths_nm: np.ndarray
    fwhm_nm: np.ndarray
    timestamp_ns: int = 0
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bands = np.asarray(self.bands)
        if self.bands.ndim != 3:
            raise InvalidArgumentError("band stack must be (bands, height, width)")
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.fwhm_nm = np.asarray(self.fwhm_nm, dtype=float)
        if len(self.wavelengths_nm) != self.band_count or len(self.fwhm_nm) != self.band_count:
            raise InvalidArgumentError("per-band metadata length must equal band count")
        if self.valid is None:
            self.valid = np.ones(self.bands.shape[1:], dtype=bool)

    @property
    def band_count(self) -> int:
        return self.bands.shape[0]

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]


@dataclass
class SparseBand:
    """Samples of one raw band on its ``rows x cols`` sub-lattice."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    band: int = 0

    @property
    def positions(self) -> np.ndarray:
        rr, cc = np.meshgrid(self.rows, self.cols, indexing="ij")
        return np.column_stack([rr.ravel(), cc.ravel()])

    def __len__(self):
        return len(self.rows) * len(self.cols)


def extract_sparse_band(frame: MosaicFrame, pattern: MosaicPattern, band: int) -> SparseBand:
    if not 0 <= band < pattern.raw_band_count:
        raise InvalidArgumentError(
            f"band {band} out of range for {pattern.raw_band_count} raw bands"
        )
    r0, c0 = pattern.cell_of(band)
    rows = np.arange(r0, frame.height, pattern.tile_rows)
    cols = np.arange(c0, frame.width, pattern.tile_cols)
    values = frame.values[r0 :: pattern.tile_rows, c0 :: pattern.tile_cols]
    return SparseBand(rows, cols, np.array(values, dtype=np.float64), band)


def _axis_weights(coords: np.ndarray, n: int):
    """Lower index and fraction for linear interpolation with clamped ends."""
    if len(coords) == 1:
        zeros = np.zeros(n, dtype=np.intp)
        return zeros, zeros, np.zeros(n)
    x = np.arange(n, dtype=float)
    i0 = np.searchsorted(coords, x, side="right") - 1
    i0 = np.clip(i0, 0, len(coords) - 2)
    t = (x - coords[i0]) / (coords[i0 + 1] - coords[i0])
    return i0, i0 + 1, np.clip(t, 0.0, 1.0)


def interpolate_band(samples: SparseBand, height: int, width: int) -> np.ndarray:
    """Bilinear interpolation over the band's lattice.

    Values at sample positions are reproduced exactly; pixels beyond the
    outermost samples take the nearest lattice value along that axis.
    """
    if len(samples) == 0:
        raise DegenerateInputError("cannot interpolate an empty sample set")
    g = np.asarray(samples.values, dtype=np.float64).reshape(len(samples.rows), len(samples.cols))
    i0, i1, fr = _axis_weights(np.asarray(samples.rows, dtype=float), height)
    j0, j1, fc = _axis_weights(np.asarray(samples.cols, dtype=float), width)
    fr = fr[:, None]
    tmp = (1.0 - fr) * g[i0] + fr * g[i1]
    return (1.0 - fc) * tmp[:, j0] + fc * tmp[:, j1]


def interpolate_all(frame: MosaicFrame, pattern: MosaicPattern) -> np.ndarray:
    """Interpolate every raw band; returns ``(raw_band_count, H, W)``."""
    out = np.empty((pattern.raw_band_count, frame.height, frame.width))
    for band in range(pattern.raw_band_count):
        out[band] = interpolate_band(extract_sparse_band(frame, pattern, band), frame.height, frame.width)
    return out


def apply_spectral_correction(raw_stack: BandStack, corr: SpectralCorrectionMatrix,
                              clamp: bool = True) -> BandStack:
    """Per-pixel ``corr @ spectrum``; negative results clamp to zero."""
    if raw_stack.band_count != corr.cols:
        raise InvalidArgumentError(
            f"stack has {raw_stack.band_count} bands but correction expects {corr.cols}"
        )
    b, h, w = raw_stack.bands.shape
    out = (corr.matrix @ raw_stack.bands.reshape(b, h * w)).reshape(corr.rows, h, w)
    if clamp:
        np.maximum(out, 0.0, out=out)
    return BandStack(out, corr.out_wavelengths_nm.copy(), corr.out_fwhm_nm.copy(),
                     raw_stack.timestamp_ns, raw_stack.valid.copy())


def demosaic(frame: MosaicFrame, pattern: MosaicPattern,
             corr: Optional[SpectralCorrectionMatrix] = None, clamp: bool = True) -> BandStack:
    """Extract, interpolate and spectrally correct a mosaic frame.

    With ``corr=None`` the raw interpolated stack is returned, one plane per
    raw band in raw-band order.
    """
    raw = BandStack(
        interpolate_all(frame, pattern),
        pattern.raw_wavelengths_nm.copy(),
        np.zeros(pattern.raw_band_count),
        frame.timestamp_ns,
    )
    if corr is None:
        return raw
    return apply_spectral_correction(raw, corr, clamp=clamp)


# --------------------------------------------------------------------------- config


def _rows_of_floats(text: str) -> list[list[float]]:
    return [[float(v) for v in line.split()] for line in text.strip().splitlines() if line.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split()]


def read_sensor_config(path) -> tuple[MosaicPattern, SpectralCorrectionMatrix]:
    """Load a ``[pattern]`` + ``[correction]`` sensor file (see docs/formats.md)."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    p = cp["pattern"]
    lo, hi = _float_list(p.get("sensor_range_nm", "0 1e9"))
    pattern = MosaicPattern(
        layout=np.array(_rows_of_floats(p["tile"]), dtype=np.int64),
        raw_wavelengths_nm=_float_list(p["raw_wavelengths_nm"]),
        name=p.get("name", "pattern"),
        sensor_range_nm=(lo, hi),
    )
    c = cp["correction"]
    corr = SpectralCorrectionMatrix(
        matrix=np.array(_rows_of_floats(c["matrix"])),
        out_wavelengths_nm=_float_list(c["out_wavelengths_nm"]),
        out_fwhm_nm=_float_list(c["out_fwhm_nm"]),
    )
    if corr.cols != pattern.raw_band_count:
        raise InvalidArgumentError(f"{path}: correction has {corr.cols} columns, pattern has "
                                   f"{pattern.raw_band_count} raw bands")
    return pattern, corr


def _fmt_row(values: Sequence[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def sensor_config_text(pattern: MosaicPattern, corr: SpectralCorrectionMatrix,
                       comment: str = "") -> str:
    lines = [f"# {line}" for line in comment.splitlines()]
    lines += [
        "[pattern]",
        f"name = {pattern.name}",
        f"sensor_range_nm = {_fmt_row(pattern.sensor_range_nm)}",
        "tile =",
    ]
    lines += ["    " + " ".join(str(v) for v in row) for row in pattern.layout]
    lines.append(f"raw_wavelengths_nm = {_fmt_row(pattern.raw_wavelengths_nm)}")
    lines += [
        "",
        "[correction]",
        f"out_wavelengths_nm = {_fmt_row(corr.out_wavelengths_nm)}",
        f"out_fwhm_nm = {_fmt_row(corr.out_fwhm_nm)}",
        "matrix =",
    ]
    lines += ["    " + _fmt_row(row) for row in corr.matrix]
    return "\n".join(lines) + "\n"


def write_sensor_config(path, pattern: MosaicPattern, corr: SpectralCorrectionMatrix,
                        comment: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(sensor_config_text(pattern, corr, comment))
