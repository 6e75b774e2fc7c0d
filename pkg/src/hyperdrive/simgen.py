"""Synthetic ground truth: scenes, mosaic frames, spectrometer packets.

Scenes live in the RGB reference frame. Each pixel is a mixture of a few
materials whose reflectance spectra are smooth analytic curves, lit by a
smooth illumination spectrum, so radiance can be evaluated exactly at any
wavelength. Everything is a pure function of the seed and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import RigConfig
from .cube import DataCube
from .errors import InvalidArgumentError, SpectralCoverageError
from .geometry import CameraModel, CorrespondenceSet, Remap, undistort
from .mosaic import MosaicFrame, MosaicPattern
from .radiometry import SPECTRALON_REFLECTANCE, SpectrometerReading
from .sync import TimedMessage

__all__ = [
    "WAVELENGTH_GRID",
    "GaussianSpectrum",
    "TabulatedSpectrum",
    "BlackbodyIllumination",
    "SyntheticScene",
    "generate_scene",
    "constant_scene",
    "tabulated_scene",
    "render_mosaic",
    "render_rgb",
    "spectrometer_reading",
    "emit_streams",
    "checkerboard_correspondences",
    "VISNIR_GRID",
    "NIR_GRID",
]

WAVELENGTH_GRID = np.arange(500.0, 1701.0, 1.0)
VISNIR_GRID = np.linspace(500.0, 1100.0, 256)
NIR_GRID = np.linspace(950.0, 1700.0, 128)

# (centre nm, sigma nm) of the RGB camera's channel responses
RGB_RESPONSE = ((605.0, 30.0), (545.0, 28.0), (505.0, 20.0))

# spectrometer responsivity in counts per microsecond per unit radiance
VISNIR_GAIN = 1.0
NIR_GAIN = 0.1
VISNIR_INTEGRATION_US = 20_000.0
NIR_INTEGRATION_US = 150_000.0


@dataclass(frozen=True)
class GaussianSpectrum:
    """``base + sum(a_i * exp(-(x - c_i)^2 / 2 w_i^2))``."""

    base: float
    centers: tuple
    widths: tuple
    amplitudes: tuple

    def __call__(self, wl) -> np.ndarray:
        wl = np.asarray(wl, dtype=float)
        out = np.full(wl.shape, self.base)
        for c, w, a in zip(self.centers, self.widths, self.amplitudes):
            out = out + a * np.exp(-0.5 * ((wl - c) / w) ** 2)
        return out


@dataclass(frozen=True)
class TabulatedSpectrum:
    """Piecewise-linear spectrum through ``(wavelengths, values)``."""

    wavelengths: tuple
    values: tuple

    def __call__(self, wl) -> np.ndarray:
        return np.interp(np.asarray(wl, dtype=float), self.wavelengths, self.values)


@dataclass(frozen=True)
class BlackbodyIllumination:
    """Planck spectrum at ``temperature_k`` scaled to peak 1 on 500-1700 nm."""

    temperature_k: float = 5800.0

    def __call__(self, wl) -> np.ndarray:
        return self._planck(np.asarray(wl, dtype=float)) / self._norm

    def _planck(self, wl_nm):
        c2 = 1.438776877e7  # nm K
        lam = wl_nm * 1e-3  # um, keeps magnitudes tame
        return 1.0 / (lam**5 * np.expm1(c2 / (wl_nm * self.temperature_k)))

    @property
    def _norm(self):
        return float(self._planck(WAVELENGTH_GRID).max())


class FlatIllumination:
    def __init__(self, level: float = 1.0):
        self.level = level

    def __call__(self, wl):
        return np.full(np.shape(wl), self.level, dtype=float)


@dataclass
class SyntheticScene:
    """Ground-truth scene in the RGB reference frame.

    ``abundance[..., m]`` is the fraction of material ``m`` at each pixel;
    ``material_map`` is the dominant (hard) label. Radiance at wavelength
    ``l`` is ``sum_m abundance_m * reflectance_m(l) * illumination(l)``.
    """

    abundance: np.ndarray
    material_map: np.ndarray
    materials: Sequence[Callable]
    illumination: Callable
    rgb_truth: np.ndarray
    seed: int = 0
    wavelengths_nm: np.ndarray = WAVELENGTH_GRID

    @property
    def height(self) -> int:
        return self.abundance.shape[0]

    @property
    def width(self) -> int:
        return self.abundance.shape[1]

    @property
    def n_materials(self) -> int:
        return self.abundance.shape[2]

    def material_reflectance(self, wavelengths) -> np.ndarray:
        """``(n_materials, len(wavelengths))`` reflectance table."""
        wl = np.atleast_1d(np.asarray(wavelengths, dtype=float))
        return np.stack([m(wl) for m in self.materials])

    def covers(self, wavelengths) -> bool:
        wl = np.asarray(wavelengths, dtype=float)
        return bool(np.all(wl >= self.wavelengths_nm[0]) and np.all(wl <= self.wavelengths_nm[-1]))

    def _check(self, wavelengths):
        if not self.covers(wavelengths):
            raise SpectralCoverageError(
                f"scene grid {self.wavelengths_nm[0]:.0f}-{self.wavelengths_nm[-1]:.0f} nm "
                "does not cover the requested wavelengths"
            )

    def reflectance(self, wavelengths) -> np.ndarray:
        self._check(wavelengths)
        return self.abundance @ self.material_reflectance(wavelengths)

    def radiance(self, wavelengths) -> np.ndarray:
        self._check(wavelengths)
        wl = np.atleast_1d(np.asarray(wavelengths, dtype=float))
        table = self.material_reflectance(wl) * self.illumination(wl)
        return self.abundance @ table

    @property
    def truth_cube(self) -> DataCube:
        """Radiance on the full 1 nm grid. Large: H x W x 1201 doubles."""
        wl = self.wavelengths_nm
        return DataCube(self.radiance(wl), wl, np.ones_like(wl))


def _rgb_weights(wl: np.ndarray) -> np.ndarray:
    resp = np.stack([np.exp(-0.5 * ((wl - c) / s) ** 2) for c, s in RGB_RESPONSE])
    return resp


def _material_rgb(materials, illumination) -> np.ndarray:
    wl = WAVELENGTH_GRID
    resp = _rgb_weights(wl) * illumination(wl)
    refl = np.stack([m(wl) for m in materials])
    # white-balanced: a perfect reflector maps to (1, 1, 1)
    return (refl @ resp.T) / resp.sum(axis=1)


def _random_material(rng, metameric_base: Optional[GaussianSpectrum] = None) -> GaussianSpectrum:
    if metameric_base is None:
        k = int(rng.integers(2, 5))
        centers = rng.uniform(520.0, 1680.0, k)
        widths = rng.uniform(40.0, 160.0, k)
        amps = rng.uniform(0.08, 0.45, k)
        base = float(rng.uniform(0.04, 0.15))
    else:
        # identical below ~900 nm, distinct in the SWIR
        k = int(rng.integers(1, 3))
        centers = rng.uniform(1150.0, 1650.0, k)
        widths = rng.uniform(35.0, 60.0, k)
        amps = rng.uniform(0.15, 0.45, k)
        base = metameric_base.base
        # scale only the new bumps so the shared visible part stays identical
        amps = amps * min(1.0, (0.9 - base) / amps.sum())
        centers = np.concatenate([metameric_base.centers, centers])
        widths = np.concatenate([metameric_base.widths, widths])
        amps = np.concatenate([metameric_base.amplitudes, amps])
    peak = base + amps.sum()
    if metameric_base is None and peak > 0.95:
        scale = 0.95 / peak
        amps = amps * scale
        base = base * scale
    return GaussianSpectrum(float(base), tuple(map(float, centers)), tuple(map(float, widths)),
                            tuple(map(float, amps)))


def _voronoi_labels(rng, height, width, n) -> np.ndarray:
    flat = rng.choice(height * width, size=n, replace=False)
    seeds = np.column_stack(np.unravel_index(flat, (height, width))).astype(float)
    rr, cc = np.mgrid[0:height, 0:width]
    d = (rr[..., None] - seeds[:, 0]) ** 2 + (cc[..., None] - seeds[:, 1]) ** 2
    return np.argmin(d, axis=-1)


def generate_scene(seed: int, height: int, width: int, n_materials: int,
                   edge_sigma: float = 4.0, metameric: bool = False,
                   temperature_k: Optional[float] = None) -> SyntheticScene:
    """Random blob scene with ``n_materials`` distinct smooth spectra.

    Regions are Voronoi cells (convex, hence contiguous); abundances are the
    cell indicators blurred by ``edge_sigma`` pixels so radiance is spatially
    smooth. The default blur is close to the 5-pixel VNIR tile pitch; much
    sharper edges cannot be recovered by any mosaic demosaicker. With ``metameric=True`` all materials share one visible-range
    spectrum and differ only above 1100 nm, so they look identical in RGB.
    """
    if height < 16 or width < 16:
        raise InvalidArgumentError("scene must be at least 16 x 16")
    if not 2 <= n_materials <= 16:
        raise InvalidArgumentError("n_materials must be in [2, 16]")
    rng = np.random.default_rng(seed)
    base = _random_material(rng) if metameric else None
    if base is not None:
        # keep the shared visible part clear of the SWIR bumps
        keep = [i for i, c in enumerate(base.centers) if c < 900.0] or [0]
        base = GaussianSpectrum(base.base, tuple(min(base.centers[i], 850.0) for i in keep),
                                tuple(min(base.widths[i], 80.0) for i in keep),
                                tuple(base.amplitudes[i] * 0.5 for i in keep))

    materials = []
    while len(materials) < n_materials:
        cand = _random_material(rng, base)
        grid = WAVELENGTH_GRID
        if all(np.sqrt(np.mean((cand(grid) - m(grid)) ** 2)) > 0.03 for m in materials):
            materials.append(cand)

    labels = _voronoi_labels(rng, height, width, n_materials)
    onehot = (labels[..., None] == np.arange(n_materials)).astype(float)
    if edge_sigma > 0:
        abundance = gaussian_filter(onehot, sigma=(edge_sigma, edge_sigma, 0), mode="nearest")
        abundance /= abundance.sum(axis=-1, keepdims=True)
    else:
        abundance = onehot
    t = float(rng.uniform(4500.0, 6500.0)) if temperature_k is None else temperature_k
    illum = BlackbodyIllumination(t)
    rgb = abundance @ _material_rgb(materials, illum)
    return SyntheticScene(abundance, labels, materials, illum, rgb, seed)


def constant_scene(height: int, width: int, value: float = 1.0) -> SyntheticScene:
    """Single flat material under flat light: radiance ``value`` everywhere."""
    mat = GaussianSpectrum(float(value), (), (), ())
    ab = np.ones((height, width, 1))
    illum = FlatIllumination(1.0)
    return SyntheticScene(ab, np.zeros((height, width), int), [mat], illum,
                          ab @ _material_rgb([mat], illum))


def tabulated_scene(height: int, width: int, wavelengths, values) -> SyntheticScene:
    """Spatially flat scene whose radiance follows a given piecewise-linear table."""
    mat = TabulatedSpectrum(tuple(map(float, wavelengths)), tuple(map(float, values)))
    ab = np.ones((height, width, 1))
    illum = FlatIllumination(1.0)
    return SyntheticScene(ab, np.zeros((height, width), int), [mat], illum,
                          np.zeros((height, width, 3)))


def _scene_points(model: CameraModel, shape) -> np.ndarray:
    """Scene-frame position seen by every sensor pixel: H(undistort(q))."""
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    q = np.stack([cc, rr], axis=-1)
    u = undistort(q, model, tol=1e-10, max_iter=100)
    return model.homography.apply(u)


def _sample_abundance(scene: SyntheticScene, model: CameraModel, shape) -> np.ndarray:
    """Bilinear sample of the abundance maps at each sensor pixel (edges clamped)."""
    pts = _scene_points(model, shape)
    x = np.clip(pts[..., 0], 0.0, scene.width - 1)
    y = np.clip(pts[..., 1], 0.0, scene.height - 1)
    remap = Remap(x, y, (scene.height, scene.width))
    return np.moveaxis(remap.apply(np.moveaxis(scene.abundance, -1, 0)), 0, -1)


def render_mosaic(scene: SyntheticScene, pattern: MosaicPattern, model: Optional[CameraModel] = None,
                  shape=None, timestamp_ns: int = 0, noise_sigma: float = 0.0,
                  seed: int = 0) -> MosaicFrame:
    """Forward-render the raw frame a mosaic camera would record.

    Sensor pixel ``q`` sees scene point ``H(undistort(q))``; its value is the
    scene radiance there at the central wavelength of the raw band its tile
    cell carries.
    """
    if not scene.covers(pattern.raw_wavelengths_nm):
        raise SpectralCoverageError(
            f"scene grid does not cover pattern {pattern.name!r} wavelengths "
            f"{pattern.raw_wavelengths_nm.min():.1f}-{pattern.raw_wavelengths_nm.max():.1f} nm"
        )
    shape = (scene.height, scene.width) if shape is None else tuple(shape)
    if model is None:
        model = CameraModel.from_fov(*shape)
    ab = _sample_abundance(scene, model, shape)
    wl = pattern.raw_wavelengths_nm
    table = scene.material_reflectance(wl) * scene.illumination(wl)  # (n_mat, bands)
    idx = pattern.index_image(*shape)
    values = np.einsum("hwm,hwm->hw", ab, table.T[idx])
    if noise_sigma > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sigma, values.shape)
    return MosaicFrame(values, timestamp_ns, pattern.name)


def render_rgb(scene: SyntheticScene, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    rgb = scene.rgb_truth
    if noise_sigma > 0:
        rgb = rgb + np.random.default_rng(seed).normal(0.0, noise_sigma, rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


def spectrometer_reading(scene: SyntheticScene, device: str, timestamp_ns: int = 0,
                         gain: Optional[float] = None, integration_time_us: Optional[float] = None,
                         humidity_pct: Optional[float] = None,
                         temperature_c: Optional[float] = None) -> SpectrometerReading:
    """What a spectrometer above the 99% white tile records under the scene's light."""
    if device == "visnir":
        grid, g, t = VISNIR_GRID, VISNIR_GAIN, VISNIR_INTEGRATION_US
    elif device == "nir":
        grid, g, t = NIR_GRID, NIR_GAIN, NIR_INTEGRATION_US
    else:
        raise InvalidArgumentError(f"unknown spectrometer {device!r}")
    g = g if gain is None else gain
    t = t if integration_time_us is None else integration_time_us
    counts = SPECTRALON_REFLECTANCE * scene.illumination(grid) * g * t
    return SpectrometerReading(grid, counts, timestamp_ns, t, humidity_pct, temperature_c, device)


def _rgb_cube(scene, rgb, ts) -> DataCube:
    # channels stored in ascending wavelength order: blue, green, red
    data = rgb[..., ::-1].astype(np.float32)
    wl = [c for c, _ in RGB_RESPONSE][::-1]
    fw = [2.3548 * s for _, s in RGB_RESPONSE][::-1]
    return DataCube(data, wl, fw, ts, frame_id="rgb")


def emit_streams(scene: SyntheticScene, rig: RigConfig, duration_s: float, jitter_ms: float = 0.0,
                 seed: int = 0, noise_sigma: float = 0.0) -> list:
    """Timestamped camera triples and spectrometer packets, sorted by time.

    Cameras fire at ``rig.frame_rate_hz`` starting at t=0; the two
    spectrometers at ``rig.spectrometer_rates_hz``. Each timestamp gets an
    independent uniform perturbation in ``[-jitter_ms, +jitter_ms]``
    (negative results clamp to 0). The scene is static, so frames are
    rendered once and shared between messages.
    """
    if duration_s <= 0:
        raise InvalidArgumentError("duration must be positive")
    if jitter_ms < 0:
        raise InvalidArgumentError("jitter must be non-negative")
    rng = np.random.default_rng(seed)
    jitter_ns = jitter_ms * 1e6

    def stamps(rate):
        n = int(np.floor(duration_s * rate - 1e-9)) + 1
        nominal = np.round(np.arange(n) * 1e9 / rate).astype(np.int64)
        if jitter_ns > 0:
            nominal = nominal + np.round(rng.uniform(-jitter_ns, jitter_ns, n)).astype(np.int64)
        return np.maximum(nominal, 0)

    vnir = render_mosaic(scene, rig.vnir_pattern, rig.vnir_model, rig.vnir_shape, noise_sigma=noise_sigma,
                         seed=seed)
    swir = render_mosaic(scene, rig.swir_pattern, rig.swir_model, rig.swir_shape, noise_sigma=noise_sigma,
                         seed=seed + 1)
    rgb = render_rgb(scene, noise_sigma, seed + 2)
    for arr in (vnir.values, swir.values, rgb):
        arr.setflags(write=False)

    msgs = []
    cams = {"rgb": None, "vnir": vnir, "swir": swir}
    for sid in ("rgb", "vnir", "swir"):
        for ts in stamps(rig.frame_rate_hz):
            ts = int(ts)
            if sid == "rgb":
                payload = _rgb_cube(scene, rgb, ts)
            else:
                frame = cams[sid]
                payload = MosaicFrame(frame.values, ts, frame.pattern_id)
            msgs.append(TimedMessage(sid, ts, payload))
    for sid, rate in zip(("visnir", "nir"), rig.spectrometer_rates_hz):
        for ts in stamps(rate):
            ts = int(ts)
            msgs.append(TimedMessage(sid, ts, spectrometer_reading(scene, sid, ts)))
    # at equal timestamps spectrometer packets go first so a triple completing
    # at that instant can attach them
    order = {"visnir": 0, "nir": 1, "rgb": 2, "vnir": 3, "swir": 4}
    msgs.sort(key=lambda m: (m.timestamp_ns, order[m.stream_id]))
    return msgs


def checkerboard_correspondences(model: CameraModel, shape, rows: int = 7, cols: int = 9,
                                 source_id: str = "camera", target_id: str = "rgb",
                                 noise_px: float = 0.0, seed: int = 0) -> CorrespondenceSet:
    """Corner grid in the camera's undistorted plane and its image in the RGB frame."""
    h, w = shape
    ys = np.linspace(0.1 * (h - 1), 0.9 * (h - 1), rows)
    xs = np.linspace(0.1 * (w - 1), 0.9 * (w - 1), cols)
    xx, yy = np.meshgrid(xs, ys)
    src = np.column_stack([xx.ravel(), yy.ravel()])
    dst = model.homography.apply(src)
    if noise_px > 0:
        dst = dst + np.random.default_rng(seed).normal(0.0, noise_px, dst.shape)
    return CorrespondenceSet(np.column_stack([src, dst]), source_id, target_id)
