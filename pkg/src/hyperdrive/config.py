"""Rig configuration: sensor patterns, corrections, camera models and rates.

A rig is stored as a directory of small text files (see docs/formats.md)::

    rig.ini            [rig] section plus one section per camera
    vnir_sensor.ini    [pattern] + [correction]
    vnir_camera.ini    [camera]
    swir_sensor.ini
    swir_camera.ini
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraModel, Homography, camera_model_text, read_camera_model
from .mosaic import MosaicPattern, SpectralCorrectionMatrix, read_sensor_config, sensor_config_text

__all__ = [
    "RigConfig",
    "read_rig",
    "write_rig",
    "default_rig",
    "test_rig",
    "identity_rig",
    "desk_rig",
    "vnir_sensor",
    "swir_sensor",
]

_SENSOR_NOTES = {
    "vnir": "5x5 Fabry-Perot mosaic, 25 raw filters -> 24 output bands.\n"
            "Raw filters 12 and 13 sit 1.5 nm either side of output band 12 and\n"
            "overlap almost completely; correction row 12 averages them.",
    "swir": "3x3 mosaic, 9 raw filters -> 9 output bands, denser below 1400 nm.",
}

VNIR_RANGE_NM = (660.0, 900.0)
SWIR_RANGE_NM = (1100.0, 1700.0)


@dataclass(frozen=True)
class RigConfig:
    vnir_pattern: MosaicPattern
    vnir_correction: SpectralCorrectionMatrix
    swir_pattern: MosaicPattern
    swir_correction: SpectralCorrectionMatrix
    vnir_model: CameraModel
    swir_model: CameraModel
    vnir_shape: tuple
    swir_shape: tuple
    out_dims: tuple = (1012, 1666)
    frame_rate_hz: float = 10.0
    spectrometer_rates_hz: tuple = (4.0, 2.0)
    name: str = "rig"

    def __post_init__(self):
        if self.frame_rate_hz <= 0 or min(self.spectrometer_rates_hz) <= 0:
            raise ConfigurationError("rates must be positive")
        if self.vnir_correction.rows + self.swir_correction.rows != 33:
            raise ConfigurationError(
                f"rig yields {self.vnir_correction.rows} + {self.swir_correction.rows} channels, "
                "expected 24 + 9"
            )

    @property
    def channel_count(self) -> int:
        return self.vnir_correction.rows + self.swir_correction.rows

    def with_models(self, vnir_model=None, swir_model=None) -> "RigConfig":
        return replace(self, vnir_model=vnir_model or self.vnir_model,
                       swir_model=swir_model or self.swir_model)

    def digest(self) -> str:
        """SHA-256 over the canonical text form of the whole rig."""
        h = hashlib.sha256()
        for name, text in sorted(_render_rig(self).items()):
            h.update(name.encode())
            h.update(b"\0")
            h.update(text.encode())
        return h.hexdigest()


def _render_rig(rig: RigConfig) -> dict:
    files = {}
    for cam in ("vnir", "swir"):
        files[f"{cam}_sensor.ini"] = sensor_config_text(
            getattr(rig, f"{cam}_pattern"), getattr(rig, f"{cam}_correction"), _SENSOR_NOTES[cam])
        files[f"{cam}_camera.ini"] = camera_model_text(getattr(rig, f"{cam}_model"))
    cp = configparser.ConfigParser()
    cp["rig"] = {
        "name": rig.name,
        "out_height": str(rig.out_dims[0]),
        "out_width": str(rig.out_dims[1]),
        "frame_rate_hz": repr(float(rig.frame_rate_hz)),
        "spectrometer_rates_hz": " ".join(repr(float(r)) for r in rig.spectrometer_rates_hz),
    }
    for cam in ("vnir", "swir"):
        shape = getattr(rig, f"{cam}_shape")
        cp[cam] = {
            "sensor": f"{cam}_sensor.ini",
            "camera": f"{cam}_camera.ini",
            "height": str(shape[0]),
            "width": str(shape[1]),
        }
    out = io.StringIO()
    cp.write(out)
    files["rig.ini"] = out.getvalue()
    return files


def write_rig(rig: RigConfig, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in _render_rig(rig).items():
        (d / name).write_text(text)
    return d / "rig.ini"


def read_rig(path) -> RigConfig:
    """Load a rig from ``rig.ini`` (or a directory containing one)."""
    p = Path(path)
    if p.is_dir():
        p = p / "rig.ini"
    if not p.exists():
        raise ConfigurationError(f"rig file not found: {p}")
    cp = configparser.ConfigParser()
    cp.read(p)
    try:
        r = cp["rig"]
        parts = {}
        for cam in ("vnir", "swir"):
            sec = cp[cam]
            pattern, corr = read_sensor_config(p.parent / sec["sensor"])
            model = read_camera_model(p.parent / sec["camera"])
            parts[cam] = (pattern, corr, model, (sec.getint("height"), sec.getint("width")))
        return RigConfig(
            vnir_pattern=parts["vnir"][0],
            vnir_correction=parts["vnir"][1],
            swir_pattern=parts["swir"][0],
            swir_correction=parts["swir"][1],
            vnir_model=parts["vnir"][2],
            swir_model=parts["swir"][2],
            vnir_shape=parts["vnir"][3],
            swir_shape=parts["swir"][3],
            out_dims=(r.getint("out_height"), r.getint("out_width")),
            frame_rate_hz=r.getfloat("frame_rate_hz", 10.0),
            spectrometer_rates_hz=tuple(float(v) for v in r.get("spectrometer_rates_hz", "4 2").split()),
            name=r.get("name", p.parent.name),
        )
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigurationError(f"{p}: {exc}") from exc


def _packaged(name: str) -> RigConfig:
    with resources.as_file(resources.files("hyperdrive") / "data" / name / "rig.ini") as p:
        return read_rig(p)


def default_rig() -> RigConfig:
    """Full-size rig: 1012 x 1666 x 33 composite."""
    return _packaged("rig_default")


def test_rig() -> RigConfig:
    """Desk-scale rig: 128 x 128 composite, both sensors 128 x 128."""
    return _packaged("rig_test")


def desk_rig(height: int = 128, width: int = 128) -> RigConfig:
    """Test-rig optics on sensors and composite of ``height x width``."""
    vp, vc = vnir_sensor()
    sp, sc = swir_sensor()
    shape = (int(height), int(width))
    return RigConfig(
        vp, vc, sp, sc,
        CameraModel.from_fov(*shape, k1=-0.1, k2=0.01, homography=_similarity(1.03, 0.6, shape, shape)),
        CameraModel.from_fov(*shape, k1=-0.15, k2=0.02, homography=_similarity(1.05, -0.8, shape, shape)),
        shape, shape, shape, name=f"desk{shape[0]}x{shape[1]}",
    )


def identity_rig(size: int = 128) -> RigConfig:
    """Distortion-free, unregistered rig: sensors coincide with the RGB frame."""
    rig = test_rig()
    vn = CameraModel.from_fov(size, size)
    sw = CameraModel.from_fov(size, size)
    return replace(rig, vnir_model=vn, swir_model=sw, vnir_shape=(size, size),
                   swir_shape=(size, size), out_dims=(size, size), name="identity")


# --------------------------------------------------------------------------- shipped sensor tables


def vnir_sensor() -> tuple[MosaicPattern, SpectralCorrectionMatrix]:
    """Default 5x5 VNIR pattern and its 24x25 correction.

    Output bands are 24 evenly spaced centres on 660-900 nm. The raw array
    has one extra filter: the band at the middle centre is realized by two
    nearly coincident raw filters 3 nm apart, and the correction averages
    them back into one output band.
    """
    out_wl = np.linspace(*VNIR_RANGE_NM, 24)
    split = 12
    raw_wl = np.concatenate([out_wl[:split], [out_wl[split] - 1.5, out_wl[split] + 1.5],
                             out_wl[split + 1 :]])
    m = np.zeros((24, 25))
    for i in range(24):
        if i < split:
            m[i, i] = 1.0
        elif i == split:
            m[i, split] = m[i, split + 1] = 0.5
        else:
            m[i, i + 1] = 1.0
    layout = np.random.default_rng(2023).permutation(25).reshape(5, 5)
    pattern = MosaicPattern(layout, raw_wl, "vnir", VNIR_RANGE_NM)
    return pattern, SpectralCorrectionMatrix(m, out_wl, np.full(24, 12.0))


def swir_sensor() -> tuple[MosaicPattern, SpectralCorrectionMatrix]:
    """Default 3x3 SWIR pattern; bands are denser below 1400 nm."""
    wl = np.array([1100.0, 1150.0, 1200.0, 1250.0, 1300.0, 1350.0, 1450.0, 1550.0, 1650.0])
    layout = np.random.default_rng(2024).permutation(9).reshape(3, 3)
    pattern = MosaicPattern(layout, wl, "swir", SWIR_RANGE_NM)
    return pattern, SpectralCorrectionMatrix.identity(wl, np.full(9, 25.0))


def _similarity(scale, angle_deg, src_shape, dst_shape) -> Homography:
    """Scale + rotation about the centres of the two rasters."""
    a = np.radians(angle_deg)
    sc = np.array([(src_shape[1] - 1) / 2, (src_shape[0] - 1) / 2])
    dc = np.array([(dst_shape[1] - 1) / 2, (dst_shape[0] - 1) / 2])
    r = scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    t = dc - r @ sc
    h = np.eye(3)
    h[:2, :2] = r
    h[:2, 2] = t
    return Homography(h)


def build_packaged_rigs(root) -> None:
    """Regenerate the rig directories shipped in ``hyperdrive/data``."""
    root = Path(root)
    vp, vc = vnir_sensor()
    sp, sc = swir_sensor()

    out = (1012, 1666)
    vshape, sshape = (1085, 1785), (507, 834)
    hv = _similarity(0.95, 0.3, vshape, out)
    hs = _similarity(2.0, -0.4, sshape, out)
    full = RigConfig(
        vp, vc, sp, sc,
        CameraModel.from_fov(*vshape, k1=-0.08, k2=0.01, homography=hv),
        CameraModel.from_fov(*sshape, k1=-0.12, k2=0.02, homography=hs),
        vshape, sshape, out, name="default",
    )
    write_rig(full, root / "rig_default")

    write_rig(replace(desk_rig(128, 128), name="test"), root / "rig_test")
