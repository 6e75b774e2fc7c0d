"""Capture-to-dataset processing and the throughput benchmark."""

from __future__ import annotations

import configparser
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RigConfig, desk_rig, read_rig
from .cube import DataCube, compose
from .dataset import DEFAULT_TAGS, SampleRecord, SceneTags, create_dataset, read_mask, write_sample
from .errors import ConfigurationError, HyperdriveError
from .geometry import (
    Remap,
    estimate_homography,
    homography_remap,
    read_camera_model,
    read_correspondences,
    undistort_remap,
)
from .mosaic import BandStack, MosaicFrame, demosaic, read_sensor_config
from .radiometry import SpectrometerReading, stitch, to_reflectance
from .sync import SyncPolicy, Synchronizer, downsample
from .wire import decode_message, encode_cube, iter_records, to_timed

__all__ = [
    "PipelineConfig",
    "load_pipeline_config",
    "CubeProcessor",
    "RunResult",
    "run_pipeline",
    "BenchReport",
    "bench",
    "worker_count",
    "STAGES",
]

log = logging.getLogger("hyperdrive.pipeline")

STAGES = ("demosaic", "undistort", "compose", "reflectance", "encode")


def worker_count(requested: Optional[int] = None) -> int:
    """Pool size: ``requested``, capped by ``HYPERDRIVE_THREADS`` if set."""
    n = requested or os.cpu_count() or 1
    env = os.environ.get("HYPERDRIVE_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigurationError(f"HYPERDRIVE_THREADS={env!r} is not an integer") from None
        if cap < 1:
            raise ConfigurationError("HYPERDRIVE_THREADS must be at least 1")
        n = min(n, cap)
    return max(1, n)


# --------------------------------------------------------------------------- configuration


@dataclass
class PipelineConfig:
    """Resolved run settings. Paths override the corresponding rig parts."""

    rig: RigConfig
    out_dir: Path
    window_ns: int = 50_000_000
    rate_hz: Optional[float] = None
    threads: Optional[int] = None
    labels: Optional[np.ndarray] = None
    tags: SceneTags = DEFAULT_TAGS


_PATH_KEYS = ("rig", "vnir_sensor", "swir_sensor", "vnir_camera", "swir_camera",
              "vnir_correspondences", "swir_correspondences", "labels")


def load_pipeline_config(path=None, **overrides) -> PipelineConfig:
    """Merge an optional ``[pipeline]`` INI file with keyword overrides.

    Keywords whose value is ``None`` do not override. Every referenced file
    is checked and loaded here, before any frame is touched.

    Raises
    ------
    ConfigurationError
        Missing files, unparsable values or an inconsistent rig.
    """
    values: dict = {}
    base = Path(".")
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"pipeline config not found: {p}")
        cp = configparser.ConfigParser()
        cp.read(p)
        if "pipeline" not in cp:
            raise ConfigurationError(f"{p}: missing [pipeline] section")
        values.update(cp["pipeline"])
        base = p.parent
        for k in _PATH_KEYS:
            if k in values:
                values[k] = str(base / values[k])
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "out" not in values:
        raise ConfigurationError("no output directory given")
    for k in _PATH_KEYS:
        if k in values and not Path(values[k]).exists():
            raise ConfigurationError(f"{k}: file not found: {values[k]}")
    try:
        rig = read_rig(values["rig"]) if "rig" in values else desk_rig()
        for cam in ("vnir", "swir"):
            if f"{cam}_sensor" in values:
                pattern, corr = read_sensor_config(values[f"{cam}_sensor"])
                rig = replace(rig, **{f"{cam}_pattern": pattern, f"{cam}_correction": corr})
            if f"{cam}_camera" in values:
                rig = replace(rig, **{f"{cam}_model": read_camera_model(values[f"{cam}_camera"])})
            if f"{cam}_correspondences" in values:
                h = estimate_homography(read_correspondences(values[f"{cam}_correspondences"]))
                model = getattr(rig, f"{cam}_model")
                rig = replace(rig, **{f"{cam}_model": model.with_homography(h)})
        window_ns = int(round(float(values.get("window_ms", 50.0)) * 1e6))
        rate = values.get("rate_hz")
        threads = values.get("threads")
        labels = read_mask(values["labels"]) if "labels" in values else None
        tags = values.get("tags", DEFAULT_TAGS)
        if isinstance(tags, str):
            tags = SceneTags.from_text(tags.replace(",", "\n"))
    except HyperdriveError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc
    except (ValueError, OSError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if labels is not None and labels.shape != tuple(rig.out_dims):
        raise ConfigurationError(f"label image {labels.shape} does not match composite {rig.out_dims}")
    if window_ns <= 0:
        raise ConfigurationError("sync window must be positive")
    return PipelineConfig(rig, Path(values["out"]), window_ns,
                          None if rate in (None, "") else float(rate),
                          None if threads in (None, "") else int(threads), labels, tags)


# --------------------------------------------------------------------------- per-frame processing


class CubeProcessor:
    """Frame-invariant state for one rig: all resampling maps are built once."""

    def __init__(self, rig: RigConfig):
        self.rig = rig
        out_h, out_w = rig.out_dims
        self.undist = {}
        self.warp = {}
        for cam in ("vnir", "swir"):
            model = getattr(rig, f"{cam}_model")
            shape = tuple(getattr(rig, f"{cam}_shape"))
            self.undist[cam] = None if model.is_distortion_free else undistort_remap(model, shape)
            self.warp[cam] = homography_remap(model.homography, shape, out_h, out_w)

    def demosaic(self, cam: str, frame: MosaicFrame) -> BandStack:
        shape = tuple(getattr(self.rig, f"{cam}_shape"))
        if frame.values.shape != shape:
            raise ConfigurationError(f"{cam} frame {frame.values.shape} does not match sensor {shape}")
        pattern = getattr(self.rig, f"{cam}_pattern")
        if frame.pattern_id and frame.pattern_id != pattern.name:
            raise ConfigurationError(f"frame pattern {frame.pattern_id!r} is not {pattern.name!r}")
        return demosaic(frame, pattern, getattr(self.rig, f"{cam}_correction"))

    def undistort(self, cam: str, stack: BandStack) -> BandStack:
        remap: Optional[Remap] = self.undist[cam]
        if remap is None:
            return stack
        return BandStack(remap.apply(stack.bands), stack.wavelengths_nm, stack.fwhm_nm,
                         stack.timestamp_ns, remap.valid & stack.valid)

    def compose(self, vnir: BandStack, swir: BandStack) -> DataCube:
        r = self.rig
        return compose(vnir, swir, r.vnir_model.homography, r.swir_model.homography, r.out_dims,
                       remaps=(self.warp["vnir"], self.warp["swir"]))

    def radiance_cube(self, vnir: MosaicFrame, swir: MosaicFrame) -> DataCube:
        v = self.undistort("vnir", self.demosaic("vnir", vnir))
        s = self.undistort("swir", self.demosaic("swir", swir))
        return self.compose(v, s)

    def reflectance_cube(self, vnir: MosaicFrame, swir: MosaicFrame, visnir: SpectrometerReading,
                         nir: SpectrometerReading) -> DataCube:
        return to_reflectance(self.radiance_cube(vnir, swir), stitch(visnir, nir))


def rgb_to_uint8(cube: DataCube) -> np.ndarray:
    """Camera message (channels ascending in wavelength: B, G, R) to an RGB image."""
    if cube.channels != 3:
        raise ConfigurationError(f"RGB message has {cube.channels} channels")
    rgb = np.asarray(cube.data[..., ::-1], dtype=np.float64)
    return np.round(np.clip(np.nan_to_num(rgb), 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class RunResult:
    processed: int = 0
    dropped: int = 0
    errored: int = 0
    stale: int = 0
    errors: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.errored == 0 else 1

    def text(self) -> str:
        lines = [f"processed\t{self.processed}", f"dropped\t{self.dropped}",
                 f"errored\t{self.errored}", f"stale_references\t{self.stale}"]
        lines += [f"error\t{e}" for e in self.errors]
        return "\n".join(lines) + "\n"


def _sample_id(pivot_ns: int) -> str:
    return f"t{pivot_ns:019d}"


def run_pipeline(cfg: PipelineConfig, capture_file) -> RunResult:
    """Process a capture file into a dataset under ``cfg.out_dir``.

    Records that fail to decode and tuples that fail to process are counted
    as errors and skipped. ``dropped`` counts messages that never reached a
    sample: evicted or unmatched by the synchronizer, still buffered at the
    end, or thinned out by ``rate_hz``. When a tuple has no fresh
    spectrometer packet the last one seen is reused and counted as stale;
    tuples arriving before any packet wait for the first one.
    """
    capture_file = Path(capture_file)
    if not capture_file.exists():
        raise ConfigurationError(f"capture file not found: {capture_file}")
    manifest = create_dataset(cfg.out_dir, rig_digest=cfg.rig.digest())
    proc = CubeProcessor(cfg.rig)
    policy = SyncPolicy(window_ns=cfg.window_ns)
    sync = Synchronizer(policy)
    result = RunResult()
    last_ref: dict = {}
    last_kept: list = []
    waiting: list = []
    labels = cfg.labels
    if labels is None:
        labels = np.zeros(tuple(cfg.rig.out_dims), dtype=np.int64)

    def work(tup, refs):
        rgb_msg = tup.members["rgb"].payload
        if not isinstance(rgb_msg, DataCube):
            raise ConfigurationError("rgb stream carries no image")
        cube = proc.reflectance_cube(tup.members["vnir"].payload, tup.members["swir"].payload,
                                     refs["visnir"], refs["nir"])
        rgb = rgb_to_uint8(rgb_msg)
        if rgb.shape[:2] != cube.shape[:2]:
            raise ConfigurationError(f"RGB {rgb.shape[:2]} does not match composite {cube.shape[:2]}")
        cube = replace(cube, data=cube.data.astype(np.float32), frame_id="composite")
        rec = SampleRecord(_sample_id(tup.pivot_ns), cube, rgb, labels, cfg.tags,
                           refs["visnir"], refs["nir"], tup.pivot_ns)
        write_sample(manifest, rec)

    def handle(tup, pool, pending):
        if cfg.rate_hz is not None:
            if downsample(last_kept + [tup], cfg.rate_hz, cfg.window_ns)[-1] is not tup:
                result.dropped += len(tup.messages())
                return
            last_kept[:] = [tup]
        for s, msg in tup.attachments.items():
            if msg is not None:
                last_ref[s] = msg.payload
        if any(tup.stale.values()):
            result.stale += 1
        if any(s not in last_ref for s in policy.attached_streams):
            # no reference seen yet: wait for the first one
            waiting.append(tup)
            return
        for early in waiting:
            result.stale += 1
            pending.append((early, pool.submit(work, early, dict(last_ref))))
        waiting.clear()
        pending.append((tup, pool.submit(work, tup, dict(last_ref))))

    def drain(pending, limit):
        while len(pending) > limit:
            tup, fut = pending.pop(0)
            try:
                fut.result()
                result.processed += 1
            except HyperdriveError as exc:
                result.errored += 1
                result.errors.append(f"tuple {tup.pivot_ns}: {exc}")
                log.warning("tuple %d failed: %s", tup.pivot_ns, exc)

    workers = worker_count(cfg.threads)
    pending: list = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = iter_records(capture_file)
        while True:
            try:
                offset, body = next(records)
            except StopIteration:
                break
            except HyperdriveError as exc:  # truncated file: nothing after this is framed
                result.errored += 1
                result.errors.append(str(exc))
                break
            try:
                msg = to_timed(decode_message(body))
                tuples = sync.push(msg)
            except HyperdriveError as exc:
                result.errored += 1
                result.errors.append(f"record at offset {offset}: {exc}")
                log.warning("record at offset %d skipped: %s", offset, exc)
                continue
            for tup in tuples:
                handle(tup, pool, pending)
            drain(pending, 2 * workers)
        drain(pending, 0)
    for tup in waiting:
        missing = [s for s in policy.attached_streams if s not in last_ref]
        result.errored += 1
        result.errors.append(f"tuple {tup.pivot_ns}: no white reference from {', '.join(missing)}")
    stats = sync.stats()
    result.dropped += stats["dropped"] + stats["buffered"]
    (Path(cfg.out_dir) / "pipeline.log").write_text(result.text())
    return result


# --------------------------------------------------------------------------- benchmark


@dataclass
class BenchReport:
    frames: int
    height: int
    width: int
    channels: int
    stage_seconds: dict
    cube_bytes: int

    @property
    def total_seconds(self) -> float:
        return sum(self.stage_seconds.values())

    @property
    def core_seconds(self) -> float:
        """Demosaic through compose: the stages that build the cube."""
        return sum(self.stage_seconds[s] for s in ("demosaic", "undistort", "compose"))

    @property
    def core_mb_per_s(self) -> float:
        return self.frames * self.cube_bytes / 1e6 / self.core_seconds

    @property
    def mb_per_s(self) -> float:
        return self.frames * self.cube_bytes / 1e6 / self.total_seconds

    @property
    def cubes_per_s(self) -> float:
        return self.frames / self.total_seconds

    def text(self) -> str:
        lines = ["field\tvalue\tunit",
                 f"frames\t{self.frames}\tcount",
                 f"cube_shape\t{self.height}x{self.width}x{self.channels}\tpixels",
                 f"cube_bytes\t{self.cube_bytes}\tbytes"]
        for s in STAGES:
            t = self.stage_seconds[s]
            lines.append(f"stage_{s}\t{1e3 * t / self.frames:.3f}\tms/frame")
        lines += [f"core_throughput\t{self.core_mb_per_s:.1f}\tMB/s",
                  f"throughput\t{self.mb_per_s:.1f}\tMB/s",
                  f"cube_rate\t{self.cubes_per_s:.2f}\tcubes/s"]
        return "\n".join(lines) + "\n"


def bench(frames: int = 100, height: int = 128, width: int = 128, seed: int = 0,
          rig: Optional[RigConfig] = None) -> BenchReport:
    """Time each stage over ``frames`` synthetic frames processed in memory.

    The workload is fixed by ``seed``: one scene is rendered once and its
    mosaics are fed through every stage ``frames`` times. Throughput counts
    the bytes of the float64 composite cube produced per frame.
    """
    from .simgen import generate_scene, render_mosaic, spectrometer_reading

    if frames < 10:
        raise ConfigurationError("bench needs at least 10 frames")
    rig = rig or desk_rig(height, width)
    scene = generate_scene(seed, *rig.out_dims, 4)
    vn = render_mosaic(scene, rig.vnir_pattern, rig.vnir_model, rig.vnir_shape)
    sw = render_mosaic(scene, rig.swir_pattern, rig.swir_model, rig.swir_shape)
    ref = stitch(spectrometer_reading(scene, "visnir"), spectrometer_reading(scene, "nir"))
    proc = CubeProcessor(rig)
    t = dict.fromkeys(STAGES, 0.0)
    clock = time.perf_counter
    cube = None
    for _ in range(frames):
        t0 = clock()
        v = proc.demosaic("vnir", vn)
        s = proc.demosaic("swir", sw)
        t1 = clock()
        v = proc.undistort("vnir", v)
        s = proc.undistort("swir", s)
        t2 = clock()
        cube = proc.compose(v, s)
        t3 = clock()
        refl = to_reflectance(cube, ref)
        t4 = clock()
        encode_cube(refl, "f32")
        t5 = clock()
        for name, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4)):
            t[name] += dt
    return BenchReport(frames, cube.height, cube.width, cube.channels, t, cube.data.nbytes)
