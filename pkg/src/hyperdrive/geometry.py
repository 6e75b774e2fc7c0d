"""Radial distortion, homography estimation and inverse-mapping warps.

Pixel coordinates are ``(x, y)`` = ``(column, row)`` throughout, with pixel
centres on integer positions. Images are indexed ``[row, col]`` and stacks
``[band, row, col]``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConvergenceError,
    EstimationError,
    InvalidArgumentError,
)

__all__ = [
    "CameraModel",
    "Homography",
    "CorrespondenceSet",
    "Remap",
    "distort",
    "undistort",
    "estimate_homography",
    "warp_plane",
    "undistort_plane",
    "homography_remap",
    "undistort_remap",
    "read_camera_model",
    "write_camera_model",
    "camera_model_text",
    "read_correspondences",
    "write_correspondences",
]


@dataclass(frozen=True)
class Homography:
    """Projective map between two image planes, scaled so ``h[2, 2] == 1``."""

    h: np.ndarray
    residual_px: float = 0.0

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise InvalidArgumentError("homography has non-finite entries")
        if abs(h[2, 2]) > 1e-12:
            h = h / h[2, 2]
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

    def is_invertible(self) -> bool:
        scale = np.abs(self.h).max()
        return abs(np.linalg.det(self.h)) > 1e-12 * scale**3

    def inverse(self) -> "Homography":
        if not self.is_invertible():
            raise InvalidArgumentError("homography is singular")
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, points) -> np.ndarray:
        """Map ``(..., 2)`` points; returns NaN where the point goes to infinity."""
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        h = self.h
        w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
            v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
        bad = np.abs(w) < 1e-15
        u = np.where(bad, np.nan, u)
        v = np.where(bad, np.nan, v)
        return np.stack([u, v], axis=-1)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with two-term radial distortion.

    ``homography`` maps this camera's undistorted pixel plane into the RGB
    reference plane.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    fov_deg: float = 25.0
    homography: Homography = field(default_factory=Homography.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")

    @classmethod
    def from_fov(cls, height: int, width: int, fov_deg: float = 25.0, k1=0.0, k2=0.0,
                 homography: Homography | None = None) -> "CameraModel":
        """Square-pixel model whose horizontal field of view spans ``width``."""
        f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, k1, k2, fov_deg,
                   homography or Homography.identity())

    @property
    def is_distortion_free(self) -> bool:
        return self.k1 == 0.0 and self.k2 == 0.0

    def with_homography(self, h: Homography) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.fov_deg, h)


@dataclass
class CorrespondenceSet:
    pairs: np.ndarray  # (n, 4): sx sy tx ty
    source_id: str = "source"
    target_id: str = "target"

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=float).reshape(-1, 4)

    @property
    def source(self) -> np.ndarray:
        return self.pairs[:, :2]

    @property
    def target(self) -> np.ndarray:
        return self.pairs[:, 2:]

    def __len__(self):
        return len(self.pairs)


def _radial_scale(x, y, k1, k2):
    r2 = x * x + y * y
    return 1.0 + k1 * r2 + k2 * r2 * r2


def distort(point, model: CameraModel) -> np.ndarray:
    """Apply the radial model to ideal pixel coordinates ``(..., 2)``."""
    p = np.asarray(point, dtype=float)
    if model.is_distortion_free:
        return p.copy()
    x = (p[..., 0] - model.cx) / model.fx
    y = (p[..., 1] - model.cy) / model.fy
    s = _radial_scale(x, y, model.k1, model.k2)
    return np.stack([model.fx * x * s + model.cx, model.fy * y * s + model.cy], axis=-1)


def undistort(point, model: CameraModel, tol: float = 1e-8, max_iter: int = 25) -> np.ndarray:
    """Invert :func:`distort` by fixed-point iteration.

    Parameters
    ----------
    point : array_like
        Distorted pixel coordinates, shape ``(2,)`` or ``(..., 2)``.
    model : CameraModel
    tol : float
        Maximum allowed ``|distort(p) - point|`` in pixels.
    max_iter : int
        Iteration cap; exceeding it raises :class:`ConvergenceError` carrying
        the worst residual.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    q = np.asarray(point, dtype=float)
    if model.is_distortion_free:
        return q.copy()
    xd = (q[..., 0] - model.cx) / model.fx
    yd = (q[..., 1] - model.cy) / model.fy
    x, y = xd.copy(), yd.copy()
    residual = np.inf
    for it in range(max_iter + 1):
        s = _radial_scale(x, y, model.k1, model.k2)
        ex = (x * s - xd) * model.fx
        ey = (y * s - yd) * model.fy
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.hypot(ex, ey)
        residual = float(np.max(err)) if err.size else 0.0
        if residual <= tol:
            return np.stack([x * model.fx + model.cx, y * model.fy + model.cy], axis=-1)
        if it == max_iter or not np.isfinite(residual):
            break
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x = xd / s
            y = yd / s
    raise ConvergenceError(
        f"undistortion did not converge (residual {residual:.3g} px)",
        residual=residual,
        iterations=max_iter,
    )


def _hartley(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((points - centroid) ** 2, axis=1)))
    if rms <= 0:
        raise EstimationError("degenerate configuration: all points coincide")
    s = np.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _to_h(points, t):
    ph = np.column_stack([points, np.ones(len(points))])
    out = ph @ t.T
    return out[:, :2] / out[:, 2:3]


def estimate_homography(c: CorrespondenceSet) -> Homography:
    """Normalized DLT fit of the homography taking source points to targets."""
    if len(c) < 4:
        raise EstimationError(f"need at least 4 correspondences, got {len(c)}")
    src, dst = c.source, c.target
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise EstimationError("correspondences contain non-finite coordinates")
    ts, tt = _hartley(src), _hartley(dst)
    a, b = _to_h(src, ts), _to_h(dst, tt)
    for pts in (a, b):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1.0):
            raise EstimationError("degenerate configuration: points are collinear")

    n = len(a)
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    design = np.empty((2 * n, 9))
    design[0::2] = np.column_stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u])
    design[1::2] = np.column_stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(design)
    # 2n x 9 with n >= 4: the null space must be exactly one-dimensional
    if sv[7] <= 1e-9 * sv[0]:
        raise EstimationError("degenerate configuration: homography is not determined")

    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tt) @ hn @ ts
    if abs(h[2, 2]) < 1e-12 * np.abs(h).max():
        h = h / np.linalg.norm(h)
    hom = Homography(h)
    if not hom.is_invertible():
        raise EstimationError("estimated homography is singular")
    proj = hom.apply(src)
    residual = float(np.max(np.hypot(*(proj - dst).T)))
    return Homography(hom.h, residual_px=residual)


class Remap:
    """Precomputed inverse map: for every output pixel, where to sample the source.

    Build once, apply to any number of planes or ``(B, H, W)`` stacks that
    share the source shape.
    """

    def __init__(self, src_x, src_y, src_shape, interpolation="bilinear"):
        if interpolation not in ("bilinear", "nearest"):
            raise InvalidArgumentError(f"unknown interpolation {interpolation!r}")
        self.out_shape = np.shape(src_x)
        self.src_shape = tuple(src_shape)
        self.interpolation = interpolation
        sh, sw = self.src_shape
        x = np.asarray(src_x, dtype=float).ravel()
        y = np.asarray(src_y, dtype=float).ravel()
        finite = np.isfinite(x) & np.isfinite(y)
        x = np.where(finite, x, -1.0)
        y = np.where(finite, y, -1.0)
        if interpolation == "nearest":
            c = np.floor(x + 0.5)
            r = np.floor(y + 0.5)
            valid = finite & (c >= 0) & (c <= sw - 1) & (r >= 0) & (r <= sh - 1)
            c = np.clip(c, 0, sw - 1).astype(np.intp)
            r = np.clip(r, 0, sh - 1).astype(np.intp)
            self.idx = r * sw + c
        else:
            eps = 1e-9
            valid = finite & (x >= -eps) & (x <= sw - 1 + eps) & (y >= -eps) & (y <= sh - 1 + eps)
            x = np.clip(x, 0.0, sw - 1)
            y = np.clip(y, 0.0, sh - 1)
            c0 = np.minimum(np.floor(x), max(sw - 2, 0)).astype(np.intp)
            r0 = np.minimum(np.floor(y), max(sh - 2, 0)).astype(np.intp)
            fx = x - c0
            fy = y - r0
            c1 = np.minimum(c0 + 1, sw - 1)
            r1 = np.minimum(r0 + 1, sh - 1)
            self.idx00 = r0 * sw + c0
            self.idx01 = r0 * sw + c1
            self.idx10 = r1 * sw + c0
            self.idx11 = r1 * sw + c1
            self.fx, self.fy = fx, fy
        self.valid = valid.reshape(self.out_shape)
        self._invalid_flat = ~valid

    def apply(self, src, fill: float = 0.0) -> np.ndarray:
        src = np.asarray(src)
        if src.shape[-2:] != self.src_shape:
            raise InvalidArgumentError(f"source shape {src.shape[-2:]} != {self.src_shape}")
        lead = src.shape[:-2]
        flat = src.reshape(lead + (-1,))
        if self.interpolation == "nearest":
            out = flat[..., self.idx].astype(np.result_type(src.dtype, np.float64), copy=True)
        else:
            fx, fy = self.fx, self.fy
            # written as convex combinations so integer-aligned samples are exact
            top = (1.0 - fx) * flat[..., self.idx00] + fx * flat[..., self.idx01]
            bot = (1.0 - fx) * flat[..., self.idx10] + fx * flat[..., self.idx11]
            out = (1.0 - fy) * top + fy * bot
        out[..., self._invalid_flat] = fill
        return out.reshape(lead + self.out_shape)

    def apply_last(self, src, fill: float = 0.0) -> np.ndarray:
        """Like :meth:`apply` for channels-last ``(H, W, C)`` sources; returns ``(h, w, C)``."""
        src = np.asarray(src)
        if src.shape[:2] != self.src_shape:
            raise InvalidArgumentError(f"source shape {src.shape[:2]} != {self.src_shape}")
        flat = src.reshape((-1,) + src.shape[2:])
        if self.interpolation == "nearest":
            out = flat[self.idx].astype(np.result_type(src.dtype, np.float64), copy=True)
        else:
            fx = self.fx.reshape((-1,) + (1,) * (src.ndim - 2))
            fy = self.fy.reshape(fx.shape)
            top = (1.0 - fx) * flat[self.idx00] + fx * flat[self.idx01]
            bot = (1.0 - fx) * flat[self.idx10] + fx * flat[self.idx11]
            out = (1.0 - fy) * top + fy * bot
        out[self._invalid_flat] = fill
        return out.reshape(self.out_shape + src.shape[2:])


def homography_remap(h: Homography, src_shape, out_height: int, out_width: int,
                     interpolation: str = "bilinear") -> Remap:
    """Remap that pulls source pixels through ``h`` into an output raster."""
    inv = h.inverse()
    rr, cc = np.mgrid[0:out_height, 0:out_width].astype(float)
    src = inv.apply(np.stack([cc, rr], axis=-1))
    return Remap(src[..., 0], src[..., 1], src_shape, interpolation)


def undistort_remap(model: CameraModel, shape, interpolation: str = "bilinear") -> Remap:
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    q = distort(np.stack([cc, rr], axis=-1), model)
    return Remap(q[..., 0], q[..., 1], shape, interpolation)


def warp_plane(plane, h: Homography, out_height: int, out_width: int,
               interpolation: str = "bilinear", fill: float = 0.0):
    """Inverse-mapping warp of a plane (or ``(B, H, W)`` stack) through ``h``.

    Returns
    -------
    image : ndarray
        Warped data; out-of-bounds samples hold ``fill``.
    valid : ndarray of bool
        ``True`` where the sample fell inside the source.
    """
    if not h.is_invertible():
        raise InvalidArgumentError("cannot warp through a singular homography")
    plane = np.asarray(plane)
    remap = homography_remap(h, plane.shape[-2:], out_height, out_width, interpolation)
    return remap.apply(plane, fill), remap.valid.copy()


def undistort_plane(plane, model: CameraModel, interpolation: str = "bilinear", fill: float = 0.0):
    """Resample a distorted plane (or stack) onto the ideal pixel grid."""
    plane = np.asarray(plane)
    if model.is_distortion_free:
        return plane.astype(np.float64, copy=True), np.ones(plane.shape[-2:], dtype=bool)
    remap = undistort_remap(model, plane.shape[-2:], interpolation)
    return remap.apply(plane, fill), remap.valid.copy()


# --------------------------------------------------------------------------- files


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def read_camera_model(path) -> CameraModel:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    sec = cp["camera"]
    h = _floats(sec.get("homography", "1 0 0 0 1 0 0 0 1"))
    if len(h) != 9:
        raise InvalidArgumentError(f"{path}: homography needs 9 values")
    return CameraModel(
        fx=sec.getfloat("fx"),
        fy=sec.getfloat("fy"),
        cx=sec.getfloat("cx"),
        cy=sec.getfloat("cy"),
        k1=sec.getfloat("k1", 0.0),
        k2=sec.getfloat("k2", 0.0),
        fov_deg=sec.getfloat("fov_deg", 25.0),
        homography=Homography(np.array(h).reshape(3, 3)),
    )


def camera_model_text(model: CameraModel) -> str:
    h = " ".join(repr(float(v)) for v in model.homography.h.ravel())
    lines = [
        "[camera]",
        f"fx = {float(model.fx)!r}",
        f"fy = {float(model.fy)!r}",
        f"cx = {float(model.cx)!r}",
        f"cy = {float(model.cy)!r}",
        f"k1 = {float(model.k1)!r}",
        f"k2 = {float(model.k2)!r}",
        f"fov_deg = {float(model.fov_deg)!r}",
        f"homography = {h}",
    ]
    return "\n".join(lines) + "\n"


def write_camera_model(path, model: CameraModel) -> None:
    Path(path).write_text(camera_model_text(model))


def read_correspondences(path, source_id: str = "source", target_id: str = "target") -> CorrespondenceSet:
    """Read ``sx sy tx ty`` lines; ``#`` starts a comment."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size and data.shape[1] != 4:
        raise InvalidArgumentError(f"{path}: expected 4 columns, got {data.shape[1]}")
    return CorrespondenceSet(data.reshape(-1, 4), source_id, target_id)


def write_correspondences(path, c: CorrespondenceSet, header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines.append(f"# source={c.source_id} target={c.target_id}")
    lines += [" ".join(repr(float(v)) for v in row) for row in c.pairs]
    Path(path).write_text("\n".join(lines) + "\n")
