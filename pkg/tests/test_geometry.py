import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperdrive.errors import ConvergenceError, EstimationError, InvalidArgumentError
from hyperdrive.geometry import (
    CameraModel,
    CorrespondenceSet,
    Homography,
    distort,
    estimate_homography,
    read_camera_model,
    read_correspondences,
    undistort,
    undistort_plane,
    warp_plane,
    write_camera_model,
    write_correspondences,
)


def model(k1=0.0, k2=0.0, h=64, w=80):
    return CameraModel.from_fov(h, w, 25.0, k1, k2)


def normalized(h):
    h = np.asarray(h, float)
    return h / h[2, 2]


def random_h(rng, cond_max=100.0):
    while True:
        h = np.eye(3) + rng.normal(0, 0.05, (3, 3))
        h[2, :2] *= 0.01
        h[:2, 2] = rng.uniform(-10, 10, 2)
        if np.linalg.cond(h) <= cond_max:
            return h


# --------------------------------------------------------------------------- distortion


def test_distort_zero_coefficients_is_identity(rng):
    pts = rng.uniform(0, 80, (50, 2))
    assert np.array_equal(distort(pts, model()), pts)


def test_principal_point_is_fixed():
    m = model(-0.2, 0.05)
    assert np.allclose(distort([m.cx, m.cy], m), [m.cx, m.cy], atol=0, rtol=0)


def test_unit_normalized_point_scales_by_one_plus_k1():
    m = model(-0.1)
    q = distort([m.cx + m.fx, m.cy], m)
    assert q[0] == pytest.approx(m.cx + 0.9 * m.fx, abs=1e-12)
    assert q[1] == pytest.approx(m.cy, abs=1e-12)


def test_undistort_identity_without_distortion(rng):
    pts = rng.uniform(0, 80, (10, 2))
    assert np.array_equal(undistort(pts, model()), pts)


def test_round_trip_inside_fov():
    m = model(-0.1, 0.01)
    rr, cc = np.mgrid[0:64:3, 0:80:3].astype(float)
    p = np.stack([cc, rr], axis=-1)
    back = undistort(distort(p, m), m)
    assert np.max(np.abs(back - p)) <= 1e-6


def test_gross_distortion_at_corner_fails_to_converge():
    m = model(-10.0)
    corner = distort([0.0, 0.0], model())  # ideal corner pixel
    with pytest.raises(ConvergenceError) as info:
        undistort(corner, m)
    assert info.value.residual > 1e-8


def test_undistort_rejects_bad_tolerance():
    with pytest.raises(InvalidArgumentError):
        undistort([1.0, 1.0], model(-0.1), tol=0.0)


@given(k1=st.floats(-0.3, 0.3), k2=st.floats(-0.05, 0.05),
       u=st.floats(0, 79), v=st.floats(0, 63))
def test_round_trip_property(k1, k2, u, v):
    m = model(k1, k2)
    p = np.array([u, v])
    assert np.max(np.abs(undistort(distort(p, m), m) - p)) <= 1e-6


# --------------------------------------------------------------------------- homography estimation


def test_unit_square_identity():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    h = estimate_homography(CorrespondenceSet(np.hstack([sq, sq])))
    assert np.allclose(h.h, np.eye(3), atol=1e-10)


def test_pure_translation(rng):
    src = rng.uniform(0, 50, (6, 2))
    h = estimate_homography(CorrespondenceSet(np.hstack([src, src + [5, 3]])))
    assert np.allclose(h.h, Homography.translation(5, 3).h, atol=1e-9)


def test_random_homography_recovered(rng):
    for _ in range(10):
        H = random_h(rng)
        src = rng.uniform(0, 100, (12, 2))
        dst = Homography(H).apply(src)
        est = estimate_homography(CorrespondenceSet(np.hstack([src, dst])))
        assert np.linalg.norm(est.h - normalized(H)) <= 1e-8
        assert est.residual_px < 1e-8


def test_too_few_pairs():
    with pytest.raises(EstimationError):
        estimate_homography(CorrespondenceSet(np.zeros((3, 4))))


def test_collinear_points_rejected():
    src = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(EstimationError):
        estimate_homography(CorrespondenceSet(np.hstack([src, src])))


def test_coincident_points_rejected():
    with pytest.raises(EstimationError):
        estimate_homography(CorrespondenceSet(np.ones((5, 4))))


@given(s=st.floats(0.1, 10.0), seed=st.integers(0, 1000))
def test_scale_invariance(s, seed):
    rng = np.random.default_rng(seed)
    H = random_h(rng)
    src = rng.uniform(0, 100, (10, 2))
    dst = Homography(H).apply(src)
    h1 = estimate_homography(CorrespondenceSet(np.hstack([src, dst]))).h
    h2 = estimate_homography(CorrespondenceSet(np.hstack([s * src, s * dst]))).h
    S = np.diag([s, s, 1.0])
    conj = normalized(S @ h1 @ np.linalg.inv(S))
    assert np.allclose(h2, conj, rtol=0, atol=1e-8 * max(1.0, np.abs(conj).max()))


# --------------------------------------------------------------------------- warping


def bilinear_oracle(src, x, y):
    """Per-pixel bilinear lookup written independently of the library."""
    h, w = src.shape
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        return None
    x0 = min(int(np.floor(x)), w - 2)
    y0 = min(int(np.floor(y)), h - 2)
    ax, ay = x - x0, y - y0
    return ((1 - ay) * ((1 - ax) * src[y0, x0] + ax * src[y0, x0 + 1])
            + ay * ((1 - ax) * src[y0 + 1, x0] + ax * src[y0 + 1, x0 + 1]))


def test_identity_warp_is_exact(rng):
    plane = rng.random((20, 30))
    out, valid = warp_plane(plane, Homography.identity(), 20, 30)
    assert valid.all()
    assert np.array_equal(out, plane)


def test_integer_translation_nearest_is_shifted_copy(rng):
    plane = rng.random((20, 30))
    out, valid = warp_plane(plane, Homography.translation(3, 2), 20, 30, "nearest")
    assert np.array_equal(out[2:, 3:], plane[:-2, :-3])
    assert not valid[:2].any() and not valid[:, :3].any()
    assert np.all(out[~valid] == 0)


def test_random_warp_matches_pointwise_oracle(scene64, rng):
    plane = scene64.radiance([800.0])[..., 0]
    H = random_h(rng)
    out, valid = warp_plane(plane, Homography(H), 64, 64)
    inv = np.linalg.inv(H)
    for r in range(0, 64, 3):
        for c in range(0, 64, 3):
            p = inv @ [c, r, 1.0]
            ref = bilinear_oracle(plane, p[0] / p[2], p[1] / p[2])
            if ref is None:
                assert not valid[r, c] or abs(out[r, c] - plane[int(round(p[1] / p[2])), int(round(p[0] / p[2]))]) < 1
                continue
            assert valid[r, c]
            assert out[r, c] == pytest.approx(ref, abs=1e-9)


def test_singular_homography_rejected():
    with pytest.raises(InvalidArgumentError):
        warp_plane(np.zeros((4, 4)), Homography(np.ones((3, 3))), 4, 4)


def test_composition_matches_product():
    rr, cc = np.mgrid[0:64, 0:64].astype(float)
    plane = np.sin(rr / 9.0) + np.cos(cc / 11.0)  # smooth field
    h1 = Homography(np.array([[1.0, 0.0, 1.5], [0.0, 1.0, -0.5], [0, 0, 1]]))
    h2 = Homography(np.array([[1.0, 0.0, -0.75], [0.0, 1.0, 1.25], [0, 0, 1]]))
    a, va = warp_plane(plane, h1, 64, 64)
    b, vb = warp_plane(a, h2, 64, 64)
    c, vc = warp_plane(plane, h2 @ h1, 64, 64)
    # translations by half-pixels: two-step bilinear smooths more than one step
    inner = vb & vc
    inner[:4] = inner[-4:] = False
    inner[:, :4] = inner[:, -4:] = False
    assert np.max(np.abs(b[inner] - c[inner])) < 5e-3
    # pure integer composition must agree to rounding
    t1, t2 = Homography.translation(2, 1), Homography.translation(-1, 3)
    a, _ = warp_plane(plane, t1, 64, 64)
    b, vb = warp_plane(a, t2, 64, 64)
    c, vc = warp_plane(plane, t2 @ t1, 64, 64)
    assert np.max(np.abs(b[vb & vc] - c[vb & vc])) <= 1e-6


def test_undistort_plane_masks_outside_pixels(rng):
    m = CameraModel.from_fov(40, 40, 25.0, k1=0.2)
    plane = rng.random((40, 40))
    out, valid = undistort_plane(plane, m)
    assert out.shape == (40, 40)
    assert valid[20, 20]
    assert np.all(out[~valid] == 0)


# --------------------------------------------------------------------------- files


def test_camera_model_file_round_trip(tmp_path):
    m = CameraModel.from_fov(128, 160, 25.0, -0.1, 0.01, Homography(np.diag([1.1, 0.9, 1.0])))
    write_camera_model(tmp_path / "cam.ini", m)
    back = read_camera_model(tmp_path / "cam.ini")
    assert np.array_equal(back.homography.h, m.homography.h)
    assert (back.fx, back.fy, back.cx, back.cy, back.k1, back.k2) == (m.fx, m.fy, m.cx, m.cy, m.k1, m.k2)


def test_correspondence_file_round_trip(tmp_path, rng):
    c = CorrespondenceSet(rng.random((9, 4)), "vnir", "rgb")
    write_correspondences(tmp_path / "c.txt", c, header=["test"])
    back = read_correspondences(tmp_path / "c.txt")
    assert np.array_equal(back.pairs, c.pairs)
