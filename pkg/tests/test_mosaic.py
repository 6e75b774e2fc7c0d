import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hyperdrive.config import swir_sensor, vnir_sensor
from hyperdrive.errors import DegenerateInputError, InvalidArgumentError
from hyperdrive.geometry import CameraModel
from hyperdrive.mosaic import (
    BandStack,
    MosaicFrame,
    MosaicPattern,
    SparseBand,
    SpectralCorrectionMatrix,
    apply_spectral_correction,
    demosaic,
    extract_sparse_band,
    interpolate_all,
    interpolate_band,
    read_sensor_config,
    write_sensor_config,
)
from hyperdrive.simgen import generate_scene, render_mosaic


def pattern3(layout=None):
    layout = np.arange(9).reshape(3, 3) if layout is None else layout
    return MosaicPattern(layout, np.linspace(1100, 1650, 9), "p3", (1100, 1700))


# --------------------------------------------------------------------------- pattern


def test_pattern_rejects_non_bijection():
    with pytest.raises(InvalidArgumentError):
        MosaicPattern(np.zeros((3, 3), int), np.linspace(1100, 1650, 9))


def test_pattern_rejects_out_of_range_wavelength():
    wl = np.linspace(1100, 1650, 9)
    wl[3] = 1800
    with pytest.raises(InvalidArgumentError):
        MosaicPattern(np.arange(9).reshape(3, 3), wl, sensor_range_nm=(1100, 1700))


def test_correction_shape_rules():
    with pytest.raises(InvalidArgumentError):
        SpectralCorrectionMatrix(np.ones((3, 2)), [1, 2, 3], [1, 1, 1])
    m = np.eye(3)
    m[1] = 0
    with pytest.raises(InvalidArgumentError):
        SpectralCorrectionMatrix(m, [1, 2, 3], [1, 1, 1])


def test_shipped_sensor_tables():
    vp, vc = vnir_sensor()
    sp, sc = swir_sensor()
    assert (vp.tile_rows, vp.tile_cols, vp.raw_band_count) == (5, 5, 25)
    assert (vc.rows, vc.cols) == (24, 25)
    assert (sp.tile_rows, sp.tile_cols, sp.raw_band_count) == (3, 3, 9)
    assert (sc.rows, sc.cols) == (9, 9)
    assert np.allclose(vc.out_wavelengths_nm, np.linspace(660, 900, 24))
    assert np.all((sp.raw_wavelengths_nm >= 1100) & (sp.raw_wavelengths_nm <= 1700))
    # denser below 1400 nm
    assert np.sum(sc.out_wavelengths_nm < 1400) > np.sum(sc.out_wavelengths_nm >= 1400)


def test_sensor_config_round_trip(tmp_path):
    p, c = vnir_sensor()
    write_sensor_config(tmp_path / "s.ini", p, c, "note")
    p2, c2 = read_sensor_config(tmp_path / "s.ini")
    assert np.array_equal(p2.layout, p.layout)
    assert np.array_equal(p2.raw_wavelengths_nm, p.raw_wavelengths_nm)
    assert np.array_equal(c2.matrix, c.matrix)
    assert np.array_equal(c2.out_fwhm_nm, c.out_fwhm_nm)


# --------------------------------------------------------------------------- extraction


def test_band0_of_6x6_frame():
    f = MosaicFrame(np.arange(36.0).reshape(6, 6))
    s = extract_sparse_band(f, pattern3(), 0)
    assert sorted(map(tuple, s.positions)) == [(0, 0), (0, 3), (3, 0), (3, 3)]


def test_single_tile_has_one_sample_per_band():
    vp, _ = vnir_sensor()
    f = MosaicFrame(np.zeros((5, 5)))
    assert all(len(extract_sparse_band(f, vp, b)) == 1 for b in range(25))


def test_band_out_of_range():
    with pytest.raises(InvalidArgumentError):
        extract_sparse_band(MosaicFrame(np.zeros((6, 6))), pattern3(), 9)


@given(perm=st.permutations(list(range(9))), h=st.integers(3, 14), w=st.integers(3, 14))
def test_sparse_sets_partition_the_frame(perm, h, w):
    p = pattern3(np.array(perm).reshape(3, 3))
    f = MosaicFrame(np.arange(h * w, dtype=float).reshape(h, w))
    seen = np.zeros((h, w), int)
    for b in range(9):
        s = extract_sparse_band(f, p, b)
        for (r, c), v in zip(s.positions, s.values.ravel()):
            assert p.band_at(r, c) == b
            assert v == f.values[r, c]
            seen[r, c] += 1
    assert np.all(seen == 1)


# --------------------------------------------------------------------------- interpolation


def bilinear_oracle(rows, cols, grid, r, c):
    """Direct evaluation: locate the bracketing lattice nodes by scanning."""
    def bracket(coords, x):
        if len(coords) == 1:
            return 0, 0, 0.0
        if x <= coords[0]:
            return 0, 1, 0.0
        if x >= coords[-1]:
            return len(coords) - 2, len(coords) - 1, 1.0
        for i in range(len(coords) - 1):
            if coords[i] <= x <= coords[i + 1]:
                return i, i + 1, (x - coords[i]) / (coords[i + 1] - coords[i])

    i0, i1, tr = bracket(rows, r)
    j0, j1, tc = bracket(cols, c)
    top = grid[i0, j0] * (1 - tc) + grid[i0, j1] * tc
    bot = grid[i1, j0] * (1 - tc) + grid[i1, j1] * tc
    return top * (1 - tr) + bot * tr


def test_constant_samples_give_constant_plane():
    s = SparseBand(np.arange(1, 20, 3), np.arange(2, 20, 3), np.full((7, 6), 4.25))
    assert np.all(interpolate_band(s, 20, 20) == 4.25)


def test_affine_ramp_exact_inside():
    rows, cols = np.arange(1, 30, 3), np.arange(2, 30, 3)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    s = SparseBand(rows, cols, 0.7 * rr - 1.3 * cc + 2.0)
    plane = interpolate_band(s, 30, 30)
    R, C = np.mgrid[0:30, 0:30]
    inner = (R >= rows[0]) & (R <= rows[-1]) & (C >= cols[0]) & (C <= cols[-1])
    assert np.max(np.abs(plane - (0.7 * R - 1.3 * C + 2.0))[inner]) <= 1e-9


def test_random_lattice_matches_direct_oracle(rng):
    rows, cols = np.arange(2, 25, 3), np.arange(1, 25, 3)
    grid = rng.random((len(rows), len(cols)))
    plane = interpolate_band(SparseBand(rows, cols, grid), 25, 25)
    for r in range(25):
        for c in range(25):
            assert plane[r, c] == pytest.approx(bilinear_oracle(rows, cols, grid, r, c), abs=1e-12)


def test_samples_reproduced_exactly(rng):
    f = MosaicFrame(rng.random((23, 17)))
    p = pattern3()
    planes = interpolate_all(f, p)
    idx = p.index_image(23, 17)
    R, C = np.mgrid[0:23, 0:17]
    assert np.array_equal(planes[idx, R, C], f.values)


def test_empty_sample_set():
    with pytest.raises(DegenerateInputError):
        interpolate_band(SparseBand(np.array([], int), np.array([], int), np.zeros((0, 0))), 4, 4)


# --------------------------------------------------------------------------- correction


def stack(bands):
    return BandStack(bands, np.arange(len(bands), dtype=float) + 700, np.ones(len(bands)))


def test_identity_correction(rng):
    s = stack(rng.random((4, 5, 6)))
    out = apply_spectral_correction(s, SpectralCorrectionMatrix.identity([1, 2, 3, 4], [1, 1, 1, 1]))
    assert np.array_equal(out.bands, s.bands)


def test_averaging_matrix_matches_matvec(rng):
    raw = stack(rng.random((25, 6, 7)))
    m = np.zeros((24, 25))
    for i in range(24):
        m[i, i] = m[i, i + 1] = 0.5
    corr = SpectralCorrectionMatrix(m, np.arange(24.0), np.ones(24))
    out = apply_spectral_correction(raw, corr)
    for r in range(6):
        for c in range(7):
            expect = m @ raw.bands[:, r, c]
            assert np.allclose(out.bands[:, r, c], expect, rtol=0, atol=1e-12)
    assert np.array_equal(out.wavelengths_nm, corr.out_wavelengths_nm)


def test_secondary_peak_subtraction():
    m = np.eye(3)
    m[0, 1] = -0.1
    out = apply_spectral_correction(stack(np.ones((3, 4, 4))), SpectralCorrectionMatrix(m, [1, 2, 3], [1, 1, 1]))
    assert np.allclose(out.bands[0], 0.9, atol=1e-15)


def test_negative_results_clamp_to_zero():
    m = np.array([[1.0, -2.0]])
    out = apply_spectral_correction(stack(np.ones((2, 3, 3))), SpectralCorrectionMatrix(m, [1], [1]))
    assert np.all(out.bands == 0.0)
    raw = apply_spectral_correction(stack(np.ones((2, 3, 3))), SpectralCorrectionMatrix(m, [1], [1]), clamp=False)
    assert np.all(raw.bands == -1.0)


def test_correction_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        apply_spectral_correction(stack(np.ones((3, 2, 2))), SpectralCorrectionMatrix.identity([1, 2], [1, 1]))


# --------------------------------------------------------------------------- demosaic


def test_vnir_demosaic_is_exact_at_sampled_pixels():
    vp, vc = vnir_sensor()
    scene = generate_scene(11, 60, 60, 4)
    frame = render_mosaic(scene, vp, CameraModel.from_fov(60, 60))
    raw = demosaic(frame, vp)  # before correction: one plane per raw filter
    truth = scene.radiance(vp.raw_wavelengths_nm)  # (H, W, 25)
    idx = vp.index_image(60, 60)
    R, C = np.mgrid[0:60, 0:60]
    got = raw.bands[idx, R, C]
    want = truth[R, C, idx]
    assert np.max(np.abs(got - want) / np.abs(want)) <= 1e-9
    out = demosaic(frame, vp, vc)
    assert out.band_count == 24
    # single-support output rows are exact where their filter was sampled
    for k in range(24):
        cols = np.flatnonzero(vc.matrix[k])
        if len(cols) == 1:
            sel = idx == cols[0]
            ref = truth[..., cols[0]][sel]
            assert np.max(np.abs(out.bands[k][sel] - ref) / ref) <= 1e-9


def test_swir_demosaic_has_nine_bands():
    sp, sc = swir_sensor()
    f = MosaicFrame(np.random.default_rng(0).random((30, 33)))
    assert demosaic(f, sp, sc).band_count == 9


def test_constant_frame_constant_bands():
    sp, sc = swir_sensor()
    out = demosaic(MosaicFrame(np.full((20, 22), 3.5)), sp, sc)
    assert np.all(out.bands == 3.5)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3),
       f1=hnp.arrays(float, (11, 13), elements=st.floats(0, 10)),
       f2=hnp.arrays(float, (11, 13), elements=st.floats(0, 10)))
def test_demosaic_is_linear(a, b, f1, f2):
    vp, vc = vnir_sensor()
    d = lambda f: demosaic(MosaicFrame(f), vp, vc, clamp=False).bands
    lhs = d(a * f1 + b * f2)
    rhs = a * d(f1) + b * d(f2)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9)
