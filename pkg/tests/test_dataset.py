from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hyperdrive.cube import DataCube
from hyperdrive.dataset import (
    TABLE_ROWS,
    Manifest,
    Ontology,
    SampleRecord,
    SceneTags,
    build_stats_manifest,
    compute_stats,
    count_segments,
    create_dataset,
    decode_hdz,
    encode_hdz,
    open_manifest,
    read_sample,
    validate_manifest,
    write_sample,
)
from hyperdrive.errors import ValidationError
from hyperdrive.radiometry import SpectrometerReading
from hyperdrive.simgen import generate_scene


def make_record(sid="s1", h=12, w=10, c=33, seed=0, mask=None, ts=0):
    rng = np.random.default_rng(seed)
    cube = DataCube(rng.random((h, w, c)).astype(np.float32), np.linspace(660, 1650, c), np.full(c, 12.0), ts)
    rgb = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    if mask is None:
        mask = rng.integers(0, 17, (h, w))
    vis = SpectrometerReading(np.linspace(500, 1100, 256), rng.uniform(0, 9e3, 256).astype(np.float32),
                              ts, 20000.0, device="visnir")
    return SampleRecord(sid, cube, rgb, mask, SceneTags("desert", "sunset", "winter", "rain"), vis, None, ts)


# --------------------------------------------------------------------------- ontology and tags


def test_ontology_structure():
    o = Ontology.default()
    assert set(o.children("path")) == {"dirt", "rock/gravel", "paved", "concrete"}
    assert set(o.children("vegetation")) == {"ground cover", "bush/tree", "leaves/mulch"}
    assert set(o.children("obstacle")) == {"vehicle", "infrastructure", "road signage"}
    assert o.children("person") == []
    assert o.lookup("person").level2 is None
    assert Ontology.from_text(o.text()).text() == o.text()


def test_ontology_rejects_unknown_child():
    with pytest.raises(Exception):
        Ontology.default().lookup("path", "lava")


def test_tags_round_trip_and_vocabulary():
    t = SceneTags("desert", "sunset", "winter", "rain")
    assert SceneTags.from_text(t.text()) == t
    with pytest.raises(ValidationError):
        SceneTags("moon", "sunset", "winter", "rain")
    with pytest.raises(ValidationError):
        SceneTags.from_text("biome=forest\ntime_of_day=dusk\nseason=winter\n")


# --------------------------------------------------------------------------- storage


def test_write_read_round_trip(tmp_path):
    m = create_dataset(tmp_path / "ds")
    rec = make_record()
    write_sample(m, rec)
    back = read_sample(open_manifest(tmp_path / "ds"), "s1")
    assert back.cube.data.tobytes() == rec.cube.data.tobytes()
    assert back.cube.data.dtype == np.float32
    assert np.array_equal(back.cube.wavelengths_nm, rec.cube.wavelengths_nm)
    assert np.array_equal(back.rgb, rec.rgb)
    assert np.array_equal(back.mask, rec.mask)
    assert back.tags == rec.tags
    assert np.array_equal(back.visnir.counts, rec.visnir.counts) and back.nir is None
    assert validate_manifest(m).ok


@given(data=hnp.arrays(st.sampled_from([np.float32, np.float64, np.uint16]),
                       hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6)),
       ts=st.integers(0, 2**63 - 1))
def test_hdz_bit_exact(data, ts):
    c = data.shape[2]
    mask = np.ones(data.shape[:2], bool)
    mask.flat[0] = False
    cube = DataCube(data, np.arange(c) + 500.0, np.ones(c), ts, mask)
    back = decode_hdz(encode_hdz(cube))
    assert back.data.dtype == data.dtype and back.data.tobytes() == data.tobytes()
    assert back.timestamp_ns == ts and np.array_equal(back.validity_mask, mask)


def test_unregistered_label_rejected(tmp_path):
    m = create_dataset(tmp_path / "ds")
    rec = make_record(mask=np.full((12, 10), 99))
    with pytest.raises(ValidationError):
        write_sample(m, rec)
    assert len(open_manifest(tmp_path / "ds")) == 0
    assert list((tmp_path / "ds" / "samples").iterdir()) == []


def test_dimension_mismatch_rejected(tmp_path):
    m = create_dataset(tmp_path / "ds")
    with pytest.raises(ValidationError):
        write_sample(m, make_record(mask=np.zeros((5, 5), int)))


def test_duplicate_id_rejected(tmp_path):
    m = create_dataset(tmp_path / "ds")
    write_sample(m, make_record())
    with pytest.raises(ValidationError):
        write_sample(m, make_record())


def test_compression_beats_raw_on_smooth_scene():
    scene = generate_scene(1, 128, 128, 4)
    wl = np.concatenate([np.linspace(660, 900, 24), np.linspace(1100, 1700, 9)])
    cube = DataCube(scene.reflectance(wl).astype(np.float32), wl, np.full(33, 12.0))
    raw = 128 * 128 * 33 * 4
    assert len(encode_hdz(cube)) < raw


# --------------------------------------------------------------------------- validation


def test_fresh_manifest_validates(tmp_path):
    m = create_dataset(tmp_path / "ds")
    for i in range(3):
        write_sample(m, make_record(f"s{i}", seed=i, ts=i))
    r = validate_manifest(tmp_path / "ds")
    assert r.ok and r.samples_checked == 3


def test_deleted_mask_is_one_violation(tmp_path):
    m = create_dataset(tmp_path / "ds")
    write_sample(m, make_record("a"))
    write_sample(m, make_record("b", seed=1))
    (tmp_path / "ds" / "samples" / "b" / "mask.png").unlink()
    r = validate_manifest(m)
    assert [(v.sample_id, v.kind) for v in r.violations] == [("b", "missing-file")]


def test_flipped_cube_byte_is_one_violation(tmp_path):
    m = create_dataset(tmp_path / "ds")
    write_sample(m, make_record("a"))
    p = tmp_path / "ds" / "samples" / "a" / "cube.hdz"
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    r = validate_manifest(m)
    assert [(v.sample_id, v.kind) for v in r.violations] == [("a", "checksum")]
    with pytest.raises(ValidationError):
        compute_stats(m)


def test_manifest_listing_unknown_sample(tmp_path):
    m = create_dataset(tmp_path / "ds")
    write_sample(m, make_record("a"))
    text = (tmp_path / "ds" / "manifest.txt").read_text()
    line = [l for l in text.splitlines() if l.startswith("a\t")][0]
    (tmp_path / "ds" / "manifest.txt").write_text(text + line.replace("a\t", "ghost\t", 1) + "\n")
    kinds = {v.kind for v in validate_manifest(m).violations if v.sample_id == "ghost"}
    assert kinds == {"missing-file"}


# --------------------------------------------------------------------------- statistics


def bfs_components(mask, value):
    """Independent 4-connected component count by breadth-first search."""
    h, w = mask.shape
    seen = np.zeros_like(mask, bool)
    n = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] == value and not seen[r, c]:
                n += 1
                q = deque([(r, c)])
                seen[r, c] = True
                while q:
                    y, x = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and not seen[yy, xx] and mask[yy, xx] == value:
                            seen[yy, xx] = True
                            q.append((yy, xx))
    return n


@given(mask=hnp.arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 3)))
def test_segments_match_bfs(mask):
    got = count_segments(mask)
    for v in range(1, 4):
        assert got.get(v, 0) == bfs_components(mask, v)


def test_diagonal_touch_is_two_segments():
    mask = np.array([[1, 0], [0, 1]])
    assert count_segments(mask) == {1: 2}


def test_two_dirt_blobs(tmp_path):
    m = create_dataset(tmp_path / "ds")
    dirt = m.ontology.lookup("path", "dirt").index
    mask = np.zeros((12, 10), int)
    mask[1:3, 1:3] = dirt
    mask[6:9, 5:8] = dirt
    write_sample(m, make_record(mask=mask))
    s = compute_stats(m)
    assert (s[("path", "dirt")].segment_count, s[("path", "dirt")].image_count) == (2, 1)


def test_empty_manifest_all_zero(tmp_path):
    s = compute_stats(create_dataset(tmp_path / "ds"))
    assert len(s) == len(Ontology.default().classes)
    assert all(v.segment_count == 0 and v.image_count == 0 for v in s.values())


def test_dirt_row(tmp_path):
    m = build_stats_manifest(tmp_path / "ds", rows=TABLE_ROWS[:1], size=16, channels=4)
    s = compute_stats(m)[("path", "dirt")]
    assert (s.segment_count, s.image_count) == (198, 144)


@pytest.mark.slow
def test_whole_table(tmp_path):
    m = build_stats_manifest(tmp_path / "ds", size=20, channels=2)
    stats = compute_stats(m)
    for l1, l2, segs, imgs in TABLE_ROWS:
        assert (stats[(l1, l2)].segment_count, stats[(l1, l2)].image_count) == (segs, imgs)
    assert all(v.image_count <= v.segment_count for v in stats.values())


@settings(max_examples=10)
@given(seed=st.integers(0, 1000))
def test_stats_permutation_invariant(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    masks = [rng.integers(0, 5, (8, 8)) for _ in range(4)]
    order = rng.permutation(4)
    results = []
    for perm in (np.arange(4), order):
        root = tmp_path_factory.mktemp("perm")
        m = create_dataset(root)
        for k, i in enumerate(perm):
            write_sample(m, make_record(f"s{k}", 8, 8, 3, seed=int(i), mask=masks[i], ts=k))
        results.append(compute_stats(m))
    assert results[0] == results[1]
    assert all(v.image_count <= v.segment_count for v in results[0].values())
