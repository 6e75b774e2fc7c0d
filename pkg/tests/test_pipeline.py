import struct
from pathlib import Path

import numpy as np
import pytest

from hyperdrive.config import desk_rig, write_rig
from hyperdrive.dataset import compute_stats, open_manifest, read_sample, validate_manifest
from hyperdrive.errors import ConfigurationError
from hyperdrive.pipeline import STAGES, bench, load_pipeline_config, run_pipeline, worker_count
from hyperdrive.simgen import emit_streams, generate_scene
from hyperdrive.wire import iter_records, read_header, write_capture


@pytest.fixture(scope="module")
def capture(tmp_path_factory):
    d = tmp_path_factory.mktemp("cap")
    rig = desk_rig(64, 64)
    write_rig(rig, d / "rig")
    scene = generate_scene(2, 64, 64, 3)
    msgs = emit_streams(scene, rig, 1.0, jitter_ms=5.0, seed=2)
    write_capture(d / "capture.hdcap", [m.payload for m in msgs])
    return d, scene


def run(cap_dir, out, capture_file=None, **kw):
    cfg = load_pipeline_config(None, rig=str(cap_dir / "rig"), out=str(out), **kw)
    return run_pipeline(cfg, capture_file or cap_dir / "capture.hdcap")


def test_ten_frames_end_to_end(capture, tmp_path):
    d, scene = capture
    res = run(d, tmp_path / "ds")
    assert (res.processed, res.dropped, res.errored) == (10, 0, 0)
    assert res.exit_code == 0
    assert (tmp_path / "ds" / "pipeline.log").read_text().startswith("processed\t10\ndropped\t0\nerrored\t0\n")
    m = open_manifest(tmp_path / "ds")
    assert len(m) == 10 and validate_manifest(m).ok
    rec = read_sample(m, m.ids()[0])
    assert rec.cube.shape == (64, 64, 33)
    # reflectance against material truth inside the valid region
    truth = scene.reflectance(rec.cube.wavelengths_nm)
    v = rec.cube.validity_mask
    err = rec.cube.data[v].astype(float) - truth[v]
    assert np.sqrt(np.mean(err**2)) / np.sqrt(np.mean(truth[v] ** 2)) <= 0.02


def test_samples_ordered_by_pivot(capture, tmp_path):
    d, _ = capture
    run(d, tmp_path / "ds", threads=3)
    m = open_manifest(tmp_path / "ds")
    ts = [e.timestamp_ns for e in m.entries]
    assert ts == sorted(ts)


def test_truncated_record(capture, tmp_path):
    d, _ = capture
    recs = list(iter_records(d / "capture.hdcap"))
    # shorten one VNIR cube and fix its length prefix so framing survives
    k = next(i for i, (_, b) in enumerate(recs) if b[:4] == b"HDC1" and read_header(b)["frame_id"] == "vnir"
             and read_header(b)["timestamp_ns"] > 300_000_000)
    out = bytearray()
    for i, (_, body) in enumerate(recs):
        if i == k:
            body = body[: len(body) // 2]
        out += struct.pack("<I", len(body)) + body
    bad = tmp_path / "bad.hdcap"
    bad.write_bytes(bytes(out))
    res = run(d, tmp_path / "ds", capture_file=bad)
    assert res.processed == 9 and res.errored == 1
    assert res.exit_code != 0
    assert len(open_manifest(tmp_path / "ds")) == 9


def test_empty_capture(capture, tmp_path):
    d, _ = capture
    (tmp_path / "empty.hdcap").write_bytes(b"")
    res = run(d, tmp_path / "ds", capture_file=tmp_path / "empty.hdcap")
    assert (res.processed, res.dropped, res.errored, res.exit_code) == (0, 0, 0, 0)
    assert len(open_manifest(tmp_path / "ds")) == 0
    assert all(s.segment_count == 0 for s in compute_stats(tmp_path / "ds").values())


def test_rate_thinning(capture, tmp_path):
    d, _ = capture
    res = run(d, tmp_path / "ds", rate_hz=2.0)
    assert res.processed == 2
    assert res.errored == 0


def test_pipeline_deterministic(capture, tmp_path):
    d, _ = capture
    run(d, tmp_path / "a", threads=1)
    run(d, tmp_path / "b", threads=2)
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "manifest.txt").read_text() == (b / "manifest.txt").read_text()
    for p in sorted((a / "samples").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (b / p.relative_to(a)).read_bytes()


def test_config_errors(capture, tmp_path):
    d, _ = capture
    with pytest.raises(ConfigurationError):
        load_pipeline_config(None, rig=str(tmp_path / "nope"), out=str(tmp_path))
    with pytest.raises(ConfigurationError):
        load_pipeline_config(None, rig=str(d / "rig"))
    with pytest.raises(ConfigurationError):
        run_pipeline(load_pipeline_config(None, rig=str(d / "rig"), out=str(tmp_path / "o")), tmp_path / "x.hdcap")


def test_ini_config_resolves_relative_paths(capture, tmp_path):
    d, _ = capture
    ini = d / "pipeline.ini"
    ini.write_text("[pipeline]\nrig = rig\nwindow_ms = 40\nthreads = 2\nout = unused\n"
                   "tags = biome=desert, time_of_day=night, season=winter, weather=fog\n")
    cfg = load_pipeline_config(ini, out=str(tmp_path / "ds"))
    assert cfg.window_ns == 40_000_000 and cfg.threads == 2
    assert cfg.out_dir == tmp_path / "ds"
    assert cfg.tags.biome == "desert"
    assert cfg.rig.digest() == desk_rig(64, 64).digest()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("HYPERDRIVE_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("HYPERDRIVE_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        worker_count()


# --------------------------------------------------------------------------- bench


def test_bench_report_structure():
    rep = bench(10, 64, 64)
    assert set(rep.stage_seconds) == set(STAGES)
    lines = rep.text().splitlines()
    assert lines[0] == "field\tvalue\tunit"
    fields = [l.split("\t")[0] for l in lines[1:]]
    assert fields == ["frames", "cube_shape", "cube_bytes"] + [f"stage_{s}" for s in STAGES] + [
        "core_throughput", "throughput", "cube_rate"]
    units = [l.split("\t")[2] for l in lines[1:]]
    assert units == ["count", "pixels", "bytes"] + ["ms/frame"] * 5 + ["MB/s", "MB/s", "cubes/s"]
    again = [l.split("\t")[0::2] for l in bench(10, 64, 64).text().splitlines()]
    assert again == [l.split("\t")[0::2] for l in lines]


def test_bench_needs_ten_frames():
    with pytest.raises(ConfigurationError):
        bench(9)


@pytest.mark.slow
def test_bench_scales_linearly_with_area():
    def best(h, w):
        runs = [bench(15, h, w) for _ in range(3)]
        return {s: min(r.stage_seconds[s] for r in runs) for s in STAGES}

    small, large = best(128, 128), best(128, 256)
    for s in STAGES:
        assert 1.6 <= large[s] / small[s] <= 2.6, (s, large[s] / small[s])
