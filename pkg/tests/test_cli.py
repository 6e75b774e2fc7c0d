import shutil

import pytest

from hyperdrive.cli import main


def call(capsys, *argv):
    capsys.readouterr()
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simgen", "--rig", "desk", "--size", "64x64", "--seed", "3", "--materials", "3",
                 "--jitter-ms", "3", "--out", str(d / "sim")]) == 0
    assert main(["run", str(d / "sim" / "capture.hdcap"), "--rig", str(d / "sim" / "rig"),
                 "--out", str(d / "ds"), "--labels", str(d / "sim" / "labels.png")]) == 0
    return d


def test_simgen_outputs(sim):
    s = sim / "sim"
    for name in ("capture.hdcap", "preview.png", "truth.ini", "labels.png", "rgb.png",
                 "vnir_correspondences.txt", "swir_correspondences.txt", "materials.tsv"):
        assert (s / name).stat().st_size > 0, name
    assert (s / "rig").is_dir()


def test_run_log_and_samples(sim):
    log = (sim / "ds" / "pipeline.log").read_text()
    assert "processed\t10" in log
    assert len(list((sim / "ds" / "samples").iterdir())) == 10


def test_validate(sim, capsys):
    rc, out, _ = call(capsys, "validate", sim / "ds")
    assert rc == 0 and "violations\t0" in out


def test_validate_corrupt_dataset_exit_2(sim, capsys, tmp_path):
    ds = tmp_path / "ds"
    shutil.copytree(sim / "ds", ds)
    victim = sorted((ds / "samples").iterdir())[0] / "rgb.png"
    victim.write_bytes(victim.read_bytes()[:-10])
    rc, out, _ = call(capsys, "validate", ds)
    assert rc == 2 and "violations\t0" not in out


def test_stats_report_and_figure(sim, capsys, tmp_path):
    rc, out, _ = call(capsys, "stats", sim / "ds", "--report", tmp_path / "stats.txt")
    assert rc == 0
    assert "dirt\t10\t10" in out
    assert (tmp_path / "stats.txt").read_text() == out
    assert (tmp_path / "stats.png").stat().st_size > 0


def test_embed_pca_report(sim, capsys, tmp_path):
    rc, out, _ = call(capsys, "embed", sim / "ds", "--method", "pca", "--per-class", "40",
                      "--report", tmp_path / "embed.txt")
    assert rc == 0
    assert out.startswith("method\tpca")
    assert (tmp_path / "embed.png").stat().st_size > 0
    assert (tmp_path / "embed_hsi.tsv").exists() and (tmp_path / "embed_rgb.tsv").exists()


def test_embed_tsne_small(sim, capsys, tmp_path):
    rc, out, _ = call(capsys, "embed", sim / "ds", "--per-class", "20", "--perplexity", "5",
                      "--iterations", "250", "--report", tmp_path / "tsne.txt")
    assert rc == 0 and "method\ttsne" in out
    assert (tmp_path / "tsne.png").stat().st_size > 0


def test_bench_report(capsys, tmp_path):
    rc, out, _ = call(capsys, "bench", "--frames", "10", "--size", "32x32", "--report", tmp_path / "b.txt")
    assert rc == 0
    for field in ("stage_demosaic", "stage_undistort", "stage_compose", "throughput", "cube_rate"):
        assert field in out
    assert (tmp_path / "b.png").stat().st_size > 0


def test_wire_inspect(sim, capsys):
    rc, out, _ = call(capsys, "wire", "inspect", sim / "sim" / "capture.hdcap")
    rows = out.strip().splitlines()[1:]
    assert rc == 0 and len(rows) == 36
    assert all(r.endswith("ok") for r in rows)
    rc, out, _ = call(capsys, "wire", "inspect", sim / "sim" / "capture.hdcap", "--limit", "5")
    assert len(out.strip().splitlines()) == 6


def test_wire_inspect_corrupt_exit_1(sim, capsys, tmp_path):
    raw = bytearray((sim / "sim" / "capture.hdcap").read_bytes())
    raw[200] ^= 0xFF
    bad = tmp_path / "bad.hdcap"
    bad.write_bytes(bytes(raw))
    rc, out, _ = call(capsys, "wire", "inspect", bad)
    assert rc == 1 and "error" in out


def test_sync_forms_agree(sim, capsys):
    cap = sim / "sim" / "capture.hdcap"
    rc1, a, _ = call(capsys, "sync", cap)
    rc2, b, _ = call(capsys, "sync", "--in", cap)
    assert rc1 == rc2 == 0 and a == b
    assert "# tuples\t10" in a
    rc, c, _ = call(capsys, "sync", cap, "--rate", "2")
    assert "# tuples\t2" in c


def test_sync_without_capture_exit_2(capsys):
    rc, _, err = call(capsys, "sync")
    assert rc == 2 and "capture" in err


def test_run_truncated_exit_1(sim, capsys, tmp_path):
    raw = (sim / "sim" / "capture.hdcap").read_bytes()
    cap = tmp_path / "cut.hdcap"
    cap.write_bytes(raw[: len(raw) - 100])
    rc, out, _ = call(capsys, "run", cap, "--rig", sim / "sim" / "rig", "--out", tmp_path / "ds")
    assert rc == 1 and "errored\t0" not in out


def test_run_missing_rig_exit_2(sim, capsys, tmp_path):
    rc, _, err = call(capsys, "run", sim / "sim" / "capture.hdcap", "--rig", tmp_path / "nope",
                      "--out", tmp_path / "ds")
    assert rc == 2 and err
    assert not (tmp_path / "ds" / "manifest.txt").exists()


def test_bad_arguments_exit_2(capsys):
    assert call(capsys, "frobnicate")[0] == 2
    assert call(capsys, "bench", "--frames", "many")[0] == 2
    assert call(capsys, "--help")[0] == 0


def test_config_defaults_and_flag_precedence(capsys, tmp_path):
    ini = tmp_path / "h.ini"
    ini.write_text("[bench]\nframes = 12\nsize = 32x32\n")
    rc, out, _ = call(capsys, "--config", ini, "bench")
    assert rc == 0 and "frames\t12\t" in out and "32x32" in out
    rc, out, _ = call(capsys, "--config", ini, "bench", "--frames", "10")
    assert rc == 0 and "frames\t10\t" in out


def test_config_unknown_key_exit_2(capsys, tmp_path):
    ini = tmp_path / "h.ini"
    ini.write_text("[bench]\nspeed = 3\n")
    rc, _, err = call(capsys, "--config", ini, "bench")
    assert rc == 2 and "speed" in err
    assert call(capsys, "--config", tmp_path / "missing.ini", "bench")[0] == 2


def test_config_relative_paths(sim, capsys, tmp_path):
    shutil.copytree(sim / "sim", tmp_path / "sim")
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nrig = sim/rig\nout = ds\n")
    rc, out, _ = call(capsys, "--config", ini, "run", tmp_path / "sim" / "capture.hdcap")
    assert rc == 0 and "processed\t10" in out
    assert (tmp_path / "ds" / "manifest.txt").exists()


def test_ingest_roundtrip(sim, capsys, tmp_path):
    src = sorted((sim / "ds" / "samples").iterdir())[0]
    ds = tmp_path / "new"
    rc, out, _ = call(capsys, "ingest", ds, "--id", "s1", "--cube", src / "cube.hdz", "--rgb", src / "rgb.png",
                      "--mask", src / "mask.png", "--tag", "biome=desert", "--tag", "time_of_day=sunrise",
                      "--tag", "season=winter", "--tag", "weather=overcast")
    assert rc == 0 and out.startswith("s1\t")
    rc, out, _ = call(capsys, "validate", ds)
    assert rc == 0 and "samples\t1" in out
    rc, _, err = call(capsys, "ingest", ds, "--id", "s2", "--cube", src / "cube.hdz", "--rgb", src / "rgb.png",
                      "--mask", src / "mask.png", "--tag", "biome=moon", "--tag", "time_of_day=night",
                      "--tag", "season=winter", "--tag", "weather=overcast")
    assert rc == 2 and "moon" in err


def test_simgen_identity_rig(capsys, tmp_path):
    rc, out, _ = call(capsys, "simgen", "--rig", "identity", "--size", "32x32", "--out", tmp_path / "s")
    assert rc == 0 and "messages\t36" in out
    assert call(capsys, "simgen", "--rig", "identity", "--size", "32x48", "--out", tmp_path / "t")[0] == 2
