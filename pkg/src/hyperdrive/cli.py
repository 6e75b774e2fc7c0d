"""``hyperdrive`` command-line entry point.

Every subcommand prints tab-separated output. Subcommands that produce a
report file also render a figure next to it (same stem, ``.png``).

Exit codes: 0 success, 1 per-frame errors occurred, 2 configuration or
validation failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FRAME_ERRORS, EXIT_CONFIG = 0, 1, 2

# option names holding paths; config-file values are resolved against the file
_PATH_OPTIONS = {"rig", "vnir_sensor", "swir_sensor", "vnir_camera", "swir_camera",
                 "vnir_correspondences", "swir_correspondences", "labels", "out", "report",
                 "capture", "input", "dataset"}


def _size(text: str) -> tuple:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 128x128, got {text!r}") from None
    return h, w


def _emit(text: str, report=None) -> None:
    sys.stdout.write(text)
    if report:
        Path(report).parent.mkdir(parents=True, exist_ok=True)
        Path(report).write_text(text)


def _figure_path(report) -> Path:
    return Path(report).with_suffix(".png")


def _load_rig(spec, size=None):
    from .config import default_rig, desk_rig, identity_rig, read_rig, test_rig

    if spec in (None, "desk"):
        return desk_rig(*(size or (128, 128)))
    if spec == "identity":
        h, w = size or (128, 128)
        if h != w:
            raise _ConfigFailure("the identity rig is square")
        return identity_rig(h)
    if spec == "test":
        return test_rig()
    if spec == "default":
        return default_rig()
    return read_rig(spec)


# --------------------------------------------------------------------------- subcommands


def cmd_simgen(args) -> int:
    from .config import write_rig
    from .dataset import Ontology
    from .geometry import write_correspondences
    from .plotting import scene_figure
    from .simgen import checkerboard_correspondences, emit_streams, generate_scene, render_mosaic
    from .wire import write_capture
    from PIL import Image

    rig = _load_rig(args.rig, args.size)
    size = args.size or tuple(rig.out_dims)
    if tuple(size) != tuple(rig.out_dims):
        raise _ConfigFailure(f"scene size {size} must equal the rig composite size {rig.out_dims}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(args.seed, size[0], size[1], args.materials, metameric=args.metameric)
    msgs = emit_streams(scene, rig, args.duration, args.jitter_ms, args.seed, args.noise)
    n = write_capture(out / "capture.hdcap", [m.payload for m in msgs])
    vnir = render_mosaic(scene, rig.vnir_pattern, rig.vnir_model, rig.vnir_shape)
    swir = render_mosaic(scene, rig.swir_pattern, rig.swir_model, rig.swir_shape)
    np.save(out / "vnir_mosaic.npy", vnir.values)
    np.save(out / "swir_mosaic.npy", swir.values)
    wl = np.concatenate([rig.vnir_correction.out_wavelengths_nm, rig.swir_correction.out_wavelengths_nm])
    np.save(out / "truth_reflectance.npy", scene.reflectance(np.sort(wl)))
    Image.fromarray(np.round(np.clip(scene.rgb_truth, 0, 1) * 255).astype(np.uint8)).save(out / "rgb.png")
    # materials map onto labeled ontology classes in index order
    classes = [lab.index for lab in Ontology.default().classes]
    labels = np.array(classes)[scene.material_map % len(classes)]
    Image.fromarray(labels.astype(np.uint8), mode="L").save(out / "labels.png")
    Image.fromarray(scene.material_map.astype(np.uint8), mode="L").save(out / "material_map.png")
    for cam in ("vnir", "swir"):
        c = checkerboard_correspondences(getattr(rig, f"{cam}_model"), getattr(rig, f"{cam}_shape"),
                                         source_id=cam, target_id="rgb")
        write_correspondences(out / f"{cam}_correspondences.txt", c,
                              header=[f"{cam} undistorted pixel -> rgb pixel", "x_src y_src x_dst y_dst"])
    write_rig(rig, out / "rig")
    grid = np.arange(500, 1701, 10)
    np.savetxt(out / "materials.tsv", np.column_stack([grid, scene.material_reflectance(grid).T]),
               fmt="%.6g", delimiter="\t",
               header="wavelength_nm\t" + "\t".join(f"material_{m}" for m in range(scene.n_materials)))
    truth = configparser.ConfigParser()
    truth["scene"] = {"seed": str(args.seed), "height": str(size[0]), "width": str(size[1]),
                      "materials": str(args.materials), "metameric": str(args.metameric).lower(),
                      "illumination_temperature_k": repr(getattr(scene.illumination, "temperature_k", 0.0)),
                      "duration_s": repr(args.duration), "jitter_ms": repr(args.jitter_ms),
                      "noise_sigma": repr(args.noise), "rig_digest": rig.digest(), "messages": str(n)}
    with open(out / "truth.ini", "w") as fh:
        truth.write(fh)
    scene_figure(out / "preview.png", scene, vnir, swir)
    _emit(f"messages\t{n}\nout\t{out}\nrig_digest\t{rig.digest()}\n")
    return EXIT_OK


def _stream_row(tup) -> str:
    cells = [str(tup.pivot_ns)]
    cells += [str(m.timestamp_ns) for m in tup.members.values()]
    for s, m in tup.attachments.items():
        cells.append("-" if m is None else str(m.timestamp_ns))
        cells.append("stale" if tup.stale[s] else "fresh")
    return "\t".join(cells)


def cmd_sync(args) -> int:
    from .errors import HyperdriveError
    from .sync import SyncPolicy, Synchronizer, downsample
    from .wire import decode_message, iter_records, to_timed

    capture = args.capture or args.input
    if not capture:
        raise _ConfigFailure("sync needs a capture file")
    policy = SyncPolicy(window_ns=int(round(args.window_ms * 1e6)))
    sync = Synchronizer(policy)
    tuples, errors = [], 0
    try:
        for offset, body in iter_records(capture):
            try:
                tuples.extend(sync.push(to_timed(decode_message(body))))
            except HyperdriveError as exc:
                errors += 1
                logging.warning("record at offset %d skipped: %s", offset, exc)
    except HyperdriveError as exc:
        errors += 1
        logging.warning("%s", exc)
    if args.rate:
        tuples = downsample(tuples, args.rate, policy.window_ns)
    header = ["pivot_ns", *policy.required_streams]
    for s in policy.attached_streams:
        header += [f"{s}_ns", f"{s}_status"]
    lines = ["\t".join(header)] + [_stream_row(t) for t in tuples]
    st = sync.stats()
    lines += [f"# tuples\t{len(tuples)}"] + [f"# {k}\t{v}" for k, v in st.items()] + [f"# errors\t{errors}"]
    _emit("\n".join(lines) + "\n", args.report)
    return EXIT_OK if errors == 0 else EXIT_FRAME_ERRORS


def cmd_run(args) -> int:
    from .pipeline import load_pipeline_config, run_pipeline

    cfg = load_pipeline_config(
        None, rig=args.rig, vnir_sensor=args.vnir_sensor, swir_sensor=args.swir_sensor,
        vnir_camera=args.vnir_camera, swir_camera=args.swir_camera,
        vnir_correspondences=args.vnir_correspondences, swir_correspondences=args.swir_correspondences,
        window_ms=args.window_ms, rate_hz=args.rate, threads=args.threads, labels=args.labels, out=args.out,
    )
    result = run_pipeline(cfg, args.capture)
    _emit(result.text())
    return result.exit_code


def cmd_ingest(args) -> int:
    from .dataset import SampleRecord, SceneTags, create_dataset, decode_hdz, open_manifest, read_mask, write_sample
    from .wire import CUBE_MAGIC, decode_cube, decode_spectrum
    from PIL import Image

    root = Path(args.dataset)
    m = open_manifest(root) if (root / "manifest.txt").exists() else create_dataset(root)
    raw = Path(args.cube).read_bytes()
    cube = decode_cube(raw) if raw[:4] == CUBE_MAGIC else decode_hdz(raw)
    with Image.open(args.rgb) as im:
        rgb = np.asarray(im.convert("RGB"))
    mask = read_mask(args.mask)
    spectra = {k: decode_spectrum(Path(p).read_bytes()) if p else None
               for k, p in (("visnir", args.visnir), ("nir", args.nir))}
    tags = SceneTags.from_text("\n".join(args.tag)) if args.tag else SceneTags.from_text(
        "biome=forest\ntime_of_day=midday\nseason=summer\nweather=clear")
    entry = write_sample(m, SampleRecord(args.id, cube, rgb, mask, tags, spectra["visnir"], spectra["nir"]))
    _emit(entry.line() + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .dataset import validate_manifest

    report = validate_manifest(args.dataset)
    _emit(report.text(), args.report)
    return EXIT_OK if report.ok else EXIT_CONFIG


def cmd_stats(args) -> int:
    from .dataset import compute_stats, stats_table

    stats = compute_stats(args.dataset)
    _emit(stats_table(stats), args.report)
    if args.report:
        from .plotting import stats_figure

        stats_figure(_figure_path(args.report), stats)
    return EXIT_OK


def cmd_embed(args) -> int:
    from .analysis import pca_embed, sample_pixels, separability_report, tsne_embed, write_embedding

    hsi, rgb = sample_pixels(args.dataset, args.per_class, args.seed)
    if args.method == "tsne":
        def run(d):
            return tsne_embed(d, args.perplexity, args.iterations, args.learning_rate, args.seed)
    else:
        run = pca_embed
    eh, er = run(hsi), run(rgb)
    rep = separability_report(eh, er, hsi.labels)
    text = f"method\t{args.method}\npoints\t{hsi.n}\n" + rep.text(hsi.class_names)
    text += "".join(f"warning\t{w}\n" for w in hsi.warnings)
    _emit(text, args.report)
    if args.report:
        from .plotting import embedding_figure

        stem = Path(args.report).with_suffix("")
        write_embedding(f"{stem}_hsi.tsv", eh, hsi.labels)
        write_embedding(f"{stem}_rgb.tsv", er, rgb.labels)
        embedding_figure(_figure_path(args.report), er.coords, eh.coords, hsi.labels, hsi.class_names,
                         {"hsi": rep.hsi_silhouette, "rgb": rep.rgb_silhouette},
                         "t-SNE" if args.method == "tsne" else "PCA")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .pipeline import bench

    rep = bench(args.frames, *args.size, seed=args.seed)
    _emit(rep.text(), args.report)
    if args.report:
        from .plotting import bench_figure

        bench_figure(_figure_path(args.report), rep)
    return EXIT_OK


def cmd_wire_inspect(args) -> int:
    from .errors import HyperdriveError
    from .wire import decode_message, iter_records

    lines = ["offset\tbytes\tkind\tstream\ttimestamp_ns\tshape\tstatus"]
    bad = 0
    try:
        for offset, body in iter_records(args.file):
            if args.limit and len(lines) > args.limit:
                break
            try:
                obj = decode_message(body)
            except HyperdriveError as exc:
                bad += 1
                lines.append(f"{offset}\t{len(body)}\t-\t-\t-\t-\terror: {exc}")
                continue
            if hasattr(obj, "data"):
                kind, sid, shape = "cube", obj.frame_id, "x".join(map(str, obj.shape))
            else:
                kind, sid, shape = "spectrum", obj.device, str(len(obj.counts))
            lines.append(f"{offset}\t{len(body)}\t{kind}\t{sid}\t{obj.timestamp_ns}\t{shape}\tok")
    except HyperdriveError as exc:
        bad += 1
        lines.append(f"{getattr(exc, 'offset', '-')}\t-\t-\t-\t-\t-\terror: {exc}")
    _emit("\n".join(lines) + "\n")
    return EXIT_OK if bad == 0 else EXIT_FRAME_ERRORS


# --------------------------------------------------------------------------- parser


class _ConfigFailure(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperdrive", description="Multi-sensor hyperspectral capture toolkit.")
    p.add_argument("--config", help="INI file; section [<command>] supplies defaults for its flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simgen", help="generate a synthetic scene and capture")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=None, help="HxW, default 128x128 or the rig's composite")
    s.add_argument("--out", required=True)
    s.add_argument("--materials", type=int, default=4)
    s.add_argument("--duration", type=float, default=1.0, help="seconds")
    s.add_argument("--jitter-ms", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=0.0, help="additive Gaussian sigma")
    s.add_argument("--metameric", action="store_true", help="materials identical in RGB")
    s.add_argument("--rig", default=None, help="rig directory, or desk | identity | test | default")
    s.set_defaults(func=cmd_simgen)

    s = sub.add_parser("sync", help="list synchronized tuples in a capture")
    s.add_argument("capture", nargs="?")
    s.add_argument("--in", dest="input", help="capture file (alternative to the positional form)")
    s.add_argument("--window-ms", type=float, default=50.0)
    s.add_argument("--rate", type=float, default=None, help="downsample to this many tuples per second")
    s.add_argument("--report")
    s.set_defaults(func=cmd_sync)

    s = sub.add_parser("run", help="process a capture into a dataset")
    s.add_argument("capture")
    s.add_argument("--out")
    s.add_argument("--rig")
    for cam in ("vnir", "swir"):
        s.add_argument(f"--{cam}-sensor")
        s.add_argument(f"--{cam}-camera")
        s.add_argument(f"--{cam}-correspondences")
    s.add_argument("--window-ms", type=float, default=None)
    s.add_argument("--rate", type=float, default=None)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--labels", help="label image applied to every sample")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("ingest", help="add one sample from files")
    s.add_argument("dataset")
    s.add_argument("--id", required=True)
    s.add_argument("--cube", required=True, help="wire cube message or .hdz file")
    s.add_argument("--rgb", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--visnir")
    s.add_argument("--nir")
    s.add_argument("--tag", action="append", default=[], help="key=value, repeat for all four tags")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("validate", help="check a dataset against its manifest")
    s.add_argument("dataset")
    s.add_argument("--report")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="per-class segment and image counts")
    s.add_argument("dataset")
    s.add_argument("--report")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("embed", help="RGB vs HSI embedding and separability")
    s.add_argument("dataset")
    s.add_argument("--method", choices=("tsne", "pca"), default="tsne")
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--learning-rate", type=float, default=200.0)
    s.add_argument("--report")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("bench", help="stage throughput on synthetic frames")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--size", type=_size, default=(128, 128))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("wire", help="wire-format tools")
    wsub = s.add_subparsers(dest="wire_command", required=True)
    w = wsub.add_parser("inspect", help="list the records of a capture file")
    w.add_argument("file")
    w.add_argument("--limit", type=int, default=0)
    w.set_defaults(func=cmd_wire_inspect)
    return p


def _subparser(parser, names):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name in names:
                if name in action.choices:
                    return action.choices[name]
    return None


def _apply_config(parser, argv, path) -> None:
    """Feed ``[command]`` keys from an INI file in as flag defaults (flags still win)."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise _ConfigFailure(f"config file not found: {path}")
    base = Path(path).parent
    for section in cp.sections():
        sp = _subparser(parser, [section.split()[0]])
        if sp is None:
            raise _ConfigFailure(f"{path}: unknown section [{section}]")
        if " " in section:
            sp = _subparser(sp, section.split()[1:])
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in cp[section].items():
            dest = key.replace("-", "_")
            if dest not in actions:
                raise _ConfigFailure(f"{path}: [{section}] has no option {key!r}")
            a = actions[dest]
            if isinstance(a, argparse._StoreTrueAction):
                val = cp[section].getboolean(key)
            elif a.type is not None:
                val = a.type(raw)
            else:
                val = str(base / raw) if dest in _PATH_OPTIONS else raw
            defaults[dest] = val
            a.required = False
        sp.set_defaults(**defaults)


def main(argv=None) -> int:
    from .errors import ConfigurationError, HyperdriveError, InvalidArgumentError, ValidationError

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            _apply_config(parser, argv, known.config)
    except (_ConfigFailure, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"hyperdrive: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (_ConfigFailure, ConfigurationError, ValidationError, InvalidArgumentError) as exc:
        print(f"hyperdrive: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HyperdriveError as exc:
        print(f"hyperdrive: error: {exc}", file=sys.stderr)
        return EXIT_FRAME_ERRORS
    except OSError as exc:
        print(f"hyperdrive: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
