"""On-disk dataset: samples, manifest, validation and label statistics.

Layout of a dataset directory (byte formats in docs/formats.md)::

    manifest.txt
    ontology.txt
    samples/<id>/cube.hdz     per-plane deflate-compressed datacube
    samples/<id>/rgb.png      8-bit RGB registered to the cube
    samples/<id>/mask.png     label indices into ontology.txt
    samples/<id>/visnir.arr   white-reference spectrum (wire spectrum message)
    samples/<id>/nir.arr
    samples/<id>/tags.txt     scene tags, key=value

Samples are written to a temporary directory and renamed into place; the
manifest is rewritten with ``os.replace`` under a lock file, so a crash
never leaves a manifest entry pointing at a partial sample.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from filelock import FileLock
from PIL import Image
from scipy import ndimage

from .cube import DataCube
from .errors import StorageError, ValidationError, WireError
from .radiometry import SpectrometerReading
from .wire import decode_spectrum, encode_spectrum

__all__ = [
    "AtlasLabel",
    "Ontology",
    "SceneTags",
    "TAG_VOCABULARY",
    "SampleRecord",
    "ManifestEntry",
    "Manifest",
    "Violation",
    "ValidationReport",
    "ClassStats",
    "encode_hdz",
    "decode_hdz",
    "create_dataset",
    "open_manifest",
    "write_sample",
    "read_sample",
    "read_mask",
    "validate_manifest",
    "compute_stats",
    "count_segments",
    "build_stats_manifest",
    "TABLE_ROWS",
]

MANIFEST = "manifest.txt"
ONTOLOGY = "ontology.txt"
LOCK = ".manifest.lock"
SAMPLE_FILES = ("cube.hdz", "rgb.png", "mask.png", "visnir.arr", "nir.arr", "tags.txt")
_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,127}$")


# --------------------------------------------------------------------------- ontology


@dataclass(frozen=True)
class AtlasLabel:
    index: int
    level1: str
    level2: Optional[str] = None

    @property
    def key(self) -> tuple:
        return (self.level1, self.level2)

    def __str__(self) -> str:
        return self.level1 if self.level2 is None else f"{self.level1}/{self.level2}"


class Ontology:
    """Hierarchical label registry loaded from a tab-separated table.

    Every level-2 label is registered together with its level-1 parent, so
    a child is by construction a registered child of its parent. Index 0 is
    the unlabeled class and is excluded from statistics.
    """

    def __init__(self, labels: Sequence[AtlasLabel]):
        self.labels = {}
        seen = set()
        for lab in labels:
            if lab.index in self.labels:
                raise ValidationError(f"duplicate label index {lab.index}")
            if lab.key in seen:
                raise ValidationError(f"duplicate label {lab}")
            if not 0 <= lab.index < 65536:
                raise ValidationError(f"label index {lab.index} outside [0, 65535]")
            seen.add(lab.key)
            self.labels[lab.index] = lab
        if 0 not in self.labels:
            raise ValidationError("ontology must register index 0 (unlabeled)")
        self._by_key = {lab.key: lab for lab in self.labels.values()}

    @classmethod
    def from_text(cls, text: str) -> "Ontology":
        labels = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 3:
                raise ValidationError(f"ontology line {n}: expected index, level1, level2")
            try:
                idx = int(parts[0])
            except ValueError:
                raise ValidationError(f"ontology line {n}: bad index {parts[0]!r}") from None
            labels.append(AtlasLabel(idx, parts[1], None if parts[2] == "-" else parts[2]))
        return cls(labels)

    @classmethod
    def read(cls, path) -> "Ontology":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def default(cls) -> "Ontology":
        return cls.from_text((resources.files("hyperdrive") / "data" / "atlas.txt").read_text())

    def text(self) -> str:
        lines = ["# index\tlevel1\tlevel2"]
        for idx in sorted(self.labels):
            lab = self.labels[idx]
            lines.append(f"{idx}\t{lab.level1}\t{lab.level2 or '-'}")
        return "\n".join(lines) + "\n"

    def lookup(self, level1: str, level2: Optional[str] = None) -> AtlasLabel:
        try:
            return self._by_key[(level1, level2)]
        except KeyError:
            raise ValidationError(f"label {level1}/{level2} is not registered") from None

    def children(self, level1: str) -> list:
        return [lab.level2 for lab in self.labels.values() if lab.level1 == level1 and lab.level2]

    def is_registered(self, index: int) -> bool:
        return int(index) in self.labels

    @property
    def classes(self) -> list:
        """Labeled classes (every index except 0), in index order."""
        return [self.labels[i] for i in sorted(self.labels) if i != 0]

    def __len__(self) -> int:
        return len(self.labels)


# --------------------------------------------------------------------------- scene tags

TAG_VOCABULARY = {
    "biome": ("forest", "grassland", "shrubland", "urban", "suburban", "desert", "wetland"),
    "time_of_day": ("sunrise", "morning", "midday", "afternoon", "sunset", "night"),
    "season": ("spring", "summer", "autumn", "winter"),
    "weather": ("clear", "partly cloudy", "overcast", "rain", "fog", "snow"),
}


@dataclass(frozen=True)
class SceneTags:
    biome: str
    time_of_day: str
    season: str
    weather: str

    def __post_init__(self):
        for key, allowed in TAG_VOCABULARY.items():
            value = getattr(self, key)
            if value not in allowed:
                raise ValidationError(f"{key}={value!r} not in {allowed}")

    def text(self) -> str:
        return "".join(f"{k}={getattr(self, k)}\n" for k in TAG_VOCABULARY)

    @classmethod
    def from_text(cls, text: str) -> "SceneTags":
        values = {}
        for line in text.splitlines():
            if line.strip() and not line.startswith("#"):
                k, _, v = line.partition("=")
                values[k.strip()] = v.strip()
        missing = [k for k in TAG_VOCABULARY if k not in values]
        if missing:
            raise ValidationError(f"missing scene tags: {', '.join(missing)}")
        return cls(**{k: values[k] for k in TAG_VOCABULARY})


DEFAULT_TAGS = SceneTags("forest", "midday", "summer", "clear")


# --------------------------------------------------------------------------- cube container

_HDZ_MAGIC = b"HDZ1"
_HDZ_VERSION = 1
_HDZ_FIXED = struct.Struct("<4sHQIIIBBB")
_HDZ_DTYPES = {0: np.dtype("<u2"), 1: np.dtype("<f4"), 2: np.dtype("<f8")}
_HDZ_CODES = {v: k for k, v in _HDZ_DTYPES.items()}
_HDZ_SHUFFLE = 0x01
_U32 = struct.Struct("<I")


def encode_hdz(cube: DataCube, level: int = 6) -> bytes:
    """Serialize a cube with each channel plane deflated independently.

    Planes are byte-shuffled before compression (all first bytes, then all
    second bytes, ...), which groups the slowly varying exponent bytes of
    smooth float data together.
    """
    dt = cube.data.dtype.newbyteorder("<")
    if dt not in _HDZ_CODES:
        raise ValidationError(f"cube dtype {cube.data.dtype} not storable (u16, f32, f64)")
    fid = cube.frame_id.encode("utf-8")
    if len(fid) > 255:
        raise ValidationError("frame id longer than 255 bytes")
    h, w, c = cube.shape
    parts = [
        _HDZ_FIXED.pack(_HDZ_MAGIC, _HDZ_VERSION, int(cube.timestamp_ns), h, w, c,
                        _HDZ_CODES[dt], _HDZ_SHUFFLE, len(fid)),
        fid,
        cube.wavelengths_nm.astype("<f8").tobytes(),
        cube.fwhm_nm.astype("<f8").tobytes(),
        cube.band_valid.astype(np.uint8).tobytes(),
        np.packbits(cube.validity_mask.ravel()).tobytes(),
    ]
    data = cube.data.astype(dt, copy=False)
    for k in range(c):
        plane = np.ascontiguousarray(data[..., k]).view(np.uint8).reshape(-1, dt.itemsize)
        z = zlib.compress(np.ascontiguousarray(plane.T).tobytes(), level)
        parts.append(_U32.pack(len(z)))
        parts.append(z)
    return b"".join(parts)


def decode_hdz(buf: bytes, header_only: bool = False):
    """Inverse of :func:`encode_hdz`; with ``header_only`` returns ``(h, w, c)``."""
    try:
        magic, ver, ts, h, w, c, code, flags, nfid = _HDZ_FIXED.unpack_from(buf, 0)
    except struct.error:
        raise ValidationError("cube file shorter than its header") from None
    if magic != _HDZ_MAGIC:
        raise ValidationError(f"bad cube magic {magic!r}")
    if ver != _HDZ_VERSION:
        raise ValidationError(f"unsupported cube version {ver}")
    if code not in _HDZ_DTYPES:
        raise ValidationError(f"unknown cube dtype code {code}")
    if header_only:
        return h, w, c
    dt = _HDZ_DTYPES[code]
    off = _HDZ_FIXED.size
    try:
        fid = bytes(buf[off : off + nfid]).decode("utf-8")
        off += nfid
        wl = np.frombuffer(buf, "<f8", c, off)
        off += 8 * c
        fw = np.frombuffer(buf, "<f8", c, off)
        off += 8 * c
        bv = np.frombuffer(buf, np.uint8, c, off).astype(bool)
        off += c
        nmask = (h * w + 7) // 8
        mask = np.unpackbits(np.frombuffer(buf, np.uint8, nmask, off))[: h * w].reshape(h, w).astype(bool)
        off += nmask
        data = np.empty((h, w, c), dtype=dt)
        for k in range(c):
            (n,) = _U32.unpack_from(buf, off)
            off += 4
            raw = zlib.decompress(buf[off : off + n])
            off += n
            plane = np.frombuffer(raw, np.uint8).reshape(dt.itemsize, h * w)
            if flags & _HDZ_SHUFFLE:
                plane = plane.T
            data[..., k] = np.ascontiguousarray(plane).view(dt).reshape(h, w)
    except (struct.error, ValueError, zlib.error) as exc:
        raise ValidationError(f"corrupt cube file: {exc}") from exc
    if off != len(buf):
        raise ValidationError(f"cube file has {len(buf) - off} trailing bytes")
    return DataCube(data, wl.copy(), fw.copy(), ts, mask, bv, frame_id=fid)


# --------------------------------------------------------------------------- samples and manifest


@dataclass
class SampleRecord:
    """One dataset sample held in memory.

    ``rgb`` is an ``(H, W, 3)`` uint8 image registered to the cube; ``mask``
    holds ontology indices. Spectra are the white references used for the
    reflectance conversion.
    """

    id: str
    cube: DataCube
    rgb: np.ndarray
    mask: np.ndarray
    tags: SceneTags = DEFAULT_TAGS
    visnir: Optional[SpectrometerReading] = None
    nir: Optional[SpectrometerReading] = None
    timestamp_ns: Optional[int] = None

    def __post_init__(self):
        if self.timestamp_ns is None:
            self.timestamp_ns = int(self.cube.timestamp_ns)

    def check(self, ontology: Ontology) -> None:
        if not _ID_RE.match(self.id):
            raise ValidationError(f"sample id {self.id!r} must match {_ID_RE.pattern}")
        hw = self.cube.shape[:2]
        if self.mask.shape != hw:
            raise ValidationError(f"{self.id}: mask {self.mask.shape} does not match cube {hw}")
        if self.rgb.shape != hw + (3,) or self.rgb.dtype != np.uint8:
            raise ValidationError(f"{self.id}: rgb must be uint8 {hw + (3,)}, got {self.rgb.dtype} {self.rgb.shape}")
        bad = [int(v) for v in np.unique(self.mask) if not ontology.is_registered(v)]
        if bad:
            raise ValidationError(f"{self.id}: mask uses unregistered labels {bad}")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    timestamp_ns: int
    shape: tuple
    checksums: dict

    def line(self) -> str:
        files = "\t".join(f"{k}={v}" for k, v in sorted(self.checksums.items()))
        h, w, c = self.shape
        return f"{self.id}\t{self.timestamp_ns}\t{h}\t{w}\t{c}\t{files}"


@dataclass
class Manifest:
    root: Path
    entries: list = field(default_factory=list)
    ontology: Ontology = field(default_factory=Ontology.default)
    rig_digest: str = "-"

    def ids(self) -> list:
        return [e.id for e in self.entries]

    def entry(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == sample_id:
                return e
        raise KeyError(sample_id)

    def sample_dir(self, sample_id: str) -> Path:
        return self.root / "samples" / sample_id

    def __len__(self) -> int:
        return len(self.entries)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_text(m: Manifest) -> str:
    lines = ["# hyperdrive manifest 1", f"rig_digest\t{m.rig_digest}",
             f"ontology\t{ONTOLOGY}\t{hashlib.sha256(m.ontology.text().encode()).hexdigest()}"]
    for e in sorted(m.entries, key=lambda e: (e.timestamp_ns, e.id)):
        lines.append(e.line())
    return "\n".join(lines) + "\n"


def _parse_manifest(root: Path, text: str) -> tuple:
    """Returns (manifest, problems); problems are (sample_id, kind, detail)."""
    problems = []
    rig, ont_sha, entries = "-", None, []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "rig_digest":
            rig = parts[1] if len(parts) > 1 else "-"
        elif parts[0] == "ontology":
            ont_sha = parts[2] if len(parts) > 2 else None
        else:
            try:
                sums = dict(p.split("=", 1) for p in parts[5:])
                entries.append(ManifestEntry(parts[0], int(parts[1]),
                                             (int(parts[2]), int(parts[3]), int(parts[4])), sums))
            except (ValueError, IndexError):
                problems.append((parts[0], "parse", f"manifest line {n} is malformed"))
    ont_path = root / ONTOLOGY
    try:
        ontology = Ontology.read(ont_path)
        if ont_sha and hashlib.sha256(ontology.text().encode()).hexdigest() != ont_sha:
            problems.append(("-", "checksum", f"{ONTOLOGY} does not match the manifest"))
    except FileNotFoundError:
        problems.append(("-", "missing-file", ONTOLOGY))
        ontology = Ontology.default()
    return Manifest(root, entries, ontology, rig), problems


def open_manifest(root) -> Manifest:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise StorageError(f"no manifest at {path}")
    m, problems = _parse_manifest(root, path.read_text())
    fatal = [p for p in problems if p[1] == "parse"]
    if fatal:
        raise ValidationError("; ".join(p[2] for p in fatal))
    return m


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def create_dataset(root, ontology: Optional[Ontology] = None, rig_digest: str = "-") -> Manifest:
    """Initialise an empty dataset directory (idempotent for an empty one)."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    if (root / MANIFEST).exists():
        m = open_manifest(root)
        if m.entries:
            raise StorageError(f"{root} already holds a dataset with {len(m)} samples")
    m = Manifest(root, [], ontology or Ontology.default(), rig_digest)
    with FileLock(str(root / LOCK)):
        _atomic_write_text(root / ONTOLOGY, m.ontology.text())
        _atomic_write_text(root / MANIFEST, _manifest_text(m))
    return m


def _as_manifest(manifest) -> Manifest:
    return manifest if isinstance(manifest, Manifest) else open_manifest(manifest)


def _write_mask(path: Path, mask: np.ndarray) -> None:
    if mask.max(initial=0) < 256:
        Image.fromarray(mask.astype(np.uint8), mode="L").save(path, optimize=False)
    else:
        Image.fromarray(mask.astype(np.uint16)).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int64)


def write_sample(manifest, record: SampleRecord) -> ManifestEntry:
    """Store ``record`` and register it in the manifest.

    Raises
    ------
    ValidationError
        Record invariants fail or the id already exists.
    StorageError
        A file could not be written; nothing is registered and the
        temporary sample directory is removed.
    """
    m = _as_manifest(manifest)
    record.check(m.ontology)
    samples = m.root / "samples"
    final = samples / record.id
    if final.exists():
        raise ValidationError(f"sample {record.id!r} already exists")
    tmp = Path(tempfile.mkdtemp(prefix=f".tmp-{record.id}-", dir=samples))
    try:
        (tmp / "cube.hdz").write_bytes(encode_hdz(record.cube))
        Image.fromarray(record.rgb, mode="RGB").save(tmp / "rgb.png")
        _write_mask(tmp / "mask.png", record.mask)
        for name, spec in (("visnir", record.visnir), ("nir", record.nir)):
            if spec is not None:
                (tmp / f"{name}.arr").write_bytes(encode_spectrum(spec))
        (tmp / "tags.txt").write_text(record.tags.text())
        sums = {p.name: _sha256(p) for p in sorted(tmp.iterdir())}
        entry = ManifestEntry(record.id, int(record.timestamp_ns), record.cube.shape, sums)
        with FileLock(str(m.root / LOCK)):
            current = open_manifest(m.root)
            if record.id in current.ids() or final.exists():
                raise ValidationError(f"sample {record.id!r} already exists")
            os.rename(tmp, final)
            current.entries.append(entry)
            try:
                _atomic_write_text(m.root / MANIFEST, _manifest_text(current))
            except BaseException:
                shutil.rmtree(final, ignore_errors=True)
                raise
        m.entries = current.entries
        return entry
    except ValidationError:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise StorageError(f"writing sample {record.id!r} failed: {exc}") from exc
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def read_sample(manifest, sample_id: str) -> SampleRecord:
    m = _as_manifest(manifest)
    e = m.entry(sample_id)
    d = m.sample_dir(sample_id)
    cube = decode_hdz((d / "cube.hdz").read_bytes())
    with Image.open(d / "rgb.png") as im:
        rgb = np.asarray(im.convert("RGB"))
    spectra = {}
    for name in ("visnir", "nir"):
        p = d / f"{name}.arr"
        spectra[name] = decode_spectrum(p.read_bytes()) if p.exists() else None
    tags = SceneTags.from_text((d / "tags.txt").read_text())
    return SampleRecord(e.id, cube, rgb, read_mask(d / "mask.png"), tags,
                        spectra["visnir"], spectra["nir"], e.timestamp_ns)


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    sample_id: str
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.sample_id}\t{self.kind}\t{self.detail}"


@dataclass
class ValidationReport:
    violations: list
    samples_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def text(self) -> str:
        lines = [f"samples\t{self.samples_checked}", f"violations\t{len(self.violations)}"]
        lines += [str(v) for v in self.violations]
        return "\n".join(lines) + "\n"


def validate_manifest(manifest) -> ValidationReport:
    """Check every entry; violations are collected, never raised.

    Content checks (dimensions, labels, tags) run only on files whose
    checksum matched, so one damaged file yields exactly one violation.
    """
    root = Path(manifest.root if isinstance(manifest, Manifest) else manifest)
    path = root / MANIFEST
    if not path.exists():
        return ValidationReport([Violation("-", "missing-file", MANIFEST)], 0)
    m, problems = _parse_manifest(root, path.read_text())
    out = [Violation(*p) for p in problems]
    seen = set()
    for e in m.entries:
        if e.id in seen:
            out.append(Violation(e.id, "duplicate-id", "id appears more than once"))
            continue
        seen.add(e.id)
        d = m.sample_dir(e.id)
        good = set()
        for name in SAMPLE_FILES:
            p = d / name
            if name not in e.checksums:
                if name in ("visnir.arr", "nir.arr"):
                    continue
                out.append(Violation(e.id, "missing-entry", f"{name} not recorded in manifest"))
            elif not p.exists():
                out.append(Violation(e.id, "missing-file", name))
            elif _sha256(p) != e.checksums[name]:
                out.append(Violation(e.id, "checksum", name))
            else:
                good.add(name)
        hw = tuple(e.shape[:2])
        if "cube.hdz" in good:
            try:
                dims = decode_hdz((d / "cube.hdz").read_bytes(), header_only=True)
                if tuple(dims) != tuple(e.shape):
                    out.append(Violation(e.id, "dimensions", f"cube {dims} vs manifest {e.shape}"))
            except ValidationError as exc:
                out.append(Violation(e.id, "format", f"cube.hdz: {exc}"))
        if "mask.png" in good:
            try:
                mask = read_mask(d / "mask.png")
            except OSError as exc:
                out.append(Violation(e.id, "format", f"mask.png: {exc}"))
            else:
                if mask.shape != hw:
                    out.append(Violation(e.id, "dimensions", f"mask {mask.shape} vs cube {hw}"))
                bad = [int(v) for v in np.unique(mask) if not m.ontology.is_registered(v)]
                if bad:
                    out.append(Violation(e.id, "label", f"unregistered mask values {bad}"))
        if "rgb.png" in good:
            with Image.open(d / "rgb.png") as im:
                if (im.height, im.width) != hw:
                    out.append(Violation(e.id, "dimensions", f"rgb {(im.height, im.width)} vs cube {hw}"))
        for name in ("visnir.arr", "nir.arr"):
            if name in good:
                try:
                    decode_spectrum((d / name).read_bytes())
                except WireError as exc:
                    out.append(Violation(e.id, "format", f"{name}: {exc}"))
        if "tags.txt" in good:
            try:
                SceneTags.from_text((d / "tags.txt").read_text())
            except ValidationError as exc:
                out.append(Violation(e.id, "tags", str(exc)))
    return ValidationReport(out, len(m.entries))


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True)
class ClassStats:
    segment_count: int = 0
    image_count: int = 0


# structuring element for 4-connectivity
_FOUR = ndimage.generate_binary_structure(2, 1)


def count_segments(mask: np.ndarray) -> dict:
    """``{label index: number of 4-connected components}`` for labels present."""
    out = {}
    for v in np.unique(mask):
        if v == 0:
            continue
        _, n = ndimage.label(mask == v, structure=_FOUR)
        out[int(v)] = n
    return out


def compute_stats(manifest) -> dict:
    """Per-class ``ClassStats`` keyed by ``(level1, level2)``.

    Every registered class appears, with zeros if it never occurs.
    ``level2`` is ``None`` for classes without a refinement.

    Raises
    ------
    ValidationError
        The manifest has violations.
    """
    m = _as_manifest(manifest)
    report = validate_manifest(m)
    if not report.ok:
        raise ValidationError(f"manifest has {len(report.violations)} violations; run validate")
    seg = {lab.index: 0 for lab in m.ontology.classes}
    img = dict(seg)
    for e in m.entries:
        for idx, n in count_segments(read_mask(m.sample_dir(e.id) / "mask.png")).items():
            seg[idx] += n
            img[idx] += 1
    return {m.ontology.labels[i].key: ClassStats(seg[i], img[i]) for i in seg}


def stats_table(stats: dict) -> str:
    lines = ["level1\tlevel2\tsegments\timages"]
    for (l1, l2), s in stats.items():
        lines.append(f"{l1}\t{l2 or '-'}\t{s.segment_count}\t{s.image_count}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- synthetic label sets

# (level1, level2, segments, images) per class of the published breakdown
TABLE_ROWS = (
    ("path", "dirt", 198, 144),
    ("path", "rock/gravel", 303, 213),
    ("path", "paved", 143, 116),
    ("path", "concrete", 117, 92),
    ("vegetation", "ground cover", 806, 464),
    ("vegetation", "bush/tree", 795, 503),
    ("vegetation", "leaves/mulch", 233, 158),
    ("obstacle", "vehicle", 92, 68),
    ("obstacle", "infrastructure", 241, 181),
    ("obstacle", "road signage", 127, 98),
    ("person", None, 15, 15),
)


def _blob_masks(rows, ontology: Ontology, size: int) -> list:
    """Masks realizing each ``(segments, images)`` target with square blobs.

    Blobs are 2x2 squares on a 4-pixel grid, so no two blobs touch. Label
    ``k`` appears in images ``0 .. images-1`` with one blob each, and the
    surplus ``segments - images`` blobs are dealt round-robin over the same
    images.
    """
    n_images = max(r[3] for r in rows) if rows else 0
    counts = [dict() for _ in range(n_images)]
    for l1, l2, segs, imgs in rows:
        if segs < imgs or (imgs == 0 and segs > 0):
            raise ValidationError(f"{l1}/{l2}: cannot have fewer segments than images")
        idx = ontology.lookup(l1, l2).index
        for i in range(imgs):
            counts[i][idx] = 1 + (segs - imgs) // imgs + (1 if i < (segs - imgs) % imgs else 0)
    cells = (size // 4) ** 2
    masks = []
    for per in counts:
        need = sum(per.values())
        if need > cells:
            raise ValidationError(f"{need} blobs do not fit a {size}x{size} mask")
        mask = np.zeros((size, size), dtype=np.int64)
        k = 0
        for idx, n in sorted(per.items()):
            for _ in range(n):
                r, c = divmod(k, size // 4)
                mask[4 * r : 4 * r + 2, 4 * c : 4 * c + 2] = idx
                k += 1
        masks.append(mask)
    return masks


def build_stats_manifest(root, rows=TABLE_ROWS, size: int = 32, channels: int = 33,
                         seed: int = 0) -> Manifest:
    """Write a dataset whose label statistics equal ``rows`` exactly."""
    m = create_dataset(root)
    masks = _blob_masks(rows, m.ontology, size)
    rng = np.random.default_rng(seed)
    wl = np.linspace(660.0, 1650.0, channels)
    for i, mask in enumerate(masks):
        data = rng.random((size, size, channels)).astype(np.float32)
        cube = DataCube(data, wl, np.full(channels, 10.0), timestamp_ns=i * 1_000_000_000)
        rgb = np.zeros((size, size, 3), np.uint8)
        write_sample(m, SampleRecord(f"s{i:05d}", cube, rgb, mask))
    return m
