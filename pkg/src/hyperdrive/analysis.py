"""Pixel sampling, 2-D embeddings and class separability scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateRankError, InvalidArgumentError, NumericalError, UndefinedScoreError

__all__ = [
    "LabeledSpectra",
    "Embedding",
    "SeparabilityReport",
    "sample_pixels",
    "pca_embed",
    "tsne_embed",
    "conditional_probabilities",
    "joint_probabilities",
    "kl_divergence",
    "kl_gradient",
    "silhouette",
    "centroid_distances",
    "separability_report",
    "write_embedding",
]

TSNE_MAX_POINTS = 5000
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM = (0.5, 0.8)
MIN_GAIN = 0.01


@dataclass
class LabeledSpectra:
    matrix: np.ndarray
    labels: np.ndarray
    channels: Sequence = ()
    class_names: dict = field(default_factory=dict)
    positions: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.labels.shape[0]:
            raise InvalidArgumentError("matrix must be (n, d) with one label per row")
        if self.matrix.shape[0] < 2:
            raise InvalidArgumentError("need at least two spectra")
        if not np.all(np.isfinite(self.matrix)):
            raise InvalidArgumentError("spectra contain non-finite values")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class Embedding:
    coords: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    kl_trace: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise NumericalError("embedding has non-finite coordinates")


# --------------------------------------------------------------------------- sampling


def sample_pixels(manifest, per_class: int = 200, seed: int = 0) -> tuple[LabeledSpectra, LabeledSpectra]:
    """Stratified pixel sample from labeled samples; returns ``(hsi, rgb)``.

    Both sets hold the same pixels in the same order. Only pixels that are
    labeled (mask > 0), valid in the cube and finite in every channel are
    eligible. Classes with fewer eligible pixels than ``per_class`` are
    taken whole and a warning is recorded.
    """
    from .dataset import _as_manifest, decode_hdz, read_mask

    if per_class < 1:
        raise InvalidArgumentError("per_class must be positive")
    m = _as_manifest(manifest)
    pools: dict = {}
    for si, e in enumerate(m.entries):
        d = m.sample_dir(e.id)
        mask = read_mask(d / "mask.png")
        cube = decode_hdz((d / "cube.hdz").read_bytes())
        ok = cube.validity_mask & np.all(np.isfinite(cube.data), axis=-1) & (mask > 0)
        flat = np.flatnonzero(ok)
        labs = mask.ravel()[flat]
        for lab in np.unique(labs):
            pools.setdefault(int(lab), []).append(
                np.column_stack([np.full(np.count_nonzero(labs == lab), si), flat[labs == lab]]))
    rng = np.random.default_rng(seed)
    chosen, notes = [], []
    for lab in sorted(pools):
        pool = np.concatenate(pools[lab])
        if len(pool) < per_class:
            msg = f"class {m.ontology.labels[lab]} has {len(pool)} pixels, fewer than {per_class}; taking all"
            warnings.warn(msg)
            notes.append(msg)
            pick = pool
        else:
            pick = pool[np.sort(rng.choice(len(pool), per_class, replace=False))]
        chosen.append(np.column_stack([pick, np.full(len(pick), lab)]))
    if not chosen:
        raise InvalidArgumentError("no labeled pixels in the dataset")
    chosen = np.concatenate(chosen)

    from PIL import Image

    hsi = np.empty((len(chosen), 0))
    rgb = np.empty((len(chosen), 3))
    wl = None
    for si in np.unique(chosen[:, 0]):
        rows = np.flatnonzero(chosen[:, 0] == si)
        d = m.sample_dir(m.entries[si].id)
        cube = decode_hdz((d / "cube.hdz").read_bytes())
        if wl is None:
            wl = cube.wavelengths_nm
            hsi = np.empty((len(chosen), cube.channels))
        with Image.open(d / "rgb.png") as im:
            img = np.asarray(im.convert("RGB"))
        hsi[rows] = cube.data.reshape(-1, cube.channels)[chosen[rows, 1]]
        rgb[rows] = img.reshape(-1, 3)[chosen[rows, 1]] / 255.0
    names = {lab: str(m.ontology.labels[lab]) for lab in pools}
    labels = chosen[:, 2]
    pos = chosen[:, :2]
    return (LabeledSpectra(hsi, labels, [f"{w:.1f} nm" for w in wl], names, pos, notes),
            LabeledSpectra(rgb, labels, ["red", "green", "blue"], names, pos, notes))


# --------------------------------------------------------------------------- PCA


def pca_embed(data, k: int = 2) -> Embedding:
    """Project centred data onto its top-``k`` principal directions.

    Components are in descending eigenvalue order, each signed so that its
    largest-magnitude loading is positive. ``params`` keeps the mean,
    components and eigenvalues so the projection can be inverted.

    Raises
    ------
    DegenerateRankError
        ``n <= k`` or the data has no variance at all.
    """
    x = data.matrix if isinstance(data, LabeledSpectra) else np.asarray(data, dtype=float)
    n, d = x.shape
    if k < 1 or k > d:
        raise InvalidArgumentError(f"k must be in [1, {d}]")
    if n <= k:
        raise DegenerateRankError(f"need more than {k} points, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    if evals[0] <= 0.0:
        raise DegenerateRankError("data has zero variance")
    comps = evecs[:, :k].T
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), idx])
    comps = comps * signs[:, None]
    coords = xc @ comps.T
    return Embedding(coords, "pca", {"k": k, "mean": mean, "components": comps,
                                     "eigenvalues": evals[:k],
                                     "explained_variance_ratio": evals[:k] / evals.sum()})


# --------------------------------------------------------------------------- t-SNE


def _row_entropy(d_row, beta):
    # shift by the minimum distance so exp never underflows to all zeros
    p = np.exp(-(d_row - d_row.min()) * beta)
    s = p.sum()
    h = np.log(s) + beta * np.dot(d_row - d_row.min(), p) / s
    return h, p / s


def conditional_probabilities(x, perplexity: float, tol: float = 1e-10, max_iter: int = 200):
    """Row-conditional Gaussian affinities matching a target perplexity.

    Each precision ``beta_i`` is found by bisection (in log space, after
    bracketing) so that the row entropy equals ``log(perplexity)``.
    Returns ``(P, betas, entropies)`` with ``P[i, i] == 0``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    d = cdist(x, x, "sqeuclidean")
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.empty(n)
    ents = np.empty(n)
    for i in range(n):
        row = np.delete(d[i], i)
        if np.ptp(row) == 0.0:
            # equidistant neighbours: every bandwidth gives the uniform row
            betas[i], ents[i] = 1.0, np.log(n - 1)
            P[i, np.arange(n) != i] = 1.0 / (n - 1)
            continue
        lo, hi = 0.0, np.inf
        med = np.median(row)
        beta = 1.0 / med if med > 0 else 1.0
        for _ in range(max_iter):
            h, p = _row_entropy(row, beta)
            if abs(h - target) <= tol:
                break
            if h > target:  # too flat: sharpen
                lo = beta
                beta = min(beta * 2.0, 1e300) if hi == np.inf else np.sqrt(lo * hi)
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else np.sqrt(lo * hi)
        betas[i], ents[i] = beta, h
        P[i, np.arange(n) != i] = p
    return P, betas, ents


def joint_probabilities(x, perplexity: float) -> np.ndarray:
    """Symmetrized affinities ``(P_cond + P_cond.T) / 2n``; sums to 1."""
    P, _, _ = conditional_probabilities(x, perplexity)
    P = (P + P.T) / (2.0 * P.shape[0])
    return P


def _student(y):
    sq = np.sum(y * y, axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (y @ y.T), 0.0)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    return num


def kl_divergence(P, y) -> float:
    """``KL(P || Q)`` for low-dimensional points ``y``."""
    num = _student(np.asarray(y, dtype=float))
    Q = np.maximum(num / num.sum(), 1e-300)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def kl_gradient(P, y) -> np.ndarray:
    """Analytic gradient ``4 sum_j (p_ij - q_ij)(y_i - y_j)/(1 + |y_i - y_j|^2)``."""
    y = np.asarray(y, dtype=float)
    num = _student(y)
    W = (P - num / num.sum()) * num
    return 4.0 * (W.sum(axis=1)[:, None] * y - W @ y)


def tsne_embed(data, perplexity: float = 30.0, iterations: int = 1000, learning_rate: float = 200.0,
               seed: int = 0, record_every: int = 1) -> Embedding:
    """Exact t-SNE with the classic optimisation schedule.

    Early exaggeration 12 for the first 250 iterations, momentum 0.5 then
    0.8, per-coordinate adaptive gains. Initialised from the PCA projection
    rescaled to standard deviation 1e-4. ``kl_trace`` holds the
    unexaggerated KL divergence every ``record_every`` iterations.

    Raises
    ------
    InvalidArgumentError
        ``3 * perplexity >= n``, ``iterations < 50`` or ``n`` above the cap.
    NumericalError
        The gradient became non-finite; the message names the iteration.
    """
    x = data.matrix if isinstance(data, LabeledSpectra) else np.asarray(data, dtype=float)
    n = x.shape[0]
    if perplexity <= 0 or 3.0 * perplexity >= n:
        raise InvalidArgumentError(f"perplexity {perplexity} infeasible for {n} points (need 3*perplexity < n)")
    if iterations < 50:
        raise InvalidArgumentError("iterations must be at least 50")
    if n > TSNE_MAX_POINTS:
        raise InvalidArgumentError(f"exact t-SNE is capped at {TSNE_MAX_POINTS} points")

    P = np.maximum(joint_probabilities(x, perplexity), 1e-300)
    np.fill_diagonal(P, 0.0)
    y = _tsne_init(x, seed)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    trace = []
    p_log_p = float(np.sum(P[P > 0] * np.log(P[P > 0])))
    for it in range(iterations):
        early = it < EXAGGERATION_ITERS
        Pe = P * EXAGGERATION if early else P
        num = _student(y)
        z = num.sum()
        W = (Pe - num / z) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * y - W @ y)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at iteration {it}", it)
        if it % record_every == 0:
            # KL = sum P log P - sum P log(num / z), using the true P
            mask = P > 0
            trace.append(p_log_p - float(np.sum(P[mask] * np.log(np.maximum(num[mask], 1e-300)))) + np.log(z))
        mom = MOMENTUM[0] if early else MOMENTUM[1]
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = mom * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    return Embedding(y, "tsne", {"perplexity": perplexity, "iterations": iterations,
                                 "learning_rate": learning_rate, "seed": seed}, np.asarray(trace))


def _tsne_init(x, seed):
    try:
        coords = pca_embed(x, 2).coords
        scale = coords[:, 0].std()
        if not scale > 0:
            raise DegenerateRankError("flat")
        return coords / scale * 1e-4
    except (DegenerateRankError, InvalidArgumentError):
        return np.random.default_rng(seed).normal(0.0, 1e-4, (x.shape[0], 2))


# --------------------------------------------------------------------------- scores


def silhouette(coords, labels) -> float:
    """Mean Euclidean silhouette; points in singleton classes score 0."""
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise UndefinedScoreError("silhouette needs at least two classes")
    if len(classes) == len(labels):
        raise UndefinedScoreError("silhouette needs a class with two or more points")
    D = cdist(coords, coords)
    onehot = (labels[:, None] == classes[None, :]).astype(float)
    sizes = onehot.sum(axis=0)
    sums = D @ onehot
    own = np.searchsorted(classes, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(len(labels)), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(len(labels)), own] = np.inf
    b = means.min(axis=1)
    s = np.where(own_size > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    return float(s.mean())


def centroid_distances(coords, labels) -> tuple[np.ndarray, np.ndarray]:
    """``(classes, distance matrix)`` between per-class centroids."""
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    cents = np.stack([coords[labels == c].mean(axis=0) for c in classes])
    return classes, cdist(cents, cents)


@dataclass
class SeparabilityReport:
    hsi_silhouette: float
    rgb_silhouette: float
    classes: np.ndarray
    hsi_centroids: np.ndarray
    rgb_centroids: np.ndarray

    @property
    def higher(self) -> str:
        if self.hsi_silhouette == self.rgb_silhouette:
            return "tie"
        return "hsi" if self.hsi_silhouette > self.rgb_silhouette else "rgb"

    def text(self, class_names: Optional[dict] = None) -> str:
        names = [str((class_names or {}).get(int(c), c)) for c in self.classes]
        lines = [f"silhouette_hsi\t{self.hsi_silhouette:.6f}",
                 f"silhouette_rgb\t{self.rgb_silhouette:.6f}",
                 f"higher\t{self.higher}"]
        for tag, mat in (("hsi", self.hsi_centroids), ("rgb", self.rgb_centroids)):
            lines.append(f"centroid_distances_{tag}\t" + "\t".join(names))
            for name, row in zip(names, mat):
                lines.append(f"{name}\t" + "\t".join(f"{v:.6g}" for v in row))
        return "\n".join(lines) + "\n"


def separability_report(hsi_emb: Embedding, rgb_emb: Embedding, labels) -> SeparabilityReport:
    labels = np.asarray(labels)
    if not (len(hsi_emb.coords) == len(rgb_emb.coords) == len(labels)):
        raise InvalidArgumentError("embeddings and labels differ in length")
    if len(np.unique(labels)) < 2:
        raise UndefinedScoreError("separability needs at least two classes")
    classes, dh = centroid_distances(hsi_emb.coords, labels)
    _, dr = centroid_distances(rgb_emb.coords, labels)
    return SeparabilityReport(silhouette(hsi_emb.coords, labels), silhouette(rgb_emb.coords, labels),
                              classes, dh, dr)


def write_embedding(path, emb: Embedding, labels) -> None:
    """Plain-text ``x y label`` table with a parameter header."""
    header = f"method={emb.method} " + " ".join(
        f"{k}={v}" for k, v in emb.params.items() if np.isscalar(v))
    np.savetxt(path, np.column_stack([emb.coords, labels]), fmt=["%.9g", "%.9g", "%d"],
               header=header + "\nx y label")
