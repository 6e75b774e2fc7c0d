"""Report figures. Uses the non-interactive Agg backend throughout."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["embedding_figure", "stats_figure", "bench_figure", "scene_figure"]


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def embedding_figure(path, rgb_coords, hsi_coords, labels, class_names=None, scores=None, method="t-SNE"):
    """Side-by-side scatter: RGB embedding left, hyperspectral right."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    cmap = plt.get_cmap("tab10" if len(classes) <= 10 else "tab20")
    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    for ax, coords, title, key in ((axes[0], rgb_coords, "RGB", "rgb"), (axes[1], hsi_coords, "HSI", "hsi")):
        for i, c in enumerate(classes):
            sel = labels == c
            name = (class_names or {}).get(int(c), str(c))
            ax.scatter(coords[sel, 0], coords[sel, 1], s=6, color=cmap(i % cmap.N), label=name, alpha=0.8)
        sub = f"{method} embedding, {title}"
        if scores and key in scores:
            sub += f"  (silhouette {scores[key]:.3f})"
        ax.set_title(sub)
        ax.set_xticks([])
        ax.set_yticks([])
    handles, names = axes[1].get_legend_handles_labels()
    fig.legend(handles, names, loc="lower center", ncol=min(len(classes), 6), markerscale=3, frameon=False)
    fig.subplots_adjust(bottom=0.15)
    return _save(fig, path)


def stats_figure(path, stats: dict):
    """Grouped horizontal bars of segment and image counts per class."""
    names = [f"{l1}/{l2}" if l2 else l1 for (l1, l2) in stats]
    seg = np.array([s.segment_count for s in stats.values()])
    img = np.array([s.image_count for s in stats.values()])
    y = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(8, 0.35 * len(names) + 1.5))
    ax.barh(y - 0.2, seg, height=0.4, label="segments")
    ax.barh(y + 0.2, img, height=0.4, label="images")
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("count")
    ax.legend()
    return _save(fig, path)


def bench_figure(path, report):
    from .pipeline import STAGES

    ms = [1e3 * report.stage_seconds[s] / report.frames for s in STAGES]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(STAGES, ms)
    ax.set_ylabel("ms per frame")
    ax.set_title(f"{report.height}x{report.width}x{report.channels}: "
                 f"{report.core_mb_per_s:.0f} MB/s demosaic-compose, {report.cubes_per_s:.1f} cubes/s")
    return _save(fig, path)


def scene_figure(path, scene, vnir=None, swir=None):
    """RGB truth, material map, raw mosaics and the material spectra."""
    panels = 2 + (vnir is not None) + (swir is not None)
    fig = plt.figure(figsize=(3.2 * panels, 6.4))
    grid = fig.add_gridspec(2, panels)
    ax = fig.add_subplot(grid[0, 0])
    rgb = scene.rgb_truth
    ax.imshow(np.clip(rgb / max(rgb.max(), 1e-12), 0, 1))
    ax.set_title("RGB")
    ax = fig.add_subplot(grid[0, 1])
    ax.imshow(scene.material_map, cmap="tab10", interpolation="nearest")
    ax.set_title("materials")
    k = 2
    for name, frame in (("VNIR mosaic", vnir), ("SWIR mosaic", swir)):
        if frame is not None:
            ax = fig.add_subplot(grid[0, k])
            ax.imshow(frame.values, cmap="gray")
            ax.set_title(name)
            k += 1
    for a in fig.axes:
        a.set_xticks([])
        a.set_yticks([])
    ax = fig.add_subplot(grid[1, :])
    wl = scene.wavelengths_nm
    cmap = plt.get_cmap("tab10")
    for m, spec in enumerate(scene.material_reflectance(wl)):
        ax.plot(wl, spec, color=cmap(m % 10), label=f"material {m}")
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("reflectance")
    ax.legend(fontsize="small", ncol=4)
    return _save(fig, path)
