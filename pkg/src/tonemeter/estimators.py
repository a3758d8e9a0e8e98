"""Pixel-statistics ITA baselines and Shades-of-Gray white balance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .color import LabColor, ita, mean_lab, srgb_to_lab


class EstimatorError(ValueError):
    """The estimator cannot produce a value for this image."""


@dataclass
class PatchTensor:
    """An ``(H, W, 3)`` sRGB image in [0, 1] with an optional lesion mask (True = excluded)."""

    pixels: np.ndarray
    mask: np.ndarray | None = None
    clamped: bool = False

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise ValueError(f"image must be at least 8x8, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        self.pixels = px
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != px.shape[:2]:
                raise ValueError(f"mask shape {m.shape} != image shape {px.shape[:2]}")
            self.mask = m

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def valid(self) -> np.ndarray:
        """Boolean map of pixels usable for skin statistics."""
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return ~self.mask


@dataclass
class EstimatorResult:
    lab: LabColor
    ita: float
    diagnostics: dict = field(default_factory=dict)


def _result(lab_arr: np.ndarray, **diag) -> EstimatorResult:
    lab = LabColor(*(float(v) for v in lab_arr))
    return EstimatorResult(lab, ita(lab), diag)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[int(rng.integers(len(points)))]]
    for _ in range(1, k):
        _, d2 = kernels.kmeans_assign(points, np.array(centers))
        total = d2.sum()
        if total <= 0.0:
            centers.append(centers[-1])
            continue
        centers.append(points[int(rng.choice(len(points), p=d2 / total))])
    return np.array(centers)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding. Returns ``(centers, labels)``.

    Points are sorted lexicographically first, so the result does not depend
    on input order. Empty clusters keep their previous center.
    """
    points = np.asarray(points, dtype=np.float64)
    order = np.lexsort(points.T[::-1])
    pts = points[order]
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(pts, k, rng)
    labels, _ = kernels.kmeans_assign(pts, centers)
    for _ in range(max_iter):
        new = centers.copy()
        for j in range(k):
            members = pts[labels == j]
            if len(members):
                new[j] = mean_lab(members)
        new_labels, _ = kernels.kmeans_assign(pts, new)
        centers = new
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    out = np.empty_like(labels)
    out[order] = labels
    return centers, out


def kmeans_ita(img: PatchTensor, k: int = 3, seed: int = 0) -> EstimatorResult:
    """ITA of the centroid of the largest Lab k-means cluster among unmasked pixels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    valid = img.valid()
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EstimatorError("no unmasked pixels: the mask covers the whole image")
    if n_valid < k:
        raise EstimatorError(f"only {n_valid} unmasked pixels for k={k} clusters")
    lab = srgb_to_lab(img.pixels[valid])  # row-major order
    centers, labels = kmeans(lab, k, seed)
    sizes = np.bincount(labels, minlength=k)
    best = int(np.argmax(sizes))  # ties -> lowest cluster index
    return _result(centers[best], cluster_sizes=sizes.tolist(), chosen_cluster=best, k=k, seed=seed)


def patch_boxes(shape: tuple[int, int], patch_size: int) -> list[tuple[str, int, int]]:
    """Top-left corners of the 8 border patches: 4 corners, then 4 edge midpoints."""
    h, w = shape
    p = patch_size
    if h < 2 * p or w < 2 * p:
        raise EstimatorError(f"image {h}x{w} too small for 8 border patches of {p}x{p}")
    mid_r, mid_c = (h - p) // 2, (w - p) // 2
    return [
        ("top-left", 0, 0),
        ("top-right", 0, w - p),
        ("bottom-left", h - p, 0),
        ("bottom-right", h - p, w - p),
        ("top", 0, mid_c),
        ("bottom", h - p, mid_c),
        ("left", mid_r, 0),
        ("right", mid_r, w - p),
    ]


def patch_ita(img: PatchTensor, patch_size: int = 20, variance_cutoff: float = 50.0) -> EstimatorResult:
    """Average of border-patch mean Lab colors.

    A patch is discarded if it overlaps the mask or if its total Lab variance
    (sum of per-channel variances) exceeds ``variance_cutoff``.
    """
    boxes = patch_boxes(img.shape, patch_size)
    lab = srgb_to_lab(img.pixels)
    means, kept, dropped = [], [], {}
    for name, r, c in boxes:
        sl = (slice(r, r + patch_size), slice(c, c + patch_size))
        if img.mask is not None and img.mask[sl].any():
            dropped[name] = "mask"
            continue
        block = lab[sl].reshape(-1, 3)
        var = float(block.var(axis=0).sum())
        if var > variance_cutoff:
            dropped[name] = f"variance {var:.1f} > {variance_cutoff}"
            continue
        means.append(mean_lab(block))
        kept.append(name)
    if not means:
        causes = sorted(set(v.split()[0] for v in dropped.values()))
        raise EstimatorError(f"all 8 patches discarded (causes: {', '.join(causes)})")
    return _result(mean_lab(np.array(means)), patch_count=len(means), kept=kept, dropped=dropped)


def pixel_mean_ita(img: PatchTensor) -> EstimatorResult:
    """ITA of the mean Lab over all unmasked pixels."""
    valid = img.valid()
    if not valid.any():
        raise EstimatorError("no unmasked pixels: the mask covers the whole image")
    return _result(mean_lab(srgb_to_lab(img.pixels[valid])), pixel_count=int(valid.sum()))


def illuminant_estimate(pixels: np.ndarray, p: float) -> np.ndarray:
    """Per-channel Minkowski p-norm mean ``(mean(I_c ** p)) ** (1 / p)``."""
    flat = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    if np.isinf(p):
        return flat.max(axis=0)
    return np.mean(flat**p, axis=0) ** (1.0 / p)


def shades_of_gray(img: PatchTensor, p: float = 6.0) -> PatchTensor:
    """Shades-of-Gray white balance.

    Channel ``c`` is scaled by ``mean(e) / e_c`` so that the corrected
    illuminant is gray with the same mean level. Results are clamped to
    [0, 1] (``clamped`` set on the output). An all-black image has no
    defined illuminant and is returned unchanged.
    """
    if not p >= 1:
        raise ValueError(f"Minkowski order p must be >= 1, got {p}")
    e = illuminant_estimate(img.pixels, p)
    if np.any(e <= 0.0):
        return PatchTensor(img.pixels.copy(), img.mask, clamped=False)
    out = img.pixels * (e.mean() / e)
    clamped = bool(out.max() > 1.0)
    return PatchTensor(np.clip(out, 0.0, 1.0), img.mask, clamped=clamped)


ESTIMATORS = {"kmeans": kmeans_ita, "patch": patch_ita, "mean": pixel_mean_ita}
