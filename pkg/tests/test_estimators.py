from __future__ import annotations

import itertools

import numpy as np
import pytest
from conftest import uniform_image

from tonemeter.color import delta_e_1976, ita, lab_to_srgb, mean_lab, srgb_to_lab
from tonemeter.estimators import (
    EstimatorError,
    PatchTensor,
    kmeans,
    kmeans_ita,
    patch_boxes,
    patch_ita,
    pixel_mean_ita,
    shades_of_gray,
)

SKIN = (70.0, 5.0, 20.0)
LESION = (40.0, 15.0, 25.0)


def two_tone(size=40, lesion_fraction=0.2):
    img = uniform_image(SKIN, size)
    mask = np.zeros((size, size), bool)
    n = int(round(lesion_fraction * size * size))
    mask.reshape(-1)[:n] = True
    rgb, _ = lab_to_srgb(LESION)
    img[mask] = rgb
    return img, mask


def test_patch_tensor_validation():
    with pytest.raises(ValueError):
        PatchTensor(np.zeros((7, 10, 3)))
    with pytest.raises(ValueError):
        PatchTensor(np.full((8, 8, 3), 1.5))
    with pytest.raises(ValueError):
        PatchTensor(np.zeros((8, 8, 3)), mask=np.zeros((4, 4), bool))


def test_kmeans_uniform_image_exact(skin_patch):
    res = kmeans_ita(skin_patch, 3, 0)
    assert delta_e_1976(res.lab, SKIN) < 1e-9
    assert res.ita == pytest.approx(45.0, abs=1e-8)
    assert res.ita == ita(res.lab)


def brute_force_two_means(points):
    """Best 2-partition of a two-valued point set, by enumeration of value groupings."""
    values = np.unique(points, axis=0)
    best = None
    for assign in itertools.product([0, 1], repeat=len(values)):
        if len(set(assign)) < 2:
            continue
        groups = [points[np.all(points[:, None] == values[[i for i, a in enumerate(assign) if a == g]], axis=-1).any(axis=1)] for g in (0, 1)]
        cost = sum(((g - g.mean(axis=0)) ** 2).sum() for g in groups)
        if best is None or cost < best[0]:
            best = (cost, groups)
    return max(best[1], key=len).mean(axis=0)


def test_kmeans_two_tone_picks_skin():
    img, _ = two_tone()
    res = kmeans_ita(PatchTensor(img), 2, 0)
    oracle = brute_force_two_means(srgb_to_lab(img.reshape(-1, 3)))
    assert delta_e_1976(res.lab, oracle) < 1e-6
    assert delta_e_1976(res.lab, SKIN) < 2.0
    assert kmeans_ita(PatchTensor(img), 3, 0).lab == pytest.approx(SKIN, abs=2.0)


def test_kmeans_mask_matches_masked_mean():
    img, mask = two_tone()
    masked = kmeans_ita(PatchTensor(img, mask), 1, 0)
    oracle = srgb_to_lab(img[~mask]).mean(axis=0)
    assert delta_e_1976(masked.lab, oracle) < 1e-9
    assert delta_e_1976(masked.lab, kmeans_ita(PatchTensor(uniform_image(SKIN, 40)), 1, 0).lab) < 1e-9


def test_kmeans_errors():
    mask = np.ones((16, 16), bool)
    with pytest.raises(EstimatorError, match="mask"):
        kmeans_ita(PatchTensor(uniform_image(SKIN, 16), mask))
    mask.reshape(-1)[:2] = False
    with pytest.raises(EstimatorError, match="unmasked"):
        kmeans_ita(PatchTensor(uniform_image(SKIN, 16), mask), k=3)


def test_kmeans_permutation_invariant(rng):
    img = rng.uniform(0.3, 0.9, (24, 24, 3))
    base = kmeans_ita(PatchTensor(img), 3, 7)
    flat = img.reshape(-1, 3)
    shuffled = flat[rng.permutation(len(flat))].reshape(img.shape)
    again = kmeans_ita(PatchTensor(shuffled), 3, 7)
    assert again.lab == base.lab


def test_kmeans_deterministic_and_lloyd_fixed_point(rng):
    pts = rng.normal(size=(300, 3)) + np.repeat(np.eye(3) * 6, 100, axis=0)
    c1, l1 = kmeans(pts, 3, seed=1)
    c2, l2 = kmeans(pts, 3, seed=1)
    assert np.array_equal(c1, c2) and np.array_equal(l1, l2)
    # each point is assigned to its nearest center, and centers are member means
    d = ((pts[:, None] - c1[None]) ** 2).sum(-1)
    assert np.array_equal(l1, d.argmin(1))
    for j in range(3):
        assert np.allclose(c1[j], pts[l1 == j].mean(0))


def test_patch_uniform_image_exact(skin_patch):
    res = patch_ita(skin_patch)
    assert delta_e_1976(res.lab, SKIN) < 1e-9
    assert res.diagnostics["patch_count"] == 8


def test_patch_ignores_centered_lesion():
    img = uniform_image(SKIN, 64)
    rgb, _ = lab_to_srgb(LESION)
    img[24:40, 24:40] = rgb
    res = patch_ita(PatchTensor(img))
    assert delta_e_1976(res.lab, SKIN) < 1e-9


def test_patch_gradient_lighting_is_mean_of_patch_means():
    size = 64
    img = uniform_image(SKIN, size)
    gain = np.linspace(0.7, 1.3, size)[None, :, None]
    lit = np.clip(img * gain, 0, 1)
    res = patch_ita(PatchTensor(lit), variance_cutoff=1e9)
    lab = srgb_to_lab(lit)
    means = [lab[r : r + 20, c : c + 20].reshape(-1, 3).mean(0) for _, r, c in patch_boxes((size, size), 20)]
    assert delta_e_1976(res.lab, np.mean(means, axis=0)) < 1e-9


def test_patch_discards_masked_and_noisy(rng):
    img = uniform_image(SKIN, 64)
    mask = np.zeros((64, 64), bool)
    mask[0, 0] = True  # touches the top-left patch
    img[44:, 44:] = rng.uniform(0, 1, (20, 20, 3))  # noisy bottom-right patch
    res = patch_ita(PatchTensor(img, mask))
    assert res.diagnostics["patch_count"] == 6
    assert res.diagnostics["dropped"]["top-left"] == "mask"
    assert res.diagnostics["dropped"]["bottom-right"].startswith("variance")
    assert delta_e_1976(res.lab, SKIN) < 1e-9


def test_patch_all_discarded_names_cause():
    with pytest.raises(EstimatorError, match="mask"):
        patch_ita(PatchTensor(uniform_image(SKIN, 64), np.ones((64, 64), bool)))
    with pytest.raises(EstimatorError, match="too small"):
        patch_ita(PatchTensor(uniform_image(SKIN, 30)))


def test_pixel_mean(skin_patch):
    assert delta_e_1976(pixel_mean_ita(skin_patch).lab, SKIN) < 1e-9


def test_estimators_repeatable(rng):
    img = PatchTensor(rng.uniform(0.2, 0.8, (48, 48, 3)))
    assert kmeans_ita(img, 3, 3) == kmeans_ita(img, 3, 3)
    assert patch_ita(img, variance_cutoff=1e9) == patch_ita(img, variance_cutoff=1e9)


def test_shades_of_gray_gray_image_unchanged():
    img = PatchTensor(np.full((16, 16, 3), 0.4) * np.linspace(0.5, 1.5, 16)[:, None, None])
    out = shades_of_gray(img, 6)
    assert np.allclose(out.pixels, img.pixels, atol=1e-12)


def test_shades_of_gray_removes_cast(rng):
    # a scene whose p=6 illuminant estimate is gray
    base = rng.uniform(0.1, 0.6, (32, 32, 1)).repeat(3, axis=2)
    cast = np.array([1.2, 1.0, 0.8])
    out = shades_of_gray(PatchTensor(base * cast), 6)
    assert not out.clamped
    # the cast is removed up to a global level change
    level = out.pixels[..., 1] / base[..., 1]
    assert np.abs(out.pixels - base * level.mean()).max() < 0.02
    assert np.allclose(out.pixels[..., 0], out.pixels[..., 2], atol=1e-12)


def gray_world(pixels):
    means = pixels.reshape(-1, 3).mean(axis=0)
    return np.clip(pixels * (means.mean() / means), 0, 1)


def test_shades_of_gray_p1_is_gray_world(rng):
    px = rng.uniform(0, 0.8, (20, 20, 3)) * [1.1, 0.9, 0.7]
    assert np.allclose(shades_of_gray(PatchTensor(px), 1).pixels, gray_world(px), atol=1e-14)


def test_shades_of_gray_idempotent(rng):
    px = rng.uniform(0.05, 0.5, (20, 20, 3)) * [1.2, 1.0, 0.8]
    once = shades_of_gray(PatchTensor(px), 6)
    twice = shades_of_gray(once, 6)
    assert not once.clamped
    assert np.abs(twice.pixels - once.pixels).max() < 1e-6


def test_shades_of_gray_edge_cases(rng):
    black = PatchTensor(np.zeros((8, 8, 3)))
    assert np.array_equal(shades_of_gray(black).pixels, black.pixels)
    px = np.full((8, 8, 3), [0.9, 0.9, 0.05])
    px[0, 0, 2] = 0.3  # gets scaled past 1 by the large blue gain
    assert shades_of_gray(PatchTensor(px), 6).clamped
    with pytest.raises(ValueError):
        shades_of_gray(black, 0.5)


def test_mask_carried_through_white_balance():
    mask = np.zeros((8, 8), bool)
    mask[0, 0] = True
    out = shades_of_gray(PatchTensor(np.full((8, 8, 3), 0.3), mask))
    assert out.mask is not None and out.mask[0, 0]


def test_mean_lab_used_for_centroids_is_plain_mean(rng):
    pts = rng.uniform(0, 100, (50, 3))
    assert np.allclose(mean_lab(pts), pts.mean(axis=0))
