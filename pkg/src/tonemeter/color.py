"""CIELAB colorimetry: sRGB <-> Lab conversion, ITA, Delta E 1976 and ITA banding.

All conversions use the D65 white point, 2 degree observer and the IEC
61966-2-1 sRGB transfer curve. Functions accept either a single color
(``LabColor``/``SrgbColor`` or a length-3 sequence) or an array whose last
axis has length 3, and are vectorized over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# sRGB primaries -> XYZ (D65), IEC 61966-2-1.
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# Reference white is the image of sRGB (1, 1, 1) so that white maps to a*=b*=0.
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_SRGB_ENC_THRESHOLD = 0.0031308
_SRGB_DEC_THRESHOLD = 0.04045

#: Tolerance below which an out-of-range channel is clamped without being flagged.
CLAMP_TOLERANCE = 1e-6


class LabColor(NamedTuple):
    """A CIELAB triple. ``L_star`` in [0, 100]."""

    L_star: float
    a_star: float
    b_star: float

    @property
    def ita(self) -> float:
        return float(ita(self))


class SrgbColor(NamedTuple):
    """Nonlinear sRGB triple with channels in [0, 1]."""

    r: float
    g: float
    b: float


def _as_triplets(c) -> np.ndarray:
    arr = np.asarray(c, dtype=np.float64)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected a trailing axis of length 3, got shape {arr.shape}")
    return arr


def srgb_decode(v):
    """Nonlinear sRGB channel values -> linear light."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v <= _SRGB_DEC_THRESHOLD,
        v / 12.92,
        ((np.maximum(v, _SRGB_DEC_THRESHOLD) + 0.055) / 1.055) ** 2.4,
    )


def srgb_encode(v):
    """Linear light -> nonlinear sRGB channel values (no clamping)."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v <= _SRGB_ENC_THRESHOLD,
        12.92 * v,
        1.055 * np.maximum(v, _SRGB_ENC_THRESHOLD) ** (1.0 / 2.4) - 0.055,
    )


def _lab_f(t):
    return np.where(
        t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0
    )


def _lab_f_inv(t):
    return np.where(t > _DELTA, t**3, 3.0 * _DELTA**2 * (t - 4.0 / 29.0))


def xyz_to_lab(xyz) -> np.ndarray:
    xyz = _as_triplets(xyz) / D65_WHITE
    fx, fy, fz = (_lab_f(xyz[..., i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_xyz(lab) -> np.ndarray:
    lab = _as_triplets(lab)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1)
    return xyz * D65_WHITE


def srgb_to_lab(c):
    """Convert nonlinear sRGB in [0, 1] to CIELAB.

    Returns a :class:`LabColor` for a single color and an ``(..., 3)`` array
    otherwise.
    """
    arr = _as_triplets(c)
    lab = xyz_to_lab(srgb_decode(arr) @ SRGB_TO_XYZ.T)
    if arr.ndim == 1:
        return LabColor(*(float(v) for v in lab))
    return lab


def lab_to_srgb(c):
    """Convert CIELAB to nonlinear sRGB, clamping out-of-gamut channels.

    Returns ``(rgb, clamped)``. ``clamped`` is a bool (single color) or a
    boolean array over the leading axes, true where any channel left
    ``[0, 1]`` by more than :data:`CLAMP_TOLERANCE`.
    """
    arr = _as_triplets(c)
    rgb = srgb_encode(lab_to_xyz(arr) @ XYZ_TO_SRGB.T)
    clamped = np.any((rgb < -CLAMP_TOLERANCE) | (rgb > 1.0 + CLAMP_TOLERANCE), axis=-1)
    rgb = np.clip(rgb, 0.0, 1.0)
    if arr.ndim == 1:
        return SrgbColor(*(float(v) for v in rgb)), bool(clamped)
    return rgb, clamped


def ita(c):
    """Individual Typology Angle in degrees.

    ``atan2(L* - 50, b*)`` for ``b* >= 0``, so ``b* = 0`` gives +/-90 and
    (50, 0) gives 0. For ``b* < 0`` the plain arctangent of the ratio is used,
    which keeps the result inside [-90, 90].
    """
    arr = _as_triplets(c)
    num = arr[..., 0] - 50.0
    b = arr[..., 2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        angle = np.where(b >= 0, np.arctan2(num, b), np.arctan(num / np.where(b < 0, b, -1.0)))
    out = np.degrees(angle)
    return float(out) if out.ndim == 0 else out


def delta_e_1976(x, y):
    """Euclidean distance in CIELAB."""
    d = _as_triplets(x) - _as_triplets(y)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if out.ndim == 0 else out


def mean_lab(labs) -> np.ndarray:
    """Mean of Lab rows, exact when all rows are identical."""
    labs = _as_triplets(labs).reshape(-1, 3)
    ref = labs[0]
    return ref + (labs - ref).mean(axis=0)


@dataclass(frozen=True)
class ThresholdConfig:
    """Five strictly decreasing ITA cut points separating bands 1..6.

    A value strictly above ``thresholds[k]`` (and not above any earlier cut)
    lands in band ``k + 1``. These are ITA bands for reporting, not clinical
    Fitzpatrick types.
    """

    thresholds: tuple[float, ...] = (55.0, 41.0, 28.0, 10.0, -30.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if len(t) != 5:
            raise ValueError(f"need exactly 5 ITA thresholds, got {len(t)}")
        if any(not np.isfinite(v) for v in t):
            raise ValueError("ITA thresholds must be finite")
        if any(a <= b for a, b in zip(t, t[1:])):
            raise ValueError(f"ITA thresholds must be strictly decreasing: {t}")
        object.__setattr__(self, "thresholds", t)


DEFAULT_ITA_BANDS = ThresholdConfig()


def ita_to_fitzpatrick(value, bands: ThresholdConfig = DEFAULT_ITA_BANDS):
    """Map ITA degrees to an ITA band 1..6 (1 = lightest)."""
    v = np.asarray(value, dtype=np.float64)
    # number of cut points the value does not exceed
    out = 1 + np.sum(v[..., None] <= np.asarray(bands.thresholds), axis=-1)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def ita_band_label(band: int) -> str:
    return f"ITA-band {band}"


def as_lab(values: Sequence[float]) -> LabColor:
    L, a, b = (float(v) for v in values)
    return LabColor(L, a, b)
