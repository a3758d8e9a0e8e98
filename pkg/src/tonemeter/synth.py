"""Synthetic skin patches with known pre-illumination ground truth.

Skin color is a closed-form function of a melanin fraction ``m`` in [0, 1]::

    L*(m) = 75 - 50 m
    a*(m) = 7 + 7 m
    b*(m) = 15 + 3 m + 8 m (1 - m)

Rendering starts from the sRGB encoding of that color, optionally darkens a
lesion disk, then multiplies encoded pixel values by an illumination field
``gain * (1 + ramp * u)`` (``u`` runs from -1 at the left edge to +1 at the
right) and a per-channel color cast, adds Gaussian noise, clips to [0, 1]
and quantizes to 8 bits. Ground truth is always the pre-illumination color,
the analogue of a contact colorimeter reading.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .color import LabColor, ita, lab_to_srgb
from .dataset import SITES
from .estimators import PatchTensor

UNIFORM_FP_CUTS = (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6)


def melanin_to_lab(m: float) -> LabColor:
    m = float(m)
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"melanin fraction must be in [0, 1], got {m}")
    return LabColor(75.0 - 50.0 * m, 7.0 + 7.0 * m, 15.0 + 3.0 * m + 8.0 * m * (1.0 - m))


def melanin_to_fp(m: float, thresholds: Sequence[float] = UNIFORM_FP_CUTS) -> int:
    """Fitzpatrick bin of ``m``; bin k covers ``[t[k-2], t[k-1])`` (bin 6 includes 1)."""
    m = float(m)
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"melanin fraction must be in [0, 1], got {m}")
    t = np.asarray(thresholds, dtype=np.float64)
    if t.shape != (5,) or np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
        raise ValueError(f"need 5 strictly increasing thresholds in (0, 1), got {tuple(thresholds)}")
    return int(1 + np.sum(m >= t))


def fp_stratum_range(fp: int, thresholds: Sequence[float] = UNIFORM_FP_CUTS) -> tuple[float, float]:
    edges = (0.0, *thresholds, 1.0)
    return edges[fp - 1], edges[fp]


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float] = (0.5, 0.5)  # (row, col) as fractions of the patch size
    radius: float = 0.15  # fraction of the patch size
    darkening: float = 0.5  # multiplier applied to lesion pixels

    def __post_init__(self):
        if not (0 < self.radius <= 0.5 and 0 < self.darkening <= 1):
            raise ValueError(f"invalid lesion {self}")


@dataclass(frozen=True)
class SynthParams:
    melanin: float
    gain: float = 1.0
    ramp: float = 0.0
    cast: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    lesion: Lesion | None = None
    size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.melanin <= 1.0:
            raise ValueError(f"melanin must be in [0, 1], got {self.melanin}")
        if self.gain <= 0 or not -1.0 < self.ramp < 1.0:
            raise ValueError("gain must be positive and |ramp| < 1")
        if len(self.cast) != 3 or min(self.cast) <= 0:
            raise ValueError("cast needs 3 positive channel gains")
        if self.noise_sigma < 0 or self.size < 8:
            raise ValueError("noise_sigma must be >= 0 and size >= 8")
        object.__setattr__(self, "cast", tuple(float(c) for c in self.cast))

    @property
    def identity_illumination(self) -> bool:
        return self.gain == 1.0 and self.ramp == 0.0 and self.cast == (1.0, 1.0, 1.0)


@dataclass
class SynthSample:
    image: PatchTensor
    truth_lab: LabColor
    truth_fp: int
    params: SynthParams

    @property
    def truth_ita(self) -> float:
        return ita(self.truth_lab)


def render(params: SynthParams) -> SynthSample:
    s = params.size
    truth = melanin_to_lab(params.melanin)
    base, _ = lab_to_srgb(truth)
    img = np.broadcast_to(np.asarray(base), (s, s, 3)).copy()

    mask = None
    if params.lesion is not None:
        les = params.lesion
        rr, cc = np.mgrid[0:s, 0:s]
        cy, cx = les.center[0] * (s - 1), les.center[1] * (s - 1)
        mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= (les.radius * s) ** 2
        img[mask] *= les.darkening

    u = np.linspace(-1.0, 1.0, s)
    field = params.gain * (1.0 + params.ramp * u)
    img = img * field[None, :, None] * np.asarray(params.cast)[None, None, :]
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        img = img + rng.normal(0.0, params.noise_sigma, img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return SynthSample(PatchTensor(img, mask), truth, melanin_to_fp(params.melanin), params)


@dataclass(frozen=True)
class SynthDistribution:
    """Ranges that per-image ``SynthParams`` are drawn from."""

    gain_range: tuple[float, float] = (0.7, 1.3)
    ramp_range: tuple[float, float] = (-0.15, 0.15)
    cast_range: tuple[float, float] = (0.9, 1.1)
    noise_sigma: float = 0.01
    lesion_probability: float = 0.0
    lesion_radius_range: tuple[float, float] = (0.08, 0.2)
    lesion_darkening_range: tuple[float, float] = (0.4, 0.7)
    size: int = 64
    images_per_subject: int = 10
    fp_thresholds: tuple[float, ...] = UNIFORM_FP_CUTS

    @classmethod
    def identity(cls, **kw) -> "SynthDistribution":
        return cls(gain_range=(1.0, 1.0), ramp_range=(0.0, 0.0), cast_range=(1.0, 1.0), **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CorpusRecord:
    image_name: str
    subject_id: str
    site: str
    sample: SynthSample
    mask_name: str | None = None


def _draw(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def sample_corpus(n: int, dist: SynthDistribution = SynthDistribution(), seed: int = 0) -> list[CorpusRecord]:
    """Render ``n`` images in memory.

    Subjects hold ``dist.images_per_subject`` consecutive images sharing one
    melanin value; subject ``i`` is assigned Fitzpatrick stratum ``i % 6 + 1``
    and its melanin is drawn uniformly inside that stratum.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    per = dist.images_per_subject
    n_subjects = -(-n // per) if n else 0
    root = np.random.SeedSequence(seed)
    subj_seqs = root.spawn(n_subjects)
    records: list[CorpusRecord] = []
    for si in range(n_subjects):
        srng = np.random.default_rng(subj_seqs[si])
        fp = si % 6 + 1
        lo, hi = fp_stratum_range(fp, dist.fp_thresholds)
        # stay inside the half-open bin [lo, hi); rounding could otherwise land on hi
        m = float(lo + (hi - lo) * srng.uniform(0.0, 1.0))
        if m >= hi and fp < 6:
            m = float(np.nextafter(hi, 0.0))
        subject = f"S{si:04d}"
        count = min(per, n - si * per)
        for j, img_seq in enumerate(subj_seqs[si].spawn(count)):
            irng = np.random.default_rng(img_seq)
            lesion = None
            if dist.lesion_probability > 0 and irng.uniform() < dist.lesion_probability:
                lesion = Lesion(
                    center=(float(irng.uniform(0.4, 0.6)), float(irng.uniform(0.4, 0.6))),
                    radius=_draw(irng, dist.lesion_radius_range),
                    darkening=_draw(irng, dist.lesion_darkening_range),
                )
            params = SynthParams(
                melanin=m,
                gain=_draw(irng, dist.gain_range),
                ramp=_draw(irng, dist.ramp_range),
                cast=tuple(_draw(irng, dist.cast_range) for _ in range(3)),
                noise_sigma=dist.noise_sigma,
                lesion=lesion,
                size=dist.size,
                seed=int(irng.integers(0, 2**31 - 1)),
            )
            sample = render(params)
            site = SITES[int(irng.integers(0, len(SITES)))]
            name = f"{subject}_{j:03d}.png"
            mask_name = f"{subject}_{j:03d}_mask.png" if lesion is not None else None
            records.append(CorpusRecord(name, subject, site, sample, mask_name))
    return records


def generate_corpus(
    out_dir: str | Path,
    n: int,
    dist: SynthDistribution = SynthDistribution(),
    seed: int = 0,
) -> Path:
    """Render ``n`` images to ``out_dir`` as 8-bit PNGs and write ``manifest.csv``.

    Ground-truth Lab fills the colorimeter columns and the Fitzpatrick bin
    the label column. Returns the manifest path.
    """
    from .dataset import ManifestRow, save_image, save_mask, write_manifest

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in sample_corpus(n, dist, seed):
        save_image(out / "images" / rec.image_name, rec.sample.image.pixels)
        mask_path = None
        if rec.mask_name is not None:
            save_mask(out / "images" / rec.mask_name, rec.sample.image.mask)
            mask_path = f"images/{rec.mask_name}"
        lab = rec.sample.truth_lab
        rows.append(
            ManifestRow(
                image_path=f"images/{rec.image_name}",
                subject_id=rec.subject_id,
                site=rec.site,
                modality="dermatoscopic",
                fitzpatrick=rec.sample.truth_fp,
                colorimeter_L=lab.L_star,
                colorimeter_a=lab.a_star,
                colorimeter_b=lab.b_star,
                lesion_mask_path=mask_path,
            )
        )
    path = out / "manifest.csv"
    write_manifest(path, rows)
    return path
