"""Manifests, patient-level folds, preprocessing and label utilities.

Manifest CSV (UTF-8, comma separated, header required), columns in order:

==================  ==========================================================
image_path          path to the image, relative to the manifest's directory
subject_id          non-empty subject identifier
site                one of :data:`SITES`
modality            ``dermatoscopic`` or ``clinical``
fitzpatrick         optional integer 1..6
colorimeter_L       optional; mean of triplicate readings
colorimeter_a       optional; all three colorimeter columns or none
colorimeter_b       optional
lesion_mask_path    optional; white = lesion
fold                optional integer 0..4
==================  ==========================================================

Prediction CSV columns: :data:`PREDICTION_COLUMNS`.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SITES = (
    "anterior torso",
    "posterior torso",
    "lateral torso",
    "upper extremity",
    "lower extremity",
    "head/neck",
    "palms/soles",
)
MODALITIES = ("dermatoscopic", "clinical")
MANIFEST_COLUMNS = (
    "image_path",
    "subject_id",
    "site",
    "modality",
    "fitzpatrick",
    "colorimeter_L",
    "colorimeter_a",
    "colorimeter_b",
    "lesion_mask_path",
    "fold",
)
PREDICTION_COLUMNS = ("image_path", "subject_id", "pred_fp", "pred_L", "pred_a", "pred_b", "pred_ita", "fold")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
#: Lesion-mask area fraction below which an image counts as normal skin.
NORMAL_SKIN_MAX_LESION_FRACTION = 0.01


class ManifestError(ValueError):
    """Schema violations, each message prefixed with its 1-based CSV line number."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    subject_id: str
    site: str = "anterior torso"
    modality: str = "dermatoscopic"
    fitzpatrick: int | None = None
    colorimeter_L: float | None = None
    colorimeter_a: float | None = None
    colorimeter_b: float | None = None
    lesion_mask_path: str | None = None
    fold: int | None = None

    @property
    def lab(self) -> tuple[float, float, float] | None:
        if self.colorimeter_L is None:
            return None
        return (self.colorimeter_L, self.colorimeter_a, self.colorimeter_b)


def _parse_row(raw: dict, line: int) -> tuple[ManifestRow | None, list[str]]:
    errs: list[str] = []

    def opt(name, conv):
        v = (raw.get(name) or "").strip()
        if v == "":
            return None
        try:
            return conv(v)
        except ValueError:
            errs.append(f"line {line}: {name}={v!r} is not a valid {conv.__name__}")
            return None

    image_path = (raw.get("image_path") or "").strip()
    subject = (raw.get("subject_id") or "").strip()
    site = (raw.get("site") or "").strip()
    modality = (raw.get("modality") or "").strip()
    if not image_path:
        errs.append(f"line {line}: image_path is empty")
    if not subject:
        errs.append(f"line {line}: subject_id is empty")
    if site not in SITES:
        errs.append(f"line {line}: site {site!r} not in {SITES}")
    if modality not in MODALITIES:
        errs.append(f"line {line}: modality {modality!r} not in {MODALITIES}")
    fp = opt("fitzpatrick", int)
    if fp is not None and not 1 <= fp <= 6:
        errs.append(f"line {line}: fitzpatrick {fp} outside 1..6")
    lab = [opt(c, float) for c in ("colorimeter_L", "colorimeter_a", "colorimeter_b")]
    present = [v is not None for v in lab]
    if any(present) and not all(present):
        missing = [c for c, p in zip(("colorimeter_L", "colorimeter_a", "colorimeter_b"), present) if not p]
        errs.append(f"line {line}: colorimeter triple incomplete, missing {', '.join(missing)}")
    elif all(present):
        if not all(math.isfinite(v) for v in lab):
            errs.append(f"line {line}: colorimeter values must be finite")
        elif not 0.0 <= lab[0] <= 100.0:
            errs.append(f"line {line}: colorimeter_L {lab[0]} outside [0, 100]")
    fold = opt("fold", int)
    if fold is not None and not 0 <= fold <= 4:
        errs.append(f"line {line}: fold {fold} outside 0..4")
    if errs:
        return None, errs
    return (
        ManifestRow(
            image_path=image_path,
            subject_id=subject,
            site=site,
            modality=modality,
            fitzpatrick=fp,
            colorimeter_L=lab[0],
            colorimeter_a=lab[1],
            colorimeter_b=lab[2],
            lesion_mask_path=(raw.get("lesion_mask_path") or "").strip() or None,
            fold=fold,
        ),
        [],
    )


def load_manifest(path: str | Path) -> list[ManifestRow]:
    """Read and validate a manifest; raises :class:`ManifestError` listing every bad row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError([f"line 1: missing columns {', '.join(missing)}"])
        rows, errors = [], []
        for i, raw in enumerate(reader, start=2):
            row, errs = _parse_row(raw, i)
            errors.extend(errs)
            if row is not None:
                rows.append(row)
    if errors:
        raise ManifestError(errors)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path: str | Path, rows: Iterable[ManifestRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in MANIFEST_COLUMNS])


# -- folds ---------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    folds: dict[str, int]
    n_folds: int
    seed: int

    def fold_of(self, subject_id: str) -> int:
        return self.folds[subject_id]

    def subjects_in(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.folds.items() if f == fold)

    def sizes(self) -> list[int]:
        c = Counter(self.folds.values())
        return [c.get(f, 0) for f in range(self.n_folds)]


def subject_labels(rows: Sequence[ManifestRow]) -> dict[str, int | None]:
    """Most frequent Fitzpatrick label per subject (ties -> lowest); None if unlabeled."""
    per: dict[str, Counter] = {}
    for r in rows:
        c = per.setdefault(r.subject_id, Counter())
        if r.fitzpatrick is not None:
            c[r.fitzpatrick] += 1
    out: dict[str, int | None] = {}
    for s, c in per.items():
        out[s] = min(c, key=lambda v: (-c[v], v)) if c else None
    return out


def make_folds(rows_or_subjects, n_folds: int = 5, seed: int = 0) -> FoldAssignment:
    """Patient-level fold assignment, stratified by subject Fitzpatrick label.

    Accepts manifest rows or a mapping ``subject -> label``. Subjects are
    sorted, grouped by label (unlabeled last), shuffled within each group and
    dealt round-robin with one counter running across groups, so fold sizes
    differ by at most one.
    """
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")
    if isinstance(rows_or_subjects, dict):
        labels = dict(rows_or_subjects)
    else:
        labels = subject_labels(rows_or_subjects)
    rng = np.random.default_rng(seed)
    groups: dict[int, list[str]] = {}
    for s in sorted(labels):
        lab = labels[s]
        groups.setdefault(lab if lab is not None else 10**9, []).append(s)
    folds: dict[str, int] = {}
    counter = 0
    for key in sorted(groups):
        members = groups[key]
        for i in rng.permutation(len(members)):
            folds[members[i]] = counter % n_folds
            counter += 1
    result = FoldAssignment(folds, n_folds, seed)
    if 0 < len(folds) < n_folds:
        warnings.warn(f"only {len(folds)} subjects for {n_folds} folds; some folds are empty", stacklevel=2)
    return result


# -- preprocessing ---------------------------------------------------------------


def bilinear_resize(img: np.ndarray, size: int | tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping (no antialiasing)."""
    img = np.asarray(img, dtype=np.float64)
    oh, ow = (size, size) if isinstance(size, int) else size
    h, w = img.shape[:2]
    if (oh, ow) == (h, w):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    fy = fy[:, None, None]
    return top * (1 - fy) + bot * fy


def preprocess(
    img,
    target_size: int = 64,
    norm_mean: Sequence[float] = IMAGENET_MEAN,
    norm_std: Sequence[float] = IMAGENET_STD,
) -> np.ndarray:
    """Resize to ``target_size`` and normalize channels as ``(x - mean) / std``."""
    pixels = getattr(img, "pixels", img)
    out = bilinear_resize(pixels, target_size)
    return (out - np.asarray(norm_mean, dtype=np.float64)) / np.asarray(norm_std, dtype=np.float64)


# -- labels & filters ----------------------------------------------------------

_ROMAN = {"I": 1, "II": 2, "III": 3, "IV": 4, "V": 5, "VI": 6}


def _parse_fp_token(token: str) -> int:
    t = token.strip().upper()
    if t in _ROMAN:
        return _ROMAN[t]
    if t.isdigit() and 1 <= int(t) <= 6:
        return int(t)
    raise ValueError(f"unknown Fitzpatrick token {token!r}")


def parse_grouped_label(label) -> tuple[int, ...]:
    """``3`` -> (3,); ``"I-II"``/``"1-2"``/``"V–VI"`` -> (lo, ..., hi)."""
    if isinstance(label, (int, np.integer)):
        if not 1 <= label <= 6:
            raise ValueError(f"Fitzpatrick label {label} outside 1..6")
        return (int(label),)
    s = str(label).replace("\u2013", "-").replace("\u2014", "-")
    parts = [p for p in s.split("-")]
    if len(parts) == 1:
        return (_parse_fp_token(parts[0]),)
    if len(parts) != 2:
        raise ValueError(f"unknown grouped Fitzpatrick label {label!r}")
    lo, hi = _parse_fp_token(parts[0]), _parse_fp_token(parts[1])
    if hi <= lo:
        raise ValueError(f"grouped label {label!r} must be increasing")
    return tuple(range(lo, hi + 1))


def expand_grouped_labels(labels: Sequence, seed: int = 0) -> list[int]:
    """Replace grouped classes (e.g. "I-II") by a uniformly random member; singles pass through."""
    rng = np.random.default_rng(seed)
    out = []
    for lab in labels:
        options = parse_grouped_label(lab)
        out.append(options[0] if len(options) == 1 else int(options[rng.integers(len(options))]))
    return out


def is_normal_skin(mask: np.ndarray | None, max_fraction: float = NORMAL_SKIN_MAX_LESION_FRACTION) -> bool:
    """No mask, or lesion area below ``max_fraction`` of the pixels."""
    if mask is None:
        return True
    return float(np.asarray(mask, dtype=bool).mean()) < max_fraction


def filter_modality(rows: Sequence[ManifestRow], modality: str | None) -> list[ManifestRow]:
    if modality is None:
        return list(rows)
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    return [r for r in rows if r.modality == modality]


# -- image IO --------------------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    from PIL import Image

    arr = np.round(np.clip(np.asarray(pixels), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, "L").save(path, format="PNG")


def load_patch(row: ManifestRow, root: str | Path):
    """Image and mask of a manifest row as a PatchTensor."""
    from .estimators import PatchTensor

    root = Path(root)
    mask = load_mask(root / row.lesion_mask_path) if row.lesion_mask_path else None
    return PatchTensor(load_image(root / row.image_path), mask)


# -- predictions -----------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRow:
    image_path: str
    subject_id: str
    pred_fp: int | None = None
    pred_L: float | None = None
    pred_a: float | None = None
    pred_b: float | None = None
    pred_ita: float | None = None
    fold: int | None = None


def write_predictions(path: str | Path, rows: Iterable[PredictionRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in PREDICTION_COLUMNS])


def load_predictions(path: str | Path) -> list[PredictionRow]:
    types = {f.name: f.type for f in fields(PredictionRow)}
    out, errors = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError([f"line 1: missing prediction columns {', '.join(missing)}"])
        for line, raw in enumerate(reader, start=2):
            vals = {}
            for c in PREDICTION_COLUMNS:
                v = (raw.get(c) or "").strip()
                if c in ("image_path", "subject_id"):
                    vals[c] = v
                    continue
                conv = int if "int" in str(types[c]) else float
                try:
                    vals[c] = conv(v) if v else None
                except ValueError:
                    errors.append(f"line {line}: {c}={v!r} is not a valid {conv.__name__}")
            if not vals.get("image_path"):
                errors.append(f"line {line}: image_path is empty")
            out.append(PredictionRow(**vals))
    if errors:
        raise ManifestError(errors)
    return out


def rows_as_dicts(rows: Iterable) -> list[dict]:
    return [asdict(r) for r in rows]
