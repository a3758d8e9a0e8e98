"""Fold-ensemble inference: majority vote for Fitzpatrick, angle-of-mean for ITA."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint import ModelCheckpoint
from .color import LabColor, ita
from .dataset import preprocess


class EnsembleError(ValueError):
    pass


def majority_vote(votes: Sequence[int]) -> int:
    """Most frequent rank; ties resolve to the lowest tied rank."""
    if len(votes) == 0:
        raise EnsembleError("no votes")
    c = Counter(int(v) for v in votes)
    top = max(c.values())
    return min(v for v, n in c.items() if n == top)


def ensemble_lab(labs) -> tuple[LabColor, float]:
    """Mean of fold Lab predictions and the ITA of that mean."""
    arr = np.asarray(labs, dtype=np.float64).reshape(-1, 3)
    if len(arr) == 0:
        raise EnsembleError("no Lab predictions")
    mean = arr.mean(axis=0)
    lab = LabColor(*(float(v) for v in mean))
    return lab, ita(lab)


@dataclass
class EnsemblePrediction:
    fitzpatrick: int | None = None
    lab: LabColor | None = None
    ita: float | None = None
    fold_fp: tuple[int, ...] = ()
    fold_lab: tuple[tuple[float, float, float], ...] = ()


def _group(checkpoints: Sequence[ModelCheckpoint]) -> dict[str, list[ModelCheckpoint]]:
    groups: dict[str, list[ModelCheckpoint]] = {"fp": [], "lab": []}
    for ck in checkpoints:
        groups["lab" if ck.config.head == "lab_regression" else "fp"].append(ck)
    for name, members in groups.items():
        if not members:
            continue
        ref = members[0]
        for ck in members[1:]:
            if ck.config.architecture() != ref.config.architecture() or (ck.norm_mean, ck.norm_std) != (
                ref.norm_mean,
                ref.norm_std,
            ):
                raise EnsembleError(f"mixed architectures among {name} checkpoints")
    return groups


def check_compatible(checkpoints: Sequence[ModelCheckpoint]) -> None:
    if not checkpoints:
        raise EnsembleError("need at least one checkpoint")
    _group(checkpoints)


def ensemble_predict_batch(checkpoints: Sequence[ModelCheckpoint], images: Sequence) -> list[EnsemblePrediction]:
    """Predict many raw images (PatchTensor or ``(H, W, 3)`` arrays in [0, 1])."""
    if not checkpoints:
        raise EnsembleError("need at least one checkpoint")
    groups = _group(checkpoints)
    preds = [EnsemblePrediction() for _ in images]
    if not images:
        return preds
    for name, members in groups.items():
        if not members:
            continue
        ref = members[0]
        x = np.stack([preprocess(im, ref.config.input_size, ref.norm_mean, ref.norm_std) for im in images])
        outs = [ck.net.predict(x) for ck in members]
        for i, p in enumerate(preds):
            if name == "fp":
                votes = tuple(int(o[i]) for o in outs)
                p.fold_fp = votes
                p.fitzpatrick = majority_vote(votes)
            else:
                labs = tuple(tuple(float(v) for v in o[i]) for o in outs)
                p.fold_lab = labs
                p.lab, p.ita = ensemble_lab(labs)
    return preds


def ensemble_predict(checkpoints: Sequence[ModelCheckpoint], img) -> EnsemblePrediction:
    return ensemble_predict_batch(checkpoints, [img])[0]
