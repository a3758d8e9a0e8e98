"""Agreement statistics: weighted kappa, ICC(3,1), ordinal errors, Bland-Altman, cluster bootstrap.

Rank arrays are 1-based Fitzpatrick classes. ICC functions take an
``(n_targets, k_raters)`` matrix; ``icc3`` is the two-rater convenience form.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DegenerateStatisticsError(ValueError):
    """A statistic is undefined for the given data."""


def weighted_kappa(reference, predicted, num_classes: int = 6) -> float:
    """Linear-weighted Cohen's kappa with sample marginals.

    ``1 - sum(d * O) / sum(d * E)`` with ``d_ij = |i - j| / (K - 1)``. When
    the expected disagreement is zero (both raters constant and equal) the
    value is defined as 1 and a warning is issued.
    """
    ref = np.asarray(reference, dtype=np.int64)
    pred = np.asarray(predicted, dtype=np.int64)
    if ref.shape != pred.shape or ref.ndim != 1:
        raise ValueError("reference and predicted must be 1-D arrays of equal length")
    if len(ref) < 2:
        raise DegenerateStatisticsError("weighted kappa needs at least 2 pairs")
    k = num_classes
    if min(ref.min(), pred.min()) < 1 or max(ref.max(), pred.max()) > k:
        raise ValueError(f"ratings must lie in 1..{k}")
    observed = np.zeros((k, k))
    np.add.at(observed, (ref - 1, pred - 1), 1.0)
    observed /= observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(k)
    d = np.abs(idx[:, None] - idx[None, :]) / (k - 1)
    exp_dis = float((d * expected).sum())
    if exp_dis == 0.0:
        warnings.warn("zero expected disagreement; weighted kappa defined as 1", RuntimeWarning, stacklevel=2)
        return 1.0
    return 1.0 - float((d * observed).sum()) / exp_dis


def two_way_anova(ratings) -> dict:
    """Sums of squares and mean squares of a two-way layout without replication."""
    y = np.asarray(ratings, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ValueError("ratings must be (n_targets, k_raters) with k >= 2")
    n, k = y.shape
    grand = y.mean()
    ss_rows = k * float(((y.mean(axis=1) - grand) ** 2).sum())
    ss_cols = n * float(((y.mean(axis=0) - grand) ** 2).sum())
    ss_total = float(((y - grand) ** 2).sum())
    ss_err = max(ss_total - ss_rows - ss_cols, 0.0)
    return {
        "n": n,
        "k": k,
        "ss_rows": ss_rows,
        "ss_cols": ss_cols,
        "ss_err": ss_err,
        "ms_rows": ss_rows / (n - 1),
        "ms_cols": ss_cols / (k - 1),
        "ms_err": ss_err / ((n - 1) * (k - 1)),
    }


def icc3_matrix(ratings) -> float:
    """ICC(3,1): two-way mixed effects, consistency, single measurement.

    ``(MS_R - MS_E) / (MS_R + (k - 1) MS_E)``.
    """
    y = np.asarray(ratings, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 3:
        raise DegenerateStatisticsError("ICC3 needs at least 3 rated targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("ratings must be finite")
    a = two_way_anova(y)
    denom = a["ms_rows"] + (a["k"] - 1) * a["ms_err"]
    if a["ms_rows"] <= 0.0 or denom <= 0.0:
        raise DegenerateStatisticsError("ICC3 undefined: zero between-target variance")
    return (a["ms_rows"] - a["ms_err"]) / denom


def icc3(reference, predicted) -> float:
    return icc3_matrix(np.column_stack([np.asarray(predicted, float), np.asarray(reference, float)]))


@dataclass(frozen=True)
class OrdinalErrors:
    mae: float
    within_one: float  # percent
    bias: float


def ordinal_errors(reference, predicted) -> OrdinalErrors:
    """MAE, percentage of predictions within one class, and mean signed error (pred - ref)."""
    ref = np.asarray(reference, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    if ref.shape != pred.shape or len(ref) == 0:
        raise DegenerateStatisticsError("ordinal errors need at least one pair of equal-length arrays")
    d = pred - ref
    return OrdinalErrors(float(np.abs(d).mean()), 100.0 * float((np.abs(d) <= 1).mean()), float(d.mean()))


@dataclass(frozen=True)
class BlandAltman:
    bias: float
    loa_lo: float
    loa_hi: float


def bland_altman(reference, predicted) -> BlandAltman:
    """Mean difference (pred - ref) and bias +/- 1.96 sample SD limits of agreement."""
    d = np.asarray(predicted, dtype=np.float64) - np.asarray(reference, dtype=np.float64)
    if len(d) < 2:
        raise DegenerateStatisticsError("Bland-Altman needs at least 2 pairs")
    bias = float(d.mean())
    half = 1.96 * float(d.std(ddof=1))
    return BlandAltman(bias, bias - half, bias + half)


def bootstrap_ci(
    metric: Callable[[np.ndarray], float],
    n_items: int,
    clusters: Sequence,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    max_redraws: int = 100,
) -> tuple[float, float]:
    """Percentile cluster-bootstrap interval.

    ``metric`` receives an integer index array into the data. Whole clusters
    (subjects) are resampled with replacement, so within-subject correlation
    is preserved. Resample ``i`` draws from its own generator spawned from
    ``seed``, which makes the first ``B`` resamples identical for any larger
    ``B``. Resamples on which the metric is undefined are redrawn.
    """
    if n_resamples < 100:
        raise ValueError("need at least 100 bootstrap resamples")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    clusters = np.asarray(clusters).astype(str)
    if len(clusters) != n_items or n_items == 0:
        raise ValueError("clusters must label every item")
    uniq, inverse = np.unique(clusters, return_inverse=True)
    members = [np.flatnonzero(inverse == c) for c in range(len(uniq))]
    values = np.empty(n_resamples)
    redraws = 0
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n_resamples)):
        rng = np.random.default_rng(ss)
        for attempt in range(max_redraws + 1):
            pick = rng.integers(0, len(uniq), len(uniq))
            idx = np.concatenate([members[c] for c in pick])
            try:
                v = float(metric(idx))
            except (DegenerateStatisticsError, ZeroDivisionError, FloatingPointError):
                v = np.nan
            if np.isfinite(v):
                break
            redraws += 1
        else:
            raise DegenerateStatisticsError(f"metric undefined on {max_redraws} consecutive resamples")
        values[i] = v
    if redraws:
        log.info("bootstrap: %d resamples redrawn because the metric was undefined", redraws)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


@dataclass
class AgreementReport:
    metric: str
    estimate: float
    ci_lo: float
    ci_hi: float
    n: int
    stratum: str = "overall"
    n_subjects: int | None = None

    def __post_init__(self):
        # percentile intervals can miss a point estimate on skewed resampling distributions
        self.ci_lo = min(self.ci_lo, self.estimate)
        self.ci_hi = max(self.ci_hi, self.estimate)

    def to_dict(self) -> dict:
        return asdict(self)


METRICS = ("kappa", "icc3", "mae", "within_one", "bias", "ba_bias", "ba_loa_lo", "ba_loa_hi")


def metric_function(name: str, reference: np.ndarray, predicted: np.ndarray, num_classes: int = 6):
    """Index-array metric closure used for point estimates and bootstrap resamples."""
    ref, pred = np.asarray(reference), np.asarray(predicted)
    table: dict[str, Callable[[np.ndarray], float]] = {
        "kappa": lambda i: weighted_kappa(ref[i], pred[i], num_classes),
        "icc3": lambda i: icc3(ref[i], pred[i]),
        "mae": lambda i: ordinal_errors(ref[i], pred[i]).mae,
        "within_one": lambda i: ordinal_errors(ref[i], pred[i]).within_one,
        "bias": lambda i: ordinal_errors(ref[i], pred[i]).bias,
        "ba_bias": lambda i: bland_altman(ref[i], pred[i]).bias,
        "ba_loa_lo": lambda i: bland_altman(ref[i], pred[i]).loa_lo,
        "ba_loa_hi": lambda i: bland_altman(ref[i], pred[i]).loa_hi,
    }
    if name not in table:
        raise ValueError(f"unknown metric {name!r}; choose from {METRICS}")
    return table[name]


def agreement_report(
    metric: str,
    reference,
    predicted,
    subjects,
    stratum: str = "overall",
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    num_classes: int = 6,
) -> AgreementReport:
    """Point estimate plus subject-cluster bootstrap CI (``n_resamples=0`` skips the CI)."""
    fn = metric_function(metric, reference, predicted, num_classes)
    n = len(np.asarray(reference))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = float(fn(np.arange(n)))
        if n_resamples:
            lo, hi = bootstrap_ci(fn, n, subjects, n_resamples, level, seed)
        else:
            lo = hi = est
    return AgreementReport(metric, est, lo, hi, n, stratum, int(len(np.unique(np.asarray(subjects).astype(str)))))
