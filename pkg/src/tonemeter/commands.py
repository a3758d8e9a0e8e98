"""Implementations behind the ``tonemeter`` subcommands.

Each ``cmd_*`` function takes plain Python arguments, writes its outputs and
returns the report dictionary it wrote, so the CLI is a thin argparse layer.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, kernels
from .checkpoint import ModelCheckpoint, find_checkpoints, load_checkpoint, save_checkpoint
from .color import DEFAULT_ITA_BANDS, ThresholdConfig, ita, ita_to_fitzpatrick, lab_to_srgb
from .dataset import (
    SITES,
    FoldAssignment,
    ManifestRow,
    PredictionRow,
    filter_modality,
    is_normal_skin,
    load_image,
    load_manifest,
    load_patch,
    load_predictions,
    make_folds,
    preprocess,
    save_image,
    write_predictions,
)
from .ensemble import check_compatible, ensemble_predict_batch
from .estimators import PatchTensor, kmeans_ita, patch_ita, pixel_mean_ita, shades_of_gray
from .network import NetworkConfig, TinyNet
from .stats import DegenerateStatisticsError, agreement_report
from .synth import SynthDistribution, generate_corpus
from .trainer import FITZPATRICK_TRAIN, LAB_TRAIN, LabeledCorpus, TrainConfig, train

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
INFERENCE_BATCH = 64
NO_DATA = "no data for stratum"


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    import csv

    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; ``threads <= 1`` runs serially."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- synth -------------------------------------------------------------------------


def cmd_synth(
    out: str | Path,
    n: int,
    seed: int = 0,
    images_per_subject: int = 10,
    identity_illumination: bool = False,
    lesion_probability: float = 0.0,
    noise_sigma: float = 0.01,
    size: int = 64,
) -> dict:
    kw = dict(
        images_per_subject=images_per_subject,
        lesion_probability=lesion_probability,
        noise_sigma=noise_sigma,
        size=size,
    )
    dist = SynthDistribution.identity(**kw) if identity_illumination else SynthDistribution(**kw)
    manifest = generate_corpus(out, n, dist, seed)
    report = {"manifest": str(manifest), "n": n, "seed": seed, "distribution": dist.to_dict(), "version": __version__}
    _dump_json(Path(out) / "synth.json", report)
    return report


# -- image sources -------------------------------------------------------------------


@dataclass
class ImageItem:
    key: str  # image_path as written in outputs
    path: Path
    mask_path: Path | None = None
    row: ManifestRow | None = None

    def load(self) -> PatchTensor:
        from .dataset import load_mask

        mask = load_mask(self.mask_path) if self.mask_path else None
        return PatchTensor(load_image(self.path), mask)


def collect_items(source: str | Path, modality: str | None = None) -> tuple[list[ImageItem], str]:
    """Images from a manifest CSV or a directory (recursive), sorted by path."""
    src = Path(source)
    if src.is_file():
        root = src.parent
        rows = filter_modality(load_manifest(src), modality)
        items = [
            ImageItem(r.image_path, root / r.image_path, root / r.lesion_mask_path if r.lesion_mask_path else None, r)
            for r in rows
        ]
        name = src.parent.name if src.name == "manifest.csv" else src.stem
    elif src.is_dir():
        files = [p for p in src.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith("_mask")]
        items = [ImageItem(p.relative_to(src).as_posix(), p) for p in files]
        name = src.name
    else:
        raise ValueError(f"{source}: no such manifest or directory")
    items.sort(key=lambda it: it.key)
    return items, name


# -- estimation ----------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineConfig:
    estimator: str = "kmeans"
    k: int = 3
    patch_size: int = 20
    variance_cutoff: float = 50.0
    wb: str = "none"  # "none" or "shades-of-gray:p=6"
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def parse_wb(spec: str) -> float | None:
    """``"none"`` -> None; ``"shades-of-gray:p=6"`` / ``"shades-of-gray"`` -> p."""
    if spec in (None, "", "none"):
        return None
    name, _, arg = spec.partition(":")
    if name != "shades-of-gray":
        raise ValueError(f"unknown white balance {spec!r}")
    if not arg:
        return 6.0
    key, _, val = arg.partition("=")
    if key != "p":
        raise ValueError(f"white balance option must be p=<order>, got {arg!r}")
    return float(val)


def run_baseline(img: PatchTensor, cfg: BaselineConfig):
    p = parse_wb(cfg.wb)
    if p is not None:
        img = shades_of_gray(img, p)
    if cfg.estimator == "kmeans":
        return kmeans_ita(img, cfg.k, cfg.seed)
    if cfg.estimator == "patch":
        return patch_ita(img, cfg.patch_size, cfg.variance_cutoff)
    if cfg.estimator == "mean":
        return pixel_mean_ita(img)
    raise ValueError(f"unknown estimator {cfg.estimator!r}")


def load_checkpoints(paths: Sequence[str | Path]) -> list[ModelCheckpoint]:
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        files.extend(find_checkpoints(p) if p.is_dir() else [p])
    if not files:
        raise ValueError("no checkpoint files found")
    cks = [load_checkpoint(f) for f in sorted(files)]
    check_compatible(cks)
    return cks


def _apply_wb(img: PatchTensor, wb: str) -> PatchTensor:
    p = parse_wb(wb)
    return img if p is None else shades_of_gray(img, p)


def predict_items(
    items: Sequence[ImageItem],
    checkpoints: Sequence[ModelCheckpoint] | None = None,
    baseline: BaselineConfig | None = None,
    threads: int = 1,
    cross_validated: bool = False,
    wb: str = "none",
) -> list[PredictionRow]:
    """Predictions for every item, in item order.

    With ``cross_validated`` each manifest row is scored only by checkpoints
    whose provenance fold equals the row's fold.
    """
    if (checkpoints is None) == (baseline is None):
        raise ValueError("give exactly one of checkpoints or baseline")
    if baseline is not None:
        def one(it: ImageItem) -> PredictionRow:
            res = run_baseline(it.load(), baseline)
            lab = res.lab
            return PredictionRow(it.key, it.row.subject_id if it.row else "", None, lab.L_star, lab.a_star, lab.b_star, res.ita, it.row.fold if it.row else None)

        return parallel_map(one, list(items), threads)

    images = parallel_map(lambda it: _apply_wb(it.load(), wb), list(items), threads)
    out: list[PredictionRow | None] = [None] * len(items)
    if cross_validated:
        by_fold: dict[int, list[ModelCheckpoint]] = {}
        subject_fold: dict[str, int] = {}
        for ck in checkpoints:
            f = ck.provenance.get("fold")
            if f is None:
                raise ValueError("cross-validated prediction needs checkpoints with a provenance fold")
            by_fold.setdefault(int(f), []).append(ck)
            for s in ck.provenance.get("held_out_subjects", []):
                subject_fold[s] = int(f)

        def fold_of(it: ImageItem) -> int | None:
            if it.row is None:
                return None
            return subject_fold.get(it.row.subject_id, it.row.fold)

        row_folds = [fold_of(it) for it in items]
        groups = [(by_fold[f], [i for i, rf in enumerate(row_folds) if rf == f], f) for f in sorted(by_fold)]
        missing = [it.key for it, rf in zip(items, row_folds) if rf not in by_fold]
        if missing:
            raise ValueError(f"{len(missing)} rows have no fold checkpoint (first: {missing[0]})")
    else:
        groups = [(list(checkpoints), list(range(len(items))), None)]
    for cks, idx, fold in groups:
        for start in range(0, len(idx), INFERENCE_BATCH):
            chunk = idx[start : start + INFERENCE_BATCH]
            preds = ensemble_predict_batch(cks, [images[i] for i in chunk])
            for i, p in zip(chunk, preds):
                it = items[i]
                lab = p.lab
                out[i] = PredictionRow(
                    it.key,
                    it.row.subject_id if it.row else "",
                    p.fitzpatrick,
                    lab.L_star if lab else None,
                    lab.a_star if lab else None,
                    lab.b_star if lab else None,
                    p.ita,
                    fold if fold is not None else (it.row.fold if it.row else None),
                )
    return out  # type: ignore[return-value]


def cmd_estimate(
    source: str | Path,
    out: str | Path,
    checkpoints: Sequence[str | Path] | None = None,
    baseline: BaselineConfig | None = None,
    threads: int = 1,
    modality: str | None = None,
    cross_validated: bool = False,
    wb: str = "none",
) -> dict:
    items, name = collect_items(source, modality)
    cks = load_checkpoints(checkpoints) if checkpoints else None
    rows = predict_items(items, cks, None if cks else (baseline or BaselineConfig()), threads, cross_validated, wb)
    write_predictions(out, rows)
    return {"dataset": name, "n": len(rows), "out": str(out)}


# -- training ------------------------------------------------------------------------


def _fold_assignment(rows: Sequence[ManifestRow], n_folds: int, seed: int) -> FoldAssignment:
    if rows and all(r.fold is not None for r in rows):
        folds: dict[str, int] = {}
        for r in rows:
            if folds.setdefault(r.subject_id, r.fold) != r.fold:
                raise ValueError(f"subject {r.subject_id} spans folds {folds[r.subject_id]} and {r.fold}")
        return FoldAssignment(folds, max(n_folds, max(folds.values()) + 1), seed)
    return make_folds(rows, n_folds, seed)


def training_corpus(rows: Sequence[ManifestRow], root: Path, head: str, input_size: int) -> tuple[LabeledCorpus, list[ManifestRow]]:
    """Preprocessed images and targets; the Lab head keeps only normal-skin rows with colorimeter values."""
    keep = []
    for r in rows:
        if head == "lab_regression":
            if r.lab is None:
                continue
            if r.lesion_mask_path:
                from .dataset import load_mask

                if not is_normal_skin(load_mask(root / r.lesion_mask_path)):
                    continue
        elif r.fitzpatrick is None:
            continue
        keep.append(r)
    x = np.stack([preprocess(load_image(root / r.image_path), input_size) for r in keep]) if keep else np.zeros((0, input_size, input_size, 3))
    y = np.array([r.lab for r in keep]) if head == "lab_regression" else np.array([r.fitzpatrick for r in keep])
    return LabeledCorpus(x, y, np.array([r.subject_id for r in keep])), keep


HEAD_ALIASES = {"ordinal": "ordinal", "lab": "lab_regression", "lab_regression": "lab_regression", "classification": "classification"}


def cmd_train(
    manifest: str | Path,
    out: str | Path,
    head: str = "ordinal",
    seed: int = 0,
    n_folds: int = 5,
    folds: Sequence[int] | None = None,
    input_size: int = 64,
    train_config: TrainConfig | None = None,
) -> dict:
    """Train one model per cross-validation fold; fold ``k`` is held out from model ``k``."""
    head = HEAD_ALIASES[head]
    manifest = Path(manifest)
    rows = load_manifest(manifest)
    assignment = _fold_assignment(rows, n_folds, seed)
    corpus, kept = training_corpus(rows, manifest.parent, head, input_size)
    if len(corpus) == 0:
        raise ValueError(f"no rows usable for the {head} head")
    cfg = train_config or (LAB_TRAIN if head == "lab_regression" else FITZPATRICK_TRAIN)
    row_fold = np.array([assignment.fold_of(r.subject_id) for r in kept])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for k in folds if folds is not None else range(assignment.n_folds):
        tr = np.flatnonzero(row_fold != k)
        net = TinyNet.init(NetworkConfig(input_size=input_size, head=head, seed=seed + k))
        fold_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed + k})
        res = train(net, corpus.subset(tr), fold_cfg)
        ck = ModelCheckpoint(
            res.net,
            provenance={
                "fold": int(k),
                "seed": seed + k,
                "epochs_run": res.epochs_run,
                "best_epoch": res.best_epoch,
                "final_val_loss": res.best_val_loss,
                "train_config": fold_cfg.to_dict(),
                "manifest_sha256": file_sha256(manifest),
                "n_train_images": int(len(tr)),
                "held_out_subjects": assignment.subjects_in(k),
            },
        )
        path = out / f"{head}_fold{k}.tmck"
        digest = save_checkpoint(path, ck)
        results.append({"fold": int(k), "path": path.name, "sha256": digest, "history": res.history, **ck.provenance})
    report = {"head": head, "manifest": str(manifest), "folds": results, "version": __version__}
    _dump_json(out / f"{head}_training.json", report)
    return report


# -- statistics ----------------------------------------------------------------------


def join_predictions(rows: Sequence[ManifestRow], preds: Sequence[PredictionRow]) -> list[tuple[ManifestRow, PredictionRow]]:
    by_path = {p.image_path: p for p in preds}
    return [(r, by_path[r.image_path]) for r in rows if r.image_path in by_path]


def _fp_pairs(pairs):
    sel = [(r, p) for r, p in pairs if r.fitzpatrick is not None and p.pred_fp is not None]
    return sel


def _ita_pairs(pairs):
    return [(r, p) for r, p in pairs if r.lab is not None and p.pred_ita is not None]


def _report_entry(metric: str, ref, pred, subjects, stratum: str, bootstrap: int, seed: int) -> dict:
    if len(ref) == 0:
        return {"metric": metric, "stratum": stratum, "n": 0, "status": NO_DATA}
    try:
        rep = agreement_report(metric, ref, pred, subjects, stratum, bootstrap, seed=seed)
    except DegenerateStatisticsError as exc:
        return {"metric": metric, "stratum": stratum, "n": len(ref), "status": f"degenerate: {exc}"}
    return {**rep.to_dict(), "status": "ok"}


FP_METRICS = ("kappa", "mae", "within_one", "bias")
ITA_METRICS = ("icc3", "ba_bias", "ba_loa_lo", "ba_loa_hi")
METRIC_ALIASES = {
    "kappa": ("kappa",),
    "icc3": ("icc3",),
    "ordinal": ("mae", "within_one", "bias"),
    "bland-altman": ("ba_bias", "ba_loa_lo", "ba_loa_hi"),
}


def compute_stats(
    pairs,
    metrics: Sequence[str],
    by: str | None = "site",
    bootstrap: int = 1000,
    seed: int = 0,
    strata: Sequence[str] | None = None,
) -> list[dict]:
    """Agreement entries per metric, overall first, then one per stratum."""
    out = []
    for metric in metrics:
        sel = _fp_pairs(pairs) if metric in FP_METRICS else _ita_pairs(pairs)

        def arrays(subset):
            if metric in FP_METRICS:
                return [r.fitzpatrick for r, _ in subset], [p.pred_fp for _, p in subset]
            return [ita(r.lab) for r, _ in subset], [p.pred_ita for _, p in subset]

        groups: list[tuple[str, list]] = [("overall", sel)]
        if by is not None:
            keys = list(strata) if strata is not None else sorted({_stratum(r, by) for r, _ in sel})
            groups += [(str(k), [(r, p) for r, p in sel if _stratum(r, by) == k]) for k in keys]
        for name, subset in groups:
            ref, pred = arrays(subset)
            subjects = [r.subject_id for r, _ in subset]
            out.append(_report_entry(metric, ref, pred, subjects, name, bootstrap, seed))
    return out


def _stratum(row: ManifestRow, by: str):
    if by == "site":
        return row.site
    if by == "fitzpatrick":
        return str(row.fitzpatrick)
    if by == "modality":
        return row.modality
    raise ValueError(f"cannot stratify by {by!r}")


def cmd_stats(
    manifest: str | Path,
    predictions: str | Path,
    metric: str,
    out: str | Path | None = None,
    by: str | None = None,
    bootstrap: int = 1000,
    seed: int = 0,
    modality: str | None = None,
) -> dict:
    rows = filter_modality(load_manifest(manifest), modality)
    pairs = join_predictions(rows, load_predictions(predictions))
    if metric not in METRIC_ALIASES:
        raise ValueError(f"metric must be one of {sorted(METRIC_ALIASES)}")
    entries = compute_stats(pairs, METRIC_ALIASES[metric], by, bootstrap, seed)
    # a degenerate stratum is reported in-line; a degenerate overall value is an error
    for e in entries:
        if e["stratum"] == "overall" and e["status"].startswith("degenerate"):
            raise DegenerateStatisticsError(f"{e['metric']}: {e['status'][len('degenerate: '):]}")
    report = {
        "metric": metric,
        "by": by,
        "bootstrap": bootstrap,
        "seed": seed,
        "modality_filter": modality,
        "predictions_sha256": file_sha256(predictions),
        "results": entries,
    }
    if out is not None:
        out = Path(out)
        if out.suffix == ".csv":
            cols = ("metric", "stratum", "n", "estimate", "ci_lo", "ci_hi", "status")
            _write_csv(out, cols, [[e.get(c) for c in cols] for e in entries])
        else:
            _dump_json(out, report)
    return report


# -- evaluation ----------------------------------------------------------------------


def _entry_lookup(entries, metric, stratum):
    for e in entries:
        if e["metric"] == metric and e["stratum"] == stratum:
            return e
    return {"metric": metric, "stratum": stratum, "n": 0, "status": NO_DATA}


def evaluation_tables(pairs, bootstrap: int = 1000, seed: int = 0, site: str | None = None) -> dict:
    """Per-site kappa, per-class ordinal errors, per-site ICC3 and Bland-Altman."""
    sites = [site] if site else list(SITES)
    if site:
        pairs = [(r, p) for r, p in pairs if r.site == site]
    kappa = compute_stats(pairs, ["kappa"], "site", bootstrap, seed, sites)
    icc = compute_stats(pairs, ["icc3"], "site", bootstrap, seed, sites)
    ordinal = compute_stats(pairs, ["mae", "within_one", "bias"], "fitzpatrick", bootstrap, seed, [str(i) for i in range(1, 7)])
    ba = compute_stats(pairs, ["ba_bias", "ba_loa_lo", "ba_loa_hi"], None, bootstrap, seed)
    order = [*sites, "overall"]
    classes = [*(str(i) for i in range(1, 7)), "overall"]
    return {
        "kappa_by_site": [_entry_lookup(kappa, "kappa", s) for s in order],
        "icc3_by_site": [_entry_lookup(icc, "icc3", s) for s in order],
        "ordinal_by_class": [
            {"fitzpatrick": c, **{m: _entry_lookup(ordinal, m, c) for m in ("mae", "within_one", "bias")}} for c in classes
        ],
        "bland_altman": {m: _entry_lookup(ba, m, "overall") for m in ("ba_bias", "ba_loa_lo", "ba_loa_hi")},
    }


def cmd_eval(
    manifest: str | Path,
    out_dir: str | Path,
    predictions: dict[str, str | Path] | None = None,
    checkpoints: Sequence[str | Path] | None = None,
    baselines: Sequence[BaselineConfig] = (),
    modality: str | None = "dermatoscopic",
    site: str | None = None,
    bootstrap: int = 1000,
    seed: int = 0,
    threads: int = 1,
    cross_validated: bool = True,
    wb_ablation: bool = False,
) -> dict:
    """Evaluate one or more methods against manifest references.

    Methods come from prediction CSVs (``name -> path``), fold checkpoints
    (cross-validated by default) and/or baseline configs. The first method's
    full tables are written along with an overall ICC3 comparison across
    methods. ``wb_ablation`` re-runs the checkpoints on Shades-of-Gray
    corrected images and adds a per-class bias table for both variants.
    """
    manifest = Path(manifest)
    rows = filter_modality(load_manifest(manifest), modality)
    items, _ = collect_items(manifest, modality)
    methods: dict[str, list[PredictionRow]] = {}
    provenance: dict[str, dict] = {}
    for name, path in (predictions or {}).items():
        methods[name] = load_predictions(path)
        provenance[name] = {"predictions_sha256": file_sha256(path)}
    cks = load_checkpoints(checkpoints) if checkpoints else None
    if cks:
        methods["net"] = predict_items(items, cks, threads=threads, cross_validated=cross_validated)
        provenance["net"] = {"checkpoints": [ck.sha256 for ck in cks], "cross_validated": cross_validated}
    for b in baselines:
        name = b.estimator if b.wb == "none" else f"{b.estimator}+{b.wb}"
        methods[name] = predict_items(items, baseline=b, threads=threads)
        provenance[name] = {"baseline": b.to_dict()}
    if not methods:
        raise ValueError("nothing to evaluate: give predictions, checkpoints or baselines")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = next(iter(methods))
    pairs_by_method = {m: join_predictions(rows, p) for m, p in methods.items()}
    if site is not None and site not in SITES:
        raise ValueError(f"unknown site {site!r}")
    tables = evaluation_tables(pairs_by_method[first], bootstrap, seed, site)
    comparison = []
    for m, pairs in pairs_by_method.items():
        sel = [(r, p) for r, p in pairs if site is None or r.site == site]
        e = compute_stats(sel, ["icc3"], None, bootstrap, seed)[0]
        comparison.append({"method": m, **e})
    ranked = sorted(comparison, key=lambda e: -e["estimate"] if e.get("status") == "ok" else np.inf)
    report = {
        "manifest_sha256": file_sha256(manifest),
        "modality_filter": modality,
        "site_filter": site,
        "bootstrap": bootstrap,
        "seed": seed,
        "primary_method": first,
        "methods": provenance,
        "tables": tables,
        "icc3_methods": ranked,
        "version": __version__,
    }
    if wb_ablation:
        if not cks:
            raise ValueError("the white-balance ablation needs checkpoints")
        wb_preds = predict_items(items, cks, threads=threads, cross_validated=cross_validated, wb="shades-of-gray:p=6")
        variants = {"no_white_balance": pairs_by_method["net"], "shades_of_gray": join_predictions(rows, wb_preds)}
        classes = [str(i) for i in range(1, 7)]
        table = []
        for c in [*classes, "overall"]:
            entry = {"fitzpatrick": c}
            for v, pairs in variants.items():
                e = compute_stats(pairs, ["bias"], "fitzpatrick", bootstrap, seed, classes)
                entry[v] = _entry_lookup(e, "bias", c)
            table.append(entry)
        kappa_row = {v: compute_stats(p, ["kappa"], None, bootstrap, seed)[0] for v, p in variants.items()}
        report["white_balance_ablation"] = {"bias_by_class": table, "kappa": kappa_row}

    _dump_json(out_dir / "eval.json", report)
    cols = ("metric", "stratum", "n", "estimate", "ci_lo", "ci_hi", "status")
    flat = list(tables["kappa_by_site"]) + list(tables["icc3_by_site"])
    for row in tables["ordinal_by_class"]:
        flat += [row[m] for m in ("mae", "within_one", "bias")]
    flat += list(tables["bland_altman"].values())
    _write_csv(out_dir / "eval_tables.csv", cols, [[e.get(c) for c in cols] for e in flat])
    _write_csv(
        out_dir / "icc3_methods.csv",
        ("method", "n", "estimate", "ci_lo", "ci_hi", "status"),
        [[e["method"], e.get("n"), e.get("estimate"), e.get("ci_lo"), e.get("ci_hi"), e.get("status")] for e in ranked],
    )
    return report


# -- audit ---------------------------------------------------------------------------

DEFAULT_ITA_EDGES = tuple(float(v) for v in range(-90, 91, 10))


def composition(labels: Sequence[int]) -> tuple[list[int], list[float]]:
    counts = [int(sum(1 for v in labels if v == c)) for c in range(1, 7)]
    n = sum(counts)
    pct = [100.0 * c / n if n else 0.0 for c in counts]
    return counts, pct


def ita_histogram(values: Sequence[float], edges: Sequence[float] = DEFAULT_ITA_EDGES) -> list[int]:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("histogram edges must be strictly increasing")
    vals = np.clip(np.asarray(values, dtype=np.float64), edges[0], edges[-1])
    counts, _ = np.histogram(vals, bins=edges)
    return counts.astype(int).tolist()


def cmd_audit(
    source: str | Path,
    out_dir: str | Path,
    checkpoints: Sequence[str | Path] | None = None,
    baseline: BaselineConfig | None = None,
    reference: bool = False,
    edges: Sequence[float] = DEFAULT_ITA_EDGES,
    bands: ThresholdConfig = DEFAULT_ITA_BANDS,
    modality: str | None = None,
    threads: int = 1,
    seed: int = 0,
) -> dict:
    """Skin-tone composition of a dataset.

    Exactly one source of estimates: fold ``checkpoints`` (majority vote for
    Fitzpatrick, angle-of-mean ITA), a pixel ``baseline`` (ITA only; the
    composition then uses ITA bands, not clinical Fitzpatrick) or
    ``reference`` manifest labels. Both the composition and the histogram
    come from the same prediction pass.
    """
    if sum([bool(checkpoints), baseline is not None, reference]) != 1:
        raise ValueError("choose exactly one of checkpoints, baseline or reference")
    items, name = collect_items(source, modality)
    cks = load_checkpoints(checkpoints) if checkpoints else None
    if reference:
        if any(it.row is None for it in items):
            raise ValueError("reference audits need a manifest")
        preds = [
            PredictionRow(
                it.key,
                it.row.subject_id,
                it.row.fitzpatrick,
                *(it.row.lab or (None, None, None)),
                ita(it.row.lab) if it.row.lab else None,
                it.row.fold,
            )
            for it in items
        ]
        estimator = {"type": "reference", "labels": "manifest fitzpatrick", "ita": "manifest colorimeter Lab"}
    elif cks:
        preds = predict_items(items, cks, threads=threads)
        estimator = {
            "type": "ensemble",
            "checkpoints": [{"sha256": ck.sha256, "head": ck.config.head, "fold": ck.provenance.get("fold")} for ck in cks],
            "fitzpatrick_rule": "majority vote, ties to lowest rank",
            "ita_rule": "ITA of mean fold Lab",
        }
    else:
        preds = predict_items(items, baseline=baseline, threads=threads)
        estimator = {"type": "baseline", **baseline.to_dict()}

    fp_values = [p.pred_fp for p in preds if p.pred_fp is not None]
    ita_values = [p.pred_ita for p in preds if p.pred_ita is not None]
    if fp_values:
        fp_source = "reference" if reference else "fitzpatrick"
        labels = [f"FP {c}" for c in range(1, 7)]
    else:
        fp_source = "ita-band"
        fp_values = [ita_to_fitzpatrick(v, bands) for v in ita_values]
        labels = [f"ITA-band {c}" for c in range(1, 7)]
    counts, pct = composition(fp_values)
    hist = ita_histogram(ita_values, edges)
    subjects = {it.row.subject_id for it in items if it.row is not None}
    report = {
        "dataset": name,
        "n_images": len(items),
        "n_subjects": len(subjects) if subjects else None,
        "modality_filter": modality,
        "composition": {"source": fp_source, "labels": labels, "counts": counts, "percentages": pct, "n": sum(counts)},
        "ita_histogram": {"edges": list(map(float, edges)), "counts": hist, "n": len(ita_values)},
        "ita_bands": list(bands.thresholds) if fp_source == "ita-band" else None,
        "estimator": estimator,
        "seed": seed,
        "kernel_backend": kernels.BACKEND,
        "version": __version__,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(out_dir / "audit.json", report)
    _write_csv(out_dir / "composition.csv", ("label", "count", "percent"), list(zip(labels, counts, pct)))
    _write_csv(
        out_dir / "ita_histogram.csv",
        ("bin_lo", "bin_hi", "count"),
        [(float(lo), float(hi), c) for lo, hi, c in zip(edges[:-1], edges[1:], hist)],
    )
    write_predictions(out_dir / "predictions.csv", preds)
    return report


# -- swatches ------------------------------------------------------------------------


def swatch_pixel(lab) -> tuple[tuple[int, int, int], bool]:
    """8-bit sRGB rendering of a Lab color and whether it was clamped."""
    rgb, clamped = lab_to_srgb(lab)
    return tuple(int(round(c * 255.0)) for c in rgb), clamped


def cmd_swatch(
    out: str | Path,
    labs: Sequence[tuple[float, float, float]] | None = None,
    manifest: str | Path | None = None,
    predictions: str | Path | None = None,
    cell: int = 64,
    limit: int | None = None,
) -> dict:
    """Grid of (input thumbnail, truth swatch, predicted swatch) rows.

    With plain ``labs`` each row is a single swatch. A JSON sidecar next to
    the PNG records per-row clamp flags.
    """
    from PIL import Image

    rows_px: list[list[np.ndarray]] = []
    sidecar = []

    def block(rgb8):
        return np.broadcast_to(np.asarray(rgb8, dtype=np.uint8), (cell, cell, 3))

    if labs is not None:
        for lab in labs:
            rgb8, clamped = swatch_pixel(lab)
            rows_px.append([block(rgb8)])
            sidecar.append({"lab": list(map(float, lab)), "rgb8": list(rgb8), "clamped": clamped})
    else:
        if manifest is None or predictions is None:
            raise ValueError("give labs, or a manifest plus predictions")
        manifest = Path(manifest)
        pairs = join_predictions(load_manifest(manifest), load_predictions(predictions))
        pairs = [(r, p) for r, p in pairs if p.pred_L is not None]
        for r, p in pairs[:limit]:
            thumb = preprocess(load_image(manifest.parent / r.image_path), cell, (0, 0, 0), (1, 1, 1))
            thumb8 = np.round(np.clip(thumb, 0, 1) * 255).astype(np.uint8)
            pred = (p.pred_L, p.pred_a, p.pred_b)
            prgb, pclamp = swatch_pixel(pred)
            entry = {"image_path": r.image_path, "pred_lab": list(pred), "pred_rgb8": list(prgb), "pred_clamped": pclamp}
            cells = [thumb8]
            if r.lab is not None:
                trgb, tclamp = swatch_pixel(r.lab)
                cells.append(block(trgb))
                entry.update(truth_lab=list(r.lab), truth_rgb8=list(trgb), truth_clamped=tclamp)
            else:
                cells.append(np.zeros((cell, cell, 3), np.uint8))
            cells.append(block(prgb))
            rows_px.append(cells)
            sidecar.append(entry)
    if not rows_px:
        raise ValueError("nothing to render")
    width = max(len(r) for r in rows_px)
    grid = np.zeros((cell * len(rows_px), cell * width, 3), np.uint8)
    for i, cells in enumerate(rows_px):
        for j, c in enumerate(cells):
            grid[i * cell : (i + 1) * cell, j * cell : (j + 1) * cell] = c
    out = Path(out)
    Image.fromarray(grid, "RGB").save(out, format="PNG")
    report = {"image": out.name, "rows": sidecar, "any_clamped": any(e.get("clamped") or e.get("pred_clamped") or e.get("truth_clamped") for e in sidecar)}
    _dump_json(out.with_suffix(".json"), report)
    return report
