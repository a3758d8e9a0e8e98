"""One test per acceptance criterion; each records a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and repeated
in the pytest terminal summary. Criteria 8 and 9 share one synthetic
benchmark and take several minutes on a single CPU.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import astuple
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from tonemeter import commands
from tonemeter.checkpoint import ModelCheckpoint, save_checkpoint
from tonemeter.cli import main
from tonemeter.color import delta_e_1976, ita, lab_to_srgb, srgb_to_lab
from tonemeter.dataset import make_folds, preprocess
from tonemeter.ensemble import ensemble_lab, majority_vote
from tonemeter.estimators import kmeans_ita, patch_ita
from tonemeter.network import NetworkConfig, TinyNet
from tonemeter.ordinal import decode_rank, encode_ordinal, rank_probabilities
from tonemeter.stats import bland_altman, icc3, ordinal_errors, weighted_kappa
from tonemeter.synth import SynthDistribution, sample_corpus
from tonemeter.trainer import LAB_TRAIN, LabeledCorpus, TrainConfig, grad_check, train

README = Path(__file__).resolve().parents[1] / "README.md"

BENCH_SEED = 0
BENCH_INPUT = 32
BENCH_FOLDS = 5
#: from-scratch training on the synthetic benchmark, identical for both FP heads
BENCH_FP_TRAIN = TrainConfig(learning_rate=2e-3, batch_size=32, max_epochs=80, patience=5)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- shared synthetic benchmark ------------------------------------------------------


class Benchmark:
    def __init__(self, seed: int = BENCH_SEED):
        self.records = sample_corpus(2400, SynthDistribution(images_per_subject=40), seed)
        self.identity_records = sample_corpus(2400, SynthDistribution.identity(images_per_subject=40), seed)
        self.subjects = np.array([r.subject_id for r in self.records])
        self.truth_lab = np.array([tuple(r.sample.truth_lab) for r in self.records])
        self.truth_ita = np.array([ita(r.sample.truth_lab) for r in self.records])
        self.truth_fp = np.array([r.sample.truth_fp for r in self.records])
        self.x = np.stack([preprocess(r.sample.image, BENCH_INPUT) for r in self.records])
        subject_fp = {s: int(fp) for s, fp in zip(self.subjects, self.truth_fp)}
        folds = make_folds(subject_fp, BENCH_FOLDS, seed)
        self.fold = np.array([folds.fold_of(s) for s in self.subjects])

    def cross_validate(self, head: str, targets: np.ndarray, cfg: TrainConfig) -> np.ndarray:
        out = None
        for k in range(BENCH_FOLDS):
            tr, te = self.fold != k, self.fold == k
            net = TinyNet.init(NetworkConfig(input_size=BENCH_INPUT, head=head, seed=BENCH_SEED + k))
            res = train(net, LabeledCorpus(self.x[tr], targets[tr], self.subjects[tr]), cfg)
            pred = res.net.predict(self.x[te])
            if out is None:
                out = np.zeros((len(self.x),) + pred.shape[1:], dtype=pred.dtype)
            out[te] = pred
        return out


@pytest.fixture(scope="module")
def bench():
    return Benchmark()


# -- 1 -------------------------------------------------------------------------------


def test_criterion_01_reference_targets_and_eval_path(tmp_path):
    text = README.read_text()
    targets = ["52.98", "94.12", "98.38", "0.84", "84.83"]
    documented = all(t in text for t in targets)
    corpus = tmp_path / "c"
    commands.cmd_synth(corpus, 60, 1, 4, False, 0.0, 0.01, 32)
    report = commands.cmd_eval(
        corpus / "manifest.csv", tmp_path / "ev", {}, None,
        [commands.BaselineConfig("kmeans")], "dermatoscopic", None, 100, 0, 1,
    )
    tables = report["tables"]
    has_tables = all(k in tables for k in ("kappa_by_site", "icc3_by_site", "ordinal_by_class", "bland_altman"))
    overall = [e for e in tables["icc3_by_site"] if e["stratum"] == "overall"][0]
    record(1, documented and has_tables and overall["status"] == "ok",
           f"reference targets documented={documented}; eval tables produced={has_tables}")


# -- 2-4: color ----------------------------------------------------------------------


def test_criterion_02_color_round_trip():
    rng = np.random.default_rng(2)
    rgb = rng.uniform(0, 1, (1000, 3))
    t = time.perf_counter()
    back, clamped = lab_to_srgb(srgb_to_lab(rgb))
    elapsed = time.perf_counter() - t
    err = float(np.abs(np.asarray(back) - rgb).max())
    record(2, err < 1e-4 and elapsed < 1.0, f"max channel error {err:.2e} in {elapsed * 1e3:.1f} ms")


def test_criterion_03_ita_exactness():
    cases = [((50, 0, 17), 0.0), ((70, 5, 20), 45.0), ((30, 8, 20), -45.0)]
    worst = max(abs(ita(lab) - want) for lab, want in cases)
    rng = np.random.default_rng(3)
    drift = 0.0
    for _ in range(1000):
        L, b = rng.uniform(0, 100), rng.uniform(-60, 60)
        a1, a2 = rng.uniform(-100, 100, 2)
        drift = max(drift, abs(ita((L, a1, b)) - ita((L, a2, b))))
    record(3, worst <= 1e-9 and drift == 0.0, f"worst case error {worst:.1e}; max a* drift {drift}")


def test_criterion_04_delta_e_axioms():
    rng = np.random.default_rng(4)
    x, y, z = (rng.uniform([0, -128, -128], [100, 128, 128], (10_000, 3)) for _ in range(3))
    dxy, dyx = delta_e_1976(x, y), delta_e_1976(y, x)
    dxz, dyz = delta_e_1976(x, z), delta_e_1976(y, z)
    identity = float(np.abs(delta_e_1976(x, x)).max())
    ok = (
        identity <= 1e-12
        and np.all(dxy >= 0)
        and np.all(dxy[np.any(x != y, axis=1)] > 0)
        and float(np.abs(dxy - dyx).max()) <= 1e-12
        and np.all(dxz <= dxy + dyz + 1e-12)
    )
    record(4, bool(ok), "identity, positivity, symmetry and triangle inequality over 10000 triples")


# -- 5-6: ordinal head and gradients -------------------------------------------------


def test_criterion_05_rank_consistency():
    rng = np.random.default_rng(5)
    cfg = dict(input_size=8, conv_blocks=((3, 3, 2), (4, 3, 2)), feature_dim=5, head="ordinal")
    violations = 0
    for i in range(1000):
        net = TinyNet.init(NetworkConfig(seed=i, **cfg))
        net.params["head.b"] = rng.normal(0, 3, net.params["head.b"].shape)
        net.project()
        p = rank_probabilities(net.forward(rng.normal(size=(1, 8, 8, 3))))[0]
        violations += int(np.any(np.diff(p) > 0))
    round_trip = all(decode_rank(np.where(encode_ordinal(y) > 0, 5.0, -5.0)) == y for y in range(1, 7))
    record(5, violations == 0 and round_trip, f"{violations} monotonicity violations in 1000; round trip exact={round_trip}")


def test_criterion_06_gradient_checks():
    rng = np.random.default_rng(6)
    base = dict(input_size=8, conv_blocks=((3, 3, 2), (4, 3, 2)), feature_dim=5)
    targets = {
        "ordinal": np.array([1, 3, 6, 4]),
        "classification": np.array([2, 5, 1, 6]),
        "lab_regression": np.array([[60.0, 5, 18], [40, 10, 20], [75, 3, 12], [55, 8, 25]]),
    }
    t = time.perf_counter()
    errs = {}
    for head, y in targets.items():
        net = TinyNet.init(NetworkConfig(head=head, seed=6, **base))
        if head == "lab_regression":
            net.lab_offset = np.array([58.0, 6.0, 18.0])
            net.lab_scale = np.array([10.0, 3.0, 5.0])
        errs[head] = grad_check(net, rng.normal(size=(4, 8, 8, 3)), y)
    elapsed = time.perf_counter() - t
    ok = max(errs.values()) < 1e-4 and elapsed < 30
    record(6, ok, ", ".join(f"{h} {e:.1e}" for h, e in errs.items()) + f" in {elapsed:.1f} s")


# -- 7: metric oracles ---------------------------------------------------------------


def kappa_oracle(ref, pred):
    # linear weights; expected disagreement over every (ref_i, pred_j) pairing
    n = len(ref)
    obs = sum(abs(r - p) for r, p in zip(ref, pred)) / n
    exp = sum(abs(r - p) for r, p in itertools.product(ref, pred)) / n**2
    return 1 - obs / exp


def icc_oracle(a, b):
    rows = list(zip(a, b))
    n, k = len(rows), 2
    grand = sum(a + b) / (n * k)
    row_means = [sum(r) / k for r in rows]
    col_means = [sum(a) / n, sum(b) / n]
    ss_r = k * sum((m - grand) ** 2 for m in row_means)
    ss_c = n * sum((m - grand) ** 2 for m in col_means)
    ss_t = sum((v - grand) ** 2 for r in rows for v in r)
    ms_r = ss_r / (n - 1)
    ms_e = (ss_t - ss_r - ss_c) / ((n - 1) * (k - 1))
    return (ms_r - ms_e) / (ms_r + (k - 1) * ms_e)


def ordinal_oracle(ref, pred):
    d = [p - r for r, p in zip(ref, pred)]
    return sum(map(abs, d)) / len(d), 100 * sum(abs(x) <= 1 for x in d) / len(d), sum(d) / len(d)


def ba_oracle(ref, pred):
    d = [p - r for r, p in zip(ref, pred)]
    m = sum(d) / len(d)
    sd = math.sqrt(sum((x - m) ** 2 for x in d) / (len(d) - 1))
    return m, m - 1.96 * sd, m + 1.96 * sd


RATING_FIXTURES = [
    ([1, 1, 3, 6], [1, 2, 3, 6]),
    ([1, 2, 3, 4, 5, 6], [2, 2, 3, 5, 5, 6]),
    ([2, 2, 2, 3, 3], [2, 3, 4, 3, 1]),
    ([6, 5, 4, 3, 2, 1, 1], [1, 2, 3, 4, 5, 6, 1]),
    ([3, 3, 4, 4, 5, 2, 1, 6], [3, 4, 4, 2, 5, 2, 2, 5]),
]
CONTINUOUS_FIXTURES = [
    ([10.0, 20.0, 30.0, 42.0, 55.0, 61.0], [12.0, 19.0, 33.0, 40.0, 50.0, 66.0]),
    ([-5.0, 0.0, 5.0, 10.0], [-4.0, 2.0, 4.0, 13.0]),
    ([1.5, 2.5, 9.0, 4.0, 7.5], [2.0, 2.0, 8.0, 5.5, 7.0]),
    ([45.0, 30.0, 12.0, -8.0, -33.0, 60.0, 20.0], [41.0, 35.0, 15.0, -2.0, -40.0, 52.0, 18.0]),
    ([0.0, 1.0, 2.0], [0.5, 0.7, 2.9]),
]


def test_criterion_07_metric_oracles():
    worst = 0.0
    for ref, pred in RATING_FIXTURES:
        worst = max(worst, abs(weighted_kappa(ref, pred) - kappa_oracle(ref, pred)))
        worst = max(worst, *(abs(u - v) for u, v in zip(astuple(ordinal_errors(ref, pred)), ordinal_oracle(ref, pred))))
    for ref, pred in CONTINUOUS_FIXTURES:
        worst = max(worst, abs(icc3(ref, pred) - icc_oracle(ref, pred)))
        worst = max(worst, *(abs(u - v) for u, v in zip(astuple(bland_altman(ref, pred)), ba_oracle(ref, pred))))
    rng = np.random.default_rng(7)
    prop = 0.0
    for _ in range(200):
        a = rng.normal(0, 20, 30)
        b = a + rng.normal(0, 5, 30)
        prop = max(prop, abs(icc3(a, b + rng.uniform(-50, 50)) - icc3(a, b)))
        r, p = rng.integers(1, 7, 25), rng.integers(1, 7, 25)
        prop = max(prop, abs(weighted_kappa(7 - r, 7 - p) - weighted_kappa(r, p)))
    record(7, worst <= 1e-10 and prop <= 1e-10,
           f"max oracle deviation {worst:.1e}; offset/reversal invariance deviation {prop:.1e}")


# -- 8-9: synthetic benchmark --------------------------------------------------------


def test_criterion_08_benchmark_ordering(bench):
    t = time.perf_counter()
    pred_lab = bench.cross_validate("lab_regression", bench.truth_lab, LAB_TRAIN)
    train_s = time.perf_counter() - t
    net_icc = icc3(bench.truth_ita, ita(pred_lab))
    patch = icc3(bench.truth_ita, [patch_ita(r.sample.image).ita for r in bench.records])
    km = icc3(bench.truth_ita, [kmeans_ita(r.sample.image).ita for r in bench.records])
    id_patch = icc3(bench.truth_ita, [patch_ita(r.sample.image).ita for r in bench.identity_records])
    id_km = icc3(bench.truth_ita, [kmeans_ita(r.sample.image).ita for r in bench.identity_records])
    ok = (
        net_icc >= 0.90
        and net_icc >= max(patch, km) + 0.05
        and min(id_patch, id_km) >= 0.98
        and train_s <= 600
    )
    record(8, ok, f"ICC3 net {net_icc:.4f}, patch {patch:.4f}, kmeans {km:.4f}; "
                  f"identity patch {id_patch:.4f}, kmeans {id_km:.4f}; 5-fold training {train_s:.0f} s")


def test_criterion_09_ordinal_beats_softmax(bench):
    coral = bench.cross_validate("ordinal", bench.truth_fp, BENCH_FP_TRAIN)
    soft = bench.cross_validate("classification", bench.truth_fp, BENCH_FP_TRAIN)
    e_coral, e_soft = ordinal_errors(bench.truth_fp, coral), ordinal_errors(bench.truth_fp, soft)
    record(9, e_coral.mae <= e_soft.mae,
           f"MAE CORAL {e_coral.mae:.4f} (within-one {e_coral.within_one:.2f}%), "
           f"softmax {e_soft.mae:.4f} (within-one {e_soft.within_one:.2f}%)")


# -- 10-12 ---------------------------------------------------------------------------


def test_criterion_10_ensemble_semantics():
    votes = [((2, 2, 2, 3, 3), 2), ((2, 2, 3, 3, 4), 2), ((5, 4, 4, 5, 1), 4), ((6,), 6)]
    votes_ok = all(majority_vote(v) == want for v, want in votes)
    labs = [(60.0, 5.0, 10.0), (40.0, 5.0, 30.0)]
    lab, angle = ensemble_lab(labs)
    mean_of_angles = float(np.mean([ita(v) for v in labs]))
    angle_ok = tuple(lab) == (50.0, 5.0, 20.0) and angle == 0.0 and abs(mean_of_angles) > 10
    same_lab, same_angle = ensemble_lab([(60, 5, 20)] * 5)
    ident_ok = tuple(same_lab) == (60.0, 5.0, 20.0) and same_angle == ita((60, 5, 20))
    record(10, votes_ok and angle_ok and ident_ok,
           f"majority vote incl. tie-break={votes_ok}; angle of mean 0 vs mean of angles {mean_of_angles:.2f}")


def test_criterion_11_determinism(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["synth", str(corpus), "--n", "80", "--images-per-subject", "4", "--size", "32", "--seed", "11"]) == 0
    blobs = []
    for threads in (1, 4):
        out = tmp_path / f"audit{threads}"
        assert main(["--threads", str(threads), "audit", str(corpus / "manifest.csv"), str(out)]) == 0
        blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    audits_equal = blobs[0] == blobs[1]

    recs = sample_corpus(60, SynthDistribution(images_per_subject=4, size=16), 11)
    data = LabeledCorpus(
        np.stack([preprocess(r.sample.image, 16) for r in recs]),
        np.array([r.sample.truth_fp for r in recs]),
        np.array([r.subject_id for r in recs]),
    )
    cfg = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=3, patience=2, seed=11)
    digests = []
    for i in range(2):
        net = TinyNet.init(NetworkConfig(input_size=16, head="ordinal", seed=11))
        res = train(net, data, cfg)
        digests.append(save_checkpoint(tmp_path / f"run{i}.tmck", ModelCheckpoint(res.net)))
    training_equal = digests[0] == digests[1]
    record(11, audits_equal and training_equal,
           f"audits byte-identical for 1 vs 4 threads={audits_equal}; retrained checkpoint identical={training_equal}")


def test_criterion_12_fold_hygiene():
    rng = np.random.default_rng(12)
    leaks = 0
    for seed in range(1000):
        n = int(rng.integers(5, 80))
        labels = {f"S{i:03d}": int(rng.integers(1, 7)) for i in range(n)}
        folds = make_folds(labels, 5, seed)
        seen = set()
        for k in range(5):
            members = set(folds.subjects_in(k))
            leaks += len(seen & members)
            seen |= members
        leaks += int(seen != set(labels))
    sizes = sorted(make_folds({f"S{i:02d}": 1 + i % 6 for i in range(64)}, 5, 0).sizes(), reverse=True)
    record(12, leaks == 0 and sizes == [13, 13, 13, 13, 12], f"{leaks} leaks over 1000 seeds; 64 subjects -> {sizes}")
