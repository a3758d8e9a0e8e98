"""``tonemeter`` command line.

Subcommands: synth, train, estimate, eval, stats, audit, swatch.

Global options ``--seed``, ``--config`` and ``--threads`` go before the
subcommand (``--seed`` and ``--threads`` are also accepted after it). A
config file (TOML, or INI for ``.ini``/``.cfg``) supplies
defaults per subcommand section; explicit flags win::

    [estimate]
    estimator = "patch"
    patch_size = 24

    [audit]
    ita_bands = [55, 41, 28, 10, -30]

Exit codes: 0 success, 1 unexpected error, 2 invalid input, 3 degenerate
statistics.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import __version__, commands
from .color import DEFAULT_ITA_BANDS, ThresholdConfig
from .dataset import MODALITIES, SITES
from .stats import DegenerateStatisticsError
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_DEGENERATE = 0, 1, 2, 3
SUBCOMMANDS = ("synth", "train", "estimate", "eval", "stats", "audit", "swatch")

log = logging.getLogger("tonemeter")


def load_config(path: str | Path) -> dict[str, dict]:
    path = Path(path)
    if path.suffix.lower() in (".ini", ".cfg"):
        cp = configparser.ConfigParser()
        if not cp.read(path, encoding="utf-8"):
            raise ValueError(f"{path}: cannot read config")
        out: dict[str, dict] = {}
        for section in cp.sections():
            vals = {}
            for key, raw in cp.items(section):
                try:
                    vals[key] = json.loads(raw)
                except json.JSONDecodeError:
                    vals[key] = raw
            out[section] = vals
        return out
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ValueError(f"{path}: cannot read config ({exc})") from exc
    return {k: v for k, v in data.items() if isinstance(v, dict)}


def _baseline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("kmeans", "patch", "mean"), default="kmeans")
    p.add_argument("--k", type=int, default=3, help="K-means cluster count")
    p.add_argument("--patch-size", type=int, default=20)
    p.add_argument("--variance-cutoff", type=float, default=50.0, help="max Lab variance of a usable patch")
    p.add_argument("--wb", default="none", help='white balance: "none" or "shades-of-gray:p=6"')


def _baseline(args) -> commands.BaselineConfig:
    return commands.BaselineConfig(args.estimator, args.k, args.patch_size, args.variance_cutoff, args.wb, args.seed)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="tonemeter", description="Skin-tone estimation and dataset auditing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="TOML or INI file with per-subcommand defaults")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for image loading and baselines")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the shared options are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="render a synthetic labeled corpus")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=600, help="number of images")
    p.add_argument("--images-per-subject", type=int, default=10)
    p.add_argument("--identity-illumination", action="store_true")
    p.add_argument("--lesion-probability", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--size", type=int, default=64)

    p = subs["train"] = sub.add_parser("train", parents=[common], help="train one model per cross-validation fold")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--head", choices=sorted(commands.HEAD_ALIASES), default="ordinal")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--only-fold", type=int, action="append", help="train only these folds")
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)

    p = subs["estimate"] = sub.add_parser("estimate", parents=[common], help="predict skin tone for a manifest or image directory")
    p.add_argument("source", help="manifest CSV or image directory")
    p.add_argument("out", help="prediction CSV")
    p.add_argument("--checkpoints", nargs="+", help="checkpoint files or directories (default: pixel baseline)")
    p.add_argument("--cross-validated", action="store_true", help="score each row with its own fold model")
    p.add_argument("--modality", choices=MODALITIES)
    _baseline_args(p)

    p = subs["eval"] = sub.add_parser("eval", parents=[common], help="agreement tables against manifest references")
    p.add_argument("manifest")
    p.add_argument("out", help="output directory")
    p.add_argument("--predictions", action="append", default=[], metavar="NAME=CSV")
    p.add_argument("--checkpoints", nargs="+")
    p.add_argument("--baselines", nargs="*", default=[], choices=("kmeans", "patch", "mean"))
    p.add_argument("--modality", choices=(*MODALITIES, "all"), default="dermatoscopic")
    p.add_argument("--site", choices=SITES)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--ensemble", action="store_true", help="score every row with all checkpoints instead of its fold model")
    p.add_argument("--wb-ablation", action="store_true", help="add the Shades-of-Gray per-class bias table")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--patch-size", type=int, default=20)
    p.add_argument("--variance-cutoff", type=float, default=50.0)

    p = subs["stats"] = sub.add_parser("stats", parents=[common], help="one agreement statistic with bootstrap CIs")
    p.add_argument("manifest")
    p.add_argument("predictions")
    p.add_argument("--metric", choices=sorted(commands.METRIC_ALIASES), required=True)
    p.add_argument("--by", choices=("site", "fitzpatrick", "modality"))
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--modality", choices=MODALITIES)
    p.add_argument("--out", help=".json or .csv report")

    p = subs["audit"] = sub.add_parser("audit", parents=[common], help="skin-tone composition of a dataset")
    p.add_argument("source", help="manifest CSV or image directory")
    p.add_argument("out", help="output directory")
    p.add_argument("--checkpoints", nargs="+")
    p.add_argument("--reference", action="store_true", help="use manifest labels instead of predictions")
    p.add_argument("--modality", choices=MODALITIES)
    p.add_argument("--bin-width", type=float, default=10.0, help="ITA histogram bin width in degrees")
    p.add_argument("--ita-bands", type=float, nargs=5, help="five decreasing ITA thresholds")
    _baseline_args(p)

    p = subs["swatch"] = sub.add_parser("swatch", parents=[common], help="render Lab colors as sRGB swatches")
    p.add_argument("out", help="PNG path; a JSON sidecar is written next to it")
    p.add_argument("--lab", type=float, nargs=3, action="append", metavar=("L", "A", "B"))
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--cell", type=int, default=64)
    p.add_argument("--limit", type=int)
    return parser, subs


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    config: dict[str, dict] = {}
    if known.config:
        config = load_config(known.config)
        for name, section in config.items():
            dests = {a.dest for a in (subs[name]._actions if name in subs else parser._actions)}
            defaults = {k.replace("-", "_"): v for k, v in section.items()}
            unknown = sorted(set(defaults) - dests)
            if name not in subs and name != "global":
                raise ValueError(f"config section [{name}] is not a subcommand")
            if unknown:
                raise ValueError(f"config section [{name}] has unknown keys: {', '.join(unknown)}")
            (subs[name] if name in subs else parser).set_defaults(**defaults)
    args = parser.parse_args(argv)
    args.config_values = config
    return args


def _edges(width: float) -> list[float]:
    if width <= 0 or 180.0 % width:
        raise ValueError("bin width must divide 180 degrees")
    n = int(round(180.0 / width))
    return [-90.0 + i * width for i in range(n + 1)]


def run(args: argparse.Namespace) -> dict:
    if args.threads < 1:
        raise ValueError("--threads must be >= 1")
    cmd = args.command
    if cmd == "synth":
        return commands.cmd_synth(
            args.out, args.n, args.seed, args.images_per_subject, args.identity_illumination,
            args.lesion_probability, args.noise_sigma, args.size,
        )
    if cmd == "train":
        base = commands.LAB_TRAIN if commands.HEAD_ALIASES[args.head] == "lab_regression" else commands.FITZPATRICK_TRAIN
        overrides = {
            k: getattr(args, k)
            for k in ("learning_rate", "batch_size", "max_epochs", "patience")
            if getattr(args, k) is not None
        }
        cfg = TrainConfig(**{**base.to_dict(), **overrides})
        return commands.cmd_train(args.manifest, args.out, args.head, args.seed, args.folds, args.only_fold, args.input_size, cfg)
    if cmd == "estimate":
        return commands.cmd_estimate(
            args.source, args.out, args.checkpoints, _baseline(args), args.threads, args.modality,
            args.cross_validated, args.wb if args.checkpoints else "none",
        )
    if cmd == "eval":
        preds = {}
        for spec in args.predictions:
            name, sep, path = spec.partition("=")
            if not sep:
                name, path = Path(spec).stem, spec
            preds[name] = path
        baselines = [
            commands.BaselineConfig(b, args.k, args.patch_size, args.variance_cutoff, "none", args.seed) for b in args.baselines
        ]
        return commands.cmd_eval(
            args.manifest, args.out, preds, args.checkpoints, baselines,
            None if args.modality == "all" else args.modality, args.site, args.bootstrap, args.seed,
            args.threads, not args.ensemble, args.wb_ablation,
        )
    if cmd == "stats":
        return commands.cmd_stats(args.manifest, args.predictions, args.metric, args.out, args.by, args.bootstrap, args.seed, args.modality)
    if cmd == "audit":
        bands = ThresholdConfig(tuple(args.ita_bands)) if args.ita_bands else DEFAULT_ITA_BANDS
        use_baseline = not args.checkpoints and not args.reference
        return commands.cmd_audit(
            args.source, args.out, args.checkpoints, _baseline(args) if use_baseline else None, args.reference,
            _edges(args.bin_width), bands, args.modality, args.threads, args.seed,
        )
    if cmd == "swatch":
        return commands.cmd_swatch(args.out, args.lab, args.manifest, args.predictions, args.cell, args.limit)
    raise ValueError(f"unknown command {cmd}")


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ValueError as exc:
        print(f"tonemeter: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except DegenerateStatisticsError as exc:
        print(f"tonemeter: degenerate statistics: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValueError, KeyError, OSError) as exc:
        print(f"tonemeter: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.verbose:
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
