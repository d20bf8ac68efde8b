"""Command-line harness: generate / train / sweep / verify / plotdata.

Every command is reproducible from (config, seed) alone.  Exit codes:
0 success, 1 usage or config error, 2 verification failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from typing import Sequence

import numpy as np

from . import fileio, verification
from .config import ExperimentConfig, dump_config, get_preset, load_config
from .harness import make_datasets, run_experiment, run_sweep
from .metrics import format_dispatch_table
from .verification import LemmaReport, format_report_table

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _bool_flag(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _resolve_config(args) -> ExperimentConfig:
    """--config file wins; --preset alone loads the named preset."""
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
        except Exception as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    elif args.preset:
        cfg = get_preset(args.preset)
    else:
        raise ConfigError("either --config or --preset is required")
    run = cfg.run
    updates = {}
    if getattr(args, "deterministic", None) is not None:
        updates["deterministic"] = args.deterministic
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if updates:
        run = dataclasses.replace(run, **updates)
        cfg = dataclasses.replace(cfg, run=run)
    return cfg


def _add_common(parser: argparse.ArgumentParser, seeds: bool = False) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML experiment config")
    parser.add_argument("--preset", metavar="NAME", help="named preset (setting1..setting4, *_linear, *_fast)")
    parser.add_argument("--seed", type=int, default=0, metavar="N")
    if seeds:
        parser.add_argument("--seeds", type=int, default=None, metavar="N",
                            help="number of sweep seeds (0..N-1)")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--deterministic", type=_bool_flag, default=None, metavar="BOOL")
    parser.add_argument("--threads", type=int, default=None, metavar="N")


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.run.out_dir
    train_set, test_set, _ = make_datasets(cfg, args.seed)
    files = {"train": os.path.join(out, "train.bin"), "test": os.path.join(out, "test.bin")}
    fileio.save_dataset_bin(train_set, files["train"])
    fileio.save_dataset_bin(test_set, files["test"])
    if args.csv:
        fileio.save_dataset_csv(train_set, os.path.join(out, "train.csv"))
        fileio.save_dataset_csv(test_set, os.path.join(out, "test.csv"))
    manifest = dump_config(cfg) + (
        f"# seed: {args.seed}\n"
        f"# train: train.bin ({train_set.n} examples)\n"
        f"# test: test.bin ({test_set.n} examples)\n"
    )
    fileio.atomic_write_text(os.path.join(out, "manifest.yaml"), manifest)
    print(f"wrote {files['train']} ({train_set.n}) and {files['test']} ({test_set.n})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.run.out_dir
    result = run_experiment(cfg, args.seed)
    fileio.save_metrics_csv(result.logs, os.path.join(out, "metrics.csv"))
    fileio.save_checkpoint(result.model, result.iterations, os.path.join(out, "checkpoint.bin"))
    fileio.save_eval_report(result.report, os.path.join(out, "eval.txt"))
    fileio.save_eval_report_csv(result.report, os.path.join(out, "eval.csv"))
    fileio.atomic_write_text(
        os.path.join(out, "dispatch.txt"), format_dispatch_table(result.report.dispatch) + "\n"
    )
    fileio.atomic_write_text(os.path.join(out, "config.yaml"), dump_config(cfg))
    print(
        f"seed {args.seed}: test accuracy {result.report.accuracy:.4f}, "
        f"entropy {result.report.entropy:.4f}, stopped at t={result.iterations}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.run.out_dir
    n_seeds = args.seeds if args.seeds is not None else cfg.run.num_seeds
    if n_seeds < 2:
        raise ConfigError("--seeds must be >= 2 (the summary reports mean and sample std)")
    summary, results = run_sweep(cfg, seeds=range(n_seeds))
    for res in results:
        seed_dir = os.path.join(out, f"seed_{res.seed}")
        fileio.save_metrics_csv(res.logs, os.path.join(seed_dir, "metrics.csv"))
        fileio.save_checkpoint(res.model, res.iterations, os.path.join(seed_dir, "checkpoint.bin"))
        fileio.save_eval_report(res.report, os.path.join(seed_dir, "eval.txt"))
    fileio.atomic_write_text(os.path.join(out, "summary.csv"), summary.to_csv_text())
    fileio.atomic_write_text(os.path.join(out, "config.yaml"), dump_config(cfg))
    print(summary.format_line())
    return EXIT_OK


_SUITES = ("smoothing", "general", "pairwise", "gap", "symmetry", "gradcheck", "zerosum", "ceiling")

# accepted spellings for suites that have a second name in common use
_SUITE_ALIASES = {"theorem4.1": "ceiling"}


def _run_suite(name: str, fast: bool) -> list[LemmaReport]:
    name = _SUITE_ALIASES.get(name, name)
    scale = 10 if fast else 1
    if name == "smoothing":
        return [verification.certify_smoothing(trials=500 // scale)]
    if name == "general":
        return [verification.certify_general_smoothing(trials=500 // scale)]
    if name == "pairwise":
        return [verification.certify_pairwise(trials=500 // scale)]
    if name == "gap":
        return [verification.certify_gap(trials=100 // scale)]
    if name == "symmetry":
        return [verification.certify_symmetry(trials=1000 // scale)]
    if name == "gradcheck":
        return [verification.certify_gradients(triples=20 // scale or 2)]
    if name == "zerosum":
        return [_zero_sum_report(fast)]
    if name == "ceiling":
        return _ceiling_reports(fast)
    raise ConfigError(f"unknown suite {name!r}; available: {', '.join(_SUITES)}, all")


def _zero_sum_report(fast: bool) -> LemmaReport:
    cfg = get_preset("setting1_fast")
    data = dataclasses.replace(cfg.data, n=512 if fast else 2000)
    train_cfg = dataclasses.replace(
        cfg.train, T=60 if fast else 200, eval_every=10, early_stop_evals=0, load_draws=0
    )
    run = dataclasses.replace(cfg.run, n_test=512)
    small = dataclasses.replace(cfg, data=data, train=train_cfg, run=run)
    result = run_experiment(small, seed=0)
    return verification.check_router_zero_sum(result.logs)


def _ceiling_reports(fast: bool) -> list[LemmaReport]:
    from .harness import make_datasets
    from .training import train_single_expert

    cfg = get_preset("setting3_fast" if fast else "setting3")
    train_set, test_set, _ = make_datasets(cfg, seed=0)
    banks = []
    for act in ("linear", "cubic", "relu"):
        lr, T, sigma0 = SINGLE_BASELINE[act]
        if fast:
            T = max(T // 10, 20)
        bank, _ = train_single_expert(
            train_set, test_set, J=128, activation=act, lr=lr, T=T, sigma0=sigma0, seed=0,
            eval_every=max(T // 4, 1),
        )
        banks.append(bank)
    return [verification.single_expert_ceiling(banks, test_set)]


#: Plain-GD hyperparameters for the single-model baselines (lr, T, sigma0),
#: tuned so the cubic model reproduces its reference accuracy on setting3.
SINGLE_BASELINE = {
    "linear": (0.05, 400, 0.1),
    "cubic": (0.05, 400, 0.1),
    "relu": (0.05, 400, 0.1),
}


def cmd_verify(args) -> int:
    names = list(_SUITES) if args.suite == "all" else [s.strip() for s in args.suite.split(",")]
    reports: list[LemmaReport] = []
    for name in names:
        if not name:
            continue
        reports.extend(_run_suite(name, args.fast))
    out = args.out or "."
    fileio.save_lemma_reports(reports, os.path.join(out, "lemma_reports.jsonl"))
    print(format_report_table(reports))
    failed = [r for r in reports if r.applicable and not r.passed]
    if failed:
        print(f"{len(failed)} check(s) FAILED", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_plotdata(args) -> int:
    if not args.inputs:
        raise ConfigError("no metrics CSV files given")
    series = tuple(s.strip() for s in args.metrics.split(",") if s.strip())
    if not series:
        raise ConfigError("--metrics must name at least one column")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "t", "metric", "value"])
    for path in args.inputs:
        rows = fileio.load_metrics_csv(path)
        label = args.labels.get(path) if isinstance(getattr(args, "labels", None), dict) else None
        label = label or os.path.splitext(os.path.basename(path))[0]
        if label == "metrics":
            label = os.path.basename(os.path.dirname(os.path.abspath(path))) or "metrics"
        for row in rows:
            missing = [key for key in series if key not in row]
            if missing:
                raise fileio.FileFormatError(f"{path}: missing columns {missing}")
            for key in series:
                writer.writerow([label, int(row["t"]), key, repr(row[key])])
    fileio.atomic_write_text(args.out, buf.getvalue())
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="sample and export datasets")
    _add_common(p)
    p.add_argument("--csv", action="store_true", help="also export CSV alongside binary")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one seed and export metrics/checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train many seeds and summarize")
    _add_common(p, seeds=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run numerical lemma certifications")
    p.add_argument("--suite", default="all",
                   help=f"comma list of {', '.join(_SUITES)}, or 'all'")
    p.add_argument("--out", metavar="DIR", help="where to write lemma_reports.jsonl")
    p.add_argument("--fast", action="store_true", help="smaller trial counts (smoke mode)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="convert metrics CSVs to tidy long format")
    p.add_argument("inputs", nargs="*", metavar="METRICS_CSV")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--metrics", default="entropy", metavar="COLS",
                   help="comma list of metric columns to emit (default: entropy)")
    p.set_defaults(func=cmd_plotdata)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except fileio.FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
