"""Seeded experiment runs and multi-seed sweeps.

One seed fully determines an experiment: the basis, train/test datasets,
expert init, and routing noise each draw from their own named stream of that
seed, so results replay exactly and no stage's consumption disturbs another.
"""

from __future__ import annotations

import dataclasses
import io
import csv
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .metrics import (
    EvalReport,
    dispatch_entropy,
    dispatch_matrix,
    evaluate,
    per_cluster_expert_accuracy,
)
from .model import MoEModel
from .experts import init_expert_bank, specialization_map
from .seeding import named_stream
from .signals import Dataset, SignalBasis, build_orthonormal_basis, generate_dataset
from .training import IterationLog, train


def make_basis(cfg: ExperimentConfig, seed: int) -> SignalBasis:
    rng = named_stream(seed, "basis") if cfg.run.basis_mode == "random" else None
    return build_orthonormal_basis(cfg.data.d, cfg.data.K, rng, cfg.run.basis_mode)


def make_datasets(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, SignalBasis]:
    """(train, test, basis) for one seed; test size comes from the run block."""
    basis = make_basis(cfg, seed)
    train_set = generate_dataset(cfg.data, basis, named_stream(seed, "data_train"))
    test_cfg = dataclasses.replace(cfg.data, n=cfg.run.n_test)
    test_set = generate_dataset(test_cfg, basis, named_stream(seed, "data_test"))
    return train_set, test_set, basis


@dataclass(frozen=True)
class ExperimentResult:
    """Everything retained from one seeded run (datasets are regenerable)."""

    seed: int
    model: MoEModel
    logs: list[IterationLog]
    report: EvalReport
    spec_map: list[tuple[int, int]]
    per_cluster_acc: np.ndarray
    train_accuracy: float
    iterations: int

    def summary_row(self) -> dict[str, float]:
        return {
            "seed": self.seed,
            "test_accuracy": self.report.accuracy,
            "entropy": self.report.entropy,
            "train_accuracy": self.train_accuracy,
            "router_correctness": (
                float("nan")
                if self.report.router_correctness is None
                else self.report.router_correctness
            ),
            "iterations": self.iterations,
        }


def run_experiment(cfg: ExperimentConfig, seed: int) -> ExperimentResult:
    train_set, test_set, basis = make_datasets(cfg, seed)
    train_cfg = dataclasses.replace(cfg.train, seed=seed)

    # The specialization map is conventionally frozen at initialization; the
    # training loop derives the identical init from the same named stream.
    init_bank = init_expert_bank(
        cfg.arch.M, cfg.arch.J, cfg.data.d, train_cfg.sigma0,
        named_stream(seed, "init"), cfg.arch.make_activation(),
    )
    spec_map = specialization_map(init_bank, basis)

    model, logs = train(train_set, test_set, cfg.arch, train_cfg)
    report = evaluate(
        model, test_set, spec_map,
        load_draws=train_cfg.load_draws, rng=named_stream(seed, "eval"),
    )
    return ExperimentResult(
        seed=seed,
        model=model,
        logs=logs,
        report=report,
        spec_map=spec_map,
        per_cluster_acc=per_cluster_expert_accuracy(model.bank, test_set),
        train_accuracy=logs[-1].train_acc,
        iterations=logs[-1].t,
    )


_SUMMARY_FIELDS = (
    "test_accuracy", "entropy", "train_accuracy", "router_correctness", "iterations",
)


@dataclass(frozen=True)
class SweepSummary:
    """Per-seed rows plus mean and sample std (ddof=1) per metric."""

    rows: list[dict[str, float]]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("empty sweep")

    def values(self, field: str) -> np.ndarray:
        return np.array([row[field] for row in self.rows], dtype=np.float64)

    def mean(self, field: str) -> float:
        return float(np.mean(self.values(field)))

    def std(self, field: str) -> float:
        vals = self.values(field)
        if vals.size < 2:
            return 0.0
        return float(np.std(vals, ddof=1))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ["seed", *_SUMMARY_FIELDS]
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([row["seed"]] + [repr(float(row[f])) for f in _SUMMARY_FIELDS])
        writer.writerow(["mean"] + [repr(self.mean(f)) for f in _SUMMARY_FIELDS])
        writer.writerow(["std"] + [repr(self.std(f)) for f in _SUMMARY_FIELDS])
        return buf.getvalue()

    def format_line(self) -> str:
        return (
            f"accuracy {self.mean('test_accuracy'):.4f} +/- {self.std('test_accuracy'):.4f}, "
            f"entropy {self.mean('entropy'):.4f} +/- {self.std('entropy'):.4f} "
            f"({len(self.rows)} seeds)"
        )


def _run_for_pool(args: tuple) -> ExperimentResult:
    cfg, seed = args
    return run_experiment(cfg, seed)


def run_sweep(
    cfg: ExperimentConfig,
    seeds: Sequence[int] | None = None,
    threads: int | None = None,
    deterministic: bool | None = None,
) -> tuple[SweepSummary, list[ExperimentResult]]:
    """Run each seed independently; deterministic mode orders rows by seed."""
    if seeds is None:
        seeds = list(range(cfg.run.num_seeds))
    seeds = list(seeds)
    if not seeds:
        raise ValueError("no seeds to run")
    threads = cfg.run.threads if threads is None else threads
    deterministic = cfg.run.deterministic if deterministic is None else deterministic

    if threads > 1 and len(seeds) > 1:
        with get_context("spawn").Pool(min(threads, len(seeds))) as pool:
            results = list(pool.imap_unordered(_run_for_pool, [(cfg, s) for s in seeds]))
    else:
        results = [run_experiment(cfg, s) for s in seeds]

    if deterministic:
        results.sort(key=lambda r: r.seed)
    summary = SweepSummary(rows=[r.summary_row() for r in results])
    return summary, results
