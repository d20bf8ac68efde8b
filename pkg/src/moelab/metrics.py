"""Evaluation: accuracy, dispatch statistics, router/expert specialization.

Dispatch entropy (natural log) measures how mixed each expert's incoming
cluster distribution is:

    H = - sum_{m: n_m > 0} (n_m / n) * sum_k (n_km / n_m) * log(n_km / n_m)

H = 0 iff every loaded expert serves a single cluster; H = log K when every
expert sees the cluster marginal uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .experts import ExpertBank, expert_forward_batch
from .gating import RoutingNoiseSpec, UNIFORM01, expert_load
from .model import MoEModel, batch_margins, batch_route
from .signals import Dataset


@dataclass(frozen=True)
class DispatchMatrix:
    """counts[k, m] = examples of cluster k routed to expert m."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ValueError("counts must be (K, M)")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ValueError("counts must be integers")
            c = c.astype(np.int64)
        else:
            c = c.astype(np.int64)
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def M(self) -> int:
        return self.counts.shape[1]

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def per_expert_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def per_cluster_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def dispatch_matrix(
    model: MoEModel,
    dataset: Dataset,
    rng: np.random.Generator | None = None,
    noise: RoutingNoiseSpec = UNIFORM01,
) -> DispatchMatrix:
    """Cluster-by-expert dispatch counts.

    Noiseless argmax routing when rng is None, one sampled noise draw per
    example otherwise.
    """
    if rng is None:
        noise_matrix = None
    else:
        noise_matrix = noise.sample((dataset.n, model.M), rng)
    _, _, sel = batch_route(model, dataset.patch_sums, noise_matrix)
    counts = np.zeros((dataset.K, model.M), dtype=np.int64)
    np.add.at(counts, (dataset.k, sel), 1)
    return DispatchMatrix(counts=counts)


def dispatch_entropy(dm: DispatchMatrix | np.ndarray) -> float:
    """Cluster-mixing entropy of a dispatch matrix; 0 log 0 = 0."""
    if not isinstance(dm, DispatchMatrix):
        dm = DispatchMatrix(counts=np.asarray(dm))
    n = dm.n
    if n == 0:
        raise ValueError("dispatch matrix is empty (no routed examples)")
    total = 0.0
    n_m = dm.per_expert_totals
    for m in range(dm.M):
        if n_m[m] == 0:
            continue
        col = dm.counts[:, m]
        nz = col[col > 0]
        frac = nz / n_m[m]
        total -= (n_m[m] / n) * float(np.sum(frac * np.log(frac)))
    return float(total)


def margins(
    model: MoEModel, dataset: Dataset, rng: np.random.Generator | None = None,
    noise: RoutingNoiseSpec = UNIFORM01,
) -> np.ndarray:
    """(n,) y_i * gate * f on the routed expert; noiseless when rng is None."""
    noise_matrix = None if rng is None else noise.sample((dataset.n, model.M), rng)
    marg, _ = batch_margins(model, dataset, noise_matrix)
    return marg


def accuracy(
    model: MoEModel, dataset: Dataset, rng: np.random.Generator | None = None,
    noise: RoutingNoiseSpec = UNIFORM01,
) -> float:
    """Fraction with strictly positive margin; a zero margin counts as an error."""
    if dataset.n == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(margins(model, dataset, rng, noise) > 0))


def per_cluster_expert_accuracy(bank: ExpertBank, dataset: Dataset) -> np.ndarray:
    """(K, M): accuracy of each expert alone on each cluster's examples.

    Expert m classifies by sign(f_m(x)); zero margins count as errors.
    Clusters with no examples get nan.
    """
    f = expert_forward_batch(bank, dataset.patches)  # (n, M)
    correct = (dataset.y[:, None] * f) > 0
    out = np.full((dataset.K, bank.M), np.nan)
    for k in range(dataset.K):
        mask = dataset.k == k
        if mask.any():
            out[k] = correct[mask].mean(axis=0)
    return out


def router_correctness(
    model: MoEModel, dataset: Dataset, spec_map
) -> float:
    """Fraction of examples whose noiseless dispatch lands in M_{k(x)}.

    spec_map is either the specialization map (one (k*, j*) per expert,
    conventionally frozen at initialization) or, more generally, one
    collection of cluster indices per expert listing every cluster the
    expert counts as professional for.
    """
    if dataset.n == 0:
        raise ValueError("cannot evaluate router correctness on an empty dataset")
    if len(spec_map) != model.M:
        raise ValueError("specialization map length must equal M")
    professional = np.zeros((model.M, dataset.K), dtype=bool)
    for m, entry in enumerate(spec_map):
        if isinstance(entry, tuple) and len(entry) == 2 and np.isscalar(entry[0]):
            professional[m, entry[0]] = True
        else:
            professional[m, list(entry)] = True
    _, _, sel = batch_route(model, dataset.patch_sums, None)
    return float(np.mean(professional[sel, dataset.k]))


@dataclass(frozen=True)
class EvalReport:
    """Flat summary of one model on one dataset."""

    accuracy: float
    entropy: float
    loads: np.ndarray
    dispatch: DispatchMatrix
    router_correctness: float | None = None
    margin_zero_fraction: float = 0.0

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "entropy": self.entropy,
            "margin_zero_fraction": self.margin_zero_fraction,
        }
        if self.router_correctness is not None:
            d["router_correctness"] = self.router_correctness
        for m, v in enumerate(self.loads):
            d[f"load_{m + 1}"] = float(v)
        for m, v in enumerate(self.dispatch.per_expert_totals):
            d[f"dispatch_{m + 1}"] = int(v)
        return d


def evaluate(
    model: MoEModel,
    dataset: Dataset,
    spec_map: list[tuple[int, int]] | None = None,
    load_draws: int = 64,
    rng: np.random.Generator | None = None,
) -> EvalReport:
    """Noiseless-dispatch evaluation; loads use load_draws MC samples."""
    marg = margins(model, dataset)
    dm = dispatch_matrix(model, dataset)
    if load_draws > 0 and rng is not None:
        loads = expert_load(model.router, dataset, load_draws, rng)
    else:
        loads = dm.per_expert_totals.astype(np.float64)
    rc = None if spec_map is None else router_correctness(model, dataset, spec_map)
    return EvalReport(
        accuracy=float(np.mean(marg > 0)),
        entropy=dispatch_entropy(dm),
        loads=loads,
        dispatch=dm,
        router_correctness=rc,
        margin_zero_fraction=float(np.mean(marg == 0)),
    )


def format_dispatch_table(dm: DispatchMatrix) -> str:
    """Printable cluster-by-expert table with expert totals, widest row first."""
    header = ["".ljust(16)] + [f"Expert {m + 1}".rjust(9) for m in range(dm.M)]
    lines = ["".join(header)]
    totals = ["Dispatched".ljust(16)] + [str(int(v)).rjust(9) for v in dm.per_expert_totals]
    lines.append("".join(totals))
    for k in range(dm.K):
        row = [f"Cluster {k + 1}".ljust(16)] + [str(int(v)).rjust(9) for v in dm.counts[k]]
        lines.append("".join(row))
    return "\n".join(lines)
