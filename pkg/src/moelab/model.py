"""Mixture-of-experts model: expert bank + linear router, top-1 dispatch.

The overall prediction on x routed to expert m is gate_m(x) * f_m(x), where
gate is the softmax over all M logits (not renormalized over the selected
subset) so the router receives gradient signal from unselected experts too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .experts import ExpertBank, expert_forward
from .gating import RouterWeights, gate_logits, gate_logits_batch, softmax_gates, route_top1
from .signals import Dataset, Example


@dataclass(frozen=True)
class MoEModel:
    bank: ExpertBank
    router: RouterWeights

    def __post_init__(self):
        if self.bank.d != self.router.d:
            raise ValueError(f"expert d={self.bank.d} != router d={self.router.d}")
        if self.bank.M != self.router.M:
            raise ValueError(f"expert count {self.bank.M} != router width {self.router.M}")

    @property
    def M(self) -> int:
        return self.bank.M

    @property
    def d(self) -> int:
        return self.bank.d


class RoutedOutput(NamedTuple):
    expert: int
    gate: float
    expert_value: float
    output: float


def moe_forward_top1(model: MoEModel, x: Example, r: np.ndarray) -> RoutedOutput:
    """Route one example with noise vector r and evaluate the selected expert."""
    h = gate_logits(model.router, x)
    m = route_top1(h, r)
    pi = softmax_gates(h)
    f = expert_forward(model.bank.expert(m), x, model.bank.activation)
    return RoutedOutput(expert=m, gate=float(pi[m]), expert_value=f, output=float(pi[m]) * f)


def selected_scores(
    bank: ExpertBank, patches: np.ndarray, sel: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Pre-activation scores of each example's selected expert.

    Returns (order, per-expert score blocks): examples are grouped by
    selected expert so each group is one GEMM.  order[g] gives the example
    indices of group g = the g-th expert with nonzero traffic, and the g-th
    block has shape (len(order[g]) * P, J) with patch-major rows.
    """
    sel = np.asarray(sel)
    n, P, d = patches.shape
    groups: list[np.ndarray] = []
    blocks: list[np.ndarray] = []
    for m in range(bank.M):
        idx = np.nonzero(sel == m)[0]
        if idx.size == 0:
            continue
        flat = patches[idx].reshape(-1, d)
        groups.append(idx)
        blocks.append(flat @ bank.expert(m).T)
    return groups, blocks


def selected_expert_values(bank: ExpertBank, patches: np.ndarray, sel: np.ndarray) -> np.ndarray:
    """(n,) f_{sel_i}(x_i): each example evaluated only by its routed expert."""
    n, P, _ = patches.shape
    f = np.empty(n)
    groups, blocks = selected_scores(bank, patches, sel)
    for idx, block in zip(groups, blocks):
        vals = bank.activation.value(block).reshape(idx.size, P, -1)
        f[idx] = vals.sum(axis=(1, 2))
    return f


def batch_route(
    model: MoEModel, patch_sums: np.ndarray, noise_matrix: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(h, gates, selected) for a batch; noiseless argmax when noise is None."""
    h = gate_logits_batch(model.router, patch_sums)
    if noise_matrix is None:
        sel = np.argmax(h, axis=1)
    else:
        noise_matrix = np.asarray(noise_matrix, dtype=np.float64)
        if noise_matrix.shape != h.shape:
            raise ValueError(f"noise matrix must be {h.shape}, got {noise_matrix.shape}")
        sel = np.argmax(h + noise_matrix, axis=1)
    return h, softmax_gates(h), sel


def batch_margins(
    model: MoEModel, dataset: Dataset, noise_matrix: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(margins y_i * gate * f, selected experts) over a dataset."""
    h, gates, sel = batch_route(model, dataset.patch_sums, noise_matrix)
    f = selected_expert_values(model.bank, dataset.patches, sel)
    pi_sel = gates[np.arange(dataset.n), sel]
    return dataset.y * pi_sel * f, sel
