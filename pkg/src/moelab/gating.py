"""Linear gating network with noisy top-1 dispatch.

The router scores an example by h(x) = Theta^T sum_p x^(p) in R^M, softmaxes
those logits into gate values, and dispatches to the single expert

    argmax_m ( h_m + r_m ),   r_m iid Unif[0, 1)

with fresh noise per example and per iteration.  The uniform noise keeps the
dispatch distribution M^2-smooth in the logits, which is what lets gradient
steps move routing without collapsing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import Dataset, Example


@dataclass(frozen=True)
class RouterWeights:
    """Linear gate parameters Theta, shape (d, M); column m scores expert m."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim != 2:
            raise ValueError("theta must be (d, M)")
        if not np.isfinite(th).all():
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", th)

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def M(self) -> int:
        return self.theta.shape[1]

    def with_theta(self, theta: np.ndarray) -> "RouterWeights":
        return RouterWeights(theta=theta)


def zero_router(d: int, M: int) -> RouterWeights:
    return RouterWeights(theta=np.zeros((d, M)))


@dataclass(frozen=True)
class RoutingNoiseSpec:
    """Dispatch noise family.

    mode "uniform01": r_m iid Unif[0, 1), density bound kappa = 1.
    mode "none":      deterministic argmax of the logits.
    """

    mode: str = "uniform01"
    kappa: float = 1.0

    def __post_init__(self):
        if self.mode not in ("uniform01", "none"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == "uniform01" and self.kappa != 1.0:
            raise ValueError("uniform01 noise has density bound 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    def sample(self, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        if self.mode == "none":
            return np.zeros(shape)
        return rng.random(shape)


UNIFORM01 = RoutingNoiseSpec(mode="uniform01")
NO_NOISE = RoutingNoiseSpec(mode="none")


def _patch_sum_of(x) -> np.ndarray:
    if isinstance(x, Example):
        return x.patch_sum
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return arr.sum(axis=0)
    if arr.ndim == 1:
        return arr
    raise ValueError("expected an Example, a (P, d) array, or a (d,) patch sum")


def gate_logits(router: RouterWeights, x) -> np.ndarray:
    """h(x) = Theta^T sum_p x^(p), shape (M,)."""
    return _patch_sum_of(x) @ router.theta


def gate_logits_batch(router: RouterWeights, patch_sums: np.ndarray) -> np.ndarray:
    """(n, M) logits from precomputed patch sums."""
    return np.asarray(patch_sums, dtype=np.float64) @ router.theta


def softmax_gates(h: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, max-subtracted for stability."""
    h = np.asarray(h, dtype=np.float64)
    if not np.isfinite(h).all():
        raise ValueError("gate logits must be finite")
    z = h - h.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def route_top1(h: np.ndarray, r: np.ndarray) -> int:
    """argmax_m (h_m + r_m); ties go to the smallest index."""
    h = np.asarray(h, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if h.shape != r.shape or h.ndim != 1:
        raise ValueError("h and r must be equal-length vectors")
    return int(np.argmax(h + r))


def route_top1_batch(h: np.ndarray, r: np.ndarray) -> np.ndarray:
    """(n,) selected experts for (n, M) logits and matching noise."""
    return np.argmax(np.asarray(h) + np.asarray(r), axis=1)


def routing_probabilities_mc(
    h: np.ndarray,
    S: int,
    rng: np.random.Generator,
    noise: RoutingNoiseSpec = UNIFORM01,
    chunk: int = 200_000,
) -> np.ndarray:
    """Monte Carlo estimate of p_m(h) = P(argmax_m h_m + r_m = m), S draws."""
    h = np.asarray(h, dtype=np.float64)
    if S < 1:
        raise ValueError("S must be >= 1")
    M = h.shape[0]
    counts = np.zeros(M, dtype=np.int64)
    done = 0
    while done < S:
        b = min(chunk, S - done)
        sel = np.argmax(h[None, :] + noise.sample((b, M), rng), axis=1)
        counts += np.bincount(sel, minlength=M)
        done += b
    return counts / S


def routing_probabilities_exact2(h: np.ndarray) -> np.ndarray:
    """Exact dispatch distribution for M = 2 under Unif[0,1) noise.

    With delta = h_1 - h_2, r_2 - r_1 has the triangular density on [-1, 1],
    so p_1 = P(r_2 - r_1 < delta) = 1 - (1 - delta)^2 / 2 for delta in [0, 1]
    and (1 + delta)^2 / 2 for delta in [-1, 0]; constant outside [-1, 1].
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (2,):
        raise ValueError("exact formula is for M = 2 only")
    delta = float(np.clip(h[0] - h[1], -1.0, 1.0))
    if delta >= 0:
        p1 = 1.0 - (1.0 - delta) ** 2 / 2.0
    else:
        p1 = (1.0 + delta) ** 2 / 2.0
    return np.array([p1, 1.0 - p1])


def expert_load(
    router: RouterWeights,
    dataset: Dataset,
    S: int,
    rng: np.random.Generator,
    noise: RoutingNoiseSpec = UNIFORM01,
) -> np.ndarray:
    """Load_m = sum_i P(example i routes to m), Monte Carlo with S draws.

    Sums to n exactly.  With a zero router every load is n/M in expectation.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    h = gate_logits_batch(router, dataset.patch_sums)
    n, M = h.shape
    counts = np.zeros(M, dtype=np.int64)
    for _ in range(S):
        sel = np.argmax(h + noise.sample((n, M), rng), axis=1)
        counts += np.bincount(sel, minlength=M)
    return counts / S
