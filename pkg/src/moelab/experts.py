"""Two-layer convolutional experts.

Expert m holds J filters w_{m,j} in R^d and maps a P-patch input to

    f_m(x) = sum_j sum_p act(<w_{m,j}, x^(p)>)

i.e. the same filters slide over every patch and the hidden layer is summed
with fixed unit output weights.  The activation is the model-defining choice:
cubic experts can encode cluster-conditional decisions, linear ones cannot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import Example, SignalBasis


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with derivative; kind in {cubic, linear, relu}."""

    kind: str

    KINDS = ("cubic", "linear", "relu")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {self.KINDS}")

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if self.kind == "cubic":
            return z * z * z
        if self.kind == "linear":
            return z.copy()
        return np.maximum(z, 0.0)

    def deriv(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if self.kind == "cubic":
            return 3.0 * z * z
        if self.kind == "linear":
            return np.ones_like(z)
        # relu'(0) = 0 by convention.
        return (z > 0).astype(z.dtype)


CUBIC = Activation("cubic")
LINEAR = Activation("linear")
RELU = Activation("relu")


def get_activation(kind: str) -> Activation:
    try:
        return {"cubic": CUBIC, "linear": LINEAR, "relu": RELU}[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; expected one of {Activation.KINDS}"
        ) from None


def _patches_of(x) -> np.ndarray:
    """Coerce an Example or raw array to a (P, d) patch matrix."""
    if isinstance(x, Example):
        return x.patches
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected an Example or a (P, d) array")
    return arr


@dataclass(frozen=True)
class ExpertBank:
    """M experts sharing one architecture; weights stacked as (M, J, d)."""

    weights: np.ndarray
    activation: Activation = CUBIC

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise ValueError("weights must be (M, J, d)")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def M(self) -> int:
        return self.weights.shape[0]

    @property
    def J(self) -> int:
        return self.weights.shape[1]

    @property
    def d(self) -> int:
        return self.weights.shape[2]

    def expert(self, m: int) -> np.ndarray:
        """(J, d) filter matrix of expert m (a view)."""
        return self.weights[m]

    @property
    def experts(self) -> list[np.ndarray]:
        return [self.weights[m] for m in range(self.M)]

    def with_weights(self, weights: np.ndarray) -> "ExpertBank":
        return ExpertBank(weights=weights, activation=self.activation)


def init_expert_bank(
    M: int,
    J: int,
    d: int,
    sigma0: float,
    rng: np.random.Generator,
    activation: Activation = CUBIC,
) -> ExpertBank:
    """iid N(0, sigma0^2) filters.  sigma0 = 0 gives the all-zero bank,
    which is a stationary point of the training dynamics."""
    if min(M, J, d) < 1:
        raise ValueError("M, J, d must all be >= 1")
    if sigma0 < 0:
        raise ValueError(f"sigma0 must be >= 0, got {sigma0}")
    return ExpertBank(weights=sigma0 * rng.standard_normal((M, J, d)), activation=activation)


def expert_forward(weights: np.ndarray, x, activation: Activation) -> float:
    """f_m(x) = sum_{j,p} act(<w_j, x^(p)>) for one expert on one example."""
    patches = _patches_of(x)
    scores = patches @ np.asarray(weights, dtype=np.float64).T  # (P, J)
    return float(activation.value(scores).sum())


def expert_forward_batch(bank: ExpertBank, patches: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """(n, M) outputs of every expert on every example.

    Used by dense evaluation (per-cluster accuracy tables); training routes
    first and only evaluates the selected expert.
    """
    patches = np.asarray(patches, dtype=np.float64)
    n, P, d = patches.shape
    M, J = bank.M, bank.J
    wflat = bank.weights.reshape(M * J, d)
    out = np.empty((n, M))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        scores = patches[lo:hi].reshape(-1, d) @ wflat.T  # (b*P, M*J)
        vals = bank.activation.value(scores).reshape(hi - lo, P, M, J)
        out[lo:hi] = vals.sum(axis=(1, 3))
    return out


def expert_param_grad(weights: np.ndarray, x, activation: Activation) -> np.ndarray:
    """(J, d) gradient of f_m(x) w.r.t. the filters of one expert."""
    patches = _patches_of(x)
    weights = np.asarray(weights, dtype=np.float64)
    scores = patches @ weights.T  # (P, J)
    return activation.deriv(scores).T @ patches  # (J, d)


def specialization_map(bank: ExpertBank, basis: SignalBasis) -> list[tuple[int, int]]:
    """Per expert, the (k*, j*) maximizing <v_k, w_j> over all clusters/filters.

    Ties resolve lexicographically (smallest k, then smallest j), which is
    what a flat argmax over the (K, J) score table gives.
    """
    out = []
    for m in range(bank.M):
        scores = basis.feature_vectors @ bank.expert(m).T  # (K, J)
        flat = int(np.argmax(scores))
        out.append((flat // bank.J, flat % bank.J))
    return out


def specialization_sets(spec_map: list[tuple[int, int]], K: int) -> list[list[int]]:
    """M_k: experts whose best-aligned feature direction is v_k."""
    sets: list[list[int]] = [[] for _ in range(K)]
    for m, (k_star, _) in enumerate(spec_map):
        sets[k_star].append(m)
    return sets
