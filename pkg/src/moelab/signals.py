"""Cluster-structured multi-patch classification data.

Each example is a bag of P patches in R^d built over an orthonormal system
of K feature directions v_k and K cluster centers c_k (2K vectors total,
mutually orthogonal).  For an ordered cluster pair (k, k') with k != k',
a label y in {-1, +1}, a sign flip eps in {-1, +1} and strengths
alpha, beta, gamma drawn from bounded intervals, the patches are

    y * alpha * v_k      (label signal)
    beta * c_k           (cluster center)
    eps * gamma * v_k'   (feature noise from the paired cluster)
    P - 3 patches ~ N(0, sigma_p^2 / d * I_d)   (background noise)

in a uniformly random order.  The label correlates only with the v_k patch;
the v_k' patch carries an independent sign, which is what makes single
per-patch models fail and cluster-aware routing necessary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

# Canonical patch roles, used in `patch_roles`: entry p gives the role of
# patches[p].  Roles >= ROLE_NOISE are background-noise slots.
ROLE_FEATURE = 0
ROLE_CENTER = 1
ROLE_FEATURE_NOISE = 2
ROLE_NOISE = 3

ORTHO_TOL = 1e-12

Interval = tuple[float, float]


@dataclass(frozen=True)
class SignalBasis:
    """Orthonormal feature directions and cluster centers.

    feature_vectors: (K, d) rows v_k, unit norm.
    center_vectors:  (K, d) rows c_k, unit norm.
    All 2K vectors are pairwise orthogonal, which requires d >= 2K.
    """

    d: int
    K: int
    feature_vectors: np.ndarray
    center_vectors: np.ndarray

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.d < 2 * self.K:
            raise ValueError(f"d={self.d} cannot hold 2K={2 * self.K} orthonormal vectors")
        fv = np.asarray(self.feature_vectors, dtype=np.float64)
        cv = np.asarray(self.center_vectors, dtype=np.float64)
        if fv.shape != (self.K, self.d) or cv.shape != (self.K, self.d):
            raise ValueError("feature/center vector shapes must be (K, d)")
        object.__setattr__(self, "feature_vectors", fv)
        object.__setattr__(self, "center_vectors", cv)
        stacked = np.vstack([fv, cv])
        gram = stacked @ stacked.T
        if not np.allclose(gram, np.eye(2 * self.K), atol=ORTHO_TOL):
            raise ValueError("basis vectors must be orthonormal to within 1e-12")

    def stacked(self) -> np.ndarray:
        """(2K, d) array: feature vectors then center vectors."""
        return np.vstack([self.feature_vectors, self.center_vectors])


def build_orthonormal_basis(
    d: int,
    K: int,
    rng: np.random.Generator | None = None,
    mode: str = "canonical",
) -> SignalBasis:
    """Construct a SignalBasis.

    canonical: v_k = e_{2k}, c_k = e_{2k+1} (0-indexed standard basis).
    random:    first 2K columns of the Q factor of a Gaussian d x 2K matrix,
               interleaved the same way; requires rng.
    """
    if d < 2 * K:
        raise ValueError(f"d={d} < 2K={2 * K}")
    if mode == "canonical":
        eye = np.eye(d)
        fv = eye[0 : 2 * K : 2].copy()
        cv = eye[1 : 2 * K : 2].copy()
    elif mode == "random":
        if rng is None:
            raise ValueError("random mode requires an rng")
        q, _ = np.linalg.qr(rng.standard_normal((d, 2 * K)))
        fv = q.T[0 : 2 * K : 2].copy()
        cv = q.T[1 : 2 * K : 2].copy()
    else:
        raise ValueError(f"unknown basis mode {mode!r}")
    return SignalBasis(d=d, K=K, feature_vectors=fv, center_vectors=cv)


def _check_interval(name: str, iv: Interval) -> None:
    lo, hi = iv
    if not (0 < lo <= hi):
        raise ValueError(f"{name} interval must satisfy 0 < lo <= hi, got {iv}")


@dataclass(frozen=True)
class DataConfig:
    """Distribution parameters for one dataset."""

    d: int
    P: int
    K: int
    n: int
    alpha_dist: Interval = (0.5, 2.0)
    beta_dist: Interval = (1.0, 2.0)
    gamma_dist: Interval = (0.5, 3.0)
    sigma_p: float = 1.0
    shuffle_patches: bool = True

    def __post_init__(self):
        if self.P < 3:
            raise ValueError(f"P must be >= 3 (three structured patches), got {self.P}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2 (needs a distinct paired cluster), got {self.K}")
        if self.d < 2 * self.K:
            raise ValueError(f"d={self.d} < 2K={2 * self.K}")
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.sigma_p <= 0:
            raise ValueError(f"sigma_p must be > 0, got {self.sigma_p}")
        object.__setattr__(self, "alpha_dist", (float(self.alpha_dist[0]), float(self.alpha_dist[1])))
        object.__setattr__(self, "beta_dist", (float(self.beta_dist[0]), float(self.beta_dist[1])))
        object.__setattr__(self, "gamma_dist", (float(self.gamma_dist[0]), float(self.gamma_dist[1])))
        _check_interval("alpha", self.alpha_dist)
        _check_interval("beta", self.beta_dist)
        _check_interval("gamma", self.gamma_dist)


@dataclass(frozen=True)
class ExampleMeta:
    """Latent variables behind one example."""

    k: int
    k_prime: int
    y: int
    epsilon: int
    alpha: float
    beta: float
    gamma: float
    patch_roles: np.ndarray  # (P,) ints; patch_roles[p] is the role of patches[p]

    def __post_init__(self):
        if self.k == self.k_prime:
            raise ValueError("k and k' must differ")
        if self.y not in (-1, 1) or self.epsilon not in (-1, 1):
            raise ValueError("y and epsilon must be +/-1")
        roles = np.asarray(self.patch_roles, dtype=np.int64)
        object.__setattr__(self, "patch_roles", roles)
        P = roles.shape[0]
        if sorted(roles.tolist()) != list(range(P)):
            raise ValueError("patch_roles must be a permutation of 0..P-1")


@dataclass(frozen=True)
class Example:
    patches: np.ndarray  # (P, d)
    meta: ExampleMeta

    def __post_init__(self):
        patches = np.asarray(self.patches, dtype=np.float64)
        if patches.ndim != 2:
            raise ValueError("patches must be a (P, d) array")
        if patches.shape[0] != self.meta.patch_roles.shape[0]:
            raise ValueError("patch count disagrees with patch_roles")
        object.__setattr__(self, "patches", patches)

    @property
    def patch_sum(self) -> np.ndarray:
        return self.patches.sum(axis=0)

    def patch_with_role(self, role: int) -> np.ndarray:
        (p,) = np.nonzero(self.meta.patch_roles == role)[0]
        return self.patches[p]


class Dataset:
    """Column-oriented batch of examples.

    Arrays: patches (n,P,d), y/k/k_prime/epsilon (n,), alpha/beta/gamma (n,),
    patch_roles (n,P).  K and sigma_p are carried for evaluation and export.
    """

    def __init__(
        self,
        patches: np.ndarray,
        y: np.ndarray,
        k: np.ndarray,
        k_prime: np.ndarray,
        epsilon: np.ndarray,
        alpha: np.ndarray,
        beta: np.ndarray,
        gamma: np.ndarray,
        patch_roles: np.ndarray,
        K: int,
        sigma_p: float,
    ):
        self.patches = np.asarray(patches, dtype=np.float64)
        if self.patches.ndim != 3:
            raise ValueError("patches must be (n, P, d)")
        n = self.patches.shape[0]
        self.y = np.asarray(y, dtype=np.int64)
        self.k = np.asarray(k, dtype=np.int64)
        self.k_prime = np.asarray(k_prime, dtype=np.int64)
        self.epsilon = np.asarray(epsilon, dtype=np.int64)
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.gamma = np.asarray(gamma, dtype=np.float64)
        self.patch_roles = np.asarray(patch_roles, dtype=np.int64)
        self.K = int(K)
        self.sigma_p = float(sigma_p)
        for name in ("y", "k", "k_prime", "epsilon", "alpha", "beta", "gamma"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if self.patch_roles.shape != self.patches.shape[:2]:
            raise ValueError("patch_roles must be (n, P)")
        self._patch_sums: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def P(self) -> int:
        return self.patches.shape[1]

    @property
    def d(self) -> int:
        return self.patches.shape[2]

    @property
    def patch_sums(self) -> np.ndarray:
        """(n, d) cached sum over patches; the router only sees this."""
        if self._patch_sums is None:
            self._patch_sums = self.patches.sum(axis=1)
        return self._patch_sums

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Example:
        i = int(i)
        meta = ExampleMeta(
            k=int(self.k[i]),
            k_prime=int(self.k_prime[i]),
            y=int(self.y[i]),
            epsilon=int(self.epsilon[i]),
            alpha=float(self.alpha[i]),
            beta=float(self.beta[i]),
            gamma=float(self.gamma[i]),
            patch_roles=self.patch_roles[i].copy(),
        )
        return Example(patches=self.patches[i].copy(), meta=meta)

    def __iter__(self) -> Iterator[Example]:
        return (self[i] for i in range(self.n))

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact equality of all stored fields."""
        if not isinstance(other, Dataset):
            return False
        return (
            self.K == other.K
            and self.sigma_p == other.sigma_p
            and self.patches.shape == other.patches.shape
            and np.array_equal(self.patches, other.patches)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.k, other.k)
            and np.array_equal(self.k_prime, other.k_prime)
            and np.array_equal(self.epsilon, other.epsilon)
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.patch_roles, other.patch_roles)
        )


def _structured_patches(
    basis: SignalBasis,
    k: np.ndarray,
    k_prime: np.ndarray,
    y: np.ndarray,
    epsilon: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    gamma: np.ndarray,
) -> np.ndarray:
    """(n, 3, d) feature / center / feature-noise patches in role order."""
    fv, cv = basis.feature_vectors, basis.center_vectors
    out = np.empty((k.shape[0], 3, basis.d))
    out[:, ROLE_FEATURE] = (y * alpha)[:, None] * fv[k]
    out[:, ROLE_CENTER] = beta[:, None] * cv[k]
    out[:, ROLE_FEATURE_NOISE] = (epsilon * gamma)[:, None] * fv[k_prime]
    return out


def generate_dataset(config: DataConfig, basis: SignalBasis, rng: np.random.Generator) -> Dataset:
    """Draw config.n examples; vectorized over the batch.

    A pure function of (config, basis, rng state): the same seed replays the
    same dataset bit for bit.
    """
    if basis.d != config.d or basis.K != config.K:
        raise ValueError("basis dimensions disagree with config")
    n, P, d, K = config.n, config.P, config.d, config.K

    k = rng.integers(0, K, size=n)
    # Ordered pair with k' != k, uniform over the K-1 other clusters.
    k_prime = (k + 1 + rng.integers(0, K - 1, size=n)) % K
    y = rng.integers(0, 2, size=n) * 2 - 1
    epsilon = rng.integers(0, 2, size=n) * 2 - 1
    alpha = rng.uniform(*config.alpha_dist, size=n)
    beta = rng.uniform(*config.beta_dist, size=n)
    gamma = rng.uniform(*config.gamma_dist, size=n)

    patches = np.empty((n, P, d))
    patches[:, :3] = _structured_patches(basis, k, k_prime, y, epsilon, alpha, beta, gamma)
    if P > 3:
        patches[:, 3:] = rng.normal(0.0, config.sigma_p / np.sqrt(d), size=(n, P - 3, d))

    if config.shuffle_patches:
        # Random permutation per example via argsort of iid uniforms.
        order = np.argsort(rng.random((n, P)), axis=1)  # position p holds role order[p]
        patches = np.take_along_axis(patches, order[:, :, None], axis=1)
        roles = order
    else:
        roles = np.broadcast_to(np.arange(P), (n, P)).copy()

    return Dataset(
        patches=patches,
        y=y,
        k=k,
        k_prime=k_prime,
        epsilon=epsilon,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        patch_roles=roles,
        K=K,
        sigma_p=config.sigma_p,
    )


def sample_example(config: DataConfig, basis: SignalBasis, rng: np.random.Generator) -> Example:
    """Draw a single example (same distribution as generate_dataset rows)."""
    one = DataConfig(
        d=config.d,
        P=config.P,
        K=config.K,
        n=1,
        alpha_dist=config.alpha_dist,
        beta_dist=config.beta_dist,
        gamma_dist=config.gamma_dist,
        sigma_p=config.sigma_p,
        shuffle_patches=config.shuffle_patches,
    )
    return generate_dataset(one, basis, rng)[0]


def symmetry_quadruple(
    basis: SignalBasis,
    k: int,
    k_prime: int,
    y: int,
    alpha: float,
    beta: float,
    gamma: float,
    noise_patches: np.ndarray | None = None,
    P: int = 4,
    sigma_p: float = 1.0,
    rng: np.random.Generator | None = None,
) -> list[Example]:
    """Four sign-coupled examples sharing one background-noise block.

    With x1 = [ alpha*y*v_k,  beta*c_k,  -gamma*y*v_k', xi ] labeled  y,
         x2 = [-alpha*y*v_k,  beta*c_k,   gamma*y*v_k', xi ] labeled -y,
         x3 = [ gamma*y*v_k', beta*c_k', -alpha*y*v_k,  xi ] labeled  y,
         x4 = [-gamma*y*v_k', beta*c_k',  alpha*y*v_k,  xi ] labeled -y,
    any predictor of the form F(x) = sum_p f(x^(p)) has
    y1*F(x1) + y2*F(x2) + y3*F(x3) + y4*F(x4) = 0 identically, so at least
    one of the four margins is <= 0.  When the feature-noise strength shares
    the label-signal distribution, all four points are equally likely, which
    caps per-patch-sum predictors at 7/8 accuracy.
    """
    if k == k_prime:
        raise ValueError("k and k' must differ")
    if not (0 <= k < basis.K and 0 <= k_prime < basis.K):
        raise ValueError("cluster indices out of range")
    if y not in (-1, 1):
        raise ValueError("y must be +/-1")
    if noise_patches is not None:
        noise_patches = np.asarray(noise_patches, dtype=np.float64)
        if noise_patches.ndim != 2 or noise_patches.shape[1] != basis.d:
            raise ValueError("noise_patches must be (P-3, d)")
        P = 3 + noise_patches.shape[0]
    else:
        if P < 3:
            raise ValueError("P must be >= 3")
        if P > 3:
            if rng is None:
                raise ValueError("fresh noise block requires an rng")
            noise_patches = rng.normal(0.0, sigma_p / np.sqrt(basis.d), size=(P - 3, basis.d))
        else:
            noise_patches = np.empty((0, basis.d))

    roles = np.arange(P, dtype=np.int64)

    def build(kk: int, kk2: int, lab: int, a: float, g: float) -> Example:
        # Structured patches for label `lab`: the feature-noise patch is
        # -g*y*v_kk2 = eps*g*v_kk2 with eps = -y, i.e. epsilon = -lab here
        # because each point is built with its own label as the y.
        arr = np.empty((P, basis.d))
        arr[ROLE_FEATURE] = lab * a * basis.feature_vectors[kk]
        arr[ROLE_CENTER] = beta * basis.center_vectors[kk]
        arr[ROLE_FEATURE_NOISE] = -lab * g * basis.feature_vectors[kk2]
        arr[ROLE_NOISE:] = noise_patches
        meta = ExampleMeta(
            k=kk, k_prime=kk2, y=lab, epsilon=-lab,
            alpha=a, beta=beta, gamma=g, patch_roles=roles.copy(),
        )
        return Example(patches=arr, meta=meta)

    return [
        build(k, k_prime, y, alpha, gamma),
        build(k, k_prime, -y, alpha, gamma),
        build(k_prime, k, y, gamma, alpha),
        build(k_prime, k, -y, gamma, alpha),
    ]
