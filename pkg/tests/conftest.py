"""Shared builders for small deterministic fixtures.

Unit tests run on desk-scale problems (d around 10, n in the hundreds);
everything paper-scale lives in test_acceptance.py behind session fixtures.
"""

from __future__ import annotations

import numpy as np
import pytest

from moelab import (
    ArchConfig,
    DataConfig,
    ExpertBank,
    MoEModel,
    RouterWeights,
    build_orthonormal_basis,
    generate_dataset,
    get_activation,
    init_expert_bank,
)


def make_dataset(
    seed: int = 0,
    n: int = 200,
    d: int = 12,
    P: int = 4,
    K: int = 4,
    sigma_p: float = 1.0,
    shuffle: bool = True,
    basis_mode: str = "canonical",
    **dist,
):
    """Dataset plus the basis that generated it."""
    rng = np.random.default_rng(seed)
    basis = build_orthonormal_basis(d, K, rng, basis_mode)
    cfg = DataConfig(d=d, P=P, K=K, n=n, sigma_p=sigma_p, shuffle_patches=shuffle, **dist)
    return generate_dataset(cfg, basis, rng), basis


def make_model(
    seed: int = 0,
    M: int = 4,
    J: int = 3,
    d: int = 12,
    sigma0: float = 0.5,
    activation: str = "cubic",
    theta_scale: float = 0.5,
) -> MoEModel:
    rng = np.random.default_rng(seed + 1000)
    bank = init_expert_bank(M, J, d, sigma0, rng, get_activation(activation))
    theta = theta_scale * rng.standard_normal((d, M))
    return MoEModel(bank=bank, router=RouterWeights(theta=theta))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_data():
    return make_dataset(seed=3, n=160)


@pytest.fixture
def small_model():
    return make_model(seed=3)
