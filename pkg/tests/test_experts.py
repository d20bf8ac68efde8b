"""Expert networks: forward values, gradients, init-time specialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moelab import (
    CUBIC,
    LINEAR,
    RELU,
    build_orthonormal_basis,
    expert_forward,
    expert_forward_batch,
    expert_param_grad,
    get_activation,
    init_expert_bank,
    specialization_map,
    specialization_sets,
)
from moelab.experts import Activation, ExpertBank

from conftest import make_dataset


# ---------------------------------------------------------------- activations

def test_activation_values_and_derivs():
    z = np.array([-2.0, 0.0, 2.0])
    assert np.array_equal(CUBIC.value(z), np.array([-8.0, 0.0, 8.0]))
    assert np.array_equal(CUBIC.deriv(z), np.array([12.0, 0.0, 12.0]))
    assert np.array_equal(LINEAR.value(z), z)
    assert np.array_equal(LINEAR.deriv(z), np.ones(3))
    assert np.array_equal(RELU.value(z), np.array([0.0, 0.0, 2.0]))
    # relu'(0) = 0 by convention.
    assert np.array_equal(RELU.deriv(z), np.array([0.0, 0.0, 1.0]))


def test_unknown_activation_rejected():
    with pytest.raises(ValueError):
        Activation("sigmoid")
    with pytest.raises(ValueError):
        get_activation("sigmoid")


# ---------------------------------------------------------------- forward

def test_single_aligned_filter_cubes_the_alignment():
    # One filter equal to v, one patch equal to 2v: f = (2)^3 = 8.
    d = 6
    v = np.zeros(d)
    v[0] = 1.0
    weights = v[None, :]
    patches = np.vstack([2.0 * v, np.zeros(d), np.zeros(d)])
    assert expert_forward(weights, patches, CUBIC) == pytest.approx(8.0)
    assert expert_forward(weights, patches, LINEAR) == pytest.approx(2.0)
    assert expert_forward(weights, patches, RELU) == pytest.approx(2.0)
    assert expert_forward(weights, -patches, RELU) == pytest.approx(0.0)


def test_forward_sums_over_filters_and_patches():
    rng = np.random.default_rng(0)
    weights = rng.standard_normal((4, 5))
    patches = rng.standard_normal((3, 5))
    manual = sum(
        float(CUBIC.value(np.array(weights[j] @ patches[p])))
        for j in range(4)
        for p in range(3)
    )
    assert expert_forward(weights, patches, CUBIC) == pytest.approx(manual, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    patches=arrays(np.float64, (4, 6), elements=st.floats(-2, 2)),
    perm=st.permutations(range(4)),
)
def test_forward_invariant_to_patch_order(patches, perm):
    rng = np.random.default_rng(99)
    weights = rng.standard_normal((3, 6))
    a = expert_forward(weights, patches, CUBIC)
    b = expert_forward(weights, patches[list(perm)], CUBIC)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_forward_linear_in_filter_bank():
    # f is a sum over filters: dropping a filter subtracts its contribution.
    rng = np.random.default_rng(1)
    weights = rng.standard_normal((5, 7))
    patches = rng.standard_normal((3, 7))
    full = expert_forward(weights, patches, CUBIC)
    parts = sum(expert_forward(weights[j : j + 1], patches, CUBIC) for j in range(5))
    assert full == pytest.approx(parts, rel=1e-12)


def test_forward_batch_matches_loop(small_data, rng):
    ds, _ = small_data
    bank = init_expert_bank(3, 4, ds.d, 0.6, rng)
    out = expert_forward_batch(bank, ds.patches, chunk=17)
    for i in (0, 5, 100):
        for m in range(3):
            assert out[i, m] == pytest.approx(
                expert_forward(bank.expert(m), ds.patches[i], CUBIC), rel=1e-10
            )


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("kind", ["cubic", "linear", "relu"])
def test_param_grad_matches_finite_differences(kind):
    rng = np.random.default_rng(42)
    act = get_activation(kind)
    for _ in range(20):
        weights = rng.standard_normal((2, 6))
        patches = rng.standard_normal((3, 6))
        grad = expert_param_grad(weights, patches, act)
        eps = 1e-6
        for idx in np.ndindex(2, 6):
            wp, wm = weights.copy(), weights.copy()
            wp[idx] += eps
            wm[idx] -= eps
            fd = (expert_forward(wp, patches, act) - expert_forward(wm, patches, act)) / (2 * eps)
            assert abs(grad[idx] - fd) <= 1e-6 * max(1.0, abs(fd))


# ---------------------------------------------------------------- bank + init

def test_bank_shape_and_validation():
    rng = np.random.default_rng(0)
    bank = init_expert_bank(4, 3, 8, 0.5, rng)
    assert (bank.M, bank.J, bank.d) == (4, 3, 8)
    assert bank.expert(2).shape == (3, 8)
    with pytest.raises(ValueError):
        ExpertBank(weights=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ExpertBank(weights=np.full((1, 1, 1), np.nan))
    with pytest.raises(ValueError):
        init_expert_bank(0, 3, 8, 0.5, rng)
    with pytest.raises(ValueError):
        init_expert_bank(2, 3, 8, -0.1, rng)


def test_init_scale():
    bank = init_expert_bank(8, 16, 50, 0.7, np.random.default_rng(3))
    std = float(bank.weights.std())
    # 6400 iid draws: sample std within a few percent of sigma0.
    assert abs(std - 0.7) <= 0.05
    zero = init_expert_bank(2, 2, 4, 0.0, np.random.default_rng(0))
    assert np.all(zero.weights == 0)


# ---------------------------------------------------------------- specialization

def test_specialization_map_picks_largest_alignment():
    basis = build_orthonormal_basis(10, 4)
    weights = np.zeros((2, 5, 10))
    weights[0, 3] = 10.0 * basis.feature_vectors[2]
    weights[0, 3, 1] += 0.5  # off-feature noise must not matter
    weights[1, 0] = -50.0 * basis.feature_vectors[1]  # signed: most negative loses
    weights[1, 2] = 1.0 * basis.feature_vectors[3]
    bank = ExpertBank(weights=weights)
    assert specialization_map(bank, basis) == [(2, 3), (3, 2)]


def test_specialization_ties_break_lexicographically():
    basis = build_orthonormal_basis(8, 2)
    bank = ExpertBank(weights=np.zeros((3, 4, 8)))
    assert specialization_map(bank, basis) == [(0, 0)] * 3


def test_specialization_sets_partition_experts():
    rng = np.random.default_rng(17)
    basis = build_orthonormal_basis(12, 4, rng, "random")
    bank = init_expert_bank(8, 16, 12, 0.7, rng)
    spec = specialization_map(bank, basis)
    sets = specialization_sets(spec, 4)
    flat = sorted(m for group in sets for m in group)
    assert flat == list(range(8))


def _coverage_probability(K: int, M: int) -> float:
    """P(every cluster is some expert's init favorite) for uniform favorites;
    inclusion-exclusion over the clusters that are missed."""
    total = 0.0
    for i in range(K + 1):
        total += (-1) ** i * math.comb(K, i) * ((K - i) / K) ** M
    return total


@pytest.mark.parametrize("M,n_trials", [(8, 200), (20, 200)])
def test_every_cluster_covered_at_rate_predicted_by_counting(M, n_trials):
    # Favorites are uniform over clusters by symmetry of the Gaussian init,
    # so coverage frequency must track the surjection probability.
    K, d = 4, 12
    basis = build_orthonormal_basis(d, K)
    hits = 0
    for t in range(n_trials):
        bank = init_expert_bank(M, 16, d, 0.7, np.random.default_rng(t))
        sets = specialization_sets(specialization_map(bank, basis), K)
        hits += all(len(s) > 0 for s in sets)
    p = _coverage_probability(K, M)
    se = math.sqrt(p * (1 - p) / n_trials)
    assert abs(hits / n_trials - p) <= 3 * se + 1e-9
    if M == 20:
        assert hits / n_trials >= 0.9


def test_specialization_invariant_to_init_scale():
    # argmax of scaled Gaussians: the favorite map ignores sigma0.
    basis = build_orthonormal_basis(12, 4)
    a = init_expert_bank(8, 16, 12, 0.2, np.random.default_rng(5))
    b = ExpertBank(weights=3.5 * a.weights)
    assert specialization_map(a, basis) == specialization_map(b, basis)
