import numpy as np
import numpy.testing as npt
import pytest

from siamnet import pairwise
from siamnet.errors import (
    DegenerateBatchError,
    DegenerateVarianceError,
    SingularInputError,
    UsageError,
)
from siamnet.gradcheck import numerical_gradient, relative_error
from siamnet.pairwise import (
    PairMasks,
    build_masks,
    connect,
    cosine_similarity,
    deviance_cost,
    deviance_grad_general,
    deviance_grad_specific,
    fisher_cost,
    fisher_grad,
    pairwise_oracle,
)


def single_pair_masks(n, i, j, sign, weight=1.0):
    """Hand-built mask with exactly one considered pair."""
    M = np.zeros((n, n))
    W = np.zeros((n, n))
    P = np.zeros((n, n))
    M[i, j] = sign
    W[i, j] = weight
    P[i, j] = weight if sign > 0 else -weight
    pos = 1 if sign > 0 else 0
    return PairMasks(M, W, P, pos, 1 - pos, abs(sign))


# ---------------------------------------------------------------- connect

def test_cosine_self_is_one():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 4))
    S = connect(X, kind="cosine").S
    npt.assert_allclose(np.diag(S), 1.0, atol=1e-12)


def test_cosine_and_euclidean_orthonormal():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert abs(connect(X, kind="cosine").S[0, 1]) < 1e-15
    assert connect(X, kind="euclidean").S[0, 1] == -2.0


def test_cosine_scale_invariance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 1))
    y = rng.normal(size=(6, 1))
    s1 = cosine_similarity(x, y)[0, 0]
    s2 = cosine_similarity(3.0 * x, 5.0 * y)[0, 0]
    assert abs(s1 - s2) < 1e-12


def test_absdiff_and_concat():
    X = np.array([[1.0], [2.0]])
    Y = np.array([[4.0], [0.0]])
    assert connect(X, Y, kind="absdiff").S[0, 0] == -(3.0 + 2.0)
    w = np.array([1.0, 1.0, 2.0, 2.0])
    s = connect(X, Y, kind="concat", concat_weights=w).S[0, 0]
    assert s == (1 + 2) + 2 * (4 + 0)
    with pytest.raises(UsageError, match="length 2d"):
        connect(X, Y, kind="concat")


def test_cosine_zero_norm_column_names_offender():
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SingularInputError, match="column 1"):
        cosine_similarity(X)


def test_unknown_connection_kind():
    with pytest.raises(UsageError, match="unknown connection"):
        connect(np.ones((2, 2)), kind="manhattan")


def test_cosine_range_invariant():
    rng = np.random.default_rng(2)
    for _ in range(10):
        X = rng.normal(size=(5, 8)) * rng.uniform(0.1, 100)
        S = cosine_similarity(X)
        assert S.max() <= 1.0 + 1e-12 and S.min() >= -1.0 - 1e-12


# ------------------------------------------------------------ build_masks

def test_build_masks_three_samples():
    masks = build_masks([1, 1, 2], c=2.0)
    npt.assert_array_equal(masks.M, [[0, 1, -2], [0, 0, -2], [0, 0, 0]])
    assert masks.n1 == 1 and masks.n2 == 2
    npt.assert_array_equal(masks.W, [[0, 1.0, 0.5], [0, 0, 0.5], [0, 0, 0]])
    npt.assert_array_equal(masks.P, [[0, 1.0, -0.5], [0, 0, -0.5], [0, 0, 0]])


def test_build_masks_all_same_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        build_masks([3, 3, 3], c=2.0)
    with pytest.raises(DegenerateBatchError):
        build_masks([1, 2, 3], c=2.0)  # no positives either


def test_build_masks_pair_counts():
    masks = build_masks([1, 1, 2, 2], c=1.0)
    assert masks.n1 == 2 and masks.n2 == 4


def test_build_masks_lower_triangle_zero():
    masks = build_masks([1, 1, 2, 2, 3], c=2.0)
    lower = np.tril_indices(5)
    assert not masks.M[lower].any()
    assert not masks.W[lower].any()
    assert not masks.P[lower].any()
    # W and P vanish exactly where M does
    npt.assert_array_equal(masks.W == 0, masks.M == 0)
    npt.assert_array_equal(masks.P == 0, masks.M == 0)


def test_build_masks_specific_full_grid():
    masks = build_masks([1, 2, 3], c=2.0, labels_y=[1, 4])
    assert masks.M.shape == (3, 2)
    npt.assert_array_equal(masks.M, [[1, -2], [-2, -2], [-2, -2]])
    assert masks.n1 == 1 and masks.n2 == 5


def test_build_masks_rejects_small_c():
    with pytest.raises(UsageError, match=">= 1"):
        build_masks([1, 2], c=0.5)


def test_batch_of_128_yields_8128_pairs():
    labels = [i // 2 for i in range(128)]
    masks = build_masks(labels, c=2.0)
    assert masks.n1 + masks.n2 == 128 * 127 // 2 == 8128
    assert np.count_nonzero(masks.M) == 8128


# ---------------------------------------------------------- deviance cost

def test_deviance_anchor_at_beta():
    masks = single_pair_masks(2, 0, 1, +1.0)
    S = np.full((2, 2), 0.5)
    assert abs(deviance_cost(S, masks, alpha=2.0, beta=0.5) - np.log(2.0)) < 1e-12


def test_deviance_anchor_at_one():
    masks = single_pair_masks(2, 0, 1, +1.0)
    S = np.ones((2, 2))
    want = np.log1p(np.exp(-1.0))
    assert abs(deviance_cost(S, masks, alpha=2.0, beta=0.5) - want) < 1e-12


def test_deviance_no_overflow_at_extremes():
    masks = build_masks([1, 1, 2], c=3.0)
    S = np.array([[0, -1.0, 1.0], [0, 0, 1.0], [0, 0, 0]])
    cost = deviance_cost(S, masks, alpha=700.0, beta=0.5)
    assert np.isfinite(cost)


def test_deviance_monotonicity_pointwise():
    masks_pos = single_pair_masks(2, 0, 1, +1.0)
    masks_neg = single_pair_masks(2, 0, 1, -2.0, weight=1.0)
    svals = np.linspace(-1, 1, 21)
    cost_pos = [deviance_cost(np.full((2, 2), s), masks_pos) for s in svals]
    cost_neg = [deviance_cost(np.full((2, 2), s), masks_neg) for s in svals]
    assert all(a > b for a, b in zip(cost_pos, cost_pos[1:]))
    assert all(a < b for a, b in zip(cost_neg, cost_neg[1:]))


def test_deviance_matrix_equals_pair_loop():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 5))
    labels = [1, 1, 2, 2, 3]
    masks = build_masks(labels, c=2.0)
    S = cosine_similarity(X)
    mcost = deviance_cost(S, masks, 2.0, 0.5)
    ocost, _ = pairwise_oracle(X, masks, 2.0, 0.5)
    assert abs(mcost - ocost) < 1e-12


# ------------------------------------------------------------- gradients

def test_grad_general_matches_fd_20_instances():
    rng = np.random.default_rng(4)
    labels = [1, 1, 2, 2, 3, 3]
    masks = build_masks(labels, c=2.0)
    for _ in range(20):
        X = rng.normal(size=(5, 6))
        S = cosine_similarity(X)
        g = deviance_grad_general(X, S, masks, 2.0, 0.5)
        cost = lambda: deviance_cost(cosine_similarity(X), masks, 2.0, 0.5)
        assert relative_error(g, numerical_gradient(cost, X)) < 1e-6


def test_grad_general_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for n in (4, 8, 16):
        labels = [i // 2 for i in range(n)]
        masks = build_masks(labels, c=2.0)
        X = rng.normal(size=(5, n))
        S = cosine_similarity(X)
        g = deviance_grad_general(X, S, masks, 2.0, 0.5)
        ocost, ograd = pairwise_oracle(X, masks, 2.0, 0.5)
        assert relative_error(g, ograd) < 1e-10
        assert abs(deviance_cost(S, masks, 2.0, 0.5) - ocost) < 1e-10


def test_grad_zero_mask_gives_zero_gradient():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(4, 4))
    empty = PairMasks(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)), 0, 0, 1.0)
    g = deviance_grad_general(X, cosine_similarity(X), empty)
    npt.assert_array_equal(g, np.zeros_like(X))
    dX, dY = deviance_grad_specific(X, X, cosine_similarity(X, X), empty)
    npt.assert_array_equal(dX, np.zeros_like(X))
    npt.assert_array_equal(dY, np.zeros_like(X))


def test_grad_specific_matches_fd():
    rng = np.random.default_rng(7)
    masks = build_masks([1, 2, 3, 1], c=2.0, labels_y=[1, 2, 4])
    for _ in range(5):
        X = rng.normal(size=(5, 4))
        Y = rng.normal(size=(5, 3))
        S = cosine_similarity(X, Y)
        dX, dY = deviance_grad_specific(X, Y, S, masks, 2.0, 0.5)
        cost = lambda: deviance_cost(cosine_similarity(X, Y), masks, 2.0, 0.5)
        assert relative_error(dX, numerical_gradient(cost, X)) < 1e-6
        assert relative_error(dY, numerical_gradient(cost, Y)) < 1e-6


def test_specific_consistent_with_general_when_views_coincide():
    rng = np.random.default_rng(8)
    labels = [1, 1, 2, 2, 3]
    masks = build_masks(labels, c=2.0)
    X = rng.normal(size=(4, 5))
    S = cosine_similarity(X)
    g_general = deviance_grad_general(X, S, masks, 2.0, 0.5)
    dX, dY = deviance_grad_specific(X, X, S, masks, 2.0, 0.5)
    assert relative_error(g_general, dX + dY) < 1e-10


# ----------------------------------------------------------------- fisher

def test_fisher_anchor_value():
    labels = [1, 1, 2, 2]
    M = np.array([[0, 1, -1, -1], [0, 0, -1, -1], [0, 0, 0, 1], [0, 0, 0, 0]], dtype=float)
    W = np.where(M == 1, 0.5, np.where(M == -1, 0.25, 0.0))
    P = np.where(M == 1, 0.5, np.where(M == -1, -0.25, 0.0))
    masks = PairMasks(M, W, P, 2, 4, 1.0)
    S = np.where(M == 1, 0.9, np.where(M == -1, 0.1, 0.0))
    assert abs(fisher_cost(S, masks) - (-0.75)) < 1e-12


def test_fisher_constant_similarities_degenerate():
    masks = build_masks([1, 1, 2], c=1.0)
    with pytest.raises(DegenerateVarianceError):
        fisher_cost(np.full((3, 3), 0.4), masks)


def test_fisher_scale_invariance():
    rng = np.random.default_rng(9)
    masks = build_masks([1, 1, 2, 2], c=1.0)
    S = rng.normal(size=(4, 4))
    j1 = fisher_cost(S, masks)
    j2 = fisher_cost(4.2 * S, masks)
    assert abs(j1 - j2) < 1e-12


def test_fisher_grad_matches_fd():
    rng = np.random.default_rng(10)
    masks = build_masks([1, 1, 2, 2, 3, 3], c=1.0)
    for _ in range(5):
        X = rng.normal(size=(5, 6))
        g = fisher_grad(X, cosine_similarity(X), masks)
        cost = lambda: fisher_cost(cosine_similarity(X), masks)
        assert relative_error(g, numerical_gradient(cost, X)) < 1e-6


def test_fisher_neglected_pairs_carry_nothing():
    rng = np.random.default_rng(11)
    masks = build_masks([1, 1, 2, 2], c=1.0)
    X = rng.normal(size=(4, 4))
    S = cosine_similarity(X)
    j0 = fisher_cost(S, masks)
    g0 = fisher_grad(X, S, masks)
    S2 = S.copy()
    S2[2, 0] += 123.0  # lower triangle is neglected
    assert fisher_cost(S2, masks) == j0
    npt.assert_array_equal(fisher_grad(X, S2, masks), g0)


def test_fisher_degenerate_direction_propagates():
    X = np.ones((3, 4))  # all columns identical: every cosine is 1
    masks = build_masks([1, 1, 2, 2], c=1.0)
    with pytest.raises(DegenerateVarianceError):
        fisher_grad(X, cosine_similarity(X), masks)


# ----------------------------------------------------------------- oracle

def test_oracle_single_pair_reduces_to_scalar_deviance():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(6, 2))
    masks = single_pair_masks(2, 0, 1, +1.0)
    cost, _ = pairwise_oracle(X, masks, 2.0, 0.5)
    s = cosine_similarity(X)[0, 1]
    assert abs(cost - np.log1p(np.exp(-2.0 * (s - 0.5)))) < 1e-12


def test_oracle_cross_checked_against_fd_once():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(4, 5))
    masks = build_masks([1, 1, 2, 2, 3], c=2.0)
    _, grad = pairwise_oracle(X, masks, 2.0, 0.5)
    cost = lambda: pairwise_oracle(X, masks, 2.0, 0.5)[0]
    assert relative_error(grad, numerical_gradient(cost, X)) < 1e-6


def test_matrix_loop_equivalence_20_random_instances():
    rng = np.random.default_rng(14)
    for _ in range(20):
        n = int(rng.integers(4, 17))
        labels = list(rng.integers(0, max(2, n // 2), size=n))
        if len(set(labels)) < 2 or len(set(labels)) == n:
            labels[0] = labels[1] = 0
            labels[-1] = 1
        masks = build_masks(labels, c=2.0)
        X = rng.normal(size=(5, n))
        S = cosine_similarity(X)
        mcost = deviance_cost(S, masks, 2.0, 0.5)
        mgrad = deviance_grad_general(X, S, masks, 2.0, 0.5)
        ocost, ograd = pairwise_oracle(X, masks, 2.0, 0.5)
        assert abs(mcost - ocost) < 1e-10
        assert relative_error(mgrad, ograd) < 1e-10
