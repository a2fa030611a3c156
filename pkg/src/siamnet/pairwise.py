"""Pairwise machinery over CNN feature batches: connection functions,
mask/weight matrices, binomial-deviance and Fisher costs, and their
closed-form gradients in matrix form.

Conventions.  A feature batch is a d x n matrix X whose COLUMNS are
samples.  In the shared-parameter ("general") setting all pairs come
from one batch: the candidate pairs are the strict upper triangle of an
n x n grid, so a batch of n samples yields n*(n-1)/2 of them.  In the
two-view ("view specific") setting X (d x n) and Y (d x m) come from
different sub-networks and every (i, j) cell of the full n x m grid is
a candidate pair.

The mask matrix M holds +1 for a same-subject pair, -c for a
different-subject pair (c >= 1 is the asymmetric negative cost) and 0
for neglected cells.  W holds the per-class weights 1/n1 and 1/n2; the
Fisher sign matrix P holds 1/n1 and -1/n2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBatchError,
    DegenerateVarianceError,
    DimensionError,
    SingularInputError,
    UsageError,
)

CONNECTION_KINDS = ("euclidean", "cosine", "absdiff", "concat")


@dataclass(frozen=True)
class PairMasks:
    """Mask M, weight W and Fisher sign P matrices plus pair counts."""

    M: np.ndarray
    W: np.ndarray
    P: np.ndarray
    n1: int
    n2: int
    c: float

    @property
    def considered(self) -> np.ndarray:
        return self.M != 0.0


@dataclass(frozen=True)
class SimilarityMatrix:
    S: np.ndarray
    kind: str


def _column_norms(X: np.ndarray, name: str) -> np.ndarray:
    sq = np.einsum("dn,dn->n", X, X)
    bad = np.flatnonzero(sq == 0.0)
    if bad.size:
        raise SingularInputError(f"zero-norm column {bad[0]} in {name}")
    return sq


def cosine_similarity(X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """Cosine of every column pair; X is d x n, Y defaults to X."""
    sqx = _column_norms(X, "X")
    if Y is None:
        G = X.T @ X
        return G / np.sqrt(np.outer(sqx, sqx))
    if Y.shape[0] != X.shape[0]:
        raise DimensionError(f"feature axis mismatch: X has d={X.shape[0]}, Y has d={Y.shape[0]}")
    sqy = _column_norms(Y, "Y")
    return (X.T @ Y) / np.sqrt(np.outer(sqx, sqy))


def connect(X: np.ndarray, Y: np.ndarray | None = None, kind: str = "cosine",
            concat_weights: np.ndarray | None = None) -> SimilarityMatrix:
    """Similarity of every column of X against every column of Y.

    Distances (euclidean, absdiff) are negated so that larger always
    means more similar.  The concat connection needs caller-supplied
    weights of length 2d; they are applied forward-only.
    """
    if kind not in CONNECTION_KINDS:
        raise UsageError(f"unknown connection kind {kind!r}")
    Yv = X if Y is None else Y
    if Yv.shape[0] != X.shape[0]:
        raise DimensionError(f"feature axis mismatch: X has d={X.shape[0]}, Y has d={Yv.shape[0]}")
    if kind == "cosine":
        return SimilarityMatrix(cosine_similarity(X, Y), kind)
    if kind == "euclidean":
        sqx = np.einsum("dn,dn->n", X, X)
        sqy = np.einsum("dn,dn->n", Yv, Yv)
        s = -(sqx[:, None] + sqy[None, :] - 2.0 * (X.T @ Yv))
        return SimilarityMatrix(s, kind)
    if kind == "absdiff":
        s = -np.abs(X[:, :, None] - Yv[:, None, :]).sum(axis=0)
        return SimilarityMatrix(s, kind)
    # concat: weighted sum of the stacked pair [x; y]
    if concat_weights is None or len(concat_weights) != 2 * X.shape[0]:
        raise UsageError("concat connection needs weights of length 2d")
    w = np.asarray(concat_weights, dtype=np.float64)
    d = X.shape[0]
    s = (w[:d] @ X)[:, None] + (w[d:] @ Yv)[None, :]
    return SimilarityMatrix(s, kind)


def build_masks(labels, c: float = 2.0, labels_y=None) -> PairMasks:
    """Construct M, W, P from subject labels.

    General mode (labels_y omitted): candidate pairs are the strict
    upper triangle; diagonal and lower triangle are neglected.  Two-view
    mode: full n x m grid against labels_y.
    """
    if c < 1.0:
        raise UsageError(f"negative cost c must be >= 1, got {c}")
    la = np.asarray(labels)
    if labels_y is None:
        if la.size < 2:
            raise UsageError(f"need at least 2 samples, got {la.size}")
        same = la[:, None] == la[None, :]
        cand = np.triu(np.ones((la.size, la.size), dtype=bool), k=1)
    else:
        lb = np.asarray(labels_y)
        same = la[:, None] == lb[None, :]
        cand = np.ones((la.size, lb.size), dtype=bool)
    M = np.where(cand & same, 1.0, np.where(cand, -c, 0.0))
    n1 = int((M == 1.0).sum())
    n2 = int(cand.sum()) - n1
    if n1 == 0 or n2 == 0:
        raise DegenerateBatchError(f"batch has n1={n1} positive and n2={n2} negative pairs")
    W = np.where(M == 1.0, 1.0 / n1, np.where(M == 0.0, 0.0, 1.0 / n2))
    P = np.where(M == 1.0, 1.0 / n1, np.where(M == 0.0, 0.0, -1.0 / n2))
    return PairMasks(M, W, P, n1, n2, float(c))


def _softplus(z: np.ndarray) -> np.ndarray:
    """ln(1 + e^z) without overflow."""
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    """e^z / (1 + e^z) without overflow."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[np.logical_not(pos)])
    out[np.logical_not(pos)] = ez / (1.0 + ez)
    return out


def _check_pair_shapes(S: np.ndarray, masks: PairMasks):
    if S.shape != masks.M.shape:
        raise DimensionError(f"similarity {S.shape} vs mask {masks.M.shape} mismatch")


def deviance_cost(S: np.ndarray, masks: PairMasks, alpha: float = 2.0,
                  beta: float = 0.5) -> float:
    """Binomial deviance summed over non-neglected pairs.

    Each considered pair contributes W_ij * ln(1 + e^(-alpha (S_ij -
    beta) M_ij)); W is zero on neglected cells so the matrix sum only
    sees real pairs.
    """
    if alpha <= 0:
        raise UsageError(f"alpha must be > 0, got {alpha}")
    S = np.asarray(S, dtype=np.float64)
    _check_pair_shapes(S, masks)
    return float((masks.W * _softplus(-alpha * (S - beta) * masks.M)).sum())


def _deviance_weight(S, masks, alpha, beta):
    """dJ_dev/dS, the per-pair weight matrix of the closed-form gradient."""
    Z = -alpha * (S - beta) * masks.M
    return -alpha * masks.W * masks.M * _sigmoid(Z)


def _cosine_chain_general(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Map a per-pair weight matrix A = dJ/dS through the cosine Jacobian.

    With B_ij = 1/(|x_i||x_j|), C_ij = B_ij <x_i,x_j>/<x_i,x_i> and
    D_ij the j-normalized twin, the chain rule collapses to
    X (A.B + (A.B)^T) - X . (rowsum(A.C) + colsum(A.D)) where the row
    and column sums replicate down the d feature rows.
    """
    sq = _column_norms(X, "X")
    G = X.T @ X
    B = 1.0 / np.sqrt(np.outer(sq, sq))
    C = B * G / sq[:, None]
    D = B * G / sq[None, :]
    Q = A * B
    scale = (A * C).sum(axis=1) + (A * D).sum(axis=0)
    return X @ (Q + Q.T) - X * scale[None, :]


def deviance_grad_general(X: np.ndarray, S: np.ndarray, masks: PairMasks,
                          alpha: float = 2.0, beta: float = 0.5) -> np.ndarray:
    """d J_dev / d X for the shared-parameter case; X is d x n, S cosine."""
    X = np.asarray(X, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check_pair_shapes(S, masks)
    A = _deviance_weight(S, masks, alpha, beta)
    return _cosine_chain_general(X, A)


def deviance_grad_specific(X: np.ndarray, Y: np.ndarray, S: np.ndarray,
                           masks: PairMasks, alpha: float = 2.0, beta: float = 0.5):
    """(dJ/dX, dJ/dY) for the two-view case; S is the n x m cosine grid."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check_pair_shapes(S, masks)
    sqx = _column_norms(X, "X")
    sqy = _column_norms(Y, "Y")
    E = _deviance_weight(S, masks, alpha, beta)
    F = 1.0 / np.sqrt(np.outer(sqx, sqy))
    G = X.T @ Y
    Gn = F * G / sqx[:, None]
    Hn = F * G / sqy[None, :]
    dX = Y @ (E * F).T - X * (E * Gn).sum(axis=1)[None, :]
    dY = X @ (E * F) - Y * (E * Hn).sum(axis=0)[None, :]
    return dX, dY


def fisher_cost(S: np.ndarray, masks: PairMasks) -> float:
    """Negative squared between-class divergence over total variance.

    The mean and the variance run over non-neglected pairs only;
    neglected cells are bookkeeping zeros, not data.
    """
    S = np.asarray(S, dtype=np.float64)
    _check_pair_shapes(S, masks)
    u, sbar, v = _fisher_moments(S, masks)
    return -u * u / v


def _fisher_moments(S, masks):
    cons = masks.considered
    vals = S[cons]
    if vals.size < 2 or np.ptp(vals) == 0.0:
        raise DegenerateVarianceError("all considered similarities are equal")
    u = float((masks.P * S)[cons].sum())
    sbar = vals.mean()
    v = float(((vals - sbar) ** 2).sum())
    return u, sbar, v


def fisher_grad(X: np.ndarray, S: np.ndarray, masks: PairMasks) -> np.ndarray:
    """d J_fisher / d X via the same cosine chain as the deviance gradient."""
    X = np.asarray(X, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check_pair_shapes(S, masks)
    cons = masks.considered
    u, sbar, v = _fisher_moments(S, masks)
    # dJ/dS on considered cells; the mean-centering kills the dSbar term.
    A = np.where(cons, -2.0 * u * masks.P / v + 2.0 * u * u * (S - sbar) / (v * v), 0.0)
    return _cosine_chain_general(X, A)


def pairwise_oracle(X: np.ndarray, masks: PairMasks, alpha: float = 2.0,
                    beta: float = 0.5):
    """Reference cost and gradient via an explicit loop over pairs.

    Accumulates one scalar binomial deviance and one cosine gradient per
    non-zero mask entry.  Test-only ground truth for the matrix form;
    single-threaded on purpose.
    """
    X = np.asarray(X, dtype=np.float64)
    sq = _column_norms(X, "X")
    norms = np.sqrt(sq)
    cost = 0.0
    grad = np.zeros_like(X)
    rows, cols = np.nonzero(masks.M)
    for i, j in zip(rows, cols):
        xi, xj = X[:, i], X[:, j]
        s = float(xi @ xj) / (norms[i] * norms[j])
        m, w = masks.M[i, j], masks.W[i, j]
        z = -alpha * (s - beta) * m
        cost += w * float(_softplus(np.array(z)))
        a = -alpha * w * m * float(_sigmoid(np.array([z]))[0])
        ds_dxi = xj / (norms[i] * norms[j]) - s * xi / sq[i]
        ds_dxj = xi / (norms[i] * norms[j]) - s * xj / sq[j]
        grad[:, i] += a * ds_dxi
        grad[:, j] += a * ds_dxj
    return cost, grad
