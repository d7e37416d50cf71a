"""Fisher information of the degree parameters and its closed-form inverse.

The information matrix ``V`` of ``theta`` has a diagonal out-block, a
diagonal in-block and an off-block of single-dyad variances. Its inverse is
approximated by ``S`` whose entries are ``delta_ij / v_ii`` plus or minus
``1 / v_{2n,2n}``; ``S`` is kept in factored form (two scalars per row).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from .model import DyadCovariates, ModelParams, prob_matrix

PROB_FLOOR = 1e-12


class ConditioningWarning(RuntimeWarning):
    """Fitted probabilities sit at the machine boundary."""


@dataclass(frozen=True)
class FisherBlocks:
    """Information blocks evaluated at one parameter value.

    Attributes
    ----------
    V : ndarray, shape (2n-1, 2n-1)
        Information of ``theta``.
    v_ext : ndarray, shape (2n-1,)
        The extended row ``v_{2n,i} = v_ii - sum_{j != i} v_ij``.
    v_corner : float
        ``v_{2n,2n} = sum_i v_{2n,i}``.
    H_gt : ndarray, shape (p, 2n-1)
        Cross information ``-H_{gamma theta}``; column ``i`` is
        ``sum_j w_ij Z_ij`` for out-parameters and ``sum_i w_ij Z_ij`` for
        in-parameters, ``w = p (1 - p)``.
    H_gg : ndarray, shape (p, p)
        ``-H_{gamma gamma} = sum_{i != j} w_ij Z_ij Z_ij'``.
    W : ndarray, shape (n, n)
        The dyad variances ``w_ij`` themselves (zero diagonal).
    """

    V: np.ndarray
    v_ext: np.ndarray
    v_corner: float
    H_gt: np.ndarray
    H_gg: np.ndarray
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.H_gg.shape[0]

    @property
    def v_diag(self) -> np.ndarray:
        return np.diagonal(self.V).copy()

    def class_bounds(self) -> tuple[float, float]:
        """``(m, M)``: min and max dyad variance over off-diagonal pairs."""
        off = self.W[~np.eye(self.n, dtype=bool)]
        return float(off.min()), float(off.max())


@dataclass(frozen=True)
class ApproxInverse:
    """Factored ``S``: ``s_ij = delta_ij * s_diag[i] + sign_i sign_j * s_const``.

    ``sign`` is ``+1`` on out-parameters and ``-1`` on in-parameters.
    """

    s_diag: np.ndarray
    s_const: float

    @property
    def n(self) -> int:
        return (self.s_diag.shape[0] + 1) // 2

    @property
    def sign(self) -> np.ndarray:
        n = self.n
        return np.concatenate([np.ones(n), -np.ones(n - 1)])

    def diagonal(self) -> np.ndarray:
        return self.s_diag + self.s_const

    def entry(self, i: int, j: int) -> float:
        sign = self.sign
        return float((i == j) * self.s_diag[i] + sign[i] * sign[j] * self.s_const)

    def dense(self) -> np.ndarray:
        """Materialize ``S``; for tests and small problems only."""
        u = self.sign
        return np.diag(self.s_diag) + self.s_const * np.outer(u, u)

    def matmul(self, X: np.ndarray) -> np.ndarray:
        """``S @ X`` in ``O(n)`` per column without forming ``S``."""
        X = np.asarray(X, dtype=float)
        u = self.sign
        if X.ndim == 1:
            return self.s_diag * X + self.s_const * u * (u @ X)
        return self.s_diag[:, None] * X + self.s_const * np.outer(u, u @ X)


def dyad_variances(P: np.ndarray) -> np.ndarray:
    """``p (1 - p)`` with clamping at the probability floor."""
    off = ~np.eye(P.shape[0], dtype=bool)
    if ((P[off] < PROB_FLOOR) | (P[off] > 1.0 - PROB_FLOOR)).any():
        warnings.warn("edge probabilities within 1e-12 of 0 or 1; "
                      "clamping dyad variances", ConditioningWarning, stacklevel=3)
    Pc = np.clip(P, PROB_FLOOR, 1.0 - PROB_FLOOR)
    W = Pc * (1.0 - Pc)
    np.fill_diagonal(W, 0.0)
    return W


def blocks_from_probs(P: np.ndarray, Z: DyadCovariates) -> FisherBlocks:
    """Assemble :class:`FisherBlocks` from an edge-probability matrix."""
    n = P.shape[0]
    W = dyad_variances(P)
    row = W.sum(axis=1)
    col = W.sum(axis=0)

    V = np.zeros((2 * n - 1, 2 * n - 1))
    V[:n, :n] = np.diag(row)
    V[n:, n:] = np.diag(col[:-1])
    V[:n, n:] = W[:, :-1]
    V[n:, :n] = W[:, :-1].T

    v_ext = np.concatenate([W[:, -1], np.zeros(n - 1)])
    v_corner = float(col[-1])

    if Z.p:
        out_part = np.einsum("ij,ijk->ki", W, Z.z)
        in_part = np.einsum("ij,ijk->kj", W, Z.z)
        H_gt = np.concatenate([out_part, in_part[:, :-1]], axis=1)
        H_gg = np.einsum("ij,ijk,ijl->kl", W, Z.z, Z.z)
    else:
        H_gt = np.zeros((0, 2 * n - 1))
        H_gg = np.zeros((0, 0))
    return FisherBlocks(V, v_ext, v_corner, H_gt, H_gg, W)


def build_V(n: int, Z: DyadCovariates, params: ModelParams) -> FisherBlocks:
    """Information blocks of the model at ``params``."""
    if params.n != n or Z.n != n:
        raise ValueError(f"dimension mismatch: n={n}, params.n={params.n}, Z.n={Z.n}")
    return blocks_from_probs(prob_matrix(params, Z), Z)


def build_S(blocks: FisherBlocks) -> ApproxInverse:
    """Closed-form approximate inverse of ``V``; no matrix inversion."""
    d = blocks.v_diag
    if (d <= 0).any() or blocks.v_corner <= 0:
        raise np.linalg.LinAlgError(
            "information diagonal has zero entries; probabilities are degenerate")
    return ApproxInverse(1.0 / d, 1.0 / blocks.v_corner)


def solve_V(blocks: FisherBlocks, rhs: np.ndarray) -> np.ndarray:
    """Dense symmetric positive-definite solve ``V^{-1} rhs``."""
    return scipy.linalg.solve(blocks.V, rhs, assume_a="pos")


def profile_information(blocks: FisherBlocks,
                        mode: Literal["exact", "approx"] = "exact",
                        normalize: bool = True) -> np.ndarray:
    """Information of ``gamma`` after profiling out ``theta``.

    ``exact`` uses a dense solve with ``V``; ``approx`` substitutes ``S`` via

        H S H' = sum_i g_i g_i' / v_ii + sum_j h_j h_j' / v_{n+j,n+j},

    where the ``j = n`` term carries ``v_{2n,2n}``. In ``approx`` mode the
    covariates are first centered at their ``w``-weighted mean, an exact
    invariance. With ``normalize`` the result is divided by ``N = n (n - 1)``.
    """
    p, n = blocks.p, blocks.n
    if p == 0:
        return np.zeros((0, 0))
    G = blocks.H_gt
    if mode == "exact":
        try:
            correction = G @ solve_V(blocks, G.T)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise np.linalg.LinAlgError(f"information matrix V is singular: {exc}") from exc
        info = blocks.H_gg - correction
    elif mode == "approx":
        # Shifting Z by its w-weighted mean c leaves the information unchanged
        # (the constant lies in the span of the degree parameters). S is only
        # applied to the centered part, where its error is of lower order.
        S = build_S(blocks)
        W = blocks.W
        total = W.sum()
        c = G[:, :n].sum(axis=1) / total
        span = np.concatenate([W.sum(axis=1), W.sum(axis=0)[:-1]])
        Gc = G - np.outer(c, span)
        info = blocks.H_gg - total * np.outer(c, c) - Gc @ S.matmul(Gc.T)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    info = 0.5 * (info + info.T)
    if normalize:
        info = info / (n * (n - 1))
    return info
