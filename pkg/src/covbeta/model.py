"""Directed degree-heterogeneity network model with dyad covariates.

A directed edge ``i -> j`` is present independently with probability

    p_ij = expit(Z_ij' gamma + alpha_i + beta_j),

where ``alpha`` is the outgoingness of each node, ``beta`` the incomingness
(with ``beta[n - 1] = 0`` for identification) and ``gamma`` the homophily
effect of the dyad covariates ``Z``.

Throughout the package the degree parameters are also handled as a single
vector ``theta = (alpha_0, ..., alpha_{n-1}, beta_0, ..., beta_{n-2})`` of
length ``2n - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

TRANSFORMS = ("absdiff", "equal")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DirectedGraph:
    """Binary directed graph on ``n`` nodes without self-loops."""

    adj: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 2:
            raise ValueError("a graph needs at least 2 nodes")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.diagonal(adj).any():
            raise ValueError("self-loops are not allowed")
        object.__setattr__(self, "adj", _frozen(adj.astype(np.int8)))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def out_degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1, dtype=np.int64)

    def in_degrees(self) -> np.ndarray:
        return self.adj.sum(axis=0, dtype=np.int64)

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum(dtype=np.int64))

    @classmethod
    def from_edges(cls, n: int, edges) -> "DirectedGraph":
        adj = np.zeros((n, n), dtype=np.int8)
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(edges):
            adj[edges[:, 0], edges[:, 1]] = 1
        return cls(adj)

    def edges(self) -> np.ndarray:
        """Edges as an ``(m, 2)`` array of (src, dst), row-major order."""
        return np.argwhere(self.adj == 1)

    def permuted(self, perm: Sequence[int]) -> "DirectedGraph":
        """Relabel so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return DirectedGraph(self.adj[np.ix_(perm, perm)])


@dataclass(frozen=True)
class DyadCovariates:
    """Dense ``(n, n, p)`` array of covariate vectors, one per ordered pair.

    The diagonal ``z[i, i]`` is stored as zeros and never read.
    """

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 2:
            z = z[:, :, None]
        if z.ndim != 3 or z.shape[0] != z.shape[1]:
            raise ValueError(f"dyad covariates must have shape (n, n, p), got {z.shape}")
        z = z.copy()
        idx = np.arange(z.shape[0])
        z[idx, idx, :] = 0.0
        if not np.isfinite(z).all():
            raise ValueError("dyad covariates must be finite")
        object.__setattr__(self, "z", _frozen(z))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[2]

    @classmethod
    def empty(cls, n: int) -> "DyadCovariates":
        """No covariates (``p = 0``): the plain directed beta-model."""
        return cls(np.zeros((n, n, 0)))

    def linear(self, gamma) -> np.ndarray:
        """``Z_ij' gamma`` as an ``(n, n)`` matrix."""
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.p,):
            raise ValueError(f"gamma has shape {gamma.shape}, expected ({self.p},)")
        if self.p == 0:
            return np.zeros((self.n, self.n))
        return self.z @ gamma

    def kappa(self, gamma) -> float:
        """Realized ``max_{i != j} |Z_ij' gamma|``."""
        lin = np.abs(self.linear(gamma))
        np.fill_diagonal(lin, 0.0)
        return float(lin.max())

    def permuted(self, perm: Sequence[int]) -> "DyadCovariates":
        perm = np.asarray(perm)
        return DyadCovariates(self.z[np.ix_(perm, perm)])


@dataclass(frozen=True)
class NodeCovariates:
    """Node attributes ``x`` (``n x q``) with a pairwise transform per column.

    ``transform`` is either a single rule name applied to every column or one
    name per column. ``absdiff`` gives ``|x_ik - x_jk|``; ``equal`` gives the
    indicator ``x_ik == x_jk``.
    """

    x: np.ndarray
    transform: str | tuple[str, ...] = "absdiff"
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"node covariates must be 2-d, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("node covariates must be finite")
        transform = self.transform
        if isinstance(transform, str):
            transform = (transform,) * x.shape[1]
        transform = tuple(transform)
        if len(transform) != x.shape[1]:
            raise ValueError(
                f"got {len(transform)} transforms for {x.shape[1]} covariate columns")
        for t in transform:
            if t not in TRANSFORMS:
                raise ValueError(f"unknown transform {t!r}; expected one of {TRANSFORMS}")
        names = self.names
        if names is None:
            names = tuple(f"x{k + 1}" for k in range(x.shape[1]))
        elif len(names) != x.shape[1]:
            raise ValueError("one name per covariate column is required")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "transform", transform)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def normalized(self) -> "NodeCovariates":
        """Center and scale the ``absdiff`` columns (indicator columns untouched)."""
        x = self.x.copy()
        for k, t in enumerate(self.transform):
            if t == "absdiff":
                sd = x[:, k].std(ddof=1)
                x[:, k] = x[:, k] - x[:, k].mean()
                if sd > 0:
                    x[:, k] /= sd
        return NodeCovariates(x, self.transform, self.names)

    def to_dyad(self) -> DyadCovariates:
        diff = self.x[:, None, :] - self.x[None, :, :]
        z = np.empty_like(diff)
        for k, t in enumerate(self.transform):
            if t == "absdiff":
                z[:, :, k] = np.abs(diff[:, :, k])
            else:
                z[:, :, k] = (diff[:, :, k] == 0).astype(float)
        return DyadCovariates(z)


@dataclass(frozen=True)
class ModelParams:
    """Parameter triple ``(alpha, beta, gamma)`` with ``beta[-1] == 0``."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        beta = np.asarray(self.beta, dtype=float).ravel()
        gamma = np.asarray(self.gamma, dtype=float).ravel()
        if alpha.shape != beta.shape:
            raise ValueError("alpha and beta must have the same length")
        if beta[-1] != 0.0:
            raise ValueError("beta[n-1] must be 0 (identification constraint)")
        for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if not np.isfinite(v).all():
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "gamma", _frozen(gamma))

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta[:-1]])

    @classmethod
    def from_theta(cls, theta, gamma=()) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.shape[0] % 2 != 1:
            raise ValueError("theta must have odd length 2n - 1")
        n = (theta.shape[0] + 1) // 2
        return cls(theta[:n], np.append(theta[n:], 0.0), gamma)

    @classmethod
    def zeros(cls, n: int, p: int = 0) -> "ModelParams":
        return cls(np.zeros(n), np.zeros(n), np.zeros(p))

    @classmethod
    def anchored(cls, alpha, beta, gamma=()) -> "ModelParams":
        """Build from an unanchored ``(alpha, beta)`` by shifting ``beta[-1]`` to 0.

        The shift ``(alpha + c, beta - c)`` leaves every probability unchanged.
        """
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        c = beta[-1]
        beta = beta - c
        beta[-1] = 0.0
        return cls(alpha + c, beta, gamma)


def _check_dims(params: ModelParams, Z: DyadCovariates, graph: DirectedGraph | None = None):
    if Z.n != params.n:
        raise ValueError(f"covariates are for {Z.n} nodes but params for {params.n}")
    if Z.p != params.p:
        raise ValueError(f"covariate dimension {Z.p} does not match gamma length {params.p}")
    if graph is not None and graph.n != params.n:
        raise ValueError(f"graph has {graph.n} nodes but params have {params.n}")


def linear_predictor(params: ModelParams, Z: DyadCovariates) -> np.ndarray:
    """``eta_ij = Z_ij' gamma + alpha_i + beta_j`` (diagonal is meaningless)."""
    _check_dims(params, Z)
    return Z.linear(params.gamma) + params.alpha[:, None] + params.beta[None, :]


def prob_matrix(params: ModelParams, Z: DyadCovariates) -> np.ndarray:
    """Edge probabilities ``p_ij`` with a zero diagonal."""
    P = expit(linear_predictor(params, Z))
    np.fill_diagonal(P, 0.0)
    return P


def dyad_prob(params: ModelParams, Z: DyadCovariates, i: int, j: int) -> float:
    """Probability of the edge ``i -> j``."""
    n = params.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node index out of range for n={n}: ({i}, {j})")
    if i == j:
        raise ValueError("self-loops have no probability (i == j)")
    _check_dims(params, Z)
    eta = Z.z[i, j] @ params.gamma + params.alpha[i] + params.beta[j]
    return float(expit(eta))


def log_likelihood(graph: DirectedGraph, Z: DyadCovariates, params: ModelParams) -> float:
    r"""Log-likelihood of ``graph``.

    Evaluated as ``sum_{i != j} a_ij eta_ij - log(1 + exp(eta_ij))`` with
    ``logaddexp`` for the log-partition term.
    """
    _check_dims(params, Z, graph)
    eta = linear_predictor(params, Z)
    terms = graph.adj * eta - np.logaddexp(0.0, eta)
    np.fill_diagonal(terms, 0.0)
    return float(terms.sum())


def score(graph: DirectedGraph, Z: DyadCovariates, params: ModelParams):
    """Analytic gradient of :func:`log_likelihood`.

    Returns
    -------
    score_gamma : ndarray, shape (p,)
        ``sum_{i != j} (a_ij - p_ij) Z_ij``.
    score_theta : ndarray, shape (2n - 1,)
        Out-degree residuals ``d_i - sum_k p_ik`` for every node followed by
        in-degree residuals ``b_j - sum_k p_kj`` for ``j < n - 1``.
    """
    _check_dims(params, Z, graph)
    P = prob_matrix(params, Z)
    R = graph.adj - P
    np.fill_diagonal(R, 0.0)
    if Z.p:
        score_gamma = np.einsum("ij,ijk->k", R, Z.z)
    else:
        score_gamma = np.zeros(0)
    score_theta = np.concatenate([R.sum(axis=1), R.sum(axis=0)[:-1]])
    return score_gamma, score_theta
