"""Shared data model: ordinal datasets, thresholds, graphs, and sampler state."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

# Smallest admissible Cholesky pivot (squared diagonal entry): strict positive
# definiteness is required by the conditional-normal algebra in the latent sweep.
PD_TOL = 1e-10


def cholesky_pivots(matrix: np.ndarray) -> Optional[np.ndarray]:
    """Squared Cholesky diagonal of a symmetric matrix, or None if not PD."""
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return None
    return np.diag(chol) ** 2


def is_positive_definite(matrix: np.ndarray, tol: float = PD_TOL) -> bool:
    pivots = cholesky_pivots(matrix)
    return pivots is not None and float(pivots.min()) > tol


@dataclass(frozen=True)
class Violation:
    """One invariant failure, addressed to a cell or variable where possible."""

    message: str
    row: Optional[int] = None
    column: Optional[int] = None

    def __str__(self) -> str:
        where = ""
        if self.row is not None:
            where += f" row={self.row}"
        if self.column is not None:
            where += f" col={self.column}"
        return self.message + where


@dataclass(frozen=True)
class OrdinalDataset:
    """An N x p table of 1-based ordinal levels plus per-variable level counts.

    ``values[i, j]`` must lie in ``{1, ..., level_counts[j]}``; levels are kept
    1-based throughout, no internal re-indexing.
    """

    values: np.ndarray
    level_counts: np.ndarray
    variable_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int64))
        object.__setattr__(self, "level_counts", np.asarray(self.level_counts, dtype=np.int64))
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d table")
        if self.level_counts.shape != (self.values.shape[1],):
            raise ValueError("level_counts must have one entry per variable")
        if self.variable_names is not None:
            object.__setattr__(self, "variable_names", tuple(self.variable_names))
            if len(self.variable_names) != self.values.shape[1]:
                raise ValueError("variable_names length mismatch")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def validate_dataset(dataset: OrdinalDataset) -> list[Violation]:
    """Collect invariant violations; an empty list means the dataset is valid."""
    out: list[Violation] = []
    if dataset.n < 1:
        out.append(Violation("dataset has no rows"))
    if dataset.p < 1:
        out.append(Violation("dataset has no variables"))
    for j, k_j in enumerate(dataset.level_counts):
        if k_j < 2:
            out.append(Violation(f"level count K_{j} = {k_j} < 2", column=j))
    rows, cols = np.nonzero((dataset.values < 1) | (dataset.values > dataset.level_counts))
    for i, j in zip(rows.tolist(), cols.tolist()):
        out.append(
            Violation(
                f"level {dataset.values[i, j]} outside 1..{dataset.level_counts[j]}",
                row=i,
                column=j,
            )
        )
    return out


@dataclass(frozen=True)
class Thresholds:
    """Ordered interior cutpoints per variable; the outer cuts are implicitly -inf/+inf.

    ``cuts[j]`` holds the K_j - 1 strictly increasing finite thresholds of
    variable j.
    """

    cuts: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "cuts", tuple(np.asarray(c, dtype=np.float64) for c in self.cuts)
        )
        for j, c in enumerate(self.cuts):
            if c.ndim != 1:
                raise ValueError(f"cuts[{j}] must be 1-d")
            if c.size and not np.all(np.isfinite(c)):
                raise ValueError(f"cuts[{j}] must be finite")
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise ValueError(f"cuts[{j}] must be strictly increasing")

    @property
    def p(self) -> int:
        return len(self.cuts)

    def level_counts(self) -> np.ndarray:
        return np.array([c.size + 1 for c in self.cuts], dtype=np.int64)

    def padded(self, j: int) -> np.ndarray:
        """Cut sequence of variable j with -inf / +inf end sentinels prepended/appended."""
        return np.concatenate(([-np.inf], self.cuts[j], [np.inf]))

    def bracket(self, j: int, level: int) -> tuple[float, float]:
        """Latent interval [theta_{level-1}, theta_level) of a 1-based level."""
        padded = self.padded(j)
        return float(padded[level - 1]), float(padded[level])


@dataclass(frozen=True)
class Graph:
    """Undirected graph over p variables as a symmetric 0/1 adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        adj = (adj != 0).astype(np.uint8)
        if np.any(np.diag(adj)):
            raise ValueError("adjacency diagonal must be zero")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", adj)

    @property
    def p(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    @staticmethod
    def empty(p: int) -> "Graph":
        return Graph(np.zeros((p, p), dtype=np.uint8))

    @staticmethod
    def complete(p: int) -> "Graph":
        return Graph(np.ones((p, p), dtype=np.uint8) - np.eye(p, dtype=np.uint8))


@dataclass(frozen=True)
class ClusterParams:
    """One cluster's mean vector, precision matrix, and conditional-dependence graph."""

    mean: np.ndarray
    precision: np.ndarray
    graph: Graph

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "precision", np.asarray(self.precision, dtype=np.float64))
        p = self.mean.shape[0]
        if self.precision.shape != (p, p) or self.graph.p != p:
            raise ValueError("dimension mismatch between mean, precision, graph")

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def chol_precision(self) -> np.ndarray:
        return np.linalg.cholesky(self.precision)

    @cached_property
    def log_det_precision(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol_precision))))

    def log_density(self, z: np.ndarray) -> np.ndarray:
        """Gaussian log density at one row or a block of rows."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        resid = (z - self.mean) @ self.chol_precision
        quad = np.einsum("ij,ij->i", resid, resid)
        out = 0.5 * (self.log_det_precision - self.p * np.log(2.0 * np.pi)) - 0.5 * quad
        return out if out.size > 1 else out[0]

    def check(self, tol: float = PD_TOL) -> list[str]:
        problems = []
        if not is_positive_definite(self.precision, tol):
            problems.append("precision fails Cholesky at tolerance")
        off_pattern = (self.precision != 0) & ~np.eye(self.p, dtype=bool)
        if np.any(off_pattern & (self.graph.adjacency == 0)):
            problems.append("precision has nonzero entries at non-edges")
        return problems


@dataclass
class GibbsState:
    """Full sampler state, owned by exactly one chain at a time.

    ``labels`` holds opaque cluster ids; only the induced partition is
    meaningful (label switching is expected and harmless).
    """

    labels: np.ndarray
    clusters: dict[int, ClusterParams]
    latent: np.ndarray
    thresholds: Thresholds

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def p(self) -> int:
        return self.latent.shape[1]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def cluster_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))


def validate_state(state: GibbsState, dataset: OrdinalDataset, tol: float = PD_TOL) -> list[str]:
    """Check hypercube containment, label/cluster consistency, and parameter health."""
    problems: list[str] = []
    used = set(np.unique(state.labels).tolist())
    held = set(state.clusters)
    if used - held:
        problems.append(f"labels reference missing clusters {sorted(used - held)}")
    if held - used:
        problems.append(f"empty clusters persist {sorted(held - used)}")
    for cid, params in state.clusters.items():
        problems.extend(f"cluster {cid}: {msg}" for msg in params.check(tol))
    for j in range(dataset.p):
        padded = state.thresholds.padded(j)
        lo = padded[dataset.values[:, j] - 1]
        hi = padded[dataset.values[:, j]]
        z = state.latent[:, j]
        bad = np.nonzero((z < lo) | (z >= hi))[0]
        for i in bad.tolist():
            problems.append(f"latent[{i},{j}]={z[i]:.6g} outside [{lo[i]:.6g},{hi[i]:.6g})")
    return problems


def default_k_log_pmf(k, rate: float = 1.0) -> np.ndarray:
    """Log pmf of a Poisson(rate) truncated to the positive integers."""
    k = np.asarray(k, dtype=np.float64)
    return np.where(
        k >= 1,
        k * np.log(rate) - rate - gammaln(k + 1.0) - np.log1p(-np.exp(-rate)),
        -np.inf,
    )


@dataclass(frozen=True)
class Hyperparams:
    """Prior settings for the clustered probit graphical model.

    ``prior_mean`` and ``scale_matrix`` may be left as None and are resolved
    to the zero vector / identity once the dimension is known.  ``k_prior``
    maps an array of positive integers to the log prior mass of the cluster
    count; the default is Poisson(1) truncated to {1, 2, ...}.
    """

    gamma: float = 1.0            # Dirichlet concentration
    mean_scale: float = 0.01      # precision multiplier of the conditional mean prior
    prior_mean: Optional[np.ndarray] = None
    df: float = 3.0               # graph-Wishart degrees of freedom, > 2
    scale_matrix: Optional[np.ndarray] = None
    edge_prob: float = 0.2        # Bernoulli prior inclusion probability per edge
    k_prior: Callable[[np.ndarray], np.ndarray] = default_k_log_pmf

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mean_scale <= 0:
            raise ValueError("mean_scale must be positive")
        if self.df <= 2:
            raise ValueError("degrees of freedom must exceed 2")
        if not 0.0 < self.edge_prob < 1.0:
            raise ValueError("edge_prob must lie in (0, 1)")

    def resolved_mean(self, p: int) -> np.ndarray:
        if self.prior_mean is None:
            return np.zeros(p)
        mu0 = np.asarray(self.prior_mean, dtype=np.float64)
        if mu0.shape != (p,):
            raise ValueError("prior_mean dimension mismatch")
        return mu0

    def resolved_scale(self, p: int) -> np.ndarray:
        if self.scale_matrix is None:
            return np.eye(p)
        scale = np.asarray(self.scale_matrix, dtype=np.float64)
        if scale.shape != (p, p):
            raise ValueError("scale matrix dimension mismatch")
        if not is_positive_definite(scale):
            raise ValueError("scale matrix must be positive definite")
        return scale
