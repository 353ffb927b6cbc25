"""Synthetic benchmark generation: structured precisions, thresholds, ordinal data."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .gibbs import ChainConfig, run_chain
from .latent import discretize_latent, quantile_bracket_bounds
from .summary import ari, dahl_select, rmse_graph
from .types import Graph, OrdinalDataset, is_positive_definite

logger = logging.getLogger(__name__)

STRUCTURES = ("independent", "chain", "modified_chain")


@dataclass(frozen=True)
class SimDesign:
    """One benchmark configuration: cluster count, sizes, dimension, structures."""

    k_true: int
    n_per_cluster: tuple[int, ...]
    p: int
    structures: tuple[str, ...]
    levels: int = 3
    seed: int = 0
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "n_per_cluster", tuple(int(n) for n in self.n_per_cluster))
        object.__setattr__(self, "structures", tuple(self.structures))
        if len(self.n_per_cluster) != self.k_true:
            raise ValueError("n_per_cluster length must equal k_true")
        if len(self.structures) != self.k_true:
            raise ValueError("structures length must equal k_true")
        if any(n < 1 for n in self.n_per_cluster):
            raise ValueError("cluster sizes must be positive")
        for s in self.structures:
            if s not in STRUCTURES:
                raise ValueError(f"unknown structure {s!r}; choose from {STRUCTURES}")
        if self.levels < 2:
            raise ValueError("need at least 2 ordinal levels")

    @property
    def n_total(self) -> int:
        return sum(self.n_per_cluster)


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knows: labels, parameters, thresholds."""

    labels: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    concentrations: np.ndarray
    graphs: tuple[Graph, ...]
    threshold_cuts: tuple[np.ndarray, ...]


def make_structure(kind: str, p: int) -> np.ndarray:
    """Structured concentration matrix of one benchmark cluster.

    independent: identity.  chain: 1 on the diagonal, 0.5 on the first
    off-diagonals.  modified_chain: first off-diagonal entries take 0.5 and
    second off-diagonal entries take 0.25, in both cases only where the
    (1-based) column index of the upper-triangle entry is even; symmetry by
    mirroring.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    mat = np.eye(p)
    if kind == "independent":
        return mat
    if kind == "chain":
        off = 0.5 * np.ones(p - 1)
        mat += np.diag(off, 1) + np.diag(off, -1)
        return mat
    if kind == "modified_chain":
        for i in range(p - 1):
            if (i + 2) % 2 == 0:  # 1-based column index of entry (i, i+1)
                mat[i, i + 1] = mat[i + 1, i] = 0.5
        for i in range(p - 2):
            if (i + 3) % 2 == 0:  # 1-based column index of entry (i, i+2)
                mat[i, i + 2] = mat[i + 2, i] = 0.25
        if not is_positive_definite(mat):
            raise ValueError(f"modified_chain pattern not positive definite at p={p}")
        return mat
    raise ValueError(f"unknown structure {kind!r}")


def to_covariance(concentration: np.ndarray) -> np.ndarray:
    """Invert and rescale to a correlation matrix (unit diagonal)."""
    conc = np.asarray(concentration, dtype=np.float64)
    if not is_positive_definite(conc):
        raise ValueError("concentration matrix must be positive definite")
    cov = np.linalg.inv(conc)
    scale = np.sqrt(np.diag(cov))
    return cov / np.outer(scale, scale)


def gen_cluster_means(k: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Cluster means with per-component values drawn from {0, -1, 1}.

    For k <= 3 the k clusters receive distinct values per component (without
    replacement); beyond three clusters the value set is exhausted and the
    extra clusters fall back to sampling with replacement.
    """
    values = np.array([0.0, -1.0, 1.0])
    means = np.empty((k, p))
    for j in range(p):
        head = min(k, 3)
        means[:head, j] = rng.permutation(values)[:head]
        if k > 3:
            means[3:, j] = rng.choice(values, size=k - 3, replace=True)
    return means


def gen_thresholds(levels: int, rng: np.random.Generator) -> np.ndarray:
    """Interior cuts drawn uniformly on disjoint standard-normal quantile brackets."""
    if levels < 2:
        raise ValueError("need at least 2 levels")
    bounds = quantile_bracket_bounds(levels)
    return rng.uniform(bounds[:, 0], bounds[:, 1])


def simulate_dataset(design: SimDesign) -> tuple[OrdinalDataset, GroundTruth]:
    """Draw one benchmark dataset and its full ground truth, deterministically."""
    rng = np.random.default_rng(design.seed)
    p = design.p
    concentrations = np.stack([make_structure(s, p) for s in design.structures])
    covariances = np.stack([to_covariance(c) for c in concentrations])
    graphs = tuple(
        Graph(((np.abs(c) > 1e-12) & ~np.eye(p, dtype=bool)).astype(np.uint8))
        for c in concentrations
    )
    means = gen_cluster_means(design.k_true, p, rng)
    cuts = tuple(gen_thresholds(design.levels, rng) for _ in range(p))

    labels = np.repeat(np.arange(1, design.k_true + 1), design.n_per_cluster)
    latent = np.empty((design.n_total, p))
    start = 0
    for k, n_k in enumerate(design.n_per_cluster):
        latent[start : start + n_k] = rng.multivariate_normal(
            means[k], covariances[k], size=n_k, method="cholesky"
        )
        start += n_k
    values = discretize_latent(latent, cuts)
    dataset = OrdinalDataset(values=values, level_counts=np.full(p, design.levels))
    truth = GroundTruth(
        labels=labels,
        means=means,
        covariances=covariances,
        concentrations=concentrations,
        graphs=graphs,
        threshold_cuts=cuts,
    )
    return dataset, truth


@dataclass(frozen=True)
class ReplicateResult:
    """Outcome of one simulate-fit-evaluate cycle."""

    replicate: int
    k_selected: int
    k_correct: bool
    ari: float
    estimated_graphs: Optional[list] = None
    true_graphs: Optional[list] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class BenchmarkReport:
    """Aggregated benchmark metrics for one design under one label mode."""

    design_name: str
    label_mode: str
    n_replicates: int
    n_failed: int
    prob_correct_k: float
    prob_correct_k_sd: float
    ari_mean: float
    ari_sd: float
    rmse_graph: float
    mean_k_selected: float
    results: tuple[ReplicateResult, ...]

    def as_row(self) -> dict:
        return {
            "design": self.design_name,
            "label_mode": self.label_mode,
            "replicates": self.n_replicates,
            "failed": self.n_failed,
            "prob_correct_k": self.prob_correct_k,
            "prob_correct_k_sd": self.prob_correct_k_sd,
            "ari_mean": self.ari_mean,
            "ari_sd": self.ari_sd,
            "rmse_graph": self.rmse_graph,
            "mean_k_selected": self.mean_k_selected,
        }


def _one_replicate(design: SimDesign, config: ChainConfig, r: int,
                   data_seed: int, chain_seed: int) -> ReplicateResult:
    dataset, truth = simulate_dataset(replace(design, seed=data_seed))
    samples = run_chain(dataset, replace(config, seed=chain_seed))
    pick = dahl_select(samples.labels)
    selected = samples.labels[pick]
    k_sel = int(samples.n_clusters[pick])
    graphs = samples.graphs[pick]
    return ReplicateResult(
        replicate=r,
        k_selected=k_sel,
        k_correct=k_sel == design.k_true,
        ari=ari(selected, truth.labels),
        estimated_graphs=[graphs[int(lab) - 1] for lab in selected],
        true_graphs=[truth.graphs[int(lab) - 1].adjacency for lab in truth.labels],
    )


def run_replicates(
    design: SimDesign,
    config: ChainConfig,
    replicates: int,
    n_workers: int = 1,
) -> BenchmarkReport:
    """Simulate, fit, and score `replicates` datasets from one design.

    Per-replicate seeds are spawned from (design.seed, config.seed) so results
    do not depend on scheduling; failures are recorded, not fatal.
    """
    root = np.random.SeedSequence(entropy=(int(design.seed), int(config.seed)))
    children = root.spawn(replicates)
    seeds = [tuple(int(s) for s in c.generate_state(2)) for c in children]

    def job(r: int) -> ReplicateResult:
        data_seed, chain_seed = seeds[r]
        try:
            return _one_replicate(design, config, r, data_seed, chain_seed)
        except Exception as exc:  # noqa: BLE001 - per-replicate failures are recorded
            logger.warning("replicate %d failed: %s", r, exc)
            return ReplicateResult(
                replicate=r, k_selected=0, k_correct=False, ari=np.nan, error=str(exc)
            )

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(job, range(replicates)))
    else:
        results = [job(r) for r in range(replicates)]

    ok = [r for r in results if r.error is None]
    correct = np.array([r.k_correct for r in ok], dtype=float)
    aris = np.array([r.ari for r in ok], dtype=float)
    ks = np.array([r.k_selected for r in ok], dtype=float)
    if ok:
        rmse = rmse_graph(
            [r.estimated_graphs for r in ok], [r.true_graphs for r in ok]
        )
    else:
        rmse = float("nan")
    return BenchmarkReport(
        design_name=design.name or f"k{design.k_true}_p{design.p}",
        label_mode=config.label_mode,
        n_replicates=replicates,
        n_failed=len(results) - len(ok),
        prob_correct_k=float(correct.mean()) if ok else float("nan"),
        prob_correct_k_sd=float(correct.std(ddof=1)) if len(ok) > 1 else 0.0,
        ari_mean=float(aris.mean()) if ok else float("nan"),
        ari_sd=float(aris.std(ddof=1)) if len(ok) > 1 else 0.0,
        rmse_graph=rmse,
        mean_k_selected=float(ks.mean()) if ok else float("nan"),
        results=tuple(results),
    )
