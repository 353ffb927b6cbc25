"""Collapsed Gibbs sampling for the clustered probit graphical model.

One iteration runs four sweeps: label updates through the partition urn
(with auxiliary prior draws standing in for the intractable new-cluster
marginal), per-cluster parameter updates, latent-row refreshes, and the
threshold move.  Chains are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, ndtri

from . import gwishart
from .latent import (
    discretize_latent,
    quantile_bracket_bounds,
    sequential_cell_transform,
    update_latent_rows,
    update_thresholds,
)
from .mfm import LogVnTable, compute_log_vn
from .types import (
    ClusterParams,
    GibbsState,
    Graph,
    Hyperparams,
    OrdinalDataset,
    Thresholds,
    validate_dataset,
    validate_state,
)

LABEL_MODES = ("MFM", "CRP")


@dataclass(frozen=True)
class ChainConfig:
    """Chain length, seed, priors, and the partition-prior mode.

    The 2000/1000 defaults suit simulation-scale problems; case studies
    typically run longer (e.g. 6000 iterations with 3000 burn-in).
    """

    iterations: int = 2000
    burn_in: int = 1000
    seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    label_mode: str = "MFM"
    aux_components: int = 3
    swap_moves: bool = True
    record_params: bool = False
    check_every: int = 50

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be nonnegative and below iterations")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        if self.aux_components < 1:
            raise ValueError("aux_components must be at least 1")


@dataclass
class PosteriorSamples:
    """Post-burn-in snapshots: labels, cluster counts, per-cluster graphs.

    Labels use contiguous ids 1..K per iteration; ``graphs[m][k-1]`` is the
    adjacency of cluster k at kept iteration m.  Parameter snapshots are
    present only when the chain recorded them.
    """

    labels: np.ndarray
    n_clusters: np.ndarray
    graphs: list[np.ndarray]
    means: Optional[list[np.ndarray]]
    precisions: Optional[list[np.ndarray]]
    seed: int
    label_mode: str
    iterations: int
    burn_in: int

    @property
    def n_kept(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.labels.shape[1]


class _AuxPool:
    """Batch of fresh prior draws consumed sequentially by the label sweep.

    Entries are iid from the prior, so taking them in order is equivalent to
    drawing them at use time; batching just removes per-draw overhead.
    """

    def __init__(self, hyper: Hyperparams, p: int, rng: np.random.Generator, size: int):
        prior = gwishart.GWishartParams(df=hyper.df, scale=hyper.resolved_scale(p))
        mu0 = hyper.resolved_mean(p)
        iu = np.triu_indices(p, k=1)
        flags = (rng.random((size, iu[0].size)) < hyper.edge_prob).astype(np.uint8)
        adjs = np.zeros((size, p, p), dtype=np.uint8)
        adjs[:, iu[0], iu[1]] = flags
        adjs += np.transpose(adjs, (0, 2, 1)).copy()
        self.adjs = adjs
        self.precisions = gwishart.sample_gwishart_batch(adjs, prior, rng)
        self.chols = np.linalg.cholesky(self.precisions)
        diags = np.einsum("mii->mi", self.chols)
        self.logdets = 2.0 * np.log(diags).sum(axis=1)
        noise = rng.standard_normal((size, p))
        scaled = np.linalg.solve(np.transpose(self.chols, (0, 2, 1)), noise[..., None])[..., 0]
        self.means = mu0 + scaled / np.sqrt(hyper.mean_scale)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        if self.pos + k > self.means.shape[0]:
            raise RuntimeError("auxiliary pool exhausted")
        idx = np.arange(self.pos, self.pos + k)
        self.pos += k
        return idx


def label_log_weights(
    sizes: np.ndarray,
    gamma: float,
    existing_logpdfs: np.ndarray,
    log_new_factor: float,
    aux_logpdfs: np.ndarray,
) -> np.ndarray:
    """Unnormalized log label weights: existing clusters then auxiliary slots.

    Existing cluster k gets (size_k + gamma) * density; each of the m
    auxiliary parameter slots gets (new-cluster factor / m) * density, so the
    auxiliary average stands in for the new-cluster marginal.
    """
    m = len(aux_logpdfs)
    existing = np.log(np.asarray(sizes, dtype=np.float64) + gamma) + existing_logpdfs
    aux = log_new_factor - np.log(m) + np.asarray(aux_logpdfs)
    return np.concatenate((existing, aux))


def _fresh_pool(hyper: Hyperparams, p: int, rng: np.random.Generator, size: int) -> _AuxPool:
    return _AuxPool(hyper, p, rng, size)


class _LabelSweepCache:
    """Cluster sizes and lazily filled per-cluster density columns for one sweep.

    Cluster parameters are fixed during a label sweep, so each cluster's
    Gaussian log density at every latent row is computed at most once.
    """

    def __init__(self, state: GibbsState):
        ids, counts = np.unique(state.labels, return_counts=True)
        self.sizes: dict[int, int] = dict(zip(ids.tolist(), counts.tolist()))
        self.columns: dict[int, np.ndarray] = {}

    def density_column(self, cid: int, state: GibbsState) -> np.ndarray:
        col = self.columns.get(cid)
        if col is None:
            col = np.atleast_1d(state.clusters[cid].log_density(state.latent))
            self.columns[cid] = col
        return col

    def drop(self, cid: int) -> None:
        self.sizes.pop(cid, None)
        self.columns.pop(cid, None)


def _params_from_pool(pool: _AuxPool, idx: int) -> ClusterParams:
    params = ClusterParams(
        mean=pool.means[idx].copy(),
        precision=pool.precisions[idx].copy(),
        graph=Graph(pool.adjs[idx].copy()),
    )
    params.__dict__["chol_precision"] = pool.chols[idx].copy()
    params.__dict__["log_det_precision"] = float(pool.logdets[idx])
    return params


def update_label(
    i: int,
    state: GibbsState,
    table: LogVnTable,
    config: ChainConfig,
    rng: np.random.Generator,
    pool: Optional[_AuxPool] = None,
    cache: Optional[_LabelSweepCache] = None,
) -> GibbsState:
    """Resample observation i's cluster label from its full conditional.

    Removes i from its cluster (a singleton's parameters are kept as the
    first auxiliary slot rather than redrawn), weighs existing clusters by
    (size + gamma) times the Gaussian density of the latent row, and weighs
    a new cluster by the urn's new-cluster factor times the average density
    over the auxiliary prior draws.  Mutates and returns the state.
    """
    hyper = config.hyper
    p = state.p
    m = config.aux_components
    z_i = state.latent[i]
    old_id = int(state.labels[i])
    if old_id not in state.clusters:
        raise RuntimeError("label points at a missing cluster")
    if cache is None:
        cache = _LabelSweepCache(state)
    state.labels[i] = -1
    cache.sizes[old_id] -= 1

    carried = None
    if cache.sizes[old_id] == 0:
        carried = state.clusters.pop(old_id)
        cache.drop(old_id)
    ids = sorted(cache.sizes)
    counts = np.array([cache.sizes[cid] for cid in ids], dtype=np.float64)
    t = len(ids)

    if config.label_mode == "MFM":
        log_new = np.log(hyper.gamma) + table.log_ratio(t) if t < table.t_max else -np.inf
    else:
        log_new = np.log(hyper.gamma)

    existing_logpdfs = np.array(
        [cache.density_column(cid, state)[i] for cid in ids], dtype=np.float64
    )

    if pool is None:
        pool = _fresh_pool(hyper, p, rng, size=m)
    n_fresh = m - 1 if carried is not None else m
    fresh_idx = pool.take(n_fresh)
    aux_logpdfs = []
    if carried is not None:
        aux_logpdfs.append(carried.log_density(z_i))
    if n_fresh:
        diff = z_i[None, :] - pool.means[fresh_idx]
        proj = np.einsum("mp,mpq->mq", diff, pool.chols[fresh_idx])
        quad = np.einsum("mq,mq->m", proj, proj)
        aux_logpdfs.extend(
            0.5 * (pool.logdets[fresh_idx] - p * np.log(2.0 * np.pi)) - 0.5 * quad
        )
    log_w = label_log_weights(counts, hyper.gamma, existing_logpdfs, log_new, aux_logpdfs)

    shift = log_w.max()
    weights = np.exp(log_w - shift)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise RuntimeError("label weights failed to normalize")
    probs = weights / total
    if abs(probs.sum() - 1.0) > 1e-12:
        raise RuntimeError("label weights failed to normalize")
    cum = np.cumsum(probs)
    choice = min(int(np.searchsorted(cum, rng.random(), side="right")), len(probs) - 1)

    if choice < t:
        chosen = int(ids[choice])
        state.labels[i] = chosen
        cache.sizes[chosen] += 1
    else:
        new_id = max(state.clusters, default=0) + 1
        slot = choice - t
        if carried is not None and slot == 0:
            state.clusters[new_id] = carried
        else:
            pool_slot = fresh_idx[slot - 1 if carried is not None else slot]
            state.clusters[new_id] = _params_from_pool(pool, int(pool_slot))
        state.labels[i] = new_id
        cache.drop(new_id)  # a dead cluster may have used this id
        cache.sizes[new_id] = 1
    return state


def _cell_bounds(state: GibbsState, dataset: OrdinalDataset) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty((dataset.n, dataset.p))
    hi = np.empty((dataset.n, dataset.p))
    for j in range(dataset.p):
        padded = state.thresholds.padded(j)
        lo[:, j] = padded[dataset.values[:, j] - 1]
        hi[:, j] = padded[dataset.values[:, j]]
    return lo, hi


def _swap_sweep(
    state: GibbsState,
    dataset: OrdinalDataset,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> None:
    """Joint Metropolis-Hastings moves of (label, latent row) between clusters.

    The single-site label kernel conditions on the current latent row, which
    co-adapts to its cluster and freezes small clusters in place; this sweep
    proposes a uniformly chosen existing cluster together with a fresh latent
    row drawn from the coordinate-sequential truncated proposal under that
    cluster, so the acceptance ratio effectively compares how well the two
    clusters explain the observed cell.  Singleton sources are skipped (no
    dimension change; births and deaths belong to the urn kernel).  Cluster
    parameters and thresholds are fixed during the sweep, so proposals are
    precomputed in blocks; only the exclusive member counts evolve.
    """
    ids = sorted(state.clusters)
    n = state.n
    labels0 = state.labels.copy()
    lo, hi = _cell_bounds(state, dataset)
    chols = {
        cid: np.linalg.cholesky(np.linalg.inv(state.clusters[cid].precision)) for cid in ids
    }

    target_pos = rng.integers(0, len(ids), size=n)
    proposal = np.empty((n, state.p))
    log_q_prop = np.empty(n)
    log_dens_prop = np.empty(n)
    for k, cid in enumerate(ids):
        rows = np.nonzero(target_pos == k)[0]
        if rows.size == 0:
            continue
        params = state.clusters[cid]
        drawn, log_q = sequential_cell_transform(
            params.mean, chols[cid], lo[rows], hi[rows], rng=rng
        )
        proposal[rows] = drawn
        log_q_prop[rows] = log_q
        log_dens_prop[rows] = np.atleast_1d(params.log_density(drawn))

    log_q_curr = np.empty(n)
    log_dens_curr = np.empty(n)
    for cid in ids:
        rows = np.nonzero(labels0 == cid)[0]
        if rows.size == 0:
            continue
        params = state.clusters[cid]
        _, log_q = sequential_cell_transform(
            params.mean, chols[cid], lo[rows], hi[rows], values=state.latent[rows]
        )
        log_q_curr[rows] = log_q
        log_dens_curr[rows] = np.atleast_1d(params.log_density(state.latent[rows]))

    log_u = np.log(rng.random(n))
    sizes = state.cluster_sizes()
    for i in range(n):
        source = int(labels0[i])
        if sizes[source] == 1:
            continue
        target = ids[target_pos[i]]
        n_src = sizes[source] - 1
        n_tgt = sizes[target] - (1 if target == source else 0)
        log_alpha = (
            np.log(n_tgt + hyper.gamma)
            - np.log(n_src + hyper.gamma)
            + log_dens_prop[i]
            - log_dens_curr[i]
            + log_q_curr[i]
            - log_q_prop[i]
        )
        if log_u[i] < log_alpha:
            state.labels[i] = target
            state.latent[i] = proposal[i]
            sizes[source] -= 1
            sizes[target] += 1


def _relabel(state: GibbsState) -> None:
    """Rename cluster ids to 1..K in order of first appearance in labels."""
    mapping: dict[int, int] = {}
    for lab in state.labels:
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
    state.labels = np.array([mapping[int(l)] for l in state.labels], dtype=np.int64)
    state.clusters = {mapping[cid]: params for cid, params in state.clusters.items()}


def update_cluster_params(
    state: GibbsState,
    hyper: Hyperparams,
    rng: np.random.Generator,
    prior: Optional[gwishart.GWishartParams] = None,
) -> GibbsState:
    """Refresh every occupied cluster: graph sweep, then precision and mean draws."""
    p = state.p
    if prior is None:
        prior = gwishart.GWishartParams(df=hyper.df, scale=hyper.resolved_scale(p))
    mu0 = hyper.resolved_mean(p)
    for cid in sorted(state.clusters):
        params = state.clusters[cid]
        rows = state.latent[state.labels == cid]
        stats = gwishart.SufficientStats.from_rows(rows)
        graph, precision = gwishart.update_graph(
            params.graph,
            params.precision,
            prior,
            hyper.edge_prob,
            stats,
            hyper.mean_scale,
            mu0,
            rng,
        )
        precision = gwishart.sample_precision_posterior(
            graph, prior, stats, hyper.mean_scale, mu0, rng
        )
        mean = gwishart.sample_mean_posterior(precision, stats, hyper.mean_scale, mu0, rng)
        state.clusters[cid] = ClusterParams(mean=mean, precision=precision, graph=graph)
    return state


def _latent_sweep(state: GibbsState, dataset: OrdinalDataset, rng: np.random.Generator) -> None:
    for cid in sorted(state.clusters):
        rows = np.nonzero(state.labels == cid)[0]
        state.latent[rows] = update_latent_rows(
            dataset.values[rows], state.latent[rows], state.clusters[cid], state.thresholds, rng
        )


def initial_thresholds(dataset: OrdinalDataset) -> Thresholds:
    """Standard-normal quantiles of the empirical cumulative level frequencies."""
    n = dataset.n
    floor = 1.0 / (2.0 * n)
    cuts = []
    for j in range(dataset.p):
        k_j = int(dataset.level_counts[j])
        counts = np.bincount(dataset.values[:, j], minlength=k_j + 1)[1:]
        cum = np.clip(np.cumsum(counts)[:-1] / n, floor, 1.0 - floor)
        c = ndtri(cum)
        for k in range(1, c.shape[0]):  # unobserved levels give tied quantiles
            if c[k] <= c[k - 1]:
                c[k] = c[k - 1] + 1e-6
        cuts.append(c)
    return Thresholds(tuple(cuts))


def initial_latent(dataset: OrdinalDataset, thresholds: Thresholds) -> np.ndarray:
    """Cell midpoints, with unbounded cells placed half a unit past the cut."""
    z = np.empty((dataset.n, dataset.p))
    for j in range(dataset.p):
        padded = thresholds.padded(j)
        lo = padded[dataset.values[:, j] - 1]
        hi = padded[dataset.values[:, j]]
        mid = 0.5 * (lo + hi)
        mid = np.where(np.isinf(lo), hi - 0.5, mid)
        mid = np.where(np.isinf(hi), lo + 0.5, mid)
        z[:, j] = mid
    return z


def _prior_cluster_draw(hyper: Hyperparams, p: int, rng: np.random.Generator) -> ClusterParams:
    prior = gwishart.GWishartParams(df=hyper.df, scale=hyper.resolved_scale(p))
    graph = gwishart.sample_graph_prior(p, hyper.edge_prob, rng)
    precision = gwishart.sample_gwishart(graph, prior, rng)
    mean = gwishart.sample_mean_posterior(
        precision, gwishart.SufficientStats.empty(p), hyper.mean_scale, hyper.resolved_mean(p), rng
    )
    return ClusterParams(mean=mean, precision=precision, graph=graph)


def _gibbs_iteration(
    state: GibbsState,
    dataset: OrdinalDataset,
    table: LogVnTable,
    config: ChainConfig,
    rng: np.random.Generator,
    prior: gwishart.GWishartParams,
    threshold_brackets=None,
    threshold_kernel: Optional[Callable] = None,
) -> None:
    pool = _AuxPool(config.hyper, state.p, rng, size=state.n * config.aux_components)
    cache = _LabelSweepCache(state)
    for i in range(state.n):
        update_label(i, state, table, config, rng, pool=pool, cache=cache)
    if config.swap_moves:
        _swap_sweep(state, dataset, config.hyper, rng)
    _relabel(state)
    update_cluster_params(state, config.hyper, rng, prior=prior)
    _latent_sweep(state, dataset, rng)
    kernel = threshold_kernel if threshold_kernel is not None else update_thresholds
    state.thresholds = kernel(
        state.latent, dataset, state.thresholds, rng, prior_brackets=threshold_brackets
    )


def run_chain(dataset: OrdinalDataset, config: ChainConfig) -> PosteriorSamples:
    """Run the full chain and record post-burn-in snapshots.

    Starts from a single cluster drawn from the prior, thresholds at the
    empirical standard-normal quantiles, and latent values at cell midpoints.
    """
    problems = validate_dataset(dataset)
    if problems:
        raise ValueError(f"invalid dataset: {problems[0]}" )
    rng = np.random.default_rng(config.seed)
    hyper = config.hyper
    p = dataset.p
    n = dataset.n
    prior = gwishart.GWishartParams(df=hyper.df, scale=hyper.resolved_scale(p))
    table = compute_log_vn(n, hyper.gamma, hyper.k_prior, t_max=min(n, 50))

    thresholds = initial_thresholds(dataset)
    state = GibbsState(
        labels=np.ones(n, dtype=np.int64),
        clusters={1: _prior_cluster_draw(hyper, p, rng)},
        latent=initial_latent(dataset, thresholds),
        thresholds=thresholds,
    )

    labels_kept = []
    k_kept = []
    graphs_kept: list[np.ndarray] = []
    means_kept: Optional[list[np.ndarray]] = [] if config.record_params else None
    precs_kept: Optional[list[np.ndarray]] = [] if config.record_params else None

    for it in range(config.iterations):
        _gibbs_iteration(state, dataset, table, config, rng, prior)
        if config.check_every and (it + 1) % config.check_every == 0:
            problems = validate_state(state, dataset)
            if problems:
                raise RuntimeError(f"invariant violation at iteration {it}: {problems[0]}")
        if it >= config.burn_in:
            ids = sorted(state.clusters)
            labels_kept.append(state.labels.astype(np.int32).copy())
            k_kept.append(len(ids))
            graphs_kept.append(
                np.stack([state.clusters[cid].graph.adjacency for cid in ids])
            )
            if config.record_params:
                means_kept.append(np.stack([state.clusters[cid].mean for cid in ids]))
                precs_kept.append(np.stack([state.clusters[cid].precision for cid in ids]))

    return PosteriorSamples(
        labels=np.stack(labels_kept),
        n_clusters=np.array(k_kept, dtype=np.int64),
        graphs=graphs_kept,
        means=means_kept,
        precisions=precs_kept,
        seed=config.seed,
        label_mode=config.label_mode,
        iterations=config.iterations,
        burn_in=config.burn_in,
    )


GEWEKE_STAT_NAMES = (
    "n_clusters",
    "latent_mean",
    "latent_abs_mean",
    "first_cluster_edges",
    "first_cluster_mean_0",
    "first_cluster_precision_00",
    "threshold_0_0",
    "threshold_0_last",
    "first_cluster_size",
    "n_singletons",
)


@dataclass(frozen=True)
class GewekeReport:
    """Per-statistic z-scores between forward and successive-conditional runs."""

    z_scores: dict[str, float]
    forward_means: dict[str, float]
    chain_means: dict[str, float]

    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z_scores.values())


def _sample_cluster_count(hyper: Hyperparams, rng: np.random.Generator, k_cap: int = 200) -> int:
    ks = np.arange(1, k_cap + 1)
    log_p = hyper.k_prior(ks)
    probs = np.exp(log_p - logsumexp(log_p))
    return int(rng.choice(ks, p=probs / probs.sum()))


def _forward_draw(
    p: int,
    n: int,
    levels: int,
    hyper: Hyperparams,
    rng: np.random.Generator,
    bracket_bounds: np.ndarray,
) -> tuple[GibbsState, OrdinalDataset]:
    """One exact draw from the hierarchical model with a proper threshold prior."""
    k = _sample_cluster_count(hyper, rng)
    weights = rng.dirichlet(np.full(k, hyper.gamma))
    raw_labels = rng.choice(k, size=n, p=weights)
    clusters: dict[int, ClusterParams] = {}
    labels = np.empty(n, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, raw in enumerate(raw_labels):
        raw = int(raw)
        if raw not in mapping:
            mapping[raw] = len(mapping) + 1
            clusters[mapping[raw]] = _prior_cluster_draw(hyper, p, rng)
        labels[i] = mapping[raw]
    cuts = tuple(
        rng.uniform(bracket_bounds[:, 0], bracket_bounds[:, 1]) for _ in range(p)
    )
    thresholds = Thresholds(cuts)
    latent = np.empty((n, p))
    for cid, params in clusters.items():
        rows = np.nonzero(labels == cid)[0]
        noise = rng.standard_normal((rows.shape[0], p))
        latent[rows] = params.mean + np.linalg.solve(
            params.chol_precision.T, noise.T
        ).T
    values = discretize_latent(latent, cuts)
    dataset = OrdinalDataset(values=values, level_counts=np.full(p, levels))
    state = GibbsState(labels=labels, clusters=clusters, latent=latent, thresholds=thresholds)
    return state, dataset


def _regenerate_data(
    state: GibbsState, levels: int, rng: np.random.Generator
) -> OrdinalDataset:
    """Redraw (latent, observed) given the current parameters and thresholds."""
    n, p = state.latent.shape
    for cid in sorted(state.clusters):
        params = state.clusters[cid]
        rows = np.nonzero(state.labels == cid)[0]
        noise = rng.standard_normal((rows.shape[0], p))
        state.latent[rows] = params.mean + np.linalg.solve(
            params.chol_precision.T, noise.T
        ).T
    values = discretize_latent(state.latent, [c for c in state.thresholds.cuts])
    return OrdinalDataset(values=values, level_counts=np.full(p, levels))


def _geweke_stats(state: GibbsState) -> np.ndarray:
    ids, counts = np.unique(state.labels, return_counts=True)
    first = state.clusters[int(state.labels[0])]
    first_size = counts[ids == state.labels[0]][0]
    # statistics are chosen to have finite variance under the default priors
    # (raw second moments do not: the precision prior has heavy inverse tails)
    return np.array(
        [
            len(state.clusters),
            state.latent.mean(),
            np.abs(state.latent).mean(),
            first.graph.n_edges,
            first.mean[0],
            first.precision[0, 0],
            state.thresholds.cuts[0][0],
            state.thresholds.cuts[0][-1],
            first_size,
            int((counts == 1).sum()),
        ]
    )


def _broken_threshold_update(latent_mat, dataset, thresholds, rng, prior_brackets=None):
    """Threshold kernel with the data upper bound deliberately omitted.

    Used only to confirm the joint-distribution test detects a broken kernel.
    """
    new_cuts = []
    for j in range(dataset.p):
        padded = thresholds.padded(j)
        levels_j = dataset.values[:, j]
        z_j = latent_mat[:, j]
        for k in range(1, int(dataset.level_counts[j])):
            lo = padded[k - 1]
            hi = padded[k + 1]
            at_k = z_j[levels_j == k]
            if at_k.size:
                lo = max(lo, float(at_k.max()))
            if prior_brackets is not None:
                lo = max(lo, float(prior_brackets[j][k - 1, 0]))
                hi = min(hi, float(prior_brackets[j][k - 1, 1]))
            if hi - lo < 1e-12:
                continue
            padded[k] = rng.uniform(lo, hi)
        new_cuts.append(padded[1:-1].copy())
    return Thresholds(tuple(new_cuts))


def _batch_means_se(series: np.ndarray) -> float:
    n_batches = max(2, int(np.sqrt(series.shape[0])))
    usable = (series.shape[0] // n_batches) * n_batches
    batches = series[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


def geweke_joint_test(
    config: ChainConfig,
    p: int,
    n: int,
    rounds: int,
    rng: np.random.Generator,
    levels: int = 3,
    break_threshold_kernel: bool = False,
) -> GewekeReport:
    """Joint-distribution calibration of the transition kernels.

    Compares summary statistics between (a) independent forward draws from
    the hierarchical model and (b) a successive-conditional chain that
    alternates one full Gibbs iteration with data regeneration.  The diffuse
    threshold prior is replaced by a proper one (uniform on disjoint
    standard-normal quantile brackets) so the forward draw is well defined;
    the same brackets are intersected into the production threshold kernel.
    """
    hyper = config.hyper
    bounds = quantile_bracket_bounds(levels)
    brackets = [bounds for _ in range(p)]
    prior = gwishart.GWishartParams(df=hyper.df, scale=hyper.resolved_scale(p))
    table = compute_log_vn(n, hyper.gamma, hyper.k_prior, t_max=n)

    forward = np.empty((rounds, len(GEWEKE_STAT_NAMES)))
    for r in range(rounds):
        state, _ = _forward_draw(p, n, levels, hyper, rng, bounds)
        forward[r] = _geweke_stats(state)

    kernel = _broken_threshold_update if break_threshold_kernel else None
    state, dataset = _forward_draw(p, n, levels, hyper, rng, bounds)
    chain = np.empty((rounds, len(GEWEKE_STAT_NAMES)))
    for r in range(rounds):
        _gibbs_iteration(
            state,
            dataset,
            table,
            config,
            rng,
            prior,
            threshold_brackets=brackets,
            threshold_kernel=kernel,
        )
        dataset = _regenerate_data(state, levels, rng)
        chain[r] = _geweke_stats(state)

    z_scores = {}
    fwd_means = {}
    chain_means = {}
    for s, name in enumerate(GEWEKE_STAT_NAMES):
        se_f = forward[:, s].std(ddof=1) / np.sqrt(rounds)
        se_c = _batch_means_se(chain[:, s])
        denom = np.sqrt(se_f**2 + se_c**2)
        z_scores[name] = float((forward[:, s].mean() - chain[:, s].mean()) / denom)
        fwd_means[name] = float(forward[:, s].mean())
        chain_means[name] = float(chain[:, s].mean())
    return GewekeReport(z_scores=z_scores, forward_means=fwd_means, chain_means=chain_means)


def log_new_cluster_marginal_mc(
    z: np.ndarray, hyper: Hyperparams, n_draws: int, rng: np.random.Generator
) -> float:
    """Monte Carlo log marginal of one latent row under a fresh cluster.

    Averages, over prior (graph, precision) draws, the closed-form density of
    z with the cluster mean integrated out: N(z; mu0, ((a/(a+1)) omega)^-1).
    Diagnostic only; the sampler itself uses auxiliary parameter slots.
    """
    p = z.shape[0]
    pool = _AuxPool(hyper, p, rng, size=n_draws)
    shrink = hyper.mean_scale / (hyper.mean_scale + 1.0)
    diff = z[None, :] - hyper.resolved_mean(p)[None, :]
    proj = np.einsum("mp,mpq->mq", np.broadcast_to(diff, (n_draws, p)), pool.chols)
    quad = np.einsum("mq,mq->m", proj, proj)
    terms = 0.5 * pool.logdets - 0.5 * shrink * quad
    return float(
        logsumexp(terms)
        - np.log(n_draws)
        + 0.5 * p * (np.log(shrink) - np.log(2.0 * np.pi))
    )
