"""Post-MCMC inference: partition selection, clustering and graph metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import Graph


@dataclass(frozen=True)
class CoMembershipMatrix:
    """Symmetric 0/1 matrix with entry (i, j) = 1 iff i and j share a cluster."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=np.uint8))


def comembership(labels: Sequence[int]) -> CoMembershipMatrix:
    lab = np.asarray(labels)
    return CoMembershipMatrix((lab[:, None] == lab[None, :]).astype(np.uint8))


def mean_comembership(label_draws: np.ndarray) -> np.ndarray:
    """Elementwise average of per-draw co-membership matrices."""
    draws = np.asarray(label_draws)
    n = draws.shape[1]
    acc = np.zeros((n, n))
    for lab in draws:
        acc += lab[:, None] == lab[None, :]
    return acc / draws.shape[0]


def dahl_select(label_draws: np.ndarray) -> int:
    """Index of the draw whose co-membership matrix is Frobenius-closest to the mean.

    Ties break to the smallest index.
    """
    draws = np.asarray(label_draws)
    if draws.ndim != 2 or draws.shape[0] == 0:
        raise ValueError("need at least one posterior draw of labels")
    mean = mean_comembership(draws)
    best_idx = 0
    best = np.inf
    for m, lab in enumerate(draws):
        b = (lab[:, None] == lab[None, :]).astype(np.float64)
        crit = float(((b - mean) ** 2).sum())
        if crit < best:
            best = crit
            best_idx = m
    return best_idx


def _comb2(x: np.ndarray) -> np.ndarray:
    return x * (x - 1) / 2.0


def ari(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Adjusted Rand index via the contingency-table closed form.

    Equivalent to the pair-counting definition (concordant-same and
    concordant-different pairs over all pairs, chance-corrected).  Degenerate
    comparisons where the correction denominator vanishes (e.g. both
    partitions trivial) return 1.0 when the partitions agree exactly.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label sequences must have equal length")
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1))
    np.add.at(table, (a_idx, b_idx), 1)
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(np.array([a.shape[0]]))[0]
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0 if sum_cells == max_index else 0.0
    return float((sum_cells - expected) / (max_index - expected))


def rmse_graph(
    estimated: Sequence[Sequence[np.ndarray]], truth: Sequence[Sequence[np.ndarray]]
) -> float:
    """Root-mean-square adjacency disagreement across replicates and observations.

    Each argument is, per replicate, the sequence of adjacency matrices
    assigned to every observation (the graph of its cluster).  The inner
    count includes both symmetric entries of a disagreeing edge and is
    squared before averaging, matching an entrywise l0 norm on adjacency
    matrices.
    """
    if len(estimated) != len(truth):
        raise ValueError("replicate counts differ")
    total = 0.0
    n_terms = 0
    for est_rep, true_rep in zip(estimated, truth):
        if len(est_rep) != len(true_rep):
            raise ValueError("per-replicate observation counts differ")
        for est, true in zip(est_rep, true_rep):
            est = np.asarray(est)
            true = np.asarray(true)
            if est.shape != true.shape:
                raise ValueError("adjacency dimension mismatch")
            disagreements = float(np.sum(est != true))
            total += disagreements**2
            n_terms += 1
    if n_terms == 0:
        raise ValueError("no observations")
    return float(np.sqrt(total / n_terms))


def match_cluster(labels: np.ndarray, members: np.ndarray) -> int:
    """Cluster id in `labels` with the largest overlap with the member index set."""
    ids, counts = np.unique(labels[members], return_counts=True)
    return int(ids[np.argmax(counts)])


def edge_posterior(
    label_draws: np.ndarray,
    graph_draws: Sequence[np.ndarray],
    selected_labels: np.ndarray,
    group: int,
) -> np.ndarray:
    """Per-pair inclusion frequency for one group of the selected partition.

    Each posterior draw contributes the graph of whichever of its clusters
    maximally overlaps the group's member set.  Threshold the result at 0.5
    for a point-estimate graph.
    """
    members = np.nonzero(np.asarray(selected_labels) == group)[0]
    if members.size == 0:
        raise ValueError(f"group {group} has no members in the selected partition")
    acc = None
    for labels, graphs in zip(np.asarray(label_draws), graph_draws):
        matched = match_cluster(labels, members)
        adj = np.asarray(graphs[matched - 1], dtype=np.float64)
        acc = adj if acc is None else acc + adj
    return acc / len(graph_draws)


def betweenness(adjacency: np.ndarray) -> np.ndarray:
    """Shortest-path betweenness per node on an unweighted graph.

    Brandes accumulation over BFS shortest-path DAGs; pair counts are raw
    (unnormalized) and halved for undirectedness.
    """
    adj = np.asarray(adjacency)
    p = adj.shape[0]
    neighbors = [np.nonzero(adj[v])[0] for v in range(p)]
    centrality = np.zeros(p)
    for source in range(p):
        stack: list[int] = []
        preds: list[list[int]] = [[] for _ in range(p)]
        sigma = np.zeros(p)
        sigma[source] = 1.0
        dist = np.full(p, -1)
        dist[source] = 0
        queue = [source]
        while queue:
            v = queue.pop(0)
            stack.append(v)
            for w in neighbors[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(p)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != source:
                centrality[w] += delta[w]
    return centrality / 2.0


def graph_stats(graph: Graph) -> dict:
    """Network statistics of one estimated group graph.

    Degree centrality is degree/(p-1); betweenness is the raw average of
    shortest-path pair counts (no normalization), so absolute values are
    comparable only under the same convention.
    """
    adj = graph.adjacency
    degrees = adj.sum(axis=1).astype(int)
    p = graph.p
    centrality = degrees / (p - 1) if p > 1 else np.zeros(p)
    btw = betweenness(adj)
    return {
        "degrees": degrees.tolist(),
        "max_degree": int(degrees.max()) if p else 0,
        "total_degree": int(degrees.sum()),
        "avg_degree_centrality": float(centrality.mean()) if p else 0.0,
        "degree_centrality": centrality.tolist(),
        "betweenness": btw.tolist(),
        "avg_betweenness": float(btw.mean()) if p else 0.0,
    }
