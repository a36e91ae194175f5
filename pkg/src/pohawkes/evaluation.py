"""Scoring inferred graphs against ground truth.

Predicted and true graphs are compared as adjacency matrices whose entry
(i, j) = 1 means an edge from node j to node i. Observed nodes are matched
by index; latent indices are matched by searching permutations (exhaustive
up to a cap, assignment-based beyond it) for the one maximizing F1. The
ground truth is first *simplified* to the idealized representation the
discovery procedure targets: relay-only latents are contracted into direct
edges, latent self-loops are dropped (they are a reporting convention, not
an identifiable feature), and the self-loops and mutual edges of a
confounder's pair-absorbed effects are removed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graphs import SummaryGraph

__all__ = [
    "AdjacencyMatrix",
    "ScoreReport",
    "adjacency_from_graph",
    "simplify_ground_truth",
    "score",
    "batch_score",
    "PERMUTATION_CAP",
]

PERMUTATION_CAP = 8


@dataclass(frozen=True)
class AdjacencyMatrix:
    """0/1 matrix with (i, j) = 1 iff edge j -> i; observed nodes first."""

    matrix: np.ndarray
    n_observed: int

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_latent(self) -> int:
        return self.n_nodes - self.n_observed


@dataclass(frozen=True)
class ScoreReport:
    precision: float
    recall: float
    f1: float
    best_permutation: tuple
    padding_added: int
    used_assignment: bool = False


def adjacency_from_graph(g: SummaryGraph) -> AdjacencyMatrix:
    n = g.n_nodes
    m = np.zeros((n, n), dtype=int)
    for (src, dst) in g.edges:
        m[dst, src] = 1
    return AdjacencyMatrix(matrix=m, n_observed=g.n_observed)


def _latent_only_reach(g: SummaryGraph, start: int, relays: set) -> set:
    """Nodes reachable from ``start`` through relay latents only."""
    out, stack, seen = set(), [start], {start}
    while stack:
        node = stack.pop()
        for child in g.children(node):
            if child in relays:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
            else:
                out.add(child)
    return out


def simplify_ground_truth(g: SummaryGraph) -> AdjacencyMatrix:
    """Project a true graph onto the representation discovery can emit.

    Latents that reach fewer than two distinct non-relay nodes are relays:
    they are contracted into direct edges between their neighbours.
    Surviving latents keep an edge to each node of their contracted
    child set. Effects that a pair test absorbs (parents inside
    {latent, self, co-effect}) lose their self-loops and intra-pair edges.
    Latent self-loops are dropped throughout.
    """
    # Iteratively classify relays: a latent survives iff it reaches >= 2
    # distinct endpoints through relay-only paths.
    relays: set = set()
    while True:
        changed = False
        for latent in g.latent:
            reach = _latent_only_reach(g, latent, relays - {latent})
            reach.discard(latent)
            is_relay = len(reach) < 2
            if is_relay and latent not in relays:
                relays.add(latent)
                changed = True
            elif not is_relay and latent in relays:
                relays.discard(latent)
                changed = True
        if not changed:
            break

    keep = [v for v in range(g.n_nodes) if v not in relays]
    relabel = {v: i for i, v in enumerate(keep)}
    n = len(keep)
    adj = np.zeros((n, n), dtype=int)
    for v in keep:
        for dst in sorted(_latent_only_reach(g, v, relays)):
            if dst in relays:
                continue
            if v == dst and v in set(g.latent):
                continue  # latent self-loops are a convention, not evidence
            adj[relabel[dst], relabel[v]] = 1

    # Pair-absorbed effects: parents within {latent, self, co-effects}.
    for latent in g.latent:
        if latent in relays:
            continue
        effects = sorted(
            e for e in _latent_only_reach(g, latent, relays) if e not in relays and e != latent
        )
        absorbed = []
        for e in effects:
            parents = {p for p in keep if adj[relabel[e], relabel[p]] == 1}
            if parents <= ({latent, e} | set(effects)):
                absorbed.append(e)
        if len(absorbed) < 2:
            continue  # pair absorption needs at least two such effects
        for e in absorbed:
            adj[relabel[e], relabel[e]] = 0
            for f in absorbed:
                if f != e:
                    adj[relabel[e], relabel[f]] = 0

    n_obs = sum(1 for v in keep if v < g.n_observed)
    return AdjacencyMatrix(matrix=adj, n_observed=n_obs)


def prediction_adjacency(adj: AdjacencyMatrix) -> AdjacencyMatrix:
    """Strip latent self-loops from a predicted adjacency (convention)."""
    m = adj.matrix.copy()
    for i in range(adj.n_observed, adj.n_nodes):
        m[i, i] = 0
    return AdjacencyMatrix(matrix=m, n_observed=adj.n_observed)


def _pad_latents(adj: AdjacencyMatrix, q: int) -> np.ndarray:
    """Embed into a matrix with q latent slots; padded latents stay isolated."""
    n_new = adj.n_observed + q
    m = np.zeros((n_new, n_new), dtype=int)
    m[: adj.n_nodes, : adj.n_nodes] = adj.matrix
    return m


def _f1_counts(pred: np.ndarray, truth: np.ndarray):
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def score(pred: AdjacencyMatrix, truth: AdjacencyMatrix) -> ScoreReport:
    """Permutation-matched precision/recall/F1 of two adjacency matrices."""
    if pred.n_observed != truth.n_observed:
        raise ValueError("observed blocks differ in size")
    pred = prediction_adjacency(pred)
    truth = prediction_adjacency(truth)
    q = max(pred.n_latent, truth.n_latent)
    padding = 2 * q - pred.n_latent - truth.n_latent
    p_m = _pad_latents(pred, q)
    t_m = _pad_latents(truth, q)
    p = pred.n_observed

    if q == 0:
        precision, recall, f1 = _f1_counts(p_m, t_m)
        return ScoreReport(precision, recall, f1, (), padding, False)

    def apply_perm(mat, perm):
        idx = list(range(p)) + [p + j for j in perm]
        return mat[np.ix_(idx, idx)]

    if q <= PERMUTATION_CAP:
        best = None
        for perm in itertools.permutations(range(q)):
            stats = _f1_counts(apply_perm(p_m, perm), t_m)
            if best is None or stats[2] > best[0][2]:
                best = (stats, perm)
        (precision, recall, f1), perm = best
        return ScoreReport(precision, recall, f1, tuple(perm), padding, False)

    # Assignment fallback: overlap scores between per-latent edge profiles.
    gain = np.zeros((q, q))
    for i in range(q):
        for j in range(q):
            pi = np.concatenate([p_m[p + i, :], p_m[:, p + i]])
            tj = np.concatenate([t_m[p + j, :], t_m[:, p + j]])
            gain[i, j] = np.sum((pi == 1) & (tj == 1))
    rows, cols = linear_sum_assignment(-gain)
    perm = tuple(int(cols[list(rows).index(i)]) for i in range(q))
    precision, recall, f1 = _f1_counts(apply_perm(p_m, perm), t_m)
    return ScoreReport(precision, recall, f1, perm, padding, True)


def batch_score(reports) -> dict:
    """Mean and sample standard deviation of each metric over runs."""
    reports = list(reports)
    if not reports:
        raise ValueError("no runs to aggregate")
    out = {}
    for metric in ("precision", "recall", "f1"):
        vals = np.array([getattr(r, metric) for r in reports], dtype=float)
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[metric] = (float(vals.mean()), sd)
    return out
