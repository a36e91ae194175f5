"""Summary and window causal graphs over self-exciting subprocesses.

A summary graph has one node per subprocess; directed edges (cycles and
self-loops allowed) carry a positive excitation constant, and a shared
decay kernel applies to every edge. Discretizing time unrolls the summary
graph into a *window graph*: a DAG over (node, lag) variables whose edges
always point from older bins to newer ones. All separation queries run on
the window graph; the summary graph itself is never queried for
d-separation.

Graphs are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "NodeKind",
    "ExponentialDecay",
    "SummaryGraph",
    "WindowGraph",
    "PathSituationReport",
    "PathEnumerationError",
    "expand_window",
    "d_separated",
    "check_path_situation",
]


class NodeKind(Enum):
    OBSERVED = "observed"
    LATENT = "latent"


class PathEnumerationError(RuntimeError):
    """Raised when simple-path enumeration exceeds its configured cap."""


@dataclass(frozen=True)
class ExponentialDecay:
    """Decay kernel w(s) = exp(-beta * s), shared by every edge.

    The kernel is intentionally not normalized: its tail integral is
    1 / beta, so the integrated influence of an edge with constant a is
    a / beta.
    """

    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"decay rate must be positive, got {self.beta}")

    def tail_integral(self) -> float:
        """Integral of w over (0, inf)."""
        return 1.0 / self.beta

    def bin_integral(self, k: int, delta: float) -> float:
        """Integral of w over the k-th bin ((k-1)*delta, k*delta], k >= 1."""
        b = self.beta
        return (math.exp(-b * (k - 1) * delta) - math.exp(-b * k * delta)) / b

    def value(self, s: float) -> float:
        return math.exp(-self.beta * s)


@dataclass(frozen=True)
class SummaryGraph:
    """Directed graph over subprocesses with excitation parameters.

    Node indices are contiguous: observed nodes are 0..p-1, latent nodes
    p..p+q-1. ``edges`` maps (src, dst) to the positive excitation constant
    of the edge src -> dst; absent edges store nothing.
    """

    n_observed: int
    n_latent: int
    mu: tuple
    edges: dict
    decay: ExponentialDecay = field(default_factory=lambda: ExponentialDecay(1.0))

    def __post_init__(self):
        l = self.n_observed + self.n_latent
        if len(self.mu) != l:
            raise ValueError(f"mu has {len(self.mu)} entries for {l} nodes")
        if any(m < 0 for m in self.mu):
            raise ValueError("background intensities must be non-negative")
        for (src, dst), a in self.edges.items():
            if not (0 <= src < l and 0 <= dst < l):
                raise ValueError(f"edge ({src}, {dst}) references unknown node")
            if a <= 0:
                raise ValueError(f"edge ({src}, {dst}) has non-positive weight {a}")

    @property
    def n_nodes(self) -> int:
        return self.n_observed + self.n_latent

    @property
    def observed(self) -> range:
        return range(self.n_observed)

    @property
    def latent(self) -> range:
        return range(self.n_observed, self.n_nodes)

    def kind(self, node: int) -> NodeKind:
        return NodeKind.OBSERVED if node < self.n_observed else NodeKind.LATENT

    def is_latent(self, node: int) -> bool:
        return node >= self.n_observed

    def parents(self, node: int) -> list:
        return sorted(src for (src, dst) in self.edges if dst == node)

    def children(self, node: int) -> list:
        return sorted(dst for (src, dst) in self.edges if src == node)

    def influence_matrix(self) -> np.ndarray:
        """Integrated influence: entry (i, j) is a_ij * integral of w."""
        l = self.n_nodes
        phi = np.zeros((l, l))
        tail = self.decay.tail_integral()
        for (src, dst), a in self.edges.items():
            phi[dst, src] = a * tail
        return phi

    def spectral_radius(self) -> float:
        phi = self.influence_matrix()
        if not phi.any():
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(phi))))

    def is_stationary(self, eps: float = 1e-9) -> bool:
        return self.spectral_radius() < 1.0 - eps

    def replace_edges(self, edges: dict) -> "SummaryGraph":
        return SummaryGraph(self.n_observed, self.n_latent, self.mu, dict(edges), self.decay)

    def drop_nodes(self, nodes: Iterable[int]) -> "SummaryGraph":
        """Remove nodes (and incident edges), relabeling to stay contiguous."""
        drop = set(nodes)
        keep = [v for v in range(self.n_nodes) if v not in drop]
        relabel = {old: new for new, old in enumerate(keep)}
        n_obs = sum(1 for v in keep if v < self.n_observed)
        edges = {
            (relabel[s], relabel[d]): a
            for (s, d), a in self.edges.items()
            if s not in drop and d not in drop
        }
        mu = tuple(self.mu[v] for v in keep)
        return SummaryGraph(n_obs, len(keep) - n_obs, mu, edges, self.decay)

    # -- plain-text edge-list serialization ---------------------------------

    def to_text(self) -> str:
        lines = []
        for v in range(self.n_nodes):
            lines.append(f"node {v} {self.kind(v).value} mu={self.mu[v]!r}")
        lines.append(f"decay exp beta={self.decay.beta!r}")
        for (src, dst) in sorted(self.edges):
            lines.append(f"{src} {dst} {self.edges[(src, dst)]!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SummaryGraph":
        kinds, mu_map, edges = {}, {}, {}
        beta = None
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "node":
                idx = int(parts[1])
                kinds[idx] = parts[2]
                mu_map[idx] = float(parts[3].split("=", 1)[1])
            elif parts[0] == "decay":
                if parts[1] != "exp":
                    raise ValueError(f"line {ln}: unsupported decay form {parts[1]!r}")
                beta = float(parts[2].split("=", 1)[1])
            else:
                src, dst, a = int(parts[0]), int(parts[1]), float(parts[2])
                edges[(src, dst)] = a
        if beta is None:
            raise ValueError("missing decay line")
        n = len(kinds)
        if sorted(kinds) != list(range(n)):
            raise ValueError("node indices must be contiguous from 0")
        n_obs = sum(1 for k in kinds.values() if k == "observed")
        for idx in range(n):
            expected = "observed" if idx < n_obs else "latent"
            if kinds[idx] != expected:
                raise ValueError("observed nodes must precede latent nodes")
        mu = tuple(mu_map[i] for i in range(n))
        return SummaryGraph(n_obs, n - n_obs, mu, edges, ExponentialDecay(beta))


def integrated_influence(g: SummaryGraph) -> np.ndarray:
    return g.influence_matrix()


def assert_stationary(g: SummaryGraph, eps: float = 1e-9) -> bool:
    return g.is_stationary(eps)


# ---------------------------------------------------------------------------
# Window graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowGraph:
    """DAG over (node, lag) variables; lag 0 is the current bin.

    An edge (j, k') -> (i, k) exists iff the summary edge j -> i exists and
    1 <= k' - k <= k_eff. Acyclicity is guaranteed because edges always
    decrease the lag.
    """

    n_nodes: int
    m: int
    k_eff: int
    parent_map: dict  # (node, lag) -> tuple of (node, lag)

    @property
    def variables(self) -> list:
        return [(v, k) for v in range(self.n_nodes) for k in range(self.m + 1)]

    def parents(self, var) -> tuple:
        return self.parent_map.get(var, ())

    def children(self, var) -> list:
        return [w for w, ps in self.parent_map.items() if var in ps]

    def topological_order(self) -> list:
        # Larger lags precede smaller ones; within a lag, node order.
        return [(v, k) for k in range(self.m, -1, -1) for v in range(self.n_nodes)]


def expand_window(g: SummaryGraph, m: int, k_eff: int | None = None) -> WindowGraph:
    """Unroll a summary graph into its window graph with lags 0..m."""
    if k_eff is None:
        k_eff = m
    if k_eff < 1:
        raise ValueError(f"k_eff must be >= 1, got {k_eff}")
    if m < k_eff:
        raise ValueError(f"lag budget m={m} smaller than k_eff={k_eff}")
    parent_map = {}
    for dst in range(g.n_nodes):
        srcs = [s for (s, d) in g.edges if d == dst]
        if not srcs:
            continue
        for k in range(m + 1):
            ps = []
            for src in sorted(srcs):
                for off in range(1, k_eff + 1):
                    if k + off <= m:
                        ps.append((src, k + off))
            if ps:
                parent_map[(dst, k)] = tuple(ps)
    return WindowGraph(g.n_nodes, m, k_eff, parent_map)


def _ancestors(w: WindowGraph, seeds: set) -> set:
    out = set(seeds)
    stack = list(seeds)
    while stack:
        var = stack.pop()
        for p in w.parents(var):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def d_separated(w: WindowGraph, a: Iterable, b: Iterable, c: Iterable) -> bool:
    """Standard d-separation query on the window DAG (Bayes-ball).

    The three variable sets must be pairwise disjoint. Returns True when
    every path between ``a`` and ``b`` is blocked by ``c``.
    """
    a, b, c = set(a), set(b), set(c)
    if (a & b) or (a & c) or (b & c):
        raise ValueError("variable sets must be pairwise disjoint")
    allvars = set(w.variables)
    for var in a | b | c:
        if var not in allvars:
            raise ValueError(f"unknown window variable {var}")

    children: dict = {}
    for dst, ps in w.parent_map.items():
        for p in ps:
            children.setdefault(p, []).append(dst)

    an_c = _ancestors(w, c) if c else set()

    # Ball states: (variable, direction); direction "up" = entered from a
    # child (moving toward parents), "down" = entered from a parent.
    visited = set()
    frontier = [(v, "up") for v in a]
    while frontier:
        var, direction = frontier.pop()
        if (var, direction) in visited:
            continue
        visited.add((var, direction))
        if var in b and var not in c:
            return False
        if direction == "up" and var not in c:
            for p in w.parents(var):
                frontier.append((p, "up"))
            for ch in children.get(var, ()):
                frontier.append((ch, "down"))
        elif direction == "down":
            if var not in c:
                for ch in children.get(var, ()):
                    frontier.append((ch, "down"))
            if var in an_c:  # collider (or its ancestor) opened by c
                for p in w.parents(var):
                    frontier.append((p, "up"))
    return True


# ---------------------------------------------------------------------------
# Symmetric acyclic path situation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSituationReport:
    holds: bool
    path_length: int | None
    violations: tuple


def _latent_only_paths(g: SummaryGraph, start: int, goal: int, forbidden: set, cap: int):
    """Simple directed paths start -> goal whose interior is latent-only.

    Interior nodes must be latent, must not repeat, and must avoid
    ``forbidden`` (the confounder and its effect set). Yields interior
    node tuples.
    """
    count = 0
    stack = [(start, (), {start})]
    while stack:
        node, interior, seen = stack.pop()
        for nxt in g.children(node):
            if nxt == goal:
                count += 1
                if count > cap:
                    raise PathEnumerationError(
                        f"more than {cap} latent-only paths from {start} to {goal}"
                    )
                yield interior
                continue
            if nxt in seen or nxt in forbidden or not g.is_latent(nxt):
                continue
            stack.append((nxt, interior + (nxt,), seen | {nxt}))


def check_path_situation(
    g: SummaryGraph,
    latent: int,
    effects: Sequence[int],
    max_paths: int = 10_000,
) -> PathSituationReport:
    """Check the symmetric acyclic path condition for one latent confounder.

    Holds when (i) the latent reaches every effect through latent-only
    directed paths whose interiors avoid the confounder and effects,
    (ii) all such paths share one interior length, and (iii) no interior
    node has a self-loop. Path enumeration is over simple paths and capped
    at ``max_paths``; exceeding the cap raises instead of silently passing.
    """
    if not g.is_latent(latent):
        raise ValueError(f"node {latent} is not latent")
    effects = sorted(set(effects))
    if len(effects) < 2:
        raise ValueError("need at least two effect subprocesses")
    for e in effects:
        if g.is_latent(e):
            raise ValueError(f"effect {e} is not observed")

    forbidden = {latent} | set(effects)
    violations = []
    lengths = set()
    interiors = set()
    for e in effects:
        found = False
        for interior in _latent_only_paths(g, latent, e, forbidden, max_paths):
            found = True
            lengths.add(len(interior))
            interiors.update(interior)
        if not found:
            violations.append(f"no latent-only directed path from {latent} to {e}")
    if not violations and len(lengths) > 1:
        violations.append(f"path lengths differ: {sorted(lengths)}")
    for v in sorted(interiors):
        if (v, v) in g.edges:
            violations.append(f"intermediate latent {v} has a self-loop")

    holds = not violations
    return PathSituationReport(
        holds=holds,
        path_length=(lengths.pop() if holds else None),
        violations=tuple(violations),
    )
