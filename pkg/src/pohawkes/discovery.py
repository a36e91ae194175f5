"""Two-phase iterative recovery of the summary causal graph.

Phase one identifies parent-cause sets of active subprocesses through
exact-rank tests, enumerating candidate sets by increasing size. Phase two
looks for new latent confounders by testing all unordered pairs of active
subprocesses and merging overlapping positives into clusters. The engine
alternates the phases until the active set empties or a full alternation
makes no progress.

Conventions baked into the engine (matching what the rank statistics can
and cannot distinguish):

- A latent target always conditions on its surrogate's full lag window, so
  its own self-excitation is unidentifiable from the blocks; identified
  latents are recorded with a self-loop by convention, and evaluation
  ignores latent self-loops on both sides.
- Candidate parent sets for a *latent* target may contain observed nodes
  and already-resolved latents only; two unresolved latents are related
  exclusively through the pair phase. Observed targets may name any active
  latent as a candidate parent.
- When an observed node's identified parent set contains a latent, the
  node is added to that latent's effect registry, widening the sibling
  circuitry available to later tests.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .graphs import ExponentialDecay, SummaryGraph
from .rankstats import (
    SurrogateRegistry,
    count_intermediate_latents,
    test_latent_confounder_pair,
    test_parent_cause_latent,
    test_parent_cause_observed,
)

__all__ = [
    "DiscoveryConfig",
    "DiscoveryState",
    "DiscoveryResult",
    "run_discovery",
    "phase_one",
    "phase_two",
    "register_surrogate",
    "annotate_intermediates",
]


@dataclass(frozen=True)
class DiscoveryConfig:
    m: int
    tau: float | None = 0.10
    max_subset_size: int | None = None
    max_iterations: int = 50
    annotate_intermediates: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("lag budget m must be >= 1")
        if self.max_subset_size is not None and self.max_subset_size < 1:
            raise ValueError("max_subset_size must be >= 1")


@dataclass
class DiscoveryState:
    observed: tuple
    active: list  # ordered: observed ascending, then latents by creation
    parent_sets: dict = field(default_factory=dict)  # node -> tuple of parents
    registry: SurrogateRegistry = field(default_factory=SurrogateRegistry)
    latents: list = field(default_factory=list)  # creation order
    log: list = field(default_factory=list)

    def is_latent(self, node: int) -> bool:
        return node not in set(self.observed)

    def resolved_latents(self) -> list:
        return [l for l in self.latents if l in self.parent_sets]

    def record(self, **entry) -> None:
        self.log.append(entry)


@dataclass(frozen=True)
class DiscoveryResult:
    graph: SummaryGraph
    unresolved: tuple
    latent_ids: tuple
    parent_sets: dict
    log: tuple
    intermediate_counts: dict | None = None

    @property
    def fully_resolved(self) -> bool:
        return not self.unresolved


def _log_test(state, phase, kind, target, candidate, result, accepted):
    rho = None
    if result is not None:
        rho = [round(float(x), 9) for x in result.canonical_correlations]
    state.record(
        phase=phase,
        test=kind,
        target=target,
        candidate=sorted(candidate) if candidate is not None else None,
        estimated_rank=None if result is None else result.estimated_rank,
        rho=rho,
        accepted=bool(accepted),
    )


def _candidate_pool(state: DiscoveryState, target: int) -> list:
    """Nodes eligible as candidate parents of the target.

    Observed nodes are always eligible. Active (unresolved) latents are
    eligible only for observed targets; latent targets may only name
    latents whose own parent sets are already recorded.
    """
    pool = [o for o in state.observed if o != target]
    if state.is_latent(target):
        pool.extend(l for l in state.resolved_latents() if l != target)
    else:
        pool.extend(l for l in state.latents if l != target)
    return sorted(pool)


def _try_identify(state, source, cfg, target) -> bool:
    """Scan candidate sets of increasing size; record the first acceptance."""
    observed = state.observed
    pool = _candidate_pool(state, target)
    target_latent = state.is_latent(target)
    if not target_latent:
        pool = sorted(set(pool) | {target})  # self-loop candidate
    cap = len(pool) if cfg.max_subset_size is None else min(cfg.max_subset_size, len(pool))

    sizes = range(0, cap + 1) if target_latent else range(1, cap + 1)
    for size in sizes:
        for combo in itertools.combinations(pool, size):
            cand = set(combo)
            if target_latent or (cand - {target}) & set(state.latents):
                accepted, result = test_parent_cause_latent(
                    source, cand, target, state.registry, observed, cfg.m, cfg.tau,
                    known_parents=state.parent_sets,
                )
                kind = "parent-cause-latent"
                recorded = cand | {target}  # surrogate window conditions on self
            else:
                accepted, result = test_parent_cause_observed(
                    source, cand, target, observed, cfg.m, cfg.tau
                )
                kind = "parent-cause-observed"
                recorded = cand
            _log_test(state, "one", kind, target, cand, result, accepted)
            if accepted:
                state.parent_sets[target] = tuple(sorted(recorded))
                state.active.remove(target)
                for parent in recorded:
                    if parent != target and parent in state.registry.effects:
                        if target in set(state.observed):
                            state.registry.add_effect(parent, target)
                state.record(
                    phase="one", event="identified", target=target,
                    parents=sorted(recorded),
                )
                return True
    return False


def phase_one(state: DiscoveryState, source, cfg: DiscoveryConfig) -> bool:
    """Identify parent-cause sets until a full sweep makes no progress."""
    progressed = False
    while True:
        for target in list(state.active):
            if _try_identify(state, source, cfg, target):
                progressed = True
                break  # restart the sweep from the first active node
        else:
            return progressed


def register_surrogate(state: DiscoveryState, latent: int, effects) -> None:
    """Record a latent's effects; the lowest-index observed footprint member
    becomes its surrogate and the rest its siblings."""
    state.registry.register(latent, effects)
    state.registry.footprint(latent, set(state.observed))  # validates reachability


def phase_two(state: DiscoveryState, source, cfg: DiscoveryConfig) -> bool:
    """Discover new latent confounders from pairs of active subprocesses."""
    observed = state.observed
    clusters = []
    for n1, n2 in itertools.combinations(sorted(state.active), 2):
        try:
            accepted, result = test_latent_confounder_pair(
                source, n1, n2, state.registry, observed, cfg.m, cfg.tau
            )
        except (ValueError, KeyError):
            continue
        _log_test(state, "two", "latent-pair", (n1, n2), None, result, accepted)
        if accepted:
            clusters.append({n1, n2})

    merged: list = []
    for cluster in clusters:  # union overlapping pairs
        attached = None
        for grp in merged:
            if grp & cluster:
                grp |= cluster
                attached = grp
                break
        if attached is None:
            merged.append(set(cluster))
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                if merged[i] & merged[j]:
                    merged[i] |= merged.pop(j)
                    changed = True
                    break
            if changed:
                break

    next_id = max([*state.observed, *state.latents], default=-1) + 1
    for cluster in sorted(merged, key=min):
        latent = next_id
        next_id += 1
        state.latents.append(latent)
        register_surrogate(state, latent, cluster)
        for member in sorted(cluster):
            state.active.remove(member)
            state.parent_sets[member] = tuple(sorted(set(state.parent_sets.get(member, ())) | {latent}))
        state.active.append(latent)
        state.record(
            phase="two", event="new-latent", latent=latent, effects=sorted(cluster),
        )
    return bool(merged)


def _assemble_graph(state: DiscoveryState) -> SummaryGraph:
    observed = list(state.observed)
    latents = list(state.latents)
    relabel = {o: i for i, o in enumerate(observed)}
    relabel.update({l: len(observed) + i for i, l in enumerate(latents)})
    edges = {}
    for child, parents in state.parent_sets.items():
        for p in parents:
            edges[(relabel[p], relabel[child])] = 1.0
    n = len(observed) + len(latents)
    return SummaryGraph(
        n_observed=len(observed),
        n_latent=len(latents),
        mu=tuple(0.0 for _ in range(n)),
        edges=edges,
        decay=ExponentialDecay(1.0),
    )


def run_discovery(source, observed_ids, cfg: DiscoveryConfig) -> DiscoveryResult:
    """Alternate the two phases until stable; package the inferred graph."""
    observed = tuple(sorted(observed_ids))
    state = DiscoveryState(observed=observed, active=list(observed))
    for iteration in range(cfg.max_iterations):
        p1 = phase_one(state, source, cfg)
        if not state.active:
            break
        p2 = phase_two(state, source, cfg)
        if not state.active:
            break
        if not (p1 or p2):
            break
    graph = _assemble_graph(state)
    relabel = {l: len(observed) + i for i, l in enumerate(state.latents)}
    relabel.update({o: i for i, o in enumerate(observed)})
    parent_sets = {
        relabel[t]: tuple(sorted(relabel[p] for p in ps))
        for t, ps in state.parent_sets.items()
    }
    return DiscoveryResult(
        graph=graph,
        unresolved=tuple(sorted(relabel[a] for a in state.active)),
        latent_ids=tuple(relabel[l] for l in state.latents),
        parent_sets=parent_sets,
        log=tuple(state.log),
    )


def annotate_intermediates(result: DiscoveryResult, source, observed_ids, cfg) -> DiscoveryResult:
    """Count hidden relays on each fully observed parent-cause edge."""
    observed = tuple(sorted(observed_ids))
    obs_set = set(range(len(observed)))
    counts = {}
    for target, parents in result.parent_sets.items():
        if target not in obs_set or any(p not in obs_set for p in parents):
            continue
        for parent in parents:
            h = count_intermediate_latents(
                source, observed[target], observed[parent],
                [observed[p] for p in parents], observed, cfg.m, cfg.tau,
            )
            counts[(parent, target)] = h
    return DiscoveryResult(
        graph=result.graph,
        unresolved=result.unresolved,
        latent_ids=result.latent_ids,
        parent_sets=result.parent_sets,
        log=result.log,
        intermediate_counts=counts,
    )


def log_to_jsonl(result: DiscoveryResult) -> str:
    return "\n".join(json.dumps(entry, sort_keys=True) for entry in result.log) + "\n"
