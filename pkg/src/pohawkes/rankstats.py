"""Cross-covariance blocks, canonical-correlation rank tests, and the exact
population-covariance oracle of the truncated linear representation.

Variable references are (node, lag) pairs with lag 0 meaning the current
bin. A covariance source answers cross-covariance queries for any two
ordered reference lists; the sample source is backed by one pass over a
binned panel, the population source by the stationary covariance of the
truncated vector autoregression over all nodes (observed and latent), so
marginalizing latents is just row/column selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binning import BinnedPanel
from .graphs import SummaryGraph
from .synthesis import stationary_rates, theta_coeffs

__all__ = [
    "LaggedBlockSpec",
    "RankTestResult",
    "PopulationModel",
    "PopulationCovariance",
    "SampleCovariance",
    "population_model_from_graph",
    "canonical_correlations",
    "rank_test",
    "SurrogateRegistry",
    "parent_cause_blocks_observed",
    "parent_cause_blocks_latent",
    "latent_pair_blocks",
    "test_parent_cause_observed",
    "test_parent_cause_latent",
    "test_latent_confounder_pair",
    "count_intermediate_latents",
    "POPULATION_RANK_TOL",
]

POPULATION_RANK_TOL = 1e-7
# Kind-specific population tolerances. Rank identities hold exactly only up
# to window-boundary attenuation: finite lag windows leave geometrically
# small residues in conditioned blocks, while a confounder two relay hops
# above the data leaves an authentically faint channel. Parent-set tests
# must ignore the former; pair tests must detect the latter.
OBSERVED_RANK_TOL = 1e-6
PARENT_RANK_TOL = 1e-2
PAIR_RANK_TOL = 1e-5
_RIDGE_SCALE = 1e-8
_LYAPUNOV_TOL = 1e-12
_LYAPUNOV_MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class LaggedBlockSpec:
    """Ordered, duplicate-free list of (node, lag) references."""

    entries: tuple

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("duplicate (node, lag) entries in block spec")

    def __len__(self) -> int:
        return len(self.entries)

    @staticmethod
    def of(entries) -> "LaggedBlockSpec":
        return LaggedBlockSpec(tuple(entries))


@dataclass(frozen=True)
class RankTestResult:
    estimated_rank: int
    canonical_correlations: np.ndarray
    tau: float
    n_samples: int | None

    def rank_le(self, r: int) -> bool:
        return self.estimated_rank <= r

    def rank_eq(self, r: int) -> bool:
        return self.estimated_rank == r


# ---------------------------------------------------------------------------
# Covariance sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PopulationModel:
    """Truncated linear model over all nodes: coefficients and noise scales."""

    theta0: np.ndarray  # (l,)
    theta: np.ndarray  # (k_max, l, l), theta[k-1][i][j] multiplies X_j(n-k)
    noise_var: np.ndarray  # (l,)
    m: int  # lag budget the covariance table must cover

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[1]

    @property
    def k_max(self) -> int:
        return self.theta.shape[0]

    def companion(self) -> np.ndarray:
        k, l, _ = self.theta.shape
        f = np.zeros((l * k, l * k))
        for j in range(k):
            f[:l, j * l : (j + 1) * l] = self.theta[j]
        if k > 1:
            f[l:, : l * (k - 1)] = np.eye(l * (k - 1))
        return f


def population_model_from_graph(
    g: SummaryGraph,
    delta: float,
    k_max: int,
    m: int,
    noise: str = "branching",
    sigma: float = 1.0,
) -> PopulationModel:
    """Build the truncated-model coefficients for a summary graph.

    ``noise`` picks the innovation variances: "branching" uses the
    stationary mean rates of the count process (matching the integer
    generator), "gaussian" uses sigma^2 everywhere.
    """
    theta0, theta = theta_coeffs(g, delta, k_max)
    if noise == "branching":
        rates = stationary_rates(g)
        noise_var = np.maximum(rates * delta, 1e-12)
    elif noise == "gaussian":
        noise_var = np.full(g.n_nodes, sigma**2)
    else:
        raise ValueError(f"unknown noise model {noise!r}")
    return PopulationModel(theta0=theta0, theta=theta, noise_var=noise_var, m=m)


def _stationary_companion_cov(f: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Fixed point of S = F S F' + Q by doubling; fails if non-stationary."""
    rho = np.max(np.abs(np.linalg.eigvals(f)))
    if rho >= 1.0:
        raise ValueError(f"companion matrix is not stable (radius {rho:.6f})")
    s = q.copy()
    a = f.copy()
    for _ in range(_LYAPUNOV_MAX_DOUBLINGS):
        incr = a @ s @ a.T
        s_next = s + incr
        a = a @ a
        if np.max(np.abs(incr)) < _LYAPUNOV_TOL:
            return 0.5 * (s_next + s_next.T)
        s = s_next
    raise RuntimeError("stationary covariance iteration did not converge")


class PopulationCovariance:
    """Exact second moments of the truncated model, all nodes included.

    ``rank_tol`` separates structural-zero canonical correlations from
    genuine channels; window-boundary attenuation leaves tiny nonzero
    residues, so the tolerance sits well above float precision.
    """

    def __init__(self, model: PopulationModel, rank_tol: float = POPULATION_RANK_TOL):
        self.model = model
        self.rank_tol = rank_tol
        l, k, m = model.n_nodes, model.k_max, model.m
        f = model.companion()
        q = np.zeros_like(f)
        q[:l, :l] = np.diag(model.noise_var)
        s = _stationary_companion_cov(f, q)
        # gamma[j] = cov(X(n), X(n-j)); companion blocks give j < k_max,
        # deeper offsets follow from the autoregression itself.
        gamma = [s[:l, j * l : (j + 1) * l] for j in range(k)]
        while len(gamma) <= m:
            j = len(gamma)
            acc = np.zeros((l, l))
            for kk in range(1, k + 1):
                off = j - kk
                block = gamma[off] if off >= 0 else gamma[-off].T
                acc += model.theta[kk - 1] @ block
            gamma.append(acc)
        self._gamma = gamma
        self.n_samples = None

    def cross_cov(self, a_entries, b_entries) -> np.ndarray:
        out = np.empty((len(a_entries), len(b_entries)))
        for r, (i, li) in enumerate(a_entries):
            for c, (j, lj) in enumerate(b_entries):
                off = lj - li  # cov(X_i(n-li), X_j(n-lj)) = gamma[off][i, j]
                out[r, c] = self._gamma[off][i, j] if off >= 0 else self._gamma[-off][j, i]
        return out


class SampleCovariance:
    """Empirical covariance of lag-aligned panel columns (denominator n-1).

    One pass builds the full covariance over all (column, lag) variables
    with lag 0..m; individual blocks are slices of that table.
    """

    def __init__(self, panel: BinnedPanel, m: int):
        t, p = panel.counts.shape
        if t - m < p * (m + 1) + 1:
            raise ValueError("too few usable rows for the requested lag budget")
        x = panel.counts
        blocks = [x[m - lag : t - lag, :] for lag in range(m + 1)]
        z = np.concatenate(blocks, axis=1)  # columns: lag-major, node-minor
        z = z - z.mean(axis=0)
        self._cov = (z.T @ z) / (z.shape[0] - 1)
        self._p = p
        self.m = m
        self.n_samples = z.shape[0]

    def _index(self, node: int, lag: int) -> int:
        if not (0 <= lag <= self.m):
            raise ValueError(f"lag {lag} outside 0..{self.m}")
        return lag * self._p + node

    def cross_cov(self, a_entries, b_entries) -> np.ndarray:
        ia = [self._index(n, l) for n, l in a_entries]
        ib = [self._index(n, l) for n, l in b_entries]
        return self._cov[np.ix_(ia, ib)]


# ---------------------------------------------------------------------------
# Canonical-correlation rank test
# ---------------------------------------------------------------------------


def canonical_correlations(saa, sab, sbb) -> np.ndarray:
    """Descending canonical correlations from covariance blocks.

    Each within-block covariance is whitened through its symmetric inverse
    square root; a small ridge proportional to the mean diagonal is added
    first so nearly singular blocks stay tractable.
    """

    def inv_sqrt(s):
        s = np.asarray(s, dtype=float)
        ridge = _RIDGE_SCALE * (np.trace(s) / s.shape[0] if s.shape[0] else 1.0)
        w, v = np.linalg.eigh(0.5 * (s + s.T) + ridge * np.eye(s.shape[0]))
        w = np.maximum(w, ridge if ridge > 0 else 1e-300)
        return v @ np.diag(w**-0.5) @ v.T

    if min(np.shape(sab)) == 0:
        return np.zeros(0)
    k = inv_sqrt(saa) @ np.asarray(sab) @ inv_sqrt(sbb)
    rho = np.linalg.svd(k, compute_uv=False)
    return np.clip(rho, 0.0, 1.0)


def rank_test(source, a: LaggedBlockSpec, b: LaggedBlockSpec, r: int, tau: float | None = None):
    """Estimate rank of the (A, B) cross-covariance block.

    Returns (result, rank <= r). The estimated rank counts canonical
    correlations at or above the threshold: ``tau`` for sample sources,
    an exact-zero tolerance for population sources (whose correlations
    are either structural zeros or bounded away from zero).
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("blocks must be non-empty")
    population = source.n_samples is None
    threshold = getattr(source, "rank_tol", POPULATION_RANK_TOL) if population else tau
    if threshold is None:
        raise ValueError("tau is required for sample covariance sources")
    saa = source.cross_cov(a.entries, a.entries)
    sbb = source.cross_cov(b.entries, b.entries)
    sab = source.cross_cov(a.entries, b.entries)
    rho = canonical_correlations(saa, sab, sbb)
    rank = int(np.sum(rho >= threshold))
    result = RankTestResult(
        estimated_rank=rank,
        canonical_correlations=rho,
        tau=threshold,
        n_samples=source.n_samples,
    )
    return result, result.rank_le(r)


# ---------------------------------------------------------------------------
# Surrogate bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class SurrogateRegistry:
    """Observed stand-ins for latent nodes and their co-effect siblings.

    A latent's *effects* may themselves be latent (a confounder discovered
    above previously discovered confounders); observed footprints resolve
    recursively through the registry.
    """

    effects: dict = field(default_factory=dict)  # latent id -> sorted tuple of effects

    def register(self, latent: int, effects) -> None:
        effects = sorted(set(effects))
        if len(effects) < 2:
            raise ValueError("a latent needs at least two effects")
        self.effects[latent] = tuple(effects)

    def add_effect(self, latent: int, node: int) -> None:
        if latent not in self.effects:
            raise KeyError(f"latent {latent} is not registered")
        self.effects[latent] = tuple(sorted(set(self.effects[latent]) | {node}))

    def is_registered(self, latent: int) -> bool:
        return latent in self.effects

    def footprint(self, node: int, observed: set) -> tuple:
        """Observed nodes standing in for ``node``, lowest index first."""
        if node in observed:
            return (node,)
        if node not in self.effects:
            raise KeyError(f"latent {node} has no registered effects")
        out: set = set()
        stack = [node]
        seen = {node}
        while stack:
            cur = stack.pop()
            for e in self.effects[cur]:
                if e in observed:
                    out.add(e)
                elif e not in seen:
                    seen.add(e)
                    stack.append(e)
        if not out:
            raise ValueError(f"latent {node} has no observed footprint")
        return tuple(sorted(out))

    def de_of(self, node: int, observed: set) -> int:
        return self.footprint(node, observed)[0]

    def sibs_of(self, node: int, observed: set) -> tuple:
        if node in observed:
            return ()
        return self.footprint(node, observed)[1:]


# ---------------------------------------------------------------------------
# Structured block builders
# ---------------------------------------------------------------------------
#
# Every structured test compares the estimated rank of a cross-covariance
# block against the rank its hypothesis entails:
#
#     r = |A| - (#current variables in A) + (#latent channels)
#
# Lagged variables contribute full rank; current variables collapse onto
# the latent windows that drive them, one shared direction per mediating
# latent. B holds all observed variables except the current variables
# already in A, plus one retained sibling current: that single overlap
# acts as a detector, staying rank-neutral exactly when the hypothesis
# accounts for every confounding path and inflating the rank otherwise.


@dataclass(frozen=True)
class TestBlocks:
    """A structured rank-test instance: blocks, expected rank, feasibility."""

    a: LaggedBlockSpec
    b: LaggedBlockSpec
    r: int
    channels: int

    @property
    def feasible(self) -> bool:
        return 0 <= self.r < min(len(self.a), len(self.b))


def _all_observed_vars(observed, m):
    return [(o, lag) for o in sorted(observed) for lag in range(m + 1)]


def _dedup(entries):
    seen, out = set(), []
    for e in entries:
        if e not in seen:
            seen.add(e)
            out.append(e)
    return out


def _registry_channels(registry: SurrogateRegistry, observed, current_nodes) -> set:
    """Registered latents whose direct effects include a current node of A."""
    out = set()
    for latent, effs in registry.effects.items():
        if any(e in observed and e in current_nodes for e in effs):
            out.add(latent)
    return out


def _finish_blocks(a_entries, sib_nodes, registry, observed, m):
    a = _dedup(a_entries)
    current_nodes = {node for node, lag in a if lag == 0}
    channels = _registry_channels(registry, observed, current_nodes)
    spike = min((s for s in sib_nodes if (s, 0) in a), default=None)
    drop = {(node, 0) for node in current_nodes}
    if spike is not None:
        drop.discard((spike, 0))
    b = [v for v in _all_observed_vars(observed, m) if v not in drop]
    r = len(a) - len(current_nodes) + len(channels)
    return TestBlocks(
        a=LaggedBlockSpec.of(a), b=LaggedBlockSpec.of(b), r=r, channels=len(channels)
    )


def parent_cause_blocks_observed(candidates, target: int, observed, m: int):
    """Blocks for testing an all-observed candidate parent set of a target.

    A holds the target's current variable plus lags 1..m of every
    candidate; B holds every observed variable except the target's current
    one. The candidate passes at rank exactly m * |candidates|.
    """
    a = [(target, 0)]
    for c in sorted(set(candidates)):
        a.extend((c, lag) for lag in range(1, m + 1))
    b = [v for v in _all_observed_vars(observed, m) if v != (target, 0)]
    r = m * len(set(candidates))
    return TestBlocks(a=LaggedBlockSpec.of(_dedup(a)), b=LaggedBlockSpec.of(b), r=r, channels=0)


def latent_pair_blocks(n1: int, n2: int, registry: SurrogateRegistry, observed, m: int):
    """Blocks for testing whether one latent confounds the pair (n1, n2).

    A holds every lag of both members' surrogates and of all their
    registered siblings. For two observed members the hypothesis has one
    fresh latent channel and the expected rank is 2m + 1; each member that
    is itself a registered latent contributes its own channel instead.
    """
    obs = set(observed)
    f1, f2 = registry.footprint(n1, obs), registry.footprint(n2, obs)
    if set(f1) & set(f2):
        raise ValueError("pair members share observed effects; test undefined")
    d1, d2 = f1[0], f2[0]
    sib_nodes = sorted(set(f1[1:]) | set(f2[1:]))
    a = []
    for node in (d1, d2, *sib_nodes):
        a.extend((node, lag) for lag in range(m + 1))
    fresh = 1 if (n1 in obs or n2 in obs) else 0
    blocks = _finish_blocks(a, sib_nodes, registry, obs, m)
    return TestBlocks(a=blocks.a, b=blocks.b, r=blocks.r + fresh, channels=blocks.channels + fresh)


def parent_cause_blocks_latent(
    candidates, target: int, registry: SurrogateRegistry, observed, m: int,
    known_parents: dict | None = None,
):
    """Blocks for a candidate parent set when target or candidates are latent.

    A holds: all lags of the target's surrogate; all lags of each latent
    candidate's surrogate; lags 1..m of each observed candidate; all lags
    of every relevant sibling; and lags 1..m of each sibling's already
    recorded observed parents (their influence on the sibling must be
    conditioned away). Each latent in the hypothesis whose effects reach
    A's current variables contributes one shared channel.
    """
    obs = set(observed)
    known_parents = known_parents or {}
    latent_cands = sorted(c for c in set(candidates) if c not in obs)
    observed_cands = sorted(c for c in set(candidates) if c in obs)

    fp_target = registry.footprint(target, obs)
    a = [(fp_target[0], lag) for lag in range(m + 1)]
    sib_pool = set(fp_target[1:])
    for lc in latent_cands:
        fp = registry.footprint(lc, obs)
        a.extend((fp[0], lag) for lag in range(m + 1))
        sib_pool.update(fp[1:])
    for oc in observed_cands:
        a.extend((oc, lag) for lag in range(1, m + 1))
    sib_nodes = sorted(sib_pool)
    for s in sib_nodes:
        a.extend((s, lag) for lag in range(m + 1))
    for s in sib_nodes:
        for p in sorted(set(known_parents.get(s, ())) & obs):
            a.extend((p, lag) for lag in range(1, m + 1))
    return _finish_blocks(a, sib_nodes, registry, obs, m)


def _run_blocks(source, blocks: TestBlocks, tau):
    if not blocks.feasible:
        return False, None
    result, _ = rank_test(source, blocks.a, blocks.b, blocks.r, tau)
    return result.rank_eq(blocks.r), result


def test_parent_cause_observed(source, candidates, target, observed, m, tau=None):
    """Exact-rank test for an all-observed candidate parent set."""
    blocks = parent_cause_blocks_observed(candidates, target, observed, m)
    result, _ = rank_test(source, blocks.a, blocks.b, blocks.r, tau)
    return result.rank_eq(blocks.r), result


def test_latent_confounder_pair(source, n1, n2, registry, observed, m, tau=None):
    """Exact-rank test for a shared latent confounder above the pair (n1, n2)."""
    blocks = latent_pair_blocks(n1, n2, registry, observed, m)
    return _run_blocks(source, blocks, tau)


def test_parent_cause_latent(
    source, candidates, target, registry, observed, m, tau=None, known_parents=None
):
    """Exact-rank test for a latent-involved candidate parent set."""
    blocks = parent_cause_blocks_latent(
        candidates, target, registry, observed, m, known_parents
    )
    return _run_blocks(source, blocks, tau)


def count_intermediate_latents(source, target, parent, parent_set, observed, m, tau=None):
    """Number of hidden relays on the direct path parent -> target.

    Drops the parent's h most recent lags from the conditioning set and
    returns the largest h for which the parent-set rank identity still
    holds; h = 0 means a direct edge. The target's own recent lags are
    kept (``parent`` may equal ``target`` when refining a self-loop).
    """
    if parent not in parent_set:
        raise ValueError("parent must belong to the identified parent set")
    best = 0
    for h in range(1, m):
        a = [(target, 0)]
        for c in sorted(set(parent_set)):
            start = h + 1 if c == parent else 1
            a.extend((c, lag) for lag in range(start, m + 1))
        a = _dedup(a)
        b = [v for v in _all_observed_vars(observed, m) if v != (target, 0)]
        r = len(a) - 1
        result, _ = rank_test(source, LaggedBlockSpec.of(a), LaggedBlockSpec.of(b), r, tau)
        if result.rank_eq(r):
            best = h
        else:
            break
    return best
