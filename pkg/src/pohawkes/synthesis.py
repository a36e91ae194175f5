"""Ground-truth data generators.

Two routes produce data from the same summary graph: continuous-time event
sequences via thinning with per-edge exponential-state recursions, and
discrete-time series drawn directly from the linear autoregressive
representation of the binned process (Poisson branching counts or Gaussian
noise). Both are deterministic given (graph, parameters, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphs import ExponentialDecay, SummaryGraph

__all__ = [
    "EventData",
    "DiscretePanel",
    "CaseSpec",
    "theta_coeffs",
    "default_k_max",
    "simulate_hawkes",
    "generate_inar",
    "generate_linear_gaussian",
    "benchmark_case",
    "benchmark_topology",
    "apply_faithfulness_violation",
    "stationary_rates",
    "CASE_IDS",
]


@dataclass(frozen=True)
class EventData:
    """Per-subprocess sorted event timestamps on [0, horizon]."""

    times: tuple  # tuple of float arrays, one per subprocess
    horizon: float

    def __post_init__(self):
        for i, t in enumerate(self.times):
            if len(t) and (t[0] < 0 or t[-1] > self.horizon):
                raise ValueError(f"subprocess {i} has events outside [0, horizon]")
            if len(t) > 1 and np.any(np.diff(t) < 0):
                raise ValueError(f"subprocess {i} timestamps are not sorted")

    @property
    def n_subprocesses(self) -> int:
        return len(self.times)

    def counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.times])


@dataclass(frozen=True)
class DiscretePanel:
    """T x l matrix of per-bin values (rows = bins, columns = subprocesses)."""

    values: np.ndarray
    delta: float
    noise_model: str  # "poisson-inar" or "gaussian"

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("panel must be a non-empty 2-D array")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CaseSpec:
    case_id: int
    alpha_range: tuple
    beta: float
    latent_ids: tuple  # node ids hidden from the observed output


def theta_coeffs(g: SummaryGraph, delta: float, k_max: int):
    """Lagged excitation coefficients of the binned linear representation.

    Returns (theta0, theta) with theta0[i] = delta * mu[i] and
    theta[k-1][i][j] = a_ij * integral of the decay over bin k. For the
    exponential kernel the integrals are closed-form; their sum over all
    lags converges to the integrated influence matrix.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    l = g.n_nodes
    theta0 = delta * np.asarray(g.mu, dtype=float)
    weights = np.array([g.decay.bin_integral(k, delta) for k in range(1, k_max + 1)])
    a = np.zeros((l, l))
    for (src, dst), val in g.edges.items():
        a[dst, src] = val
    theta = weights[:, None, None] * a[None, :, :]
    return theta0, theta


def default_k_max(g: SummaryGraph, delta: float, rel_tail: float = 1e-6) -> int:
    """Smallest lag count whose excluded tail is below rel_tail of the total."""
    beta = g.decay.beta
    # exp(-beta * k * delta) <= rel_tail
    k = int(math.ceil(-math.log(rel_tail) / (beta * delta)))
    return max(k, 1)


def stationary_rates(g: SummaryGraph) -> np.ndarray:
    """Long-run event rates (I - Phi)^-1 mu of a stationary graph."""
    phi = g.influence_matrix()
    l = g.n_nodes
    return np.linalg.solve(np.eye(l) - phi, np.asarray(g.mu, dtype=float))


# ---------------------------------------------------------------------------
# Continuous-time simulation
# ---------------------------------------------------------------------------


def simulate_hawkes(g: SummaryGraph, horizon: float, seed) -> EventData:
    """Simulate event sequences by thinning with exponential-state updates.

    Each source node keeps one decaying state g_j(t) = sum over its past
    events of exp(-beta (t - t_e)); intensities are mu_i + sum_j a_ij g_j.
    Between events every intensity decays monotonically, so the total
    intensity right after the latest event is a valid thinning bound.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not g.is_stationary():
        raise ValueError("graph is not stationary; simulation would explode")
    rng = np.random.default_rng(seed)
    l = g.n_nodes
    beta = g.decay.beta
    mu = np.asarray(g.mu, dtype=float)
    a = np.zeros((l, l))
    for (src, dst), val in g.edges.items():
        a[dst, src] = val

    events: list = [[] for _ in range(l)]
    state = np.zeros(l)  # decaying sum of past events per source node
    t = 0.0
    while True:
        lam = mu + a @ state
        total = float(lam.sum())
        if total <= 0:
            break
        t_next = t + rng.exponential(1.0 / total)
        if t_next > horizon:
            break
        decay = math.exp(-beta * (t_next - t))
        state *= decay
        lam_next = mu + a @ state
        total_next = float(lam_next.sum())
        t = t_next
        u = rng.uniform(0.0, total)
        if u < total_next:
            node = int(np.searchsorted(np.cumsum(lam_next), u, side="right"))
            events[node].append(t)
            state[node] += 1.0
    times = tuple(np.asarray(ts, dtype=float) for ts in events)
    return EventData(times=times, horizon=horizon)


# ---------------------------------------------------------------------------
# Discrete-time generators
# ---------------------------------------------------------------------------

BURN_IN_FLOOR = 1000


def _burn_in(k_max: int) -> int:
    return max(5 * k_max, BURN_IN_FLOOR)


class _LaggedRateState:
    """Rolling truncated-geometric weighted sums of the last k_max rows.

    For the exponential kernel theta^(k) = c * r^(k-1), the lagged sum
    S_i(n) = sum_k r^(k-1) X_i(n-k) obeys an O(1) update with a ring
    buffer, which keeps long simulations cheap.
    """

    def __init__(self, l: int, k_max: int, r: float):
        self.k_max = k_max
        self.r = r
        self.r_kmax = r**k_max
        self.buf = np.zeros((k_max, l))
        self.pos = 0
        self.s = np.zeros(l)

    def push(self, x: np.ndarray) -> None:
        oldest = self.buf[self.pos]
        self.s = self.r * self.s + x - self.r_kmax * oldest
        self.buf[self.pos] = x
        self.pos = (self.pos + 1) % self.k_max

    def lagged_sum(self) -> np.ndarray:
        return self.s


def _gen_discrete(g, delta, n_bins, k_max, seed, draw, burn_in):
    if not g.is_stationary():
        raise ValueError("graph is not stationary")
    if n_bins < 1:
        raise ValueError("need at least one bin")
    if k_max is None:
        k_max = default_k_max(g, delta)
    rng = np.random.default_rng(seed)
    l = g.n_nodes
    theta0, theta = theta_coeffs(g, delta, k_max)
    a = np.zeros((l, l))
    for (src, dst), val in g.edges.items():
        a[dst, src] = val
    c1 = g.decay.bin_integral(1, delta)  # first-bin kernel mass
    r = math.exp(-g.decay.beta * delta)
    coef = a * c1  # theta^(k) = coef * r^(k-1)

    if burn_in is None:
        burn_in = _burn_in(k_max)
    total = burn_in + n_bins
    out = np.empty((n_bins, l))
    state = _LaggedRateState(l, k_max, r)
    x = np.zeros(l)  # X^(0) = 0
    for n in range(total):
        state.push(x)
        mean = theta0 + coef @ state.lagged_sum()
        x = draw(rng, mean)
        if n >= burn_in:
            out[n - burn_in] = x
    return out, k_max


def generate_inar(
    g: SummaryGraph,
    delta: float,
    n_bins: int,
    k_max: int | None = None,
    seed=None,
    burn_in: int | None = None,
) -> DiscretePanel:
    """Integer count series from the Poisson branching representation.

    Conditional on its history, each bin count is Poisson with rate
    theta0_i + sum_{j,k} theta_ij^(k) X_j^(n-k) (the independent Poisson
    reproduction draws of the branching construction collapse to a single
    conditional Poisson). Lags are truncated at k_max; the first
    max(5*k_max, 1000) bins are discarded as burn-in.
    """

    def draw(rng, mean):
        return rng.poisson(np.maximum(mean, 0.0)).astype(float)

    values, _ = _gen_discrete(g, delta, n_bins, k_max, seed, draw, burn_in)
    return DiscretePanel(values=values, delta=delta, noise_model="poisson-inar")


def generate_linear_gaussian(
    g: SummaryGraph,
    delta: float,
    n_bins: int,
    k_max: int | None = None,
    sigma: float = 1.0,
    seed=None,
    burn_in: int | None = None,
) -> DiscretePanel:
    """Real-valued series from the same linear recursion with N(0, sigma^2) noise."""

    def draw(rng, mean):
        return mean + rng.normal(0.0, sigma, size=mean.shape)

    values, _ = _gen_discrete(g, delta, n_bins, k_max, seed, draw, burn_in)
    return DiscretePanel(values=values, delta=delta, noise_model="gaussian")


# ---------------------------------------------------------------------------
# Benchmark graph families
# ---------------------------------------------------------------------------

CASE_IDS = (1, 2, 3, 4, 5, 6)

# Topologies of the six benchmark families. Nodes are listed observed-first;
# edge lists use (src, dst). Where a published figure leaves peripheral
# attachments unspecified, extra observed sinks are attached downstream of
# the confounded effects so that every rank test has enough observed
# variables on its conditioning side.
_CASE_LAYOUT = {
    # Fully observed three-node graph: 1 <- 2 <-> 3, self-loops everywhere.
    1: dict(
        n_observed=3,
        n_latent=0,
        edges=[(1, 0), (1, 2), (2, 1), (0, 0), (1, 1), (2, 2)],
    ),
    # One latent confounder of two observed effects; two more observed
    # subprocesses drive the confounder. Nodes: O1..O4 = 0..3, L1 = 4.
    2: dict(
        n_observed=4,
        n_latent=1,
        edges=[(4, 0), (4, 1), (2, 4), (3, 4),
               (0, 0), (1, 1), (2, 2), (3, 3), (4, 4)],
    ),
    # The latent confounder is itself caused by an observed subprocess.
    # Nodes: O1..O3 = 0..2, L1 = 3.
    3: dict(
        n_observed=3,
        n_latent=1,
        edges=[(3, 0), (3, 1), (2, 3),
               (0, 0), (1, 1), (2, 2), (3, 3)],
    ),
    # The latent confounder and an observed subprocess share a child.
    # Nodes: O1..O4 = 0..3, L1 = 4.
    4: dict(
        n_observed=4,
        n_latent=1,
        edges=[(4, 0), (4, 1), (4, 3), (2, 3),
               (0, 0), (1, 1), (2, 2), (3, 3), (4, 4)],
    ),
    # One latent confounder causes another, through an observed relay:
    # the upstream confounder drives O1, O2, O5, and O5 drives the
    # downstream confounder of O3, O4. The downstream latent has no
    # self-loop. Nodes: O1..O5 = 0..4, L1 = 5, L2 = 6.
    5: dict(
        n_observed=5,
        n_latent=2,
        edges=[(5, 0), (5, 1), (5, 4), (4, 6), (6, 2), (6, 3),
               (0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)],
    ),
    # A latent confounder above two other latent confounders. The two
    # mid-level latents have no self-loops (they relay the top latent's
    # influence symmetrically); a fifth observed sink keeps the
    # conditioning side of the pair tests wide enough.
    # Nodes: O1..O5 = 0..4, L1 = 5 (top), L2 = 6, L3 = 7.
    6: dict(
        n_observed=5,
        n_latent=3,
        edges=[(5, 6), (5, 7), (6, 0), (6, 1), (7, 2), (7, 3), (0, 4),
               (0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)],
    ),
}

_DEFAULT_ALPHA = {1: (0.40, 0.80)}
_ALPHA_OTHERWISE = (0.80, 0.99)
_MAX_RESAMPLES = 100


def benchmark_topology(case_id: int) -> SummaryGraph:
    """Unit-coefficient version of a benchmark graph (structure only)."""
    layout = _CASE_LAYOUT[case_id]
    n = layout["n_observed"] + layout["n_latent"]
    return SummaryGraph(
        n_observed=layout["n_observed"],
        n_latent=layout["n_latent"],
        mu=tuple(1.0 for _ in range(n)),
        edges={e: 1.0 for e in layout["edges"]},
        decay=ExponentialDecay(1.0),
    )


def benchmark_case(
    case_id: int,
    seed=None,
    mu: float = 1.0,
    beta: float = 1.0,
    alpha_range: tuple | None = None,
):
    """One of the six benchmark graphs with freshly sampled edge weights.

    Edge constants are drawn uniformly from the case's range and resampled
    (up to 100 times) until the integrated influence matrix is stationary.
    """
    if case_id not in _CASE_LAYOUT:
        raise ValueError(f"unknown case id {case_id}")
    layout = _CASE_LAYOUT[case_id]
    if alpha_range is None:
        alpha_range = _DEFAULT_ALPHA.get(case_id, _ALPHA_OTHERWISE)
    rng = np.random.default_rng(seed)
    n = layout["n_observed"] + layout["n_latent"]
    lo, hi = alpha_range
    for _ in range(_MAX_RESAMPLES):
        edges = {e: float(rng.uniform(lo, hi)) for e in layout["edges"]}
        g = SummaryGraph(
            n_observed=layout["n_observed"],
            n_latent=layout["n_latent"],
            mu=tuple(mu for _ in range(n)),
            edges=edges,
            decay=ExponentialDecay(beta),
        )
        if g.is_stationary():
            spec = CaseSpec(
                case_id=case_id,
                alpha_range=(lo, hi),
                beta=beta,
                latent_ids=tuple(g.latent),
            )
            return g, spec
    raise RuntimeError(
        f"no stationary coefficient draw for case {case_id} in {_MAX_RESAMPLES} attempts"
    )


def apply_faithfulness_violation(g: SummaryGraph, seed=None) -> SummaryGraph:
    """Assign one shared coefficient to two randomly chosen distinct edges."""
    if len(g.edges) < 2:
        raise ValueError("need at least two edges to tie a pair")
    rng = np.random.default_rng(seed)
    keys = sorted(g.edges)
    i, j = rng.choice(len(keys), size=2, replace=False)
    edges = dict(g.edges)
    edges[keys[j]] = edges[keys[i]]
    return g.replace_edges(edges)
