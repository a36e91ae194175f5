"""Event binning, standardization, and lag-aligned design matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .synthesis import DiscretePanel, EventData

__all__ = [
    "BinnedPanel",
    "LagEstimate",
    "bin_events",
    "panel_from_discrete",
    "standardize",
    "estimate_effective_lags",
    "lag_matrix",
]


@dataclass(frozen=True)
class BinnedPanel:
    """T x p count (or standardized) matrix over observed subprocesses."""

    counts: np.ndarray
    delta: float
    standardized: bool = False
    means: np.ndarray | None = None
    sds: np.ndarray | None = None

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]

    @property
    def n_series(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class LagEstimate:
    k_eff: int
    max_abs_corr: np.ndarray  # per lag 1..k_cap
    threshold: np.ndarray  # critical value per lag


def bin_events(events: EventData, delta: float) -> BinnedPanel:
    """Count events per bin ((n-1)*delta, n*delta]; the final partial bin is dropped."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    n_bins = int(math.floor(events.horizon / delta))
    if n_bins < 1:
        raise ValueError("horizon shorter than one bin")
    counts = np.zeros((n_bins, events.n_subprocesses), dtype=float)
    for i, ts in enumerate(events.times):
        if len(ts) == 0:
            continue
        # ceil(t / delta) maps t in ((n-1)d, nd] to bin n
        idx = np.ceil(np.asarray(ts) / delta).astype(int)
        idx = idx[(idx >= 1) & (idx <= n_bins)]
        np.add.at(counts[:, i], idx - 1, 1.0)
    return BinnedPanel(counts=counts, delta=delta)


def panel_from_discrete(panel: DiscretePanel, columns=None) -> BinnedPanel:
    """View of a generated discrete panel (optionally selected columns)."""
    values = panel.values if columns is None else panel.values[:, list(columns)]
    return BinnedPanel(counts=np.array(values, dtype=float), delta=panel.delta)


def standardize(panel: BinnedPanel) -> BinnedPanel:
    """Center to mean 0 and scale to unit variance, recording the statistics."""
    x = panel.counts
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(sds <= 0)
    if bad.size:
        raise ValueError(f"zero-variance column(s) for subprocess index {bad.tolist()}")
    return BinnedPanel(
        counts=(x - means) / sds,
        delta=panel.delta,
        standardized=True,
        means=means,
        sds=sds,
    )


def estimate_effective_lags(
    panel: BinnedPanel, k_cap: int, alpha_sig: float = 0.05
) -> LagEstimate:
    """Largest lag whose strongest cross-correlation is still significant.

    For each lag k the strongest |corr(X_i(n), X_j(n-k))| over all (i, j)
    pairs is compared against the Fisher-z critical value at level
    alpha_sig, Bonferroni-corrected for the p^2 pairs tested per lag.
    The estimate never drops below 1.
    """
    t, p = panel.counts.shape
    if k_cap >= t / 10:
        raise ValueError("k_cap too large relative to the panel length")
    x = panel.counts - panel.counts.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd <= 0):
        raise ValueError("constant column; standardize input requires variation")
    x = x / sd
    max_corr = np.zeros(k_cap)
    thresh = np.zeros(k_cap)
    z = norm.ppf(1.0 - alpha_sig / (2.0 * p * p))
    for k in range(1, k_cap + 1):
        n_eff = t - k
        cross = x[k:].T @ x[:-k] / n_eff
        max_corr[k - 1] = np.max(np.abs(cross))
        thresh[k - 1] = math.tanh(z / math.sqrt(max(n_eff - 3, 1)))
    significant = np.flatnonzero(max_corr > thresh)
    k_eff = int(significant[-1] + 1) if significant.size else 1
    return LagEstimate(k_eff=max(k_eff, 1), max_abs_corr=max_corr, threshold=thresh)


def lag_matrix(panel: BinnedPanel, entries, m: int) -> np.ndarray:
    """Column-stack lagged copies of panel columns, aligned on shared rows.

    ``entries`` is an ordered list of (column, lag) with lags in 0..m; row r
    of the result refers to absolute bin index m + r, so any two matrices
    built with the same m are row-aligned.
    """
    t = panel.n_bins
    if t <= m:
        raise ValueError("panel shorter than the lag budget")
    cols = []
    for col, lag in entries:
        if not (0 <= lag <= m):
            raise ValueError(f"lag {lag} outside 0..{m}")
        cols.append(panel.counts[m - lag : t - lag, col])
    return np.column_stack(cols) if cols else np.empty((t - m, 0))
