"""Truncated-product combination and closed testing across groups.

For G groups, closed testing examines every nonempty subset L of groups.  The
intersection hypothesis H_L is tested with the truncated product of the
members' P-value bounds, and H_L is rejected only when every superset K of L
is rejected at level alpha.  This controls the family-wise error rate in the
strong sense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import InputError
from .sensitivity import SensitivityGrid, gamma_grid_bounds

__all__ = [
    "TruncatedProductParams",
    "ClosedTestingReport",
    "SensitivityValues",
    "truncated_product_stat",
    "log_truncated_product_stat",
    "truncated_product_pvalue",
    "truncated_product_cdf",
    "with_truncated_product",
    "closed_test",
    "max_gamma_rejection",
]

MAX_GROUPS = 20


@dataclass(frozen=True)
class TruncatedProductParams:
    tau: float = 0.1
    alpha: float = 0.05

    def __post_init__(self):
        _check_tau(self.tau)
        if not 0.0 < self.alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")


def _check_tau(tau):
    if not 0.0 < tau <= 1.0:
        raise InputError(f"tau must lie in (0, 1], got {tau}")


def _check_pvalues(pvalues):
    p = np.asarray(list(pvalues), dtype=np.float64)
    if p.size == 0:
        raise InputError("need at least one P-value")
    if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError(f"P-values must lie in [0, 1], got {p.tolist()}")
    return p


def log_truncated_product_stat(pvalues, tau=0.1):
    """log of the product of the P-values that are <= tau (0 if none are)."""
    _check_tau(tau)
    p = _check_pvalues(pvalues)
    kept = p[p <= tau]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(kept))) if kept.size else 0.0


def truncated_product_stat(pvalues, tau=0.1):
    """Product of the P-values that are <= tau; 1 when none are."""
    return math.exp(log_truncated_product_stat(pvalues, tau))


def truncated_product_cdf(log_w, n, tau=0.1):
    """P(W <= w) for the truncated product of ``n`` independent uniforms.

    ``log_w`` may be an array.  ``w >= 1`` maps to 1 and ``w == 0`` to 0.
    """
    _check_tau(tau)
    n = int(n)
    if n < 1:
        raise InputError("need at least one P-value")
    log_w = np.atleast_1d(np.asarray(log_w, dtype=np.float64))
    out = np.ones_like(log_w)
    live = (log_w < 0.0) & np.isfinite(log_w)
    out[np.isneginf(log_w)] = 0.0
    if not live.any():
        return out if out.size > 1 else float(out[0])

    lw = log_w[live]
    lt = math.log(tau)
    terms = np.full((n, lw.size), -np.inf)
    for k in range(1, n + 1):
        if tau == 1.0 and k < n:
            continue  # (1 - tau)**(n - k) vanishes
        coef = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        if k < n:
            coef += (n - k) * math.log1p(-tau)
        klt = k * lt
        above = lw > klt
        x = np.where(above, 0.0, klt - lw)
        s = np.arange(k, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            series = np.where(
                s[:, None] == 0.0,
                0.0,
                s[:, None] * np.log(x)[None, :] - gammaln(s + 1.0)[:, None],
            )
        below = lw + logsumexp(series, axis=0)
        terms[k - 1] = coef + np.where(above, klt, below)
    out[live] = np.minimum(np.exp(logsumexp(terms, axis=0)), 1.0)
    return out if out.size > 1 else float(out[0])


def truncated_product_pvalue(pvalues, tau=0.1):
    """Combined P-value for the truncated product of independent P-values.

    Valid when each P-value is uniform, or stochastically larger than
    uniform, under the null.  Returns 1 when no P-value is <= tau.
    """
    p = _check_pvalues(pvalues)
    return float(truncated_product_cdf(log_truncated_product_stat(p, tau), p.size, tau))


def with_truncated_product(grid: SensitivityGrid, tau=0.1) -> SensitivityGrid:
    """Fill ``grid.combined`` with the truncated-product P-value per Gamma."""
    grid.combined = np.array(
        [truncated_product_pvalue(grid.p_upper[:, j], tau) for j in range(len(grid.gammas))]
    )
    grid.tau = tau
    return grid


@dataclass
class ClosedTestingReport:
    gamma: float | None
    group_ids: list
    alpha: float
    tau: float
    subset_pvalues: dict
    adjusted_subset_pvalues: dict
    adjusted_group_pvalues: dict
    rejected_subsets: list = field(default_factory=list)
    rejected_groups: list = field(default_factory=list)

    @property
    def n_tests(self):
        return len(self.subset_pvalues)

    @property
    def global_subset(self):
        return tuple(self.group_ids)

    @property
    def global_pvalue(self):
        return self.subset_pvalues[self.global_subset]

    def is_rejected(self, subset):
        return self._key(subset) in set(self.rejected_subsets)

    def pvalue(self, subset):
        return self.subset_pvalues[self._key(subset)]

    def _key(self, subset):
        order = {g: i for i, g in enumerate(self.group_ids)}
        return tuple(sorted(subset, key=order.__getitem__))

    def to_dict(self):
        def key(s):
            return [g for g in s]

        return {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "tau": self.tau,
            "group_ids": list(self.group_ids),
            "subsets": [
                {
                    "subset": key(s),
                    "p": float(p),
                    "adjusted_p": float(self.adjusted_subset_pvalues[s]),
                    "rejected": s in set(self.rejected_subsets),
                }
                for s, p in self.subset_pvalues.items()
            ],
            "adjusted_group_pvalues": {str(g): float(v) for g, v in self.adjusted_group_pvalues.items()},
            "rejected_groups": list(self.rejected_groups),
        }


def closed_test(
    group_pvalues: Mapping,
    alpha=0.05,
    tau=0.1,
    *,
    gamma=None,
    max_groups=MAX_GROUPS,
) -> ClosedTestingReport:
    """Closed testing over all 2**G - 1 intersections using truncated products.

    ``group_pvalues`` maps group id to its P-value (or P-value bound at a
    given Gamma), in the order groups should be reported.  Adjusted P-values
    are the maximum combined P-value over all supersets.
    """
    params = TruncatedProductParams(tau, alpha)
    gids = list(group_pvalues)
    G = len(gids)
    if G < 1:
        raise InputError("closed testing needs at least one group")
    if G > max_groups:
        raise InputError(f"{G} groups exceeds the enumeration limit of {max_groups}")
    p = _check_pvalues(group_pvalues[g] for g in gids)

    n = 1 << G
    masks = np.arange(n)
    with np.errstate(divide="ignore"):
        contrib = np.where(p <= params.tau, np.log(p), 0.0)
    log_w = np.zeros(n)
    size = np.zeros(n, dtype=np.int64)
    for i in range(G):
        bit = masks & (1 << i) != 0
        log_w[bit] += contrib[i]
        size[bit] += 1

    pv = np.ones(n)
    for L in range(1, G + 1):
        sel = size == L
        pv[sel] = truncated_product_cdf(log_w[sel], L, params.tau)

    adj = pv.copy()
    for i in range(G):
        lo = masks[(masks & (1 << i)) == 0]
        adj[lo] = np.maximum(adj[lo], adj[lo | (1 << i)])

    def subset(mask):
        return tuple(gids[i] for i in range(G) if mask >> i & 1)

    order = sorted(range(1, n), key=lambda m: (size[m], [i for i in range(G) if m >> i & 1]))
    subset_p = {subset(m): float(pv[m]) for m in order}
    adjusted = {subset(m): float(adj[m]) for m in order}
    rejected = [s for s in adjusted if adjusted[s] <= params.alpha]
    adj_groups = {g: float(adj[1 << i]) for i, g in enumerate(gids)}
    return ClosedTestingReport(
        gamma=gamma,
        group_ids=gids,
        alpha=params.alpha,
        tau=params.tau,
        subset_pvalues=subset_p,
        adjusted_subset_pvalues=adjusted,
        adjusted_group_pvalues=adj_groups,
        rejected_subsets=rejected,
        rejected_groups=[g for g in gids if adj_groups[g] <= params.alpha],
    )


@dataclass
class SensitivityValues:
    """Largest Gamma on a grid at which each intersection is still rejected.

    ``values[subset]`` is ``None`` when the subset is not rejected even at
    Gamma = 1.  ``censored`` lists subsets still rejected at ``gamma_max``.
    """

    group_ids: list
    resolution: float
    gamma_max: float
    values: dict
    censored: list = field(default_factory=list)

    def for_group(self, group_id):
        return self.values[(group_id,)]

    @property
    def global_value(self):
        return self.values[tuple(self.group_ids)]

    def describe(self, subset):
        v = self.values[tuple(subset)]
        if v is None:
            return "none (not rejected at Gamma=1)"
        if tuple(subset) in self.censored:
            return f">= {v:g}"
        return f"{v:g}"

    def to_dict(self):
        return {
            "resolution": self.resolution,
            "gamma_max": self.gamma_max,
            "values": [
                {"subset": list(s), "gamma": v, "censored": s in self.censored}
                for s, v in self.values.items()
            ],
        }


def max_gamma_rejection(
    summaries: Sequence,
    alpha=0.05,
    tau=0.1,
    *,
    resolution=0.01,
    gamma_max=20.0,
    direction="control",
    method="exact",
) -> SensitivityValues:
    """Scan Gamma = 1, 1 + r, 1 + 2r, ... and record, for every intersection
    hypothesis, the last grid value before it first stops being rejected.

    The scan stops once nothing is rejected or ``gamma_max`` is passed.
    """
    if not resolution > 0:
        raise InputError(f"resolution must be positive, got {resolution}")
    summaries = list(summaries)
    gids = [s.group_id for s in summaries]
    values = {}
    active = None
    k = 0
    last = 1.0
    while True:
        gamma = round(1.0 + k * resolution, 12)
        if gamma > gamma_max + 1e-12:
            break
        grid = gamma_grid_bounds(summaries, [gamma], direction=direction, method=method)
        report = closed_test(dict(zip(gids, grid.p_upper[:, 0])), alpha, tau, gamma=gamma)
        if active is None:
            values = {s: None for s in report.subset_pvalues}
            active = set(report.rejected_subsets)
        else:
            active &= set(report.rejected_subsets)
        for s in active:
            values[s] = gamma
        last = gamma
        if not active:
            break
        k += 1
    censored = sorted(active or (), key=lambda s: (len(s), [gids.index(g) for g in s]))
    return SensitivityValues(gids, resolution, last, values, censored)
