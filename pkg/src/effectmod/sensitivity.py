"""McNemar-type sensitivity bounds for matched pairs with a binary outcome.

Under the sensitivity model, the chance that the treated member of a discordant
pair is the one *without* the event is at most ``Gamma / (1 + Gamma)``.  The
number ``T`` of discordant pairs in which only the control had the event is then
stochastically no larger than Binomial(D, Gamma/(1+Gamma)) when treatment has
no effect, which gives the upper bound ``P(X >= T)`` on the one-sided P-value.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from .exceptions import InputError, NumericError

__all__ = [
    "GammaValue",
    "PValueBound",
    "SensitivityGrid",
    "Amplification",
    "log_binomial_pmf",
    "log_binomial_sf",
    "binomial_sf",
    "mcnemar_upper_pvalue",
    "mcnemar_odds_ratio",
    "tail_count",
    "gamma_grid_bounds",
    "amplify",
    "amplification_table",
]

_LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# log(n!) - ((n + 1/2) log n - n + log sqrt(2 pi)) for n = 0, ..., 15
_STIRLERR_TABLE = [0.0]  # n = 0 is handled separately below
for _n in range(1, 16):
    _STIRLERR_TABLE.append(
        math.lgamma(_n + 1.0) - (_n + 0.5) * math.log(_n) + _n - _LN_SQRT_2PI
    )


def _stirlerr(n):
    """Error of Stirling's approximation to log(n!)."""
    if n <= 15:
        return _STIRLERR_TABLE[int(n)]
    nn = n * n
    s0, s1, s2, s3, s4 = (
        1.0 / 12,
        1.0 / 360,
        1.0 / 1260,
        1.0 / 1680,
        1.0 / 1188,
    )
    if n > 500:
        return (s0 - s1 / nn) / n
    if n > 80:
        return (s0 - (s1 - s2 / nn) / nn) / n
    if n > 35:
        return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n
    return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n


def _bd0(x, np_):
    """x log(x / np) + np - x, without cancellation when x is close to np."""
    if abs(x - np_) < 0.1 * (x + np_):
        v = (x - np_) / (x + np_)
        s = (x - np_) * v
        ej = 2.0 * x * v
        v2 = v * v
        for j in range(1, 1000):
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
    return x * math.log(x / np_) + np_ - x


def log_binomial_pmf(k, n, p):
    """log P(X = k) for X ~ Binomial(n, p), accurate to a few ulps.

    Uses the saddle-point expansion (Loader, 2000) so that no large
    log-factorials are differenced.
    """
    q = 1.0 - p
    if p == 0.0:
        return 0.0 if k == 0 else -math.inf
    if q == 0.0:
        return 0.0 if k == n else -math.inf
    if k == 0:
        return n * math.log1p(-p)
    if k == n:
        return n * math.log(p)
    lc = (
        _stirlerr(n)
        - _stirlerr(k)
        - _stirlerr(n - k)
        - _bd0(k, n * p)
        - _bd0(n - k, n * q)
    )
    return lc + 0.5 * math.log(n / (2.0 * math.pi * k * (n - k)))


def _log_sum_pmf(lo, hi, k0, n, p):
    """log of sum_{k=lo}^{hi} P(X = k), anchored at k0 in [lo, hi] (the
    largest term).  Terms are reached from the anchor with the ratio
    ``pmf(k+1)/pmf(k) = (n-k)/(k+1) * p/(1-p)`` in log space."""
    lp0 = log_binomial_pmf(k0, n, p)
    logit = math.log(p) - math.log1p(-p)
    k_up = np.arange(k0, hi, dtype=np.float64)
    up = np.cumsum(np.log(n - k_up) - np.log(k_up + 1.0) + logit)
    k_dn = np.arange(k0, lo, -1, dtype=np.float64)
    dn = np.cumsum(np.log(k_dn) - np.log(n - k_dn + 1.0) - logit)
    return lp0 + float(logsumexp(np.concatenate(([0.0], up, dn))))


def log_binomial_sf(t, n, p):
    """log P(X >= t) for X ~ Binomial(n, p).

    Whichever tail lies away from the mode is summed outward from its
    largest term, so nothing underflows even for n in the tens of
    thousands.  When t is at or below the mode the result is
    ``log(1 - P(X < t))``, which keeps values near 1 accurate.
    """
    t, n = int(t), int(n)
    if t <= 0:
        return 0.0
    if t > n:
        return -math.inf
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return 0.0
    mode = min(n, max(0, int(math.floor((n + 1) * p))))
    if t > mode:
        out = _log_sum_pmf(t, n, t, n, p)
    else:
        lower = _log_sum_pmf(0, t - 1, t - 1, n, p)
        out = math.log1p(-math.exp(lower)) if lower < 0.0 else -math.inf
    if math.isnan(out):
        raise NumericError(f"binomial tail failed for t={t}, n={n}, p={p}")
    return min(out, 0.0)


def binomial_sf(t, n, p):
    """P(X >= t) for X ~ Binomial(n, p)."""
    return math.exp(log_binomial_sf(t, n, p))


@dataclass(frozen=True)
class GammaValue:
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 1.0:
            raise InputError(f"Gamma must be >= 1, got {self.gamma}")

    @property
    def p_plus(self):
        """Largest chance a discordant pair's treated member is event-free."""
        if math.isinf(self.gamma):
            return 1.0
        return self.gamma / (1.0 + self.gamma)


@dataclass(frozen=True)
class PValueBound:
    group_id: object
    gamma: float
    p_upper: float
    method: str = "exact"

    def __float__(self):
        return float(self.p_upper)


def _check_counts(d, t):
    if d < 0 or t < 0:
        raise InputError(f"counts must be nonnegative, got D={d}, T={t}")
    if t > d:
        raise InputError(f"T={t} exceeds the number of discordant pairs D={d}")


def mcnemar_upper_pvalue(d, t, gamma, *, method="exact", group_id=None) -> PValueBound:
    """Upper bound on the one-sided McNemar P-value under bias at most Gamma.

    Parameters
    ----------
    d : int
        Number of discordant pairs.
    t : int
        Discordant pairs in the direction of the alternative (by default,
        pairs where only the control had the event).
    gamma : float
        Sensitivity parameter, >= 1.
    method : {"exact", "normal"}
        Exact binomial tail, or a normal approximation with continuity
        correction.
    """
    d, t = int(d), int(t)
    _check_counts(d, t)
    g = gamma if isinstance(gamma, GammaValue) else GammaValue(float(gamma))
    p_plus = g.p_plus
    if d == 0:
        pval = 1.0
    elif method == "exact":
        pval = binomial_sf(t, d, p_plus)
    elif method == "normal":
        var = d * p_plus * (1.0 - p_plus)
        if var == 0.0:
            pval = 1.0 if t <= d * p_plus else 0.0
        else:
            pval = float(ndtr(-(t - 0.5 - d * p_plus) / math.sqrt(var)))
    else:
        raise InputError(f"unknown method {method!r}; use 'exact' or 'normal'")
    return PValueBound(group_id, g.gamma, min(max(pval, 0.0), 1.0), method)


def tail_count(summary, direction="control"):
    """Discordant count counted as evidence against no effect.

    ``direction="control"`` (default) tests for fewer events under treatment,
    so evidence is pairs where only the control had the event.
    """
    if direction == "control":
        return summary.n_control_only
    if direction == "treated":
        return summary.n_treated_only
    raise InputError(f"direction must be 'control' or 'treated', got {direction!r}")


def mcnemar_odds_ratio(summary, direction="control"):
    """Odds ratio from discordant pairs, ``T / (D - T)``.

    Returns ``None`` when no discordant pair points the other way.
    """
    num = tail_count(summary, direction)
    den = summary.n_discordant - num
    if den == 0:
        return None
    return num / den


@dataclass
class SensitivityGrid:
    """Upper-bound P-values for each group (rows) and Gamma (columns)."""

    gammas: np.ndarray
    group_ids: list
    p_upper: np.ndarray
    pooled: np.ndarray | None = None
    combined: np.ndarray | None = None
    method: str = "exact"
    tau: float | None = None

    def column(self, gamma):
        j = self.gamma_index(gamma)
        return dict(zip(self.group_ids, self.p_upper[:, j]))

    def gamma_index(self, gamma):
        hits = np.flatnonzero(np.isclose(self.gammas, gamma, rtol=0, atol=1e-12))
        if not len(hits):
            raise KeyError(gamma)
        return int(hits[0])

    def header(self):
        cols = ["gamma", *[f"group_{g}" for g in self.group_ids]]
        if self.pooled is not None:
            cols.append("pooled")
        if self.combined is not None:
            cols.append("truncated_product")
        return cols

    def rows(self):
        for j, gamma in enumerate(self.gammas):
            row = [float(gamma), *map(float, self.p_upper[:, j])]
            if self.pooled is not None:
                row.append(float(self.pooled[j]))
            if self.combined is not None:
                row.append(float(self.combined[j]))
            yield row

    def to_csv(self, digits=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.rows():
            if digits is None:
                writer.writerow([repr(v) for v in row])
            else:
                writer.writerow([f"{row[0]:g}"] + [f"{v:.{digits}f}" for v in row[1:]])
        return buf.getvalue()

    def to_dict(self):
        out = {
            "method": self.method,
            "gammas": [float(g) for g in self.gammas],
            "groups": {
                str(g): [float(v) for v in self.p_upper[i]] for i, g in enumerate(self.group_ids)
            },
        }
        if self.pooled is not None:
            out["pooled"] = [float(v) for v in self.pooled]
        if self.combined is not None:
            out["truncated_product"] = [float(v) for v in self.combined]
            out["tau"] = self.tau
        return out


def _check_gammas(gammas):
    gammas = np.asarray(list(gammas), dtype=np.float64)
    if gammas.ndim != 1 or not len(gammas):
        raise InputError("need at least one Gamma value")
    if np.any(gammas < 1.0) or np.any(~np.isfinite(gammas)):
        raise InputError(f"every Gamma must be finite and >= 1, got {gammas.tolist()}")
    if np.any(np.diff(gammas) < 0):
        raise InputError("Gamma grid must be sorted ascending")
    return gammas


def gamma_grid_bounds(
    summaries: Sequence,
    gammas,
    *,
    pooled=None,
    direction="control",
    method="exact",
) -> SensitivityGrid:
    """Evaluate the McNemar bound for every (group, Gamma) cell.

    ``pooled`` is an optional summary of all pairs; when given, its bounds
    fill the ``pooled`` row of the grid.
    """
    gammas = _check_gammas(gammas)
    summaries = list(summaries)
    p = np.empty((len(summaries), len(gammas)))
    for i, s in enumerate(summaries):
        t = tail_count(s, direction)
        for j, g in enumerate(gammas):
            p[i, j] = mcnemar_upper_pvalue(s.n_discordant, t, g, method=method).p_upper
    pooled_row = None
    if pooled is not None:
        t = tail_count(pooled, direction)
        pooled_row = np.array(
            [mcnemar_upper_pvalue(pooled.n_discordant, t, g, method=method).p_upper for g in gammas]
        )
    return SensitivityGrid(gammas, [s.group_id for s in summaries], p, pooled_row, method=method)


@dataclass(frozen=True)
class Amplification:
    """A bias of ``gamma`` read as a pair (lambda, delta) of odds multipliers.

    ``lam`` acts on the odds of treatment, ``delta`` on the odds of the
    outcome.
    """

    gamma: float
    lam: float
    delta: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "delta", amplify(self.gamma, self.lam))


def amplify(gamma, lam):
    """Outcome odds multiplier matching treatment odds multiplier ``lam``.

    ``delta = (gamma * lam - 1) / (lam - gamma)``; the map is an involution,
    so ``amplify(gamma, amplify(gamma, lam)) == lam``.
    """
    gamma, lam = float(gamma), float(lam)
    if gamma < 1.0:
        raise InputError(f"Gamma must be >= 1, got {gamma}")
    if not lam > gamma:
        raise InputError(f"Lambda must exceed Gamma ({gamma}), got {lam}")
    return (gamma * lam - 1.0) / (lam - gamma)


def amplification_table(gamma, lams):
    return [Amplification(float(gamma), float(lam)) for lam in lams]
