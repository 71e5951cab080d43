"""Pair-level data rebuilt from published group summaries.

The source is a Medicare study of 23,715 matched pairs of surgical patients,
one treated at a magnet hospital (superior nursing) and one at a control
hospital, split into five groups by a regression tree.  Only group-level
counts were published, so the pairs here are a reconstruction: every count
and rounded rate agrees with the published tables, but the pairing of
mortality and ICU outcomes within a group is arbitrary except in group 2,
where the full mortality-by-ICU cross-tabulation is known.

Outcomes: ``death`` (30-day mortality) and ``icu`` (ICU use); 1 = event.
The treated member is the magnet-hospital patient.
"""
from __future__ import annotations

import numpy as np

from .pairs import DiscordantSummary, PairedCrossTab, PairRecord, pool_summaries

__all__ = [
    "GROUP_IDS",
    "GROUP_LABELS",
    "N_PAIRS",
    "DEATH_COUNTS",
    "ICU_COUNTS",
    "GROUP2_CROSSTAB",
    "COMPOSITE_AXIS",
    "summaries",
    "group2_crosstab",
    "magnet_pairs",
]

GROUP_IDS = (1, 2, 3, 4, 5)

GROUP_LABELS = {
    1: {"chf": "no", "procedures": "proc1", "er": "both"},
    2: {"chf": "no", "procedures": "proc2", "er": "no"},
    3: {"chf": "no", "procedures": "proc2", "er": "yes"},
    4: {"chf": "yes", "procedures": "proc3", "er": "both"},
    5: {"chf": "yes", "procedures": "proc4", "er": "both"},
}

N_PAIRS = {1: 10127, 2: 5636, 3: 2943, 4: 2086, 5: 2923}

# (discordant pairs D, control-only events T, pairs with both members' events)
DEATH_COUNTS = {
    1: (210, 123, 5),
    2: (293, 177, 23),
    3: (488, 254, 63),
    4: (217, 122, 7),
    5: (760, 411, 132),
}
ICU_COUNTS = {
    1: (2675, 1659, 535),
    2: (2361, 1586, 856),
    3: (1282, 801, 1101),
    4: (859, 541, 537),
    5: (970, 633, 1704),
}

# Group 2 pairs by (control category, magnet category).
GROUP2_CROSSTAB = np.array(
    [
        [23, 72, 105],
        [60, 744, 1493],
        [56, 726, 2357],
    ]
)
COMPOSITE_AXIS = (
    ("Dead", {"death": 1}),
    ("Alive, ICU", {"death": 0, "icu": 1}),
    ("Alive, no ICU", {"death": 0, "icu": 0}),
)

# Group 2 cells expanded with the ICU flags of members who died, chosen so the
# ICU counts for the group also match: (count, death_t, death_c, icu_t, icu_c).
_GROUP2_CELLS = (
    (10, 1, 1, 1, 1),
    (5, 1, 1, 0, 1),
    (3, 1, 1, 1, 0),
    (5, 1, 1, 0, 0),
    (62, 0, 1, 1, 1),
    (10, 0, 1, 1, 0),
    (68, 0, 1, 0, 1),
    (37, 0, 1, 0, 0),
    (40, 1, 0, 1, 1),
    (20, 1, 0, 0, 1),
    (744, 0, 0, 1, 1),
    (1493, 0, 0, 0, 1),
    (36, 1, 0, 1, 0),
    (20, 1, 0, 0, 0),
    (726, 0, 0, 1, 0),
    (2357, 0, 0, 0, 0),
)


def summaries(outcome="death"):
    """Published group summaries as ``(groups, pooled)``."""
    table = {"death": DEATH_COUNTS, "icu": ICU_COUNTS}[outcome]
    groups = [
        DiscordantSummary.from_counts(g, N_PAIRS[g], *table[g]) for g in GROUP_IDS
    ]
    return groups, pool_summaries(groups)


def group2_crosstab():
    labels = tuple(label for label, _ in COMPOSITE_AXIS)
    return PairedCrossTab(labels, labels, GROUP2_CROSSTAB.copy())


def _patterns(n, d, t, both):
    """(y_treated, y_control) rows: both events, control only, treated only, none."""
    return (
        [(1, 1)] * both
        + [(0, 1)] * t
        + [(1, 0)] * (d - t)
        + [(0, 0)] * (n - both - d)
    )


def magnet_pairs():
    """All 23,715 reconstructed pairs.

    Covariates: ``group`` (1-5) and ``chf`` ("0"/"1").
    """
    pairs = []
    k = 0
    for g in GROUP_IDS:
        chf = "1" if GROUP_LABELS[g]["chf"] == "yes" else "0"
        if g == 2:
            rows = [
                ((dt, dc), (it, ic))
                for count, dt, dc, it, ic in _GROUP2_CELLS
                for _ in range(count)
            ]
        else:
            rows = list(
                zip(_patterns(N_PAIRS[g], *DEATH_COUNTS[g]), _patterns(N_PAIRS[g], *ICU_COUNTS[g]))
            )
        for death, icu in rows:
            k += 1
            pairs.append(
                PairRecord(f"M{k:05d}", {"group": str(g), "chf": chf}, {"death": death, "icu": icu})
            )
    return pairs
