"""Patient and pair records, CSV ingestion, exact re-pairing and pair summaries.

Outcomes are binary with 1 = event (death, ICU use) and 0 = no event.  A pair's
signed difference is ``y_treated - y_control``; discordant pairs are those where
exactly one member had the event.
"""
from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import InputError

logger = logging.getLogger(__name__)

__all__ = [
    "PatientSchema",
    "PatientRecord",
    "PairRecord",
    "PairingReport",
    "Partition",
    "DiscordantSummary",
    "PairedCrossTab",
    "load_patients",
    "write_patients",
    "repair_exact",
    "load_pairs",
    "write_pairs",
    "summarize",
    "pool_summaries",
    "crosstab",
]

_BINARY = {"0": 0, "1": 1}


@dataclass(frozen=True)
class PatientSchema:
    """Column roles in a patient file."""

    stratum: tuple[str, ...]
    refinement: tuple[str, ...] = ()
    outcomes: tuple[str, ...] = ()

    def __post_init__(self):
        names = list(self.stratum) + list(self.refinement) + list(self.outcomes)
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise InputError(f"column declared twice in schema: {sorted(dup)}")
        if {"patient_id", "treated"} & set(names):
            raise InputError("schema may not redeclare patient_id or treated")

    @property
    def columns(self):
        return ("patient_id", "treated", *self.stratum, *self.refinement, *self.outcomes)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    treated: int
    stratum_key: Mapping[str, str]
    refinement_key: Mapping[str, int] = field(default_factory=dict)
    outcomes: Mapping[str, int] = field(default_factory=dict)

    def key_value(self, name):
        if name in self.stratum_key:
            return self.stratum_key[name]
        return self.refinement_key[name]


@dataclass(frozen=True)
class PairRecord:
    """One matched pair.

    ``shared_covariates`` maps covariate name to its (string) value, or to
    ``None`` when the two members disagree on it (possible only for pairs
    formed on a coarse key).  ``outcomes`` maps outcome name to
    ``(y_treated, y_control)``.
    """

    pair_id: str
    shared_covariates: Mapping[str, str | None]
    outcomes: Mapping[str, tuple[int, int]]

    def y_treated(self, outcome):
        return self._outcome(outcome)[0]

    def y_control(self, outcome):
        return self._outcome(outcome)[1]

    def difference(self, outcome):
        yt, yc = self._outcome(outcome)
        return yt - yc

    def unsigned(self, outcome):
        yt, yc = self._outcome(outcome)
        return abs(yt - yc)

    def swapped(self):
        """The same pair with treated and control roles exchanged."""
        return PairRecord(
            self.pair_id,
            self.shared_covariates,
            {k: (yc, yt) for k, (yt, yc) in self.outcomes.items()},
        )

    def _outcome(self, outcome):
        try:
            return self.outcomes[outcome]
        except KeyError:
            raise InputError(f"pair {self.pair_id!r} has no outcome {outcome!r}") from None


# ---------------------------------------------------------------------------
# Patient files


def _parse_binary(value, column, line, path):
    try:
        return _BINARY[value.strip()]
    except KeyError:
        raise InputError(
            f"column {column!r}: expected 0 or 1, got {value!r}", line=line, path=path
        ) from None


def _check_header(header, required, path):
    if header is None:
        raise InputError("file is empty (no header row)", path=path)
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"missing column(s): {', '.join(missing)}", line=1, path=path)
    extra = [c for c in header if c not in required]
    if extra:
        logger.warning("%s: ignoring undeclared column(s) %s", path, extra)
    return header


def load_patients(path, schema: PatientSchema) -> list[PatientRecord]:
    """Read a patient CSV declared by ``schema``.

    Raises :class:`InputError` naming the line for malformed rows, non-binary
    values in binary columns, empty cells and duplicate ``patient_id``.
    """
    path = Path(path)
    records = []
    seen = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = _check_header(next(reader, None), schema.columns, path)
        index = {name: header.index(name) for name in schema.columns}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"expected {len(header)} fields, found {len(row)}", line=line, path=path
                )
            cell = {name: row[i].strip() for name, i in index.items()}
            for name, value in cell.items():
                if value == "":
                    raise InputError(f"missing value in column {name!r}", line=line, path=path)
            pid = cell["patient_id"]
            if pid in seen:
                raise InputError(
                    f"duplicate patient_id {pid!r} (first seen on line {seen[pid]})",
                    line=line,
                    path=path,
                )
            seen[pid] = line
            records.append(
                PatientRecord(
                    patient_id=pid,
                    treated=_parse_binary(cell["treated"], "treated", line, path),
                    stratum_key={k: cell[k] for k in schema.stratum},
                    refinement_key={
                        k: _parse_binary(cell[k], k, line, path) for k in schema.refinement
                    },
                    outcomes={k: _parse_binary(cell[k], k, line, path) for k in schema.outcomes},
                )
            )
    n_treated = sum(r.treated for r in records)
    logger.info(
        "%s: %d patients (%d treated, %d control)",
        path,
        len(records),
        n_treated,
        len(records) - n_treated,
    )
    return records


def write_patients(path, patients: Iterable[PatientRecord], schema: PatientSchema):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.columns)
        for p in patients:
            writer.writerow(
                [p.patient_id, p.treated]
                + [p.stratum_key[k] for k in schema.stratum]
                + [p.refinement_key[k] for k in schema.refinement]
                + [p.outcomes[k] for k in schema.outcomes]
            )


# ---------------------------------------------------------------------------
# Re-pairing


@dataclass
class PairingReport:
    n_patients: int
    n_treated: int
    n_control: int
    fine_pairs: int
    coarse_pairs: int
    unpaired: int
    fine_keys: tuple[str, ...] = ()
    coarse_keys: tuple[str, ...] = ()

    @property
    def total_pairs(self):
        return self.fine_pairs + self.coarse_pairs

    def to_dict(self):
        return {
            "n_patients": self.n_patients,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "fine_keys": list(self.fine_keys),
            "coarse_keys": list(self.coarse_keys),
            "phase1_fine_pairs": self.fine_pairs,
            "phase2_coarse_pairs": self.coarse_pairs,
            "total_pairs": self.total_pairs,
            "unpaired": self.unpaired,
        }


def _make_pair(pair_id, treated: PatientRecord, control: PatientRecord):
    shared = {}
    for name in list(treated.stratum_key) + list(treated.refinement_key):
        a, b = treated.key_value(name), control.key_value(name)
        shared[name] = str(a) if a == b else None
    outcomes = {k: (treated.outcomes[k], control.outcomes[k]) for k in treated.outcomes}
    return PairRecord(pair_id, shared, outcomes)


def _pair_within_cells(patients, keys):
    """Pair treated with controls inside each cell of ``keys``.

    Cells are visited in order of first appearance and members paired in
    ascending input order.  Returns (pairs as (treated, control) tuples,
    leftovers in input order).
    """
    cells = OrderedDict()
    for pos, p in enumerate(patients):
        cell = tuple(p.key_value(k) for k in keys)
        cells.setdefault(cell, ([], []))[0 if p.treated else 1].append((pos, p))
    matched = []
    leftover = []
    for treated, control in cells.values():
        m = min(len(treated), len(control))
        matched.extend((t[1], c[1]) for t, c in zip(treated[:m], control[:m]))
        leftover.extend(treated[m:])
        leftover.extend(control[m:])
    leftover.sort(key=lambda item: item[0])
    return matched, [p for _, p in leftover]


def repair_exact(
    patients: Sequence[PatientRecord],
    fine_keys: Sequence[str],
    coarse_keys: Sequence[str] = (),
):
    """Two-phase exact pairing of treated and control patients.

    Phase 1 pairs within cells of the stratum key crossed with ``fine_keys``,
    forming ``min(#treated, #control)`` pairs per cell.  Phase 2 pairs the
    phase-1 leftovers within cells of the stratum key crossed with
    ``coarse_keys``.  Whatever remains is returned unpaired.

    Returns
    -------
    pairs : list of PairRecord
    unpaired : list of PatientRecord
    report : PairingReport
    """
    patients = list(patients)
    fine_keys = tuple(fine_keys)
    coarse_keys = tuple(coarse_keys)
    n_treated = sum(p.treated for p in patients)
    if not patients:
        report = PairingReport(0, 0, 0, 0, 0, 0, fine_keys, coarse_keys)
        return [], [], report

    stratum = tuple(patients[0].stratum_key)
    known = set(stratum) | set(patients[0].refinement_key)
    for name in fine_keys + coarse_keys:
        if name not in known:
            raise InputError(f"unknown key {name!r}; known keys: {sorted(known)}")
    stray = set(coarse_keys) - set(fine_keys) - set(stratum)
    if stray:
        raise InputError(f"coarse keys must be drawn from the fine keys: {sorted(stray)}")

    fine_cell = stratum + tuple(k for k in fine_keys if k not in stratum)
    coarse_cell = stratum + tuple(k for k in coarse_keys if k not in stratum)

    phase1, rest = _pair_within_cells(patients, fine_cell)
    phase2, unpaired = _pair_within_cells(rest, coarse_cell) if coarse_keys else ([], rest)

    pairs = [
        _make_pair(f"P{i:06d}", t, c) for i, (t, c) in enumerate(phase1 + phase2, start=1)
    ]
    report = PairingReport(
        n_patients=len(patients),
        n_treated=n_treated,
        n_control=len(patients) - n_treated,
        fine_pairs=len(phase1),
        coarse_pairs=len(phase2),
        unpaired=len(unpaired),
        fine_keys=fine_keys,
        coarse_keys=coarse_keys,
    )
    logger.info(
        "paired %d exactly on %s and %d more on %s; %d unpaired",
        report.fine_pairs,
        fine_cell,
        report.coarse_pairs,
        coarse_cell,
        report.unpaired,
    )
    return pairs, unpaired, report


# ---------------------------------------------------------------------------
# Pair files


def write_pairs(path, pairs: Sequence[PairRecord], covariates=None, outcomes=None):
    pairs = list(pairs)
    if covariates is None:
        covariates = list(pairs[0].shared_covariates) if pairs else []
    if outcomes is None:
        outcomes = list(pairs[0].outcomes) if pairs else []
    header = ["pair_id", *covariates]
    for o in outcomes:
        header += [f"{o}_treated", f"{o}_control"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for p in pairs:
            row = [p.pair_id]
            row += ["" if p.shared_covariates[c] is None else p.shared_covariates[c] for c in covariates]
            for o in outcomes:
                row += list(p.outcomes[o])
            writer.writerow(row)


def load_pairs(path, outcomes=None):
    """Read a pair CSV.

    Outcome columns are recognised as ``<name>_treated``/``<name>_control``
    couples; every other column except ``pair_id`` is a covariate.  An empty
    covariate cell means the members were not matched on that covariate.

    Returns ``(pairs, covariate_names, outcome_names)``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError("file is empty (no header row)", path=path)
        header = [h.strip() for h in header]
        if "pair_id" not in header:
            raise InputError("missing column(s): pair_id", line=1, path=path)
        found = [
            h[: -len("_treated")]
            for h in header
            if h.endswith("_treated") and h[: -len("_treated")] + "_control" in header
        ]
        if outcomes is None:
            outcomes = found
        else:
            outcomes = list(outcomes)
            missing = [f"{o}_{s}" for o in outcomes for s in ("treated", "control") if f"{o}_{s}" not in header]
            if missing:
                raise InputError(f"missing column(s): {', '.join(missing)}", line=1, path=path)
        outcome_cols = {f"{o}_{s}" for o in found for s in ("treated", "control")}
        covariates = [h for h in header if h != "pair_id" and h not in outcome_cols]
        idx = {h: i for i, h in enumerate(header)}

        pairs = []
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"expected {len(header)} fields, found {len(row)}", line=line, path=path
                )
            pid = row[idx["pair_id"]].strip()
            if not pid:
                raise InputError("missing pair_id", line=line, path=path)
            if pid in seen:
                raise InputError(f"duplicate pair_id {pid!r}", line=line, path=path)
            seen.add(pid)
            shared = {c: (row[idx[c]].strip() or None) for c in covariates}
            outs = {}
            for o in outcomes:
                yt = _parse_binary(row[idx[f"{o}_treated"]], f"{o}_treated", line, path)
                yc = _parse_binary(row[idx[f"{o}_control"]], f"{o}_control", line, path)
                outs[o] = (yt, yc)
            pairs.append(PairRecord(pid, shared, outs))
    return pairs, covariates, list(outcomes)


# ---------------------------------------------------------------------------
# Partitions and summaries


@dataclass(frozen=True)
class Partition:
    """Mutually exclusive, exhaustive assignment of pairs to groups."""

    group_ids: tuple
    assignment: Mapping[str, object]
    provenance: str = "user-supplied"

    def __post_init__(self):
        gids = set(self.group_ids)
        if len(gids) != len(self.group_ids):
            raise InputError("duplicate group id in partition")
        used = set(self.assignment.values())
        unknown = used - gids
        if unknown:
            raise InputError(f"pairs assigned to undeclared groups: {sorted(map(str, unknown))}")
        empty = [g for g in self.group_ids if g not in used]
        if empty:
            raise InputError(f"empty group(s) in partition: {empty}")

    @property
    def n_groups(self):
        return len(self.group_ids)

    def group_of(self, pair_id):
        try:
            return self.assignment[pair_id]
        except KeyError:
            raise InputError(f"pair {pair_id!r} is not assigned to any group") from None

    def sizes(self):
        counts = {g: 0 for g in self.group_ids}
        for g in self.assignment.values():
            counts[g] += 1
        return counts

    def members(self, pairs, group_id):
        return [p for p in pairs if self.assignment.get(p.pair_id) == group_id]

    @classmethod
    def single(cls, pairs, group_id=1):
        return cls((group_id,), {p.pair_id: group_id for p in pairs}, "single")

    @classmethod
    def from_column(cls, pairs, column):
        """Groups given by a covariate column (a priori or external groups)."""
        assignment = {}
        for p in pairs:
            if column not in p.shared_covariates:
                raise InputError(f"group column {column!r} not present in pair data")
            value = p.shared_covariates[column]
            if value is None:
                raise InputError(f"pair {p.pair_id!r} has no value for group column {column!r}")
            assignment[p.pair_id] = value
        labels = sorted(set(assignment.values()), key=_natural_key)
        return cls(tuple(labels), assignment, f"column:{column}")


def _natural_key(label):
    try:
        return (0, float(label), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(label))


@dataclass(frozen=True)
class DiscordantSummary:
    """Pair counts for one group and one binary outcome.

    ``n_control_only`` (T) counts discordant pairs where only the control had
    the event; ``n_treated_only`` is D - T.
    """

    group_id: object
    n_pairs: int
    n_discordant: int
    n_control_only: int
    n_events_treated: int
    n_events_control: int

    def __post_init__(self):
        if not 0 <= self.n_control_only <= self.n_discordant <= self.n_pairs:
            raise InputError(
                f"group {self.group_id}: need 0 <= T <= D <= I, got "
                f"T={self.n_control_only}, D={self.n_discordant}, I={self.n_pairs}"
            )
        both = self.n_events_control - self.n_control_only
        if both < 0 or both != self.n_events_treated - self.n_treated_only:
            raise InputError(f"group {self.group_id}: event counts inconsistent with D and T")

    @property
    def n_treated_only(self):
        return self.n_discordant - self.n_control_only

    @property
    def n_both_events(self):
        return self.n_events_control - self.n_control_only

    @property
    def event_rate_treated(self):
        return self.n_events_treated / self.n_pairs if self.n_pairs else float("nan")

    @property
    def event_rate_control(self):
        return self.n_events_control / self.n_pairs if self.n_pairs else float("nan")

    @property
    def discordant_fraction(self):
        return self.n_discordant / self.n_pairs if self.n_pairs else float("nan")

    @classmethod
    def from_counts(cls, group_id, n_pairs, n_discordant, n_control_only, n_both_events=0):
        n_treated_only = n_discordant - n_control_only
        return cls(
            group_id,
            n_pairs,
            n_discordant,
            n_control_only,
            n_events_treated=n_both_events + n_treated_only,
            n_events_control=n_both_events + n_control_only,
        )

    def to_dict(self):
        return {
            "group_id": self.group_id,
            "n_pairs": self.n_pairs,
            "n_discordant": self.n_discordant,
            "n_control_only": self.n_control_only,
            "n_treated_only": self.n_treated_only,
            "n_events_treated": self.n_events_treated,
            "n_events_control": self.n_events_control,
            "event_rate_treated": self.event_rate_treated,
            "event_rate_control": self.event_rate_control,
        }


def _count(group_id, outcomes):
    arr = np.asarray(outcomes, dtype=np.int64).reshape(-1, 2)
    yt, yc = arr[:, 0], arr[:, 1]
    return DiscordantSummary(
        group_id,
        n_pairs=len(arr),
        n_discordant=int(np.sum(yt != yc)),
        n_control_only=int(np.sum((yc == 1) & (yt == 0))),
        n_events_treated=int(yt.sum()),
        n_events_control=int(yc.sum()),
    )


def pool_summaries(summaries, group_id="pooled"):
    summaries = list(summaries)
    return DiscordantSummary(
        group_id,
        n_pairs=sum(s.n_pairs for s in summaries),
        n_discordant=sum(s.n_discordant for s in summaries),
        n_control_only=sum(s.n_control_only for s in summaries),
        n_events_treated=sum(s.n_events_treated for s in summaries),
        n_events_control=sum(s.n_events_control for s in summaries),
    )


def summarize(pairs: Sequence[PairRecord], partition: Partition, outcome: str):
    """Per-group discordance counts for ``outcome``.

    Returns ``(group_summaries, pooled)`` with group summaries in
    ``partition.group_ids`` order.
    """
    buckets = {g: [] for g in partition.group_ids}
    for p in pairs:
        buckets[partition.group_of(p.pair_id)].append(p._outcome(outcome))
    groups = [_count(g, buckets[g]) for g in partition.group_ids]
    return groups, pool_summaries(groups)


# ---------------------------------------------------------------------------
# Cross-tabulation


@dataclass(frozen=True)
class PairedCrossTab:
    """Pair counts indexed by (control category, treated category)."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: np.ndarray

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    @property
    def col_totals(self):
        return self.counts.sum(axis=0)

    @property
    def total(self):
        return int(self.counts.sum())

    def discordance(self, event_labels):
        """(D, T) for the binary outcome "member falls in ``event_labels``"."""
        ev_r = np.isin(self.row_labels, list(event_labels))
        ev_c = np.isin(self.col_labels, list(event_labels))
        control_only = int(self.counts[np.ix_(ev_r, ~ev_c)].sum())
        treated_only = int(self.counts[np.ix_(~ev_r, ev_c)].sum())
        return control_only + treated_only, control_only

    def render(self):
        width = max(len(s) for s in self.row_labels + self.col_labels + ("Control",)) + 2
        lines = ["Control".ljust(width) + "".join(c.rjust(width) for c in self.col_labels) + "Total".rjust(width)]
        for label, row, tot in zip(self.row_labels, self.counts, self.row_totals):
            lines.append(label.ljust(width) + "".join(str(v).rjust(width) for v in row) + str(tot).rjust(width))
        lines.append(
            "Total".ljust(width)
            + "".join(str(v).rjust(width) for v in self.col_totals)
            + str(self.total).rjust(width)
        )
        return "\n".join(lines)


def _categorize(outcomes_of_member, axis_spec, pair_id):
    hits = [
        label
        for label, cond in axis_spec
        if all(outcomes_of_member[k] == v for k, v in cond.items())
    ]
    if len(hits) != 1:
        what = "no category" if not hits else f"several categories {hits}"
        raise InputError(f"pair {pair_id!r}: member matches {what}")
    return hits[0]


def crosstab(pairs: Sequence[PairRecord], axis_spec) -> PairedCrossTab:
    """Cross-tabulate pairs on a composite outcome.

    ``axis_spec`` is an ordered sequence of ``(label, conditions)`` where
    ``conditions`` maps outcome name to the required value, e.g.
    ``[("Dead", {"death": 1}), ("Alive, ICU", {"death": 0, "icu": 1}), ...]``.
    Each member must match exactly one category.
    """
    axis_spec = [(label, dict(cond)) for label, cond in axis_spec]
    labels = tuple(label for label, _ in axis_spec)
    pos = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p in pairs:
        try:
            treated = {k: v[0] for k, v in p.outcomes.items()}
            control = {k: v[1] for k, v in p.outcomes.items()}
            r = pos[_categorize(control, axis_spec, p.pair_id)]
            c = pos[_categorize(treated, axis_spec, p.pair_id)]
        except KeyError as exc:
            raise InputError(f"pair {p.pair_id!r} lacks outcome {exc.args[0]!r}") from None
        counts[r, c] += 1
    return PairedCrossTab(labels, labels, counts)
