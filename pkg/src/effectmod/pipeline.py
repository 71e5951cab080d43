"""End-to-end workflows: pairing, tree fitting, sensitivity reports, simulation.

Each ``run_*`` function returns in-memory results and, when given an output
directory, writes its artifacts there in one pass at the end.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .exceptions import InputError
from .multiplicity import closed_test, max_gamma_rejection, with_truncated_product
from .pairs import (
    Partition,
    PatientSchema,
    load_pairs,
    load_patients,
    repair_exact,
    summarize,
    write_pairs,
    write_patients,
)
from .sensitivity import amplification_table, gamma_grid_bounds, mcnemar_odds_ratio
from .simulate import SyntheticSpec, generate
from .tree import (
    TreeConfig,
    assign_groups,
    build_tree,
    describe_tree,
    infer_covariates,
    render_tree,
    route,
    subdivide_partition,
)

logger = logging.getLogger(__name__)

__all__ = [
    "REPORT_SCHEMA",
    "DEFAULT_GAMMAS",
    "AnalysisConfig",
    "ReportBundle",
    "load_config",
    "run_pair",
    "run_tree",
    "run_analyze",
    "run_simulate",
    "run_amplify",
]

REPORT_SCHEMA = "effectmod.report/1"
DEFAULT_GAMMAS = (1.0, 1.05, 1.10, 1.15, 1.17, 1.20)
DEFAULT_SECONDARY_GAMMAS = (1.0, 1.5, 1.6, 1.7, 1.8, 1.9)
DEFAULT_LAMBDAS = (1.5, 2.0, 3.0, 4.0, 5.0)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise InputError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _names(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for :func:`run_analyze`.

    The first outcome is primary: the tree is fit on it and every other
    outcome reuses the resulting groups.  ``gammas`` is the grid for the
    primary outcome and ``secondary_gammas`` for the rest; ``outcome_gammas``
    overrides either for a named outcome.
    """

    outcomes: tuple[str, ...] = ("death",)
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    secondary_gammas: tuple[float, ...] = DEFAULT_SECONDARY_GAMMAS
    outcome_gammas: dict = field(default_factory=dict)
    tau: float = 0.1
    alpha: float = 0.05
    tree: TreeConfig = field(default_factory=TreeConfig)
    groups: str = "tree"
    covariates: tuple[str, ...] | None = None
    directions: dict = field(default_factory=dict)
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    resolution: float = 0.01
    method: str = "exact"
    subdivide_secondary: bool = False

    def __post_init__(self):
        if not self.outcomes:
            raise InputError("at least one outcome is required")
        for grid in [self.gammas, self.secondary_gammas, *self.outcome_gammas.values()]:
            if not grid or any(g < 1 for g in grid) or list(grid) != sorted(grid):
                raise InputError(f"Gamma grid must be sorted and >= 1, got {list(grid)}")
        unknown = set(self.outcome_gammas) - set(self.outcomes)
        if unknown:
            raise InputError(f"Gamma grid given for unknown outcome(s) {sorted(unknown)}")
        for o, d in self.directions.items():
            if d not in ("control", "treated"):
                raise InputError(f"direction for {o!r} must be 'control' or 'treated', got {d!r}")
        if self.method not in ("exact", "normal"):
            raise InputError(f"method must be 'exact' or 'normal', got {self.method!r}")

    @property
    def primary(self):
        return self.outcomes[0]

    def gammas_for(self, outcome):
        if outcome in self.outcome_gammas:
            return tuple(self.outcome_gammas[outcome])
        return tuple(self.gammas if outcome == self.primary else self.secondary_gammas)

    def direction_for(self, outcome):
        if outcome in self.directions:
            return self.directions[outcome]
        if outcome == self.primary:
            return "control"
        raise InputError(
            f"no one-sided direction given for secondary outcome {outcome!r}; "
            f"set direction.{outcome} = control|treated"
        )

    def to_dict(self):
        d = asdict(self)
        d["outcomes"] = list(self.outcomes)
        d["gammas"] = list(self.gammas)
        d["secondary_gammas"] = list(self.secondary_gammas)
        d["outcome_gammas"] = {k: list(v) for k, v in self.outcome_gammas.items()}
        d["covariates"] = None if self.covariates is None else list(self.covariates)
        d["lambdas"] = list(self.lambdas)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_TREE_KEYS = {"min_split": int, "min_leaf": int, "cp": float, "max_depth": int}


def load_config(path=None, overrides=None) -> AnalysisConfig:
    """Build an :class:`AnalysisConfig` from a ``key = value`` file.

    Recognised keys: ``outcome`` (comma list, primary first), ``gamma``,
    ``gamma_secondary``, ``gamma.<outcome>``, ``tau``, ``alpha``, ``groups``
    (``tree`` or a column name), ``covariates``, ``direction.<outcome>``,
    ``lambda``, ``resolution``, ``method``, ``subdivide_secondary``, and the
    tree settings ``min_split``, ``min_leaf``, ``cp``, ``max_depth``.  Lines
    starting with ``#`` are comments.  ``overrides`` (same keys) win over the
    file.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            text = Path(path).read_text(encoding="utf-8")
            parser.read_string("[effectmod]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise InputError(f"{path}: cannot parse config: {exc}") from None
        values.update(parser["effectmod"])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    kwargs = {}
    tree = {}
    outcome_gammas = {}
    directions = {}
    for key, raw in values.items():
        if key in ("outcome", "outcomes"):
            kwargs["outcomes"] = _names(raw)
        elif key == "gamma":
            kwargs["gammas"] = _floats(raw)
        elif key == "gamma_secondary":
            kwargs["secondary_gammas"] = _floats(raw)
        elif key.startswith("gamma."):
            outcome_gammas[key[len("gamma."):]] = _floats(raw)
        elif key.startswith("direction."):
            directions[key[len("direction."):]] = str(raw).strip()
        elif key == "directions":
            directions.update(raw)
        elif key in ("tau", "alpha", "resolution"):
            kwargs[key] = float(raw)
        elif key in ("groups", "method"):
            kwargs[key] = str(raw).strip()
        elif key == "covariates":
            kwargs["covariates"] = _names(raw) or None
        elif key in ("lambda", "lambdas"):
            kwargs["lambdas"] = _floats(raw)
        elif key == "subdivide_secondary":
            kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
        elif key in _TREE_KEYS:
            tree[key] = _TREE_KEYS[key](raw)
        else:
            raise InputError(f"unknown config key {key!r}")
    if tree:
        kwargs["tree"] = TreeConfig(**tree)
    kwargs["outcome_gammas"] = outcome_gammas
    kwargs["directions"] = directions
    return AnalysisConfig(**kwargs)


def _sha256(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj):
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# pair


def run_pair(patients_path, schema: PatientSchema, fine_keys, coarse_keys=(), out_dir=None):
    """Re-pair patients exactly and optionally write ``pairs.csv`` and
    ``pairing_report.json``."""
    patients = load_patients(patients_path, schema)
    pairs, unpaired, report = repair_exact(patients, fine_keys, coarse_keys)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_pairs(
            out / "pairs.csv",
            pairs,
            covariates=list(schema.stratum) + list(schema.refinement),
            outcomes=list(schema.outcomes),
        )
        (out / "pairing_report.json").write_text(_dump(report.to_dict()), encoding="utf-8")
    return pairs, unpaired, report


# ---------------------------------------------------------------------------
# tree


def _fit_partition(pairs, covariate_names, config: AnalysisConfig):
    names = config.covariates or tuple(covariate_names)
    missing = [n for n in names if n not in covariate_names]
    if missing:
        raise InputError(f"unknown covariate(s) {missing}")
    specs = infer_covariates(pairs, names)
    tree = build_tree(pairs, specs, config.primary, config.tree)
    _, unseen = route(tree, pairs)
    return tree, assign_groups(tree, pairs), unseen


def run_tree(config: AnalysisConfig, pairs_path, out_dir=None):
    """Fit the tree on the primary outcome; write ``tree.json``/``tree.txt``."""
    pairs, covariate_names, _ = load_pairs(pairs_path, outcomes=[config.primary])
    if not pairs:
        raise InputError(f"{pairs_path}: no pairs")
    tree, partition, _ = _fit_partition(pairs, covariate_names, config)
    groups, _ = summarize(pairs, partition, config.primary)
    ann = describe_tree(tree, {s.group_id: s for s in groups}, config.direction_for(config.primary))
    text = render_tree(tree, ann)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tree.json").write_text(_dump(tree.to_dict()), encoding="utf-8")
        (out / "tree.txt").write_text(text + "\n", encoding="utf-8")
    return tree, text


# ---------------------------------------------------------------------------
# analyze


@dataclass
class ReportBundle:
    data: dict
    text: str
    grids_csv: dict

    def to_json(self):
        return _dump(self.data)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(self.text, encoding="utf-8")
        for outcome, csv_text in self.grids_csv.items():
            (out / f"grid_{outcome}.csv").write_text(csv_text, encoding="utf-8")


def _fmt_p(p):
    return f"{p:.3f}"


def _fmt_or(v):
    return "—" if v is None else f"{v:.2f}"


def _summary_json(s, direction):
    d = s.to_dict()
    d["pct_discordant"] = 100.0 * s.discordant_fraction
    d["pct_treated"] = 100.0 * s.event_rate_treated
    d["pct_control"] = 100.0 * s.event_rate_control
    d["odds_ratio"] = mcnemar_odds_ratio(s, direction)
    return d


def _analyze_outcome(pairs, partition, outcome, config: AnalysisConfig):
    direction = config.direction_for(outcome)
    groups, pooled = summarize(pairs, partition, outcome)
    gammas = config.gammas_for(outcome)
    grid = gamma_grid_bounds(groups, gammas, pooled=pooled, direction=direction, method=config.method)
    with_truncated_product(grid, config.tau)
    tests = [
        closed_test(grid.column(g), config.alpha, config.tau, gamma=float(g)) for g in grid.gammas
    ]
    sv = max_gamma_rejection(
        groups,
        config.alpha,
        config.tau,
        resolution=config.resolution,
        direction=direction,
        method=config.method,
    )
    amp = []
    g_star = sv.global_value
    if g_star is not None:
        amp = [
            {"gamma": a.gamma, "lambda": a.lam, "delta": a.delta}
            for a in amplification_table(g_star, [l for l in config.lambdas if l > g_star])
        ]
    data = {
        "direction": direction,
        "role": "primary" if outcome == config.primary else "secondary",
        "partition": {
            "source": partition.provenance,
            "group_ids": list(partition.group_ids),
        },
        "groups": [_summary_json(s, direction) for s in groups],
        "pooled": _summary_json(pooled, direction),
        "grid": grid.to_dict(),
        "closed_testing": [t.to_dict() for t in tests],
        "sensitivity_values": sv.to_dict(),
        "amplification": amp,
    }
    return data, (groups, pooled, grid, tests, sv, amp)


def _render_outcome(outcome, parts, config):
    groups, pooled, grid, tests, sv, amp = parts
    direction = config.direction_for(outcome)
    cols = [f"Group {s.group_id}" for s in groups] + ["Pooled"]
    w = max(14, max(len(c) for c in cols) + 2)
    lab = 24
    allg = groups + [pooled]

    def row(label, cells):
        return label.ljust(lab) + "".join(str(c).rjust(w) for c in cells)

    lines = [f"Outcome: {outcome} ({'primary' if outcome == config.primary else 'secondary'}; "
             f"alternative: fewer events under treatment)" if direction == "control" else
             f"Outcome: {outcome} (alternative: more events under treatment)", ""]
    lines.append(row("", cols))
    lines.append(row("Number of pairs", [s.n_pairs for s in allg]))
    lines.append(row("Discordant pairs", [s.n_discordant for s in allg]))
    lines.append(row("Discordant %", [f"{100 * s.discordant_fraction:.1f}" for s in allg]))
    lines.append(row("Odds ratio", [_fmt_or(mcnemar_odds_ratio(s, direction)) for s in allg]))
    lines.append(row(f"{outcome} %, treated", [f"{100 * s.event_rate_treated:.1f}" for s in allg]))
    lines.append(row(f"{outcome} %, control", [f"{100 * s.event_rate_control:.1f}" for s in allg]))
    lines += ["", "Upper bounds on one-sided P-values", ""]
    head = ["Gamma"] + [f"Group {g}" for g in grid.group_ids] + ["Pooled", "Trunc. prod."]
    lines.append("".join(h.rjust(w) if i else h.ljust(8) for i, h in enumerate(head)))
    for j, gamma in enumerate(grid.gammas):
        cells = [_fmt_p(v) for v in grid.p_upper[:, j]] + [_fmt_p(grid.pooled[j]), _fmt_p(grid.combined[j])]
        lines.append(f"{gamma:<8.2f}" + "".join(c.rjust(w) for c in cells))
    lines += ["", f"Closed testing (truncated product, tau={config.tau:g}, alpha={config.alpha:g})", ""]
    for t in tests:
        rej = ", ".join(str(g) for g in t.rejected_groups) or "none"
        extra = [
            "{" + ",".join(map(str, s)) + "}"
            for s in t.rejected_subsets
            if len(s) > 1 and not any(g in t.rejected_groups for g in s)
        ]
        msg = f"Gamma={t.gamma:.2f}: global P={t.global_pvalue:.3g}; groups rejected: {rej}"
        if extra:
            msg += f"; minimal intersections rejected without a member group: {_minimal(extra)}"
        lines.append(msg)
    lines += ["", f"Largest Gamma with rejection (step {sv.resolution:g})", ""]
    lines.append(f"  all groups: {sv.describe(tuple(sv.group_ids))}")
    for g in sv.group_ids:
        lines.append(f"  group {g}: {sv.describe((g,))}")
    if amp:
        lines += ["", f"Amplification of Gamma={amp[0]['gamma']:g}", "", "  Lambda   Delta"]
        lines += [f"  {a['lambda']:<8.2f} {a['delta']:.2f}" for a in amp]
    return "\n".join(lines)


def _minimal(sets):
    parsed = [frozenset(s.strip("{}").split(",")) for s in sets]
    keep = [s for s, p in zip(sets, parsed) if not any(q < p for q in parsed)]
    return ", ".join(keep)


def run_analyze(config: AnalysisConfig, pairs_path, out_dir=None) -> ReportBundle:
    """Full confirmatory analysis of a pair file."""
    pairs, covariate_names, _ = load_pairs(pairs_path, outcomes=list(config.outcomes))
    if not pairs:
        raise InputError(f"{pairs_path}: no pairs")
    for o in config.outcomes:
        config.direction_for(o)

    tree = None
    unseen = 0
    if config.groups == "tree":
        tree, partition, unseen = _fit_partition(pairs, covariate_names, config)
    else:
        partition = Partition.from_column(pairs, config.groups)

    data = {
        "schema": REPORT_SCHEMA,
        "provenance": {
            "tool": "effectmod",
            "version": __version__,
            "config_sha256": config.digest(),
            "inputs": {"pairs": {"name": Path(pairs_path).name, "sha256": _sha256(pairs_path)}},
        },
        "config": config.to_dict(),
        "partition": {
            "source": partition.provenance,
            "group_ids": list(partition.group_ids),
            "sizes": {str(k): v for k, v in partition.sizes().items()},
            "unseen_routed": unseen,
        },
        "tree": None,
        "outcomes": {},
    }
    text = ["effectmod sensitivity report", f"pairs: {len(pairs)}  groups: {partition.n_groups} "
            f"({partition.provenance})", ""]
    grids_csv = {}
    for outcome in config.outcomes:
        part = partition
        if config.subdivide_secondary and tree is not None and outcome != config.primary:
            specs = tree.covariates
            part = subdivide_partition(pairs, partition, specs, outcome, config.tree)
        odata, parts = _analyze_outcome(pairs, part, outcome, config)
        data["outcomes"][outcome] = odata
        grids_csv[outcome] = parts[2].to_csv()
        text += [_render_outcome(outcome, parts, config), "", ""]
        if tree is not None and outcome == config.primary:
            ann = describe_tree(tree, {s.group_id: s for s in parts[0]}, odata["direction"])
            data["tree"] = tree.to_dict()
            data["tree"]["annotations"] = [
                {
                    "node_id": a.node_id,
                    "label": a.label,
                    "odds_ratio": a.odds_ratio,
                    "pct_treated": a.rate_treated_pct,
                    "pct_control": a.rate_control_pct,
                }
                for a in ann
            ]
            text += ["Tree on |Y| for " + outcome + " (A = odds ratio, B = treated %, C = control %)", "",
                     render_tree(tree, ann), "", ""]
    bundle = ReportBundle(data, "\n".join(text).rstrip() + "\n", grids_csv)
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle


# ---------------------------------------------------------------------------
# simulate / amplify


def run_simulate(spec: SyntheticSpec, out_dir=None, level="pairs"):
    """Draw a synthetic data set; write it with ``truth.json``."""
    sim = generate(spec)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if level == "pairs":
            write_pairs(out / "pairs.csv", sim.to_pairs(), sim.covariate_names(), [spec.outcome])
        elif level == "patients":
            patients, schema = sim.to_patients()
            write_patients(out / "patients.csv", patients, schema)
        else:
            raise InputError(f"level must be 'pairs' or 'patients', got {level!r}")
        truth = {"spec": spec.to_dict(), "groups": sim.truth()}
        (out / "truth.json").write_text(_dump(truth), encoding="utf-8")
    return sim


def run_amplify(gamma, lambdas):
    """Rows ``{"gamma", "lambda", "delta"}`` for each Lambda."""
    return [{"gamma": a.gamma, "lambda": a.lam, "delta": a.delta} for a in amplification_table(gamma, lambdas)]
