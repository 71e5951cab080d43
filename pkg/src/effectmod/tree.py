"""Regression tree on unsigned pair differences.

The tree predicts ``|Y_i|`` (is the pair discordant?) from the pair's shared
covariates.  It never sees which member was treated, so the groups it forms
can be analysed afterwards with the signed differences as if they had been
fixed in advance.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import InputError
from .pairs import DiscordantSummary, Partition, pool_summaries
from .sensitivity import mcnemar_odds_ratio

logger = logging.getLogger(__name__)

__all__ = [
    "CovariateSpec",
    "TreeConfig",
    "Split",
    "TreeNode",
    "RegressionTree",
    "NodeAnnotation",
    "infer_covariates",
    "build_tree",
    "route",
    "assign_groups",
    "describe_tree",
    "render_tree",
    "subdivide_partition",
]

_GAIN_TOL = 1e-9


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str = "binary"
    levels: tuple[str, ...] = ("0", "1")

    def __post_init__(self):
        if self.kind not in ("binary", "categorical"):
            raise InputError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "binary":
            object.__setattr__(self, "levels", ("0", "1"))
        levels = tuple(str(v) for v in self.levels)
        if not levels or len(set(levels)) != len(levels):
            raise InputError(f"covariate {self.name!r}: levels must be nonempty and unique")
        object.__setattr__(self, "levels", levels)


@dataclass(frozen=True)
class TreeConfig:
    """Stopping rules.

    min_split: fewest pairs in a node for a split to be tried.
    min_leaf: fewest pairs allowed in either child.
    cp: a split must cut the sum of squares by at least ``cp`` times the
        root sum of squares.
    max_depth: the root has depth 0.
    """

    min_split: int = 100
    min_leaf: int = 50
    cp: float = 0.001
    max_depth: int = 5

    def __post_init__(self):
        if self.min_leaf < 1:
            raise InputError("min_leaf must be >= 1")
        if not 0.0 <= self.cp < 1.0:
            raise InputError("cp must lie in [0, 1)")
        if self.max_depth < 1:
            raise InputError("max_depth must be >= 1")


@dataclass(frozen=True)
class Split:
    covariate: str
    kind: str
    left_levels: tuple[str, ...]
    right_levels: tuple[str, ...]
    improvement: float

    def goes_left(self, value):
        """True/False, or None when ``value`` was not seen at this node."""
        if value in self.left_levels:
            return True
        if value in self.right_levels:
            return False
        return None

    def label(self, side):
        levels = self.left_levels if side == "left" else self.right_levels
        if self.kind == "binary" and len(levels) == 1:
            return f"{self.covariate} = {levels[0]}"
        return f"{self.covariate} in {{{', '.join(levels)}}}"


@dataclass
class TreeNode:
    node_id: int
    depth: int
    n_pairs: int
    n_discordant: int
    sse: float
    split: Split | None = None
    left: int | None = None
    right: int | None = None
    leaf_group_id: int | None = None

    @property
    def is_leaf(self):
        return self.split is None

    @property
    def mean_unsigned_response(self):
        return self.n_discordant / self.n_pairs if self.n_pairs else float("nan")


@dataclass
class RegressionTree:
    outcome: str
    covariates: list[CovariateSpec]
    config: TreeConfig
    nodes: list[TreeNode]
    n_fit_pairs: int = 0
    n_excluded: int = 0

    @property
    def root(self):
        return self.nodes[0]

    @property
    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    @property
    def n_leaves(self):
        return len(self.leaves)

    @property
    def group_ids(self):
        return [n.leaf_group_id for n in self.leaves]

    def node(self, node_id):
        return self.nodes[node_id]

    def leaves_under(self, node_id):
        node = self.nodes[node_id]
        if node.is_leaf:
            return [node]
        return self.leaves_under(node.left) + self.leaves_under(node.right)

    def parent_of(self, node_id):
        for n in self.nodes:
            if n.left == node_id or n.right == node_id:
                return n
        return None

    def predict_leaf(self, shared_covariates: Mapping):
        """Leaf reached by a pair, and whether an unseen value was met."""
        node = self.root
        unseen = False
        while not node.is_leaf:
            side = node.split.goes_left(shared_covariates.get(node.split.covariate))
            if side is None:
                unseen = True
                side = False
            node = self.nodes[node.left if side else node.right]
        return node, unseen

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "covariates": [asdict(c) for c in self.covariates],
            "config": asdict(self.config),
            "n_fit_pairs": self.n_fit_pairs,
            "n_excluded": self.n_excluded,
            "nodes": [
                {
                    "node_id": n.node_id,
                    "depth": n.depth,
                    "n_pairs": n.n_pairs,
                    "n_discordant": n.n_discordant,
                    "mean_unsigned_response": n.mean_unsigned_response,
                    "sse": n.sse,
                    "split": None if n.split is None else asdict(n.split),
                    "left": n.left,
                    "right": n.right,
                    "leaf_group_id": n.leaf_group_id,
                }
                for n in self.nodes
            ],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data):
        covs = [
            CovariateSpec(c["name"], c["kind"], tuple(c["levels"])) for c in data["covariates"]
        ]
        nodes = []
        for n in data["nodes"]:
            split = None
            if n["split"] is not None:
                s = n["split"]
                split = Split(
                    s["covariate"],
                    s["kind"],
                    tuple(s["left_levels"]),
                    tuple(s["right_levels"]),
                    s["improvement"],
                )
            nodes.append(
                TreeNode(
                    n["node_id"],
                    n["depth"],
                    n["n_pairs"],
                    n["n_discordant"],
                    n["sse"],
                    split,
                    n["left"],
                    n["right"],
                    n["leaf_group_id"],
                )
            )
        return cls(
            data["outcome"],
            covs,
            TreeConfig(**data["config"]),
            nodes,
            data.get("n_fit_pairs", 0),
            data.get("n_excluded", 0),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _natural(value):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


def infer_covariates(pairs, names) -> list[CovariateSpec]:
    """Binary when every observed value is 0/1, categorical otherwise."""
    specs = []
    for name in names:
        values = {p.shared_covariates.get(name) for p in pairs} - {None}
        if values <= {"0", "1"}:
            specs.append(CovariateSpec(name, "binary"))
        else:
            specs.append(CovariateSpec(name, "categorical", tuple(sorted(values, key=_natural))))
    return specs


def _sse(n, s):
    # sum of squares about the mean for a 0/1 response: s - s^2/n
    return s - s * s / n if n else 0.0


def _best_split(codes, y, idx, covariates, min_leaf):
    n = len(idx)
    s_tot = float(y[idx].sum())
    parent = _sse(n, s_tot)
    best = None
    for j, cov in enumerate(covariates):
        m = len(cov.levels)
        col = codes[idx, j]
        cnt = np.bincount(col, minlength=m)
        tot = np.bincount(col, weights=y[idx], minlength=m)
        present = np.flatnonzero(cnt)
        if len(present) < 2:
            continue
        if cov.kind == "categorical":
            means = tot[present] / cnt[present]
            present = present[np.argsort(means, kind="stable")]
        n_left = np.cumsum(cnt[present])[:-1]
        s_left = np.cumsum(tot[present])[:-1]
        for c in range(len(present) - 1):
            nl, sl = int(n_left[c]), float(s_left[c])
            nr, sr = n - nl, s_tot - sl
            if nl < min_leaf or nr < min_leaf:
                continue
            gain = parent - _sse(nl, sl) - _sse(nr, sr)
            if best is None or gain > best[0] + _GAIN_TOL:
                best = (gain, j, present[: c + 1], present[c + 1 :])
    return best


def build_tree(
    pairs: Sequence,
    covariates: Sequence[CovariateSpec],
    outcome: str,
    config: TreeConfig | None = None,
) -> RegressionTree:
    """Greedy CART regression of ``|Y|`` on the pair covariates.

    Each node takes the split with the largest drop in the sum of squared
    deviations of ``|Y|``.  A categorical covariate's levels are ordered by
    their mean ``|Y|`` in the node and only the order-respecting cuts are
    scanned, which finds the best subset split for squared error.  Ties go
    to the earlier covariate, then to the leftmost cut.

    Pairs missing any of the covariates (members not matched on it) are left
    out of the fit.
    """
    config = config or TreeConfig()
    covariates = list(covariates)
    if not pairs:
        raise InputError("cannot fit a tree to zero pairs")
    names = [c.name for c in covariates]
    level_index = [{lv: k for k, lv in enumerate(c.levels)} for c in covariates]

    rows = []
    y = []
    excluded = 0
    for p in pairs:
        vals = [p.shared_covariates.get(nm) for nm in names]
        if any(v is None for v in vals):
            excluded += 1
            continue
        try:
            rows.append([level_index[j][v] for j, v in enumerate(vals)])
        except KeyError:
            bad = [f"{nm}={v!r}" for nm, v, li in zip(names, vals, level_index) if v not in li]
            raise InputError(f"pair {p.pair_id!r}: undeclared covariate level {bad}") from None
        y.append(p.unsigned(outcome))
    if not y:
        raise InputError("no pair carries every offered covariate")
    if excluded:
        logger.info("tree fit: %d pairs lacking a shared covariate were left out", excluded)
    codes = np.asarray(rows, dtype=np.int64).reshape(len(y), len(names))
    y = np.asarray(y, dtype=np.float64)

    root_sse = _sse(len(y), float(y.sum()))
    threshold = config.cp * root_sse
    nodes: list[TreeNode] = []

    def grow(idx, depth):
        node = TreeNode(len(nodes), depth, len(idx), int(y[idx].sum()), _sse(len(idx), float(y[idx].sum())))
        nodes.append(node)
        if depth >= config.max_depth or len(idx) < config.min_split or node.sse <= 0.0:
            return node
        best = _best_split(codes, y, idx, covariates, config.min_leaf)
        if best is None:
            return node
        gain, j, left_codes, right_codes = best
        if gain <= _GAIN_TOL or gain < threshold - _GAIN_TOL:
            return node
        cov = covariates[j]
        node.split = Split(
            cov.name,
            cov.kind,
            tuple(cov.levels[k] for k in sorted(left_codes)),
            tuple(cov.levels[k] for k in sorted(right_codes)),
            float(gain),
        )
        mask = np.isin(codes[idx, j], left_codes)
        node.left = grow(idx[mask], depth + 1).node_id
        node.right = grow(idx[~mask], depth + 1).node_id
        return node

    grow(np.arange(len(y)), 0)
    for gid, leaf in enumerate((n for n in nodes if n.is_leaf), start=1):
        leaf.leaf_group_id = gid
    return RegressionTree(outcome, covariates, config, nodes, len(y), excluded)


def route(tree: RegressionTree, pairs):
    """Leaf group id for each pair, plus the number routed past unseen values."""
    groups = []
    unseen = 0
    for p in pairs:
        leaf, miss = tree.predict_leaf(p.shared_covariates)
        groups.append(leaf.leaf_group_id)
        unseen += miss
    return groups, unseen


def assign_groups(tree: RegressionTree, pairs) -> Partition:
    """Partition pairs by the leaf they fall in.

    Group ids are the leaves' depth-first order (1, 2, ...).  A value not
    seen at a node during fitting is sent right; such pairs are counted in a
    logged warning.  Leaves that receive no pair are dropped.
    """
    groups, unseen = route(tree, pairs)
    if unseen:
        logger.warning("%d pair(s) met a covariate value unseen at fit time and were sent right", unseen)
    used = set(groups)
    gids = tuple(g for g in tree.group_ids if g in used)
    return Partition(gids, {p.pair_id: g for p, g in zip(pairs, groups)}, "tree")


@dataclass(frozen=True)
class NodeAnnotation:
    """Per-node display values: odds ratio (control/treated) and event
    rates in percent for treated and control members."""

    node_id: int
    label: str
    depth: int
    summary: DiscordantSummary
    odds_ratio: float | None = field(default=None)

    @property
    def rate_treated_pct(self):
        return 100.0 * self.summary.event_rate_treated

    @property
    def rate_control_pct(self):
        return 100.0 * self.summary.event_rate_control

    def abc(self, or_digits=2, pct_digits=1):
        a = "—" if self.odds_ratio is None else f"{self.odds_ratio:.{or_digits}f}"
        return a, f"{self.rate_treated_pct:.{pct_digits}f}", f"{self.rate_control_pct:.{pct_digits}f}"


def describe_tree(tree: RegressionTree, leaf_summaries: Mapping, direction="control"):
    """Annotate every node with (A, B, C) = (odds ratio, treated rate %,
    control rate %).  Internal nodes pool the summaries of their leaves."""
    out = []
    for node in tree.nodes:
        leaves = [l.leaf_group_id for l in tree.leaves_under(node.node_id)]
        parts = [leaf_summaries[g] for g in leaves if g in leaf_summaries]
        summary = pool_summaries(parts, group_id=node.leaf_group_id if node.is_leaf else f"node{node.node_id}")
        parent = tree.parent_of(node.node_id)
        if parent is None:
            label = "all pairs"
        else:
            label = parent.split.label("left" if parent.left == node.node_id else "right")
        if node.is_leaf:
            label += f"  -> group {node.leaf_group_id}"
        out.append(
            NodeAnnotation(node.node_id, label, node.depth, summary, mcnemar_odds_ratio(summary, direction))
        )
    return out


def render_tree(tree: RegressionTree, annotations=None):
    """Indented text rendering, one node per line."""
    ann = {a.node_id: a for a in annotations or ()}
    lines = []
    for node in tree.nodes:  # nodes are stored in preorder
        if node.node_id in ann:
            a = ann[node.node_id]
            A, B, C = a.abc()
            text = f"{a.label}  n={node.n_pairs}  (A={A}, B={B}, C={C})"
        else:
            parent = tree.parent_of(node.node_id)
            text = "all pairs" if parent is None else parent.split.label(
                "left" if parent.left == node.node_id else "right"
            )
            if node.is_leaf:
                text += f"  -> group {node.leaf_group_id}"
            text += f"  n={node.n_pairs}  mean|Y|={node.mean_unsigned_response:.4f}"
        lines.append("  " * node.depth + text)
    return "\n".join(lines)


def subdivide_partition(pairs, partition: Partition, covariates, outcome, config=None):
    """Fit a further tree on ``|Y|`` for ``outcome`` inside every group.

    Groups that are not split keep their id; split groups become
    ``"<group>.<leaf>"``.
    """
    assignment = {}
    gids = []
    for g in partition.group_ids:
        members = partition.members(pairs, g)
        sub = build_tree(members, covariates, outcome, config)
        if sub.n_leaves == 1:
            gids.append(g)
            assignment.update({p.pair_id: g for p in members})
            continue
        groups, _ = route(sub, members)
        labels = {leaf: f"{g}.{leaf}" for leaf in sub.group_ids}
        gids.extend(labels[leaf] for leaf in sub.group_ids if leaf in set(groups))
        assignment.update({p.pair_id: labels[leaf] for p, leaf in zip(members, groups)})
    return Partition(tuple(gids), assignment, "tree+subdivided")
