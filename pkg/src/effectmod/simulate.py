"""Synthetic matched pairs with known effects and controlled hidden bias.

Each subject gets a latent uniform ``U``; its potential outcomes are
``r_C = 1[U < p_control]`` and ``r_T = 1[U < p_treated]``, so a group with
``p_treated == p_control`` satisfies the sharp null of no effect for every
subject.  Within a pair, subject ``j`` is treated with probability
proportional to ``gamma_true ** u_j`` where ``u`` is an unobserved covariate.
With ``bias="outcome"`` (the default) ``u = 1 - r_C``: subjects who would be
event-free under control are favoured for treatment, the worst case for a
test of a beneficial effect.  With ``bias="random"`` ``u`` is uniform noise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InputError
from .multiplicity import closed_test
from .pairs import DiscordantSummary, PairRecord, PatientRecord, PatientSchema
from .sensitivity import mcnemar_upper_pvalue

__all__ = ["SyntheticGroup", "SyntheticSpec", "SimulatedPairs", "generate", "simulate_rejections"]


@dataclass(frozen=True)
class SyntheticGroup:
    n_pairs: int
    p_control: float
    p_treated: float
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_pairs < 0:
            raise InputError("n_pairs must be nonnegative")
        for name in ("p_control", "p_treated"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")

    @property
    def has_effect(self):
        return self.p_control != self.p_treated


@dataclass(frozen=True)
class SyntheticSpec:
    groups: tuple[SyntheticGroup, ...]
    gamma_true: float = 1.0
    bias: str = "outcome"
    seed: int = 0
    outcome: str = "y"
    noise_covariates: int = 0

    def __post_init__(self):
        if self.gamma_true < 1.0:
            raise InputError(f"gamma_true must be >= 1, got {self.gamma_true}")
        if self.bias not in ("outcome", "random"):
            raise InputError(f"bias must be 'outcome' or 'random', got {self.bias!r}")
        if not self.groups:
            raise InputError("need at least one group")
        keys = {tuple(sorted(g.covariates)) for g in self.groups}
        if len(keys) > 1:
            raise InputError("every group must declare the same covariate names")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        groups = tuple(
            SyntheticGroup(
                int(g["n_pairs"]),
                float(g["p_control"]),
                float(g["p_treated"]),
                {k: str(v) for k, v in g.get("covariates", {}).items()},
            )
            for g in data.pop("groups")
        )
        return cls(groups, **data)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        out = asdict(self)
        out["groups"] = [asdict(g) for g in self.groups]
        return out


@dataclass
class SimulatedPairs:
    """Columnar simulated data; group ``g`` is labelled ``g + 1``."""

    spec: SyntheticSpec
    group: np.ndarray
    y_treated: np.ndarray
    y_control: np.ndarray
    noise: np.ndarray

    def truth(self):
        return {
            str(i + 1): {"has_effect": g.has_effect, "p_control": g.p_control, "p_treated": g.p_treated}
            for i, g in enumerate(self.spec.groups)
        }

    def covariate_names(self):
        names = ["group", *sorted(self.spec.groups[0].covariates)]
        return names + [f"z{k + 1}" for k in range(self.noise.shape[1])]

    def to_pairs(self):
        out = []
        names = sorted(self.spec.groups[0].covariates)
        for i in range(len(self.group)):
            g = int(self.group[i])
            cov = {"group": str(g + 1)}
            cov.update({k: self.spec.groups[g].covariates[k] for k in names})
            cov.update({f"z{k + 1}": str(int(v)) for k, v in enumerate(self.noise[i])})
            out.append(
                PairRecord(
                    f"S{i + 1:06d}",
                    cov,
                    {self.spec.outcome: (int(self.y_treated[i]), int(self.y_control[i]))},
                )
            )
        return out

    def to_patients(self):
        """Two patient records per pair; the pair's covariates form the stratum."""
        pairs = self.to_pairs()
        names = self.covariate_names()
        schema = PatientSchema(stratum=tuple(names), outcomes=(self.spec.outcome,))
        patients = []
        for p in pairs:
            yt, yc = p.outcomes[self.spec.outcome]
            for treated, y in ((1, yt), (0, yc)):
                patients.append(
                    PatientRecord(
                        f"{p.pair_id}{'T' if treated else 'C'}",
                        treated,
                        {k: p.shared_covariates[k] for k in names},
                        {},
                        {self.spec.outcome: y},
                    )
                )
        return patients, schema

    def summaries(self):
        G = len(self.spec.groups)
        yt, yc = self.y_treated, self.y_control
        n = np.bincount(self.group, minlength=G)
        d = np.bincount(self.group, weights=(yt != yc), minlength=G).astype(int)
        t = np.bincount(self.group, weights=(yc > yt), minlength=G).astype(int)
        et = np.bincount(self.group, weights=yt, minlength=G).astype(int)
        ec = np.bincount(self.group, weights=yc, minlength=G).astype(int)
        return [
            DiscordantSummary(g + 1, int(n[g]), int(d[g]), int(t[g]), int(et[g]), int(ec[g]))
            for g in range(G)
        ]


def generate(spec: SyntheticSpec, rng=None) -> SimulatedPairs:
    """Draw one data set.  Deterministic given ``spec.seed`` unless ``rng``
    is supplied."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    sizes = [g.n_pairs for g in spec.groups]
    group = np.repeat(np.arange(len(sizes)), sizes)
    n = len(group)
    p_c = np.array([g.p_control for g in spec.groups])[group]
    p_t = np.array([g.p_treated for g in spec.groups])[group]

    latent = rng.random((n, 2))
    r_c = (latent < p_c[:, None]).astype(np.int8)
    r_t = (latent < p_t[:, None]).astype(np.int8)
    if spec.bias == "outcome":
        u = 1.0 - r_c
    else:
        u = rng.random((n, 2))
    log_gamma = np.log(spec.gamma_true)
    # P(subject 1 treated) = gamma^u1 / (gamma^u1 + gamma^u2)
    pi1 = 1.0 / (1.0 + np.exp(log_gamma * (u[:, 1] - u[:, 0])))
    first_treated = rng.random(n) < pi1
    rows = np.arange(n)
    t_idx = np.where(first_treated, 0, 1)
    y_treated = r_t[rows, t_idx]
    y_control = r_c[rows, 1 - t_idx]
    noise = rng.integers(0, 2, size=(n, spec.noise_covariates), dtype=np.int8)
    return SimulatedPairs(spec, group, y_treated, y_control, noise)


def simulate_rejections(
    spec: SyntheticSpec,
    n_reps: int,
    gamma=1.0,
    alpha=0.05,
    tau=0.1,
    seed=None,
):
    """Monte Carlo rejection frequencies of closed testing at ``gamma``.

    Returns a dict with per-group rejection rates, the family-wise error
    rate (rejecting any group with no effect) and its Monte Carlo standard
    error.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    G = len(spec.groups)
    null = np.array([not g.has_effect for g in spec.groups])
    hits = np.zeros(G)
    any_false = 0
    for _ in range(n_reps):
        sims = generate(spec, rng).summaries()
        pv = {
            s.group_id: mcnemar_upper_pvalue(s.n_discordant, s.n_control_only, gamma).p_upper
            for s in sims
        }
        rej = np.isin(np.arange(1, G + 1), closed_test(pv, alpha, tau).rejected_groups)
        hits += rej
        any_false += bool(np.any(rej & null))
    fwer = any_false / n_reps
    return {
        "n_reps": n_reps,
        "gamma": gamma,
        "rejection_rate": {g + 1: float(hits[g] / n_reps) for g in range(G)},
        "fwer": fwer,
        "fwer_se": float(np.sqrt(fwer * (1 - fwer) / n_reps)) if n_reps else float("nan"),
    }
