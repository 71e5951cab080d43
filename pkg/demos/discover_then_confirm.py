"""Find an effect modifier with a tree on |Y|, then test the leaves.

A synthetic population has four procedure types and an emergency-admission
flag.  Treatment lowers the event rate only for emergency admissions of two
procedures.  The tree never sees the sign of any pair difference, so the
same pairs can be used for the confirmatory tests.

    python3 demos/discover_then_confirm.py
"""
from effectmod.pairs import summarize
from effectmod.multiplicity import closed_test, max_gamma_rejection
from effectmod.sensitivity import gamma_grid_bounds
from effectmod.simulate import SyntheticSpec, generate
from effectmod.tree import TreeConfig, assign_groups, build_tree, infer_covariates, render_tree

cells = []
for proc, base in (("hip", 0.04), ("knee", 0.03), ("colon", 0.15), ("heart", 0.20)):
    for er in ("0", "1"):
        p_c = base * (2 if er == "1" else 1)
        effect = er == "1" and proc in ("colon", "heart")
        cells.append(
            {
                "n_pairs": 1500,
                "p_control": p_c,
                "p_treated": p_c * (0.6 if effect else 1.0),
                "covariates": {"proc": proc, "er": er},
            }
        )
spec = SyntheticSpec.from_dict({"groups": cells, "seed": 17, "outcome": "death", "noise_covariates": 3})
sim = generate(spec)
pairs = sim.to_pairs()
print(f"{len(pairs)} pairs; true effects in:",
      [f"{c['covariates']['proc']}/er={c['covariates']['er']}" for c in cells if c["p_treated"] != c["p_control"]])

covs = infer_covariates(pairs, ["proc", "er", "z1", "z2", "z3"])
tree = build_tree(pairs, covs, "death", TreeConfig(min_leaf=300, cp=0.002))
print("\nTree on |Y|:")
print(render_tree(tree))

part = assign_groups(tree, pairs)
groups, _ = summarize(pairs, part, "death")
grid = gamma_grid_bounds(groups, [1.0, 1.2, 1.4])
for j, gamma in enumerate(grid.gammas):
    report = closed_test(grid.column(gamma), 0.05, 0.1, gamma=gamma)
    print(f"Gamma={gamma:.1f}: leaves rejected {report.rejected_groups or 'none'}")

sv = max_gamma_rejection(groups)
print("\nlargest Gamma with rejection:")
for g in sv.group_ids:
    print(f"  leaf {g}: {sv.describe((g,))}")
