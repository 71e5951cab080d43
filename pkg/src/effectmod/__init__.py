"""Sensitivity analysis for effect modification in matched pairs with binary outcomes."""

__version__ = "0.1.0"

from .exceptions import InputError, NumericError
from .multiplicity import (
    ClosedTestingReport,
    SensitivityValues,
    closed_test,
    max_gamma_rejection,
    truncated_product_pvalue,
    with_truncated_product,
)
from .pairs import (
    DiscordantSummary,
    PairRecord,
    Partition,
    PatientRecord,
    PatientSchema,
    crosstab,
    load_pairs,
    load_patients,
    repair_exact,
    summarize,
    write_pairs,
)
from .sensitivity import (
    Amplification,
    PValueBound,
    SensitivityGrid,
    amplification_table,
    amplify,
    gamma_grid_bounds,
    mcnemar_odds_ratio,
    mcnemar_upper_pvalue,
)
from .tree import RegressionTree, TreeConfig, assign_groups, build_tree, describe_tree, render_tree

__all__ = [
    "__version__",
    "InputError",
    "NumericError",
    "ClosedTestingReport",
    "SensitivityValues",
    "closed_test",
    "max_gamma_rejection",
    "truncated_product_pvalue",
    "with_truncated_product",
    "DiscordantSummary",
    "PairRecord",
    "Partition",
    "PatientRecord",
    "PatientSchema",
    "crosstab",
    "load_pairs",
    "load_patients",
    "repair_exact",
    "summarize",
    "write_pairs",
    "Amplification",
    "PValueBound",
    "SensitivityGrid",
    "amplification_table",
    "amplify",
    "gamma_grid_bounds",
    "mcnemar_odds_ratio",
    "mcnemar_upper_pvalue",
    "RegressionTree",
    "TreeConfig",
    "assign_groups",
    "build_tree",
    "describe_tree",
    "render_tree",
]
