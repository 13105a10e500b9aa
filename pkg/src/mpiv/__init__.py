"""Design and analysis of matched-pair experiments with imperfect compliance."""

from .data import (
    LateReport,
    ObservedSample,
    PairStructure,
    SampleValidationError,
    validate_sample,
    write_sample,
)
from .estimators import (
    CellMeans,
    LinearAdjustmentSpec,
    WeakFirstStageError,
    WorkingModels,
    adjusted_estimate,
    fit_linear_working_models,
    naive_adjusted_estimate,
    transformed_outcomes,
    wald_estimate,
)
from .analysis import analyze, format_table, report_to_json
from .inference import TestResult, t_test
from .pairing import MatchReport, assign_treatment, match_pairs_greedy, match_pairs_scalar, match_report
from .variance import nu_hat_sq, nu_hat_sq_adj, omega_hat_sq, omega_pfe

__version__ = "0.1.0"
