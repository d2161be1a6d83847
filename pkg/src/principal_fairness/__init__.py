"""Principal fairness auditing for binary decisions and outcomes."""

from .core import (
    MONOTONE_STRATA,
    STRATA,
    Dataset,
    DatasetValidationError,
    ObservedTable,
    PotentialOutcomeTable,
    PrincipalStratum,
    Schema,
    UnitRecord,
    example_potential_table,
    marginalize,
    read_csv,
    realized_outcome,
    stratum_from_potentials,
    validate_dataset,
    write_csv,
)
from .identify import (
    PrincipalFairnessEstimator,
    bootstrap,
    identify_rates,
    monotonicity_diagnostics,
    stratum_probabilities,
)
from .metrics import (
    accuracy,
    calibration,
    evaluate_all,
    evaluate_conditional,
    overall_parity,
    pf_disparity,
    principal_rates,
)
from .regression import (
    FrequencyOutcomeRegression,
    LogisticOutcomeRegression,
    SeparationError,
    fit_frequency_regression,
    fit_logistic_regression,
)
from .simulate import (
    DecisionModel,
    DgpSpec,
    builtin_spec,
    check_theorem1,
    check_theorem2_equivalence,
    check_theorem3,
    exact_distribution,
    oracle_stratum_rates,
    sample,
    validate_spec,
)

__version__ = "0.1.0"
