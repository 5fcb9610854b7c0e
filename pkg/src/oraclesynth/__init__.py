"""Differentially private synthetic data for k-way marginal workloads, built
from no-regret game dynamics that only touch the data universe through a
linear optimization oracle."""

from .domain import (
    Attribute,
    EncodedDataset,
    Schema,
    SyntheticDataset,
    generate_synthetic_csv,
    load_csv,
    record_stats,
)
from .dual import dqrs_params, dqrs_privacy_cost, run_dqrs, run_dualquery
from .harness import ExperimentConfig, compare_reports, run_experiment
from .oracle import (
    ExactOracle,
    LocalSearchOracle,
    OracleProblem,
    export_mip,
    solve_exact,
    solve_local_search,
)
from .primal import PrimalConfig, build_separator, default_hyperparameters, run_primal
from .privacy import (
    PrivacyLedger,
    advanced_composition,
    dp_to_zcdp,
    exponential_mechanism,
    invert_budget,
    zcdp_to_dp,
)
from .workload import MarginalQuery, Workload, enumerate_marginals, max_error

__version__ = "0.1.0"
