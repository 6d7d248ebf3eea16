//! Equivalence tests for two nonlinear dose-response curves that share
//! common parameters.

pub mod cli;
pub mod constrained;
pub mod data;
pub mod distance;
pub mod equivalence;
pub mod error;
pub mod fitting;
pub mod model;
pub mod rng;
pub mod simulation;

pub use data::{DoseLevel, GroupData, LevelSummary, TrialDataset};
pub use error::{Error, Result};
pub use fitting::{
    fit, fit_joint_ols, fit_pooled_placebo, fit_separate, joint_asymptotic_covariance, FitResult,
    FrozenParam, GroupFit, SolverDiagnostics, SolverOptions,
};
pub use model::{
    Group, LocationScale, ModelFamily, ModelRegistry, ModelSpec, Owner, ParamBox,
    ParameterPartition,
};
pub use constrained::{fit_constrained, select_constrained_estimate, ConstrainedFit, ConstraintOptions};
pub use distance::{
    deviation_with_trace, extremal_sets, integrated_abs_deviation, max_abs_deviation, DeviationResult, DoseRegion, ExtremalSets,
    Maximizer, Sign,
};
pub use equivalence::{
    bootstrap_equivalence_test, bootstrap_equivalence_test_with, parameter_equivalence_pretest, pretest_thresholds,
    t_quantile, BootstrapOptions, BootstrapOutcome, Decision, EquivalenceReport, PretestDecision, PretestReport,
};
pub use simulation::{
    generate_dataset, rrmse, run_scenario, scenario1, scenario2, scenario3, scenario3_kappa_for_distance,
    scenario3_power_curve, CellResult, CellTruth, ScenarioConfig, ScenarioResult, ScenarioTag,
};
