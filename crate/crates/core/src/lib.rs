//! Transporting trial-estimated mean potential outcomes to a target population
//! when adherence in the target may differ from adherence in the trial.
//!
//! The adherence ratio `δ_a(W) = Pr(Z^a=1 | W, S=0) / Pr(Z^a=1 | W, S=1)` is a
//! user-specified sensitivity parameter. Given it, the crate provides a
//! g-computation and a one-step (influence-curve corrected) estimator of
//! `E[Y^a | S=0]`, three variance engines, and the bounds and Monte Carlo
//! workflows for specifying `δ`.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`.

pub mod data;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod logistic;
pub mod nuisance;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod simulate;

pub use data::{
    design_matrix, load_dataset, read_dataset, Covariate, CovariateKind, CovariateSchema, CovariateSelection,
    DataError, StudyDataset, StudyRecord, TrialObs,
};
pub use estimators::{
    eic_evaluate, gcomp_psi, onestep_psi, risk_difference, transport_onestep_setting1, trial_onestep, Estimand,
    EstimatorError,
};
pub use inference::{bootstrap_variance, eic_variance, sandwich_variance, wald_ci, StackKind, VarianceMethod};
pub use logistic::{fit_logistic, FitError};
pub use nuisance::{crossfit_predictions, fit_nuisance_set, make_folds, Nuisance, NuisanceError};
pub use pipeline::{fit_nuisances, Analysis, EstimatorKind, PipelineError, VarianceEngine};
pub use scalar::Scalar;
pub use sensitivity::{
    draw_deltas, predicted_adherence_under_delta, run_bounds, run_mc, run_static_grid, sample_trapezoid, summarize_mc,
    Constraint, SensitivityError, SummaryOptions,
};
pub use simulate::{run_dr_experiment, MisspecConfig, SimulationError};

pub type DeltaValue = estimators::DeltaValue<f64>;
pub type EstimateResult = estimators::EstimateResult<f64>;
pub type NuisanceSet = nuisance::NuisanceSet<f64>;
pub type NuisanceOptions = nuisance::NuisanceOptions<f64>;
pub type Truncation = nuisance::Truncation<f64>;
pub type LogisticModel = logistic::LogisticModel<f64>;
pub type VarianceEstimate = inference::VarianceEstimate<f64>;
pub type CiResult = inference::CiResult<f64>;
pub type PipelineConfig = pipeline::PipelineConfig<f64>;
pub type TrapezoidDist = sensitivity::TrapezoidDist<f64>;
pub type DeltaSpec = sensitivity::DeltaSpec<f64>;
pub type McTable = sensitivity::McTable<f64>;
pub type McSummary = sensitivity::McSummary<f64>;
pub type DgpSpec = simulate::DgpSpec<f64>;
