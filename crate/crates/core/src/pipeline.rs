//! Orchestration: fit nuisances, pick an estimator and a variance engine,
//! and produce per-arm and contrast rows for constant adherence ratios.
//!
//! For a constant `δ`, every quantity the engines need (point estimate,
//! influence values, sandwich influence, bootstrap replicate points) is affine
//! in `δ`. An [`Analysis`] evaluates them once at `δ = 0` and `δ = 1` and
//! interpolates, so grids, bounds and Monte Carlo draws reuse one set of fits
//! and one set of bootstrap refits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::StudyDataset;
use crate::estimators::{
    eic_evaluate, gcomp_psi, onestep_psi, risk_difference, transport_onestep_setting1, trial_onestep, DeltaValue,
    EstimateResult, EstimatorError,
};
use crate::inference::{
    bootstrap_replicates, eic_variance, wald_ci, BootstrapDraws, CiResult, InferenceError, SandwichStack, StackKind,
    VarianceEstimate, VarianceMethod,
};
use crate::nuisance::{
    crossfit_predictions, fit_nuisance_set, make_folds, FoldCountError, NuisanceError, NuisanceOptions, NuisanceSet,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gcomp,
    Onestep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEngine {
    Eic,
    Bootstrap,
    Sandwich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitConfig {
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig<T> {
    pub estimator: EstimatorKind,
    pub variance: VarianceEngine,
    pub bootstrap_replicates: usize,
    pub level: T,
    /// Seeds the bootstrap.
    pub seed: u64,
    pub crossfit: Option<CrossFitConfig>,
    pub nuisance: NuisanceOptions<T>,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Onestep,
            variance: VarianceEngine::Eic,
            bootstrap_replicates: 500,
            level: T::lit(0.95),
            seed: 0,
            crossfit: None,
            nuisance: NuisanceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Folds(#[from] FoldCountError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("{0}")]
    Config(String),
}

/// Full-sample fits, or cross-fit predictions when configured.
pub fn fit_nuisances<T: Scalar>(ds: &StudyDataset, cfg: &PipelineConfig<T>) -> Result<NuisanceSet<T>, PipelineError> {
    match cfg.crossfit {
        None => Ok(fit_nuisance_set(ds, &cfg.nuisance)?),
        Some(cf) => {
            let folds = make_folds(ds, cf.folds, cf.seed)?;
            Ok(crossfit_predictions(ds, &folds, &cfg.nuisance)?)
        }
    }
}

/// Point estimate of `ψ(a, δ)` with the chosen estimator.
pub fn point_estimate<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    kind: EstimatorKind,
    arm: usize,
    delta: &DeltaValue<T>,
) -> Result<EstimateResult<T>, EstimatorError> {
    match kind {
        EstimatorKind::Gcomp => gcomp_psi(ds, nu, arm, delta),
        EstimatorKind::Onestep => onestep_psi(ds, nu, arm, delta),
    }
}

/// An estimate with its variance and Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row<T> {
    pub estimate: EstimateResult<T>,
    pub variance: VarianceEstimate<T>,
    pub ci: CiResult<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastRows<T> {
    pub arm: Row<T>,
    pub referent: Row<T>,
    pub contrast: Row<T>,
}

/// What the variance engine sees at `δ = 0` and `δ = 1` for one arm.
#[derive(Debug, Clone)]
struct ArmBasis<T> {
    at: [EstimateResult<T>; 2],
    /// EIC or sandwich influence, per record; empty for the bootstrap.
    variance_influence: [Vec<T>; 2],
    stack_dimension: Option<usize>,
    /// Largest target `m̂_a` and its record, for the `m̂·δ ≤ 1` check.
    max_m: (T, usize),
}

fn lerp<T: Scalar>(v: [T; 2], delta: T) -> T {
    v[0] + (v[1] - v[0]) * delta
}

fn lerp_vec<T: Scalar>(v: &[Vec<T>; 2], delta: T) -> Vec<T> {
    v[0].iter().zip(&v[1]).map(|(&a, &b)| a + (b - a) * delta).collect()
}

/// Nuisance fits plus per-arm bases for the arms of interest.
pub struct Analysis<'a, T> {
    ds: &'a StudyDataset,
    nu: &'a NuisanceSet<T>,
    cfg: &'a PipelineConfig<T>,
    arms: Vec<usize>,
    bases: Vec<Option<ArmBasis<T>>>,
    /// Replicate points, laid out `[arm slot][δ∈{0,1}]` per replicate.
    bootstrap: Option<BootstrapDraws<T>>,
}

impl<'a, T: Scalar> Analysis<'a, T> {
    pub fn new(
        ds: &'a StudyDataset,
        nu: &'a NuisanceSet<T>,
        cfg: &'a PipelineConfig<T>,
        arms: &[usize],
    ) -> Result<Self, PipelineError> {
        if !(cfg.level > T::zero() && cfg.level < T::one()) {
            return Err(InferenceError::Level(cfg.level.as_f64()).into());
        }
        if cfg.variance == VarianceEngine::Sandwich && nu.is_crossfit() {
            return Err(InferenceError::CrossFitNuisances.into());
        }
        let ends = [DeltaValue::constant(T::zero()), DeltaValue::constant(T::one())];
        let mut bases = vec![None; ds.arms().len()];
        for &arm in arms {
            if arm >= ds.arms().len() {
                return Err(EstimatorError::UnknownArm(arm).into());
            }
            let at = [
                point_estimate(ds, nu, cfg.estimator, arm, &ends[0])?,
                point_estimate(ds, nu, cfg.estimator, arm, &ends[1])?,
            ];
            let mut stack_dimension = None;
            let variance_influence = match cfg.variance {
                VarianceEngine::Eic => match cfg.estimator {
                    EstimatorKind::Onestep => [at[0].influence.clone(), at[1].influence.clone()],
                    // The g-computation estimator has no influence values of its own; the
                    // estimated EIC evaluated at the plug-in stands in.
                    EstimatorKind::Gcomp => [
                        eic_evaluate(ds, nu, arm, &ends[0], at[0].point)?,
                        eic_evaluate(ds, nu, arm, &ends[1], at[1].point)?,
                    ],
                },
                VarianceEngine::Sandwich => {
                    let kind = match cfg.estimator {
                        EstimatorKind::Gcomp => StackKind::Gcomp,
                        EstimatorKind::Onestep => StackKind::Onestep,
                    };
                    let s0 = SandwichStack::new(ds, nu, arm, &ends[0], kind)?;
                    let s1 = SandwichStack::new(ds, nu, arm, &ends[1], kind)?;
                    stack_dimension = Some(s0.dimension());
                    [s0.influence()?, s1.influence()?]
                }
                VarianceEngine::Bootstrap => [Vec::new(), Vec::new()],
            };
            let m = &nu.predictions.m[arm];
            let max_m = ds
                .records()
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_trial())
                .map(|(i, _)| (m[i], i))
                .fold((T::zero(), 0), |acc, x| if x.0 > acc.0 { x } else { acc });
            bases[arm] = Some(ArmBasis { at, variance_influence, stack_dimension, max_m });
        }

        let bootstrap = if cfg.variance == VarianceEngine::Bootstrap {
            let refit = |d: &StudyDataset| -> Result<Vec<T>, PipelineError> {
                let nu = fit_nuisances(d, cfg)?;
                let mut out = Vec::with_capacity(2 * arms.len());
                for &arm in arms {
                    for delta in &ends {
                        out.push(point_estimate(d, &nu, cfg.estimator, arm, delta)?.point);
                    }
                }
                Ok(out)
            };
            Some(bootstrap_replicates(ds, refit, cfg.bootstrap_replicates, cfg.seed)?)
        } else {
            None
        };
        Ok(Self { ds, nu, cfg, arms: arms.to_vec(), bases, bootstrap })
    }

    pub fn dataset(&self) -> &StudyDataset {
        self.ds
    }

    pub fn nuisances(&self) -> &NuisanceSet<T> {
        self.nu
    }

    pub fn config(&self) -> &PipelineConfig<T> {
        self.cfg
    }

    fn basis(&self, arm: usize) -> Result<&ArmBasis<T>, PipelineError> {
        self.bases
            .get(arm)
            .and_then(Option::as_ref)
            .ok_or_else(|| PipelineError::Config(format!("arm index {arm} was not prepared for this analysis")))
    }

    fn check_delta(&self, arm: usize, delta: T) -> Result<(), EstimatorError> {
        if delta < T::zero() || delta.is_nan() {
            return Err(EstimatorError::NegativeDelta { value: delta.as_f64() });
        }
        let (m, i) = self.basis(arm).map_err(|_| EstimatorError::UnknownArm(arm))?.max_m;
        if m * delta > T::one() {
            return Err(EstimatorError::AdherenceAboveOne { record: i, product: (m * delta).as_f64() });
        }
        Ok(())
    }

    fn bootstrap_slot(&self, arm: usize) -> usize {
        self.arms.iter().position(|&a| a == arm).expect("arm prepared")
    }

    /// Point estimate at a constant `δ` without variance.
    pub fn point(&self, arm: usize, delta: T) -> Result<T, PipelineError> {
        self.check_delta(arm, delta)?;
        let b = self.basis(arm)?;
        Ok(lerp([b.at[0].point, b.at[1].point], delta))
    }

    fn estimate_at(&self, arm: usize, delta: T) -> Result<EstimateResult<T>, PipelineError> {
        self.check_delta(arm, delta)?;
        let b = self.basis(arm)?;
        let point = lerp([b.at[0].point, b.at[1].point], delta);
        let influence = if b.at[0].influence.is_empty() {
            Vec::new()
        } else {
            lerp_vec(&[b.at[0].influence.clone(), b.at[1].influence.clone()], delta)
        };
        Ok(EstimateResult {
            delta: Some(DeltaValue::constant(delta)),
            point,
            influence,
            out_of_range: point < T::zero() || point > T::one(),
            ..b.at[1].clone()
        })
    }

    fn influence_variance(&self, influence: &[T], stack_dimension: Option<usize>) -> Result<VarianceEstimate<T>, PipelineError> {
        match self.cfg.variance {
            VarianceEngine::Eic => Ok(eic_variance(influence)?),
            VarianceEngine::Sandwich => {
                let n = T::from_count(influence.len());
                let ms = influence.iter().map(|&v| v * v).sum::<T>() / n;
                let mut v = VarianceEstimate::new(VarianceMethod::Sandwich, ms / n);
                v.stack_dimension = stack_dimension;
                Ok(v)
            }
            VarianceEngine::Bootstrap => unreachable!("bootstrap variance does not use influence values"),
        }
    }

    fn row(&self, estimate: EstimateResult<T>, variance: VarianceEstimate<T>) -> Result<Row<T>, PipelineError> {
        let ci = wald_ci(estimate.point, &variance, self.cfg.level)?;
        Ok(Row { estimate, variance, ci })
    }

    /// Estimate, variance and interval for one arm at a constant `δ`.
    pub fn arm(&self, arm: usize, delta: T) -> Result<Row<T>, PipelineError> {
        let estimate = self.estimate_at(arm, delta)?;
        let b = self.basis(arm)?;
        let variance = match &self.bootstrap {
            Some(draws) => {
                let s = 2 * self.bootstrap_slot(arm);
                draws.variance_of(|v| lerp([v[s], v[s + 1]], delta))
            }
            None => self.influence_variance(&lerp_vec(&b.variance_influence, delta), b.stack_dimension)?,
        };
        self.row(estimate, variance)
    }

    /// Rows for `arm` at `delta_arm`, `referent` at `delta_ref`, and their
    /// difference. The contrast variance accounts for the covariance between
    /// the two arms under every engine.
    pub fn contrast(
        &self,
        arm: usize,
        delta_arm: T,
        referent: usize,
        delta_ref: T,
    ) -> Result<ContrastRows<T>, PipelineError> {
        let r1 = self.arm(arm, delta_arm)?;
        let r0 = self.arm(referent, delta_ref)?;
        let mut estimate = risk_difference(&r1.estimate, &r0.estimate)?;
        estimate.delta = None;
        let variance = match &self.bootstrap {
            Some(draws) => {
                let (s1, s0) = (2 * self.bootstrap_slot(arm), 2 * self.bootstrap_slot(referent));
                draws.variance_of(|v| lerp([v[s1], v[s1 + 1]], delta_arm) - lerp([v[s0], v[s0 + 1]], delta_ref))
            }
            None => {
                let (b1, b0) = (self.basis(arm)?, self.basis(referent)?);
                let i1 = lerp_vec(&b1.variance_influence, delta_arm);
                let i0 = lerp_vec(&b0.variance_influence, delta_ref);
                let diff: Vec<T> = i1.iter().zip(&i0).map(|(&a, &b)| a - b).collect();
                self.influence_variance(&diff, None)?
            }
        };
        let contrast = self.row(estimate, variance)?;
        Ok(ContrastRows { arm: r1, referent: r0, contrast })
    }

    /// Point estimates of both arms and their difference, without variances.
    pub fn contrast_points(&self, arm: usize, delta_arm: T, referent: usize, delta_ref: T) -> Result<[T; 3], PipelineError> {
        let p1 = self.point(arm, delta_arm)?;
        let p0 = self.point(referent, delta_ref)?;
        Ok([p1, p0, p1 - p0])
    }
}

/// Rows for the two reference one-step estimators, `E[Y^a | S=1]` and
/// `E[Y^a | S=0]` under equal adherence, for each arm and their contrast.
/// These always use influence-curve variance.
pub fn reference_rows<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    referent: usize,
    level: T,
) -> Result<Vec<Row<T>>, PipelineError> {
    let mut rows = Vec::new();
    for f in [trial_onestep::<T>, transport_onestep_setting1::<T>] {
        let e1 = f(ds, nu, arm)?;
        let e0 = f(ds, nu, referent)?;
        let rd = risk_difference(&e1, &e0)?;
        for e in [e1, e0, rd] {
            let v = eic_variance(&e.influence)?;
            let ci = wald_ci(e.point, &v, level)?;
            rows.push(Row { estimate: e, variance: v, ci });
        }
    }
    Ok(rows)
}
