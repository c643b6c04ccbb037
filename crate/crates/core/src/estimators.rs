//! Estimators of the transported mean potential outcome
//! `ψ(a, δ) = E[ Q_{a,1}(W) m_a(W) δ_a(W) + Q_{a,0}(W) (1 − m_a(W) δ_a(W)) | S = 0 ]`
//! and of the two reference quantities `E[Y^a | S=1]` and `E[Y^a | S=0]`
//! under equal trial and target adherence.
//!
//! All one-step estimators return per-record influence values scaled so that
//! `var(influence) / n` estimates the sampling variance.

use serde::Serialize;
use thiserror::Error;

use crate::data::{CovariateKind, StudyDataset};
use crate::nuisance::NuisanceSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("delta {value} is negative")]
    NegativeDelta { value: f64 },
    #[error("record {record}: m̂·δ = {product} exceeds 1")]
    AdherenceAboveOne { record: usize, product: f64 },
    #[error("covariate `{0}` cannot index delta: only binary or categorical covariates can")]
    NotDiscrete(String),
    #[error("delta lookup for covariate `{name}` needs {expected} values, got {got}")]
    LevelCount { name: String, expected: usize, got: usize },
    #[error("no covariate at index {0}")]
    UnknownCovariate(usize),
    #[error("arm index {0} out of range")]
    UnknownArm(usize),
    #[error("nuisance set covers {nuisance} records but dataset has {dataset}")]
    SizeMismatch { nuisance: usize, dataset: usize },
    #[error("cannot contrast {left:?} with {right:?}")]
    IncompatibleContrast { left: Estimand, right: Estimand },
    #[error("influence vectors differ in length ({0} vs {1})")]
    InfluenceLength(usize, usize),
}

/// Adherence ratio `δ_a`, constant or looked up by the level of one discrete
/// covariate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaValue<T> {
    Constant { value: T },
    ByLevel { covariate: usize, values: Vec<T> },
}

impl<T: Scalar> DeltaValue<T> {
    pub fn constant(value: T) -> Self {
        Self::Constant { value }
    }

    pub fn as_constant(&self) -> Option<T> {
        match self {
            Self::Constant { value } => Some(*value),
            Self::ByLevel { .. } => None,
        }
    }

    /// `δ(w_i)` for every record, checked against `m̂_a(w)·δ(w) ≤ 1` on the
    /// target records.
    pub fn resolve(&self, ds: &StudyDataset, nu: &NuisanceSet<T>, arm: usize) -> Result<Vec<T>, EstimatorError> {
        let per_record: Vec<T> = match self {
            Self::Constant { value } => {
                if *value < T::zero() || value.is_nan() {
                    return Err(EstimatorError::NegativeDelta { value: value.as_f64() });
                }
                vec![*value; ds.len()]
            }
            Self::ByLevel { covariate, values } => {
                let cov = ds.schema().covariates().get(*covariate).ok_or(EstimatorError::UnknownCovariate(*covariate))?;
                let expected = match &cov.kind {
                    CovariateKind::Continuous => return Err(EstimatorError::NotDiscrete(cov.name.clone())),
                    CovariateKind::Binary => 2,
                    CovariateKind::Categorical { levels } => levels.len(),
                };
                if values.len() != expected {
                    return Err(EstimatorError::LevelCount { name: cov.name.clone(), expected, got: values.len() });
                }
                if let Some(v) = values.iter().find(|v| **v < T::zero() || v.is_nan()) {
                    return Err(EstimatorError::NegativeDelta { value: v.as_f64() });
                }
                ds.records().iter().map(|r| values[r.w[*covariate] as usize]).collect()
            }
        };
        let m = &nu.predictions.m[arm];
        for (i, r) in ds.records().iter().enumerate() {
            if !r.is_trial() && m[i] * per_record[i] > T::one() {
                return Err(EstimatorError::AdherenceAboveOne { record: i, product: (m[i] * per_record[i]).as_f64() });
            }
        }
        Ok(per_record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// G-computation estimate of `ψ(a, δ)`.
    PsiG,
    /// One-step estimate of `ψ(a, δ)`.
    PsiOs,
    /// One-step estimate of `E[Y^a | S=1]`.
    ThetaOs,
    /// One-step estimate of `E[Y^a | S=0]` assuming equal adherence (δ ≡ 1).
    ThetaPrimeOs,
    Contrast(ContrastOf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastOf {
    PsiG,
    PsiOs,
    ThetaOs,
    ThetaPrimeOs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult<T> {
    pub estimand: Estimand,
    /// Arm label; for contrasts `"<arm> - <referent>"`.
    pub arm: String,
    pub delta: Option<DeltaValue<T>>,
    pub point: T,
    /// Empty for g-computation estimates.
    #[serde(skip)]
    pub influence: Vec<T>,
    pub n0: usize,
    pub n1: usize,
    /// Point estimate outside `[0, 1]` (risks) or `[-1, 1]` (contrasts). Not clipped.
    pub out_of_range: bool,
    pub crossfit: bool,
}

fn check_shapes<T: Scalar>(ds: &StudyDataset, nu: &NuisanceSet<T>, arm: usize) -> Result<(), EstimatorError> {
    if nu.len() != ds.len() {
        return Err(EstimatorError::SizeMismatch { nuisance: nu.len(), dataset: ds.len() });
    }
    if arm >= ds.arms().len() {
        return Err(EstimatorError::UnknownArm(arm));
    }
    Ok(())
}

/// `μ̂(w_i) = Q̂₁ m̂ δ + Q̂₀ (1 − m̂ δ)`.
#[inline]
fn plug_in<T: Scalar>(nu: &NuisanceSet<T>, arm: usize, i: usize, delta: T) -> T {
    let p = &nu.predictions;
    let md = p.m[arm][i] * delta;
    p.q1[arm][i] * md + p.q0[arm][i] * (T::one() - md)
}

/// Weighted residual plus adherence correction for a trial record of arm
/// `arm`, before the `1/k̂` factor:
/// `1/ĝ · (1−ĥ)/ĥ · { [Zδ + (1−Z)(1−m̂δ)/(1−m̂)] (Y − Q̂_Z) + δ (Q̂₁ − Q̂₀)(Z − m̂) }`.
#[inline]
fn trial_term<T: Scalar>(nu: &NuisanceSet<T>, arm: usize, i: usize, z: bool, y: T, delta: T) -> T {
    let p = &nu.predictions;
    let (q1, q0, m, g, h) = (p.q1[arm][i], p.q0[arm][i], p.m[arm][i], p.g[arm][i], p.h[i]);
    let one = T::one();
    let (weight, qz, zf) = if z { (delta, q1, one) } else { ((one - m * delta) / (one - m), q0, T::zero()) };
    let core = weight * (y - qz) + delta * (q1 - q0) * (zf - m);
    core / g * ((one - h) / h)
}

fn in_unit<T: Scalar>(x: T) -> bool {
    x >= T::zero() && x <= T::one()
}

/// Plug-in estimate: mean over target records of `μ̂(w)`.
pub fn gcomp_psi<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    delta: &DeltaValue<T>,
) -> Result<EstimateResult<T>, EstimatorError> {
    check_shapes(ds, nu, arm)?;
    let deltas = delta.resolve(ds, nu, arm)?;
    let point = gcomp_with(ds, nu, arm, &deltas);
    Ok(EstimateResult {
        estimand: Estimand::PsiG,
        arm: ds.arms()[arm].clone(),
        delta: Some(delta.clone()),
        point,
        influence: Vec::new(),
        n0: ds.n0(),
        n1: ds.n1(),
        out_of_range: !in_unit(point),
        crossfit: nu.is_crossfit(),
    })
}

fn gcomp_with<T: Scalar>(ds: &StudyDataset, nu: &NuisanceSet<T>, arm: usize, deltas: &[T]) -> T {
    let sum: T = ds
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_trial())
        .map(|(i, _)| plug_in(nu, arm, i, deltas[i]))
        .sum();
    sum / T::from_count(ds.n0())
}

fn eic_with<T: Scalar>(ds: &StudyDataset, nu: &NuisanceSet<T>, arm: usize, deltas: &[T], psi: T) -> Vec<T> {
    let k = nu.k_hat;
    ds.records()
        .iter()
        .enumerate()
        .map(|(i, r)| match r.trial {
            Some(t) if t.arm == arm => trial_term(nu, arm, i, t.z, T::lit(t.y), deltas[i]) / k,
            Some(_) => T::zero(),
            None => (plug_in(nu, arm, i, deltas[i]) - psi) / k,
        })
        .collect()
}

/// Estimated efficient influence curve at `psi`, one value per record.
pub fn eic_evaluate<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    delta: &DeltaValue<T>,
    psi: T,
) -> Result<Vec<T>, EstimatorError> {
    check_shapes(ds, nu, arm)?;
    let deltas = delta.resolve(ds, nu, arm)?;
    Ok(eic_with(ds, nu, arm, &deltas, psi))
}

/// One-step estimate: the plug-in corrected by the sample mean of the
/// estimated influence curve evaluated at the plug-in, which reduces to
/// `(1/n0) Σ_i [trial term_i + (1 − S_i) μ̂(w_i)]`.
pub fn onestep_psi<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    delta: &DeltaValue<T>,
) -> Result<EstimateResult<T>, EstimatorError> {
    check_shapes(ds, nu, arm)?;
    let deltas = delta.resolve(ds, nu, arm)?;
    let mut sum = T::zero();
    for (i, r) in ds.records().iter().enumerate() {
        sum = sum
            + match r.trial {
                Some(t) if t.arm == arm => trial_term(nu, arm, i, t.z, T::lit(t.y), deltas[i]),
                Some(_) => T::zero(),
                None => plug_in(nu, arm, i, deltas[i]),
            };
    }
    let point = sum / T::from_count(ds.n0());
    Ok(EstimateResult {
        estimand: Estimand::PsiOs,
        arm: ds.arms()[arm].clone(),
        delta: Some(delta.clone()),
        point,
        influence: eic_with(ds, nu, arm, &deltas, point),
        n0: ds.n0(),
        n1: ds.n1(),
        out_of_range: !in_unit(point),
        crossfit: nu.is_crossfit(),
    })
}

/// One-step estimate of `E[Y^a | S=1]` with `Q̂'_a = Q̂₁ m̂ + Q̂₀ (1 − m̂)`.
pub fn trial_onestep<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
) -> Result<EstimateResult<T>, EstimatorError> {
    check_shapes(ds, nu, arm)?;
    let mut terms = vec![T::zero(); ds.len()];
    for (i, r) in ds.records().iter().enumerate() {
        if let Some(t) = r.trial {
            let q = nu.mixture_outcome(arm, i);
            terms[i] = q;
            if t.arm == arm {
                terms[i] = terms[i] + (T::lit(t.y) - q) / nu.predictions.g[arm][i];
            }
        }
    }
    let point = terms.iter().copied().sum::<T>() / T::from_count(ds.n1());
    let k1 = T::one() - nu.k_hat;
    let influence = ds
        .records()
        .iter()
        .zip(&terms)
        .map(|(r, &v)| if r.is_trial() { (v - point) / k1 } else { T::zero() })
        .collect();
    Ok(EstimateResult {
        estimand: Estimand::ThetaOs,
        arm: ds.arms()[arm].clone(),
        delta: None,
        point,
        influence,
        n0: ds.n0(),
        n1: ds.n1(),
        out_of_range: !in_unit(point),
        crossfit: nu.is_crossfit(),
    })
}

/// One-step estimate of `E[Y^a | S=0]` when trial and target adherence are
/// equal, with the mixture `Q̂'_a`.
pub fn transport_onestep_setting1<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
) -> Result<EstimateResult<T>, EstimatorError> {
    check_shapes(ds, nu, arm)?;
    let p = &nu.predictions;
    let one = T::one();
    let mut trial_part = vec![T::zero(); ds.len()];
    let mut sum = T::zero();
    for (i, r) in ds.records().iter().enumerate() {
        let q = nu.mixture_outcome(arm, i);
        match r.trial {
            Some(t) if t.arm == arm => {
                let v = (T::lit(t.y) - q) / p.g[arm][i] * ((one - p.h[i]) / p.h[i]);
                trial_part[i] = v;
                sum = sum + v;
            }
            Some(_) => {}
            None => sum = sum + q,
        }
    }
    let point = sum / T::from_count(ds.n0());
    let k = nu.k_hat;
    let influence = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| if r.is_trial() { trial_part[i] / k } else { (nu.mixture_outcome(arm, i) - point) / k })
        .collect();
    Ok(EstimateResult {
        estimand: Estimand::ThetaPrimeOs,
        arm: ds.arms()[arm].clone(),
        delta: None,
        point,
        influence,
        n0: ds.n0(),
        n1: ds.n1(),
        out_of_range: !in_unit(point),
        crossfit: nu.is_crossfit(),
    })
}

/// `r1 − r0`, with influence values differenced record by record.
pub fn risk_difference<T: Scalar>(
    r1: &EstimateResult<T>,
    r0: &EstimateResult<T>,
) -> Result<EstimateResult<T>, EstimatorError> {
    let family = |e: Estimand| match e {
        Estimand::PsiG => Some(ContrastOf::PsiG),
        Estimand::PsiOs => Some(ContrastOf::PsiOs),
        Estimand::ThetaOs => Some(ContrastOf::ThetaOs),
        Estimand::ThetaPrimeOs => Some(ContrastOf::ThetaPrimeOs),
        Estimand::Contrast(_) => None,
    };
    let of = match (family(r1.estimand), family(r0.estimand)) {
        (Some(a), Some(b)) if a == b => a,
        _ => return Err(EstimatorError::IncompatibleContrast { left: r1.estimand, right: r0.estimand }),
    };
    if r1.n0 != r0.n0 || r1.n1 != r0.n1 {
        return Err(EstimatorError::InfluenceLength(r1.n0 + r1.n1, r0.n0 + r0.n1));
    }
    let influence = if r1.influence.is_empty() || r0.influence.is_empty() {
        Vec::new()
    } else if r1.influence.len() != r0.influence.len() {
        return Err(EstimatorError::InfluenceLength(r1.influence.len(), r0.influence.len()));
    } else {
        r1.influence.iter().zip(&r0.influence).map(|(&a, &b)| a - b).collect()
    };
    let point = r1.point - r0.point;
    Ok(EstimateResult {
        estimand: Estimand::Contrast(of),
        arm: format!("{} - {}", r1.arm, r0.arm),
        delta: None,
        point,
        influence,
        n0: r1.n0,
        n1: r1.n1,
        out_of_range: point.abs() > T::one(),
        crossfit: r1.crossfit || r0.crossfit,
    })
}
