//! Variance engines and Wald intervals.
//!
//! * influence-curve variance: `var(φ̂)/n`;
//! * nonparametric bootstrap, resampling trial and target records separately;
//! * sandwich variance from the stacked estimating equations of the nuisance
//!   fits and the estimator, with a central-difference Jacobian as bread.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{design_row, StudyDataset};
use crate::estimators::{DeltaValue, EstimatorError};
use crate::linalg::Matrix;
use crate::nuisance::{FittedModels, NuisanceSet, TreatmentModel};
use crate::rng::substream;
use crate::scalar::{expit, sample_variance, Scalar};

pub const MIN_BOOTSTRAP_REPLICATES: usize = 50;
/// Fraction of bootstrap replicates allowed to fail before the run errors.
pub const BOOTSTRAP_FAILURE_BUDGET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("influence-curve variance needs at least 2 values, got {0}")]
    TooFewInfluenceValues(usize),
    #[error("bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed (budget 5%); first failure: {first}")]
    BootstrapFailures { failed: usize, total: usize, first: String },
    #[error("sandwich variance needs full-sample parametric fits, not cross-fit nuisances")]
    CrossFitNuisances,
    #[error("sandwich bread matrix is singular")]
    SingularBread,
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Eic,
    Bootstrap,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate<T> {
    pub method: VarianceMethod,
    pub variance: T,
    pub se: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stack_dimension: Option<usize>,
}

impl<T: Scalar> VarianceEstimate<T> {
    /// Clamps negative round-off to 0 and sets `se = sqrt(variance)`.
    pub fn new(method: VarianceMethod, variance: T) -> Self {
        let variance = variance.max(T::zero());
        Self { method, variance, se: variance.sqrt(), replicates: None, failed_replicates: None, stack_dimension: None }
    }
}

/// `sample_var(influence) / n`.
pub fn eic_variance<T: Scalar>(influence: &[T]) -> Result<VarianceEstimate<T>, InferenceError> {
    let n = influence.len();
    if n < 2 {
        return Err(InferenceError::TooFewInfluenceValues(n));
    }
    Ok(VarianceEstimate::new(VarianceMethod::Eic, sample_variance(influence) / T::from_count(n)))
}

/// Bootstrap replicates of several quantities computed from the same refits.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws<T> {
    /// One vector per successful replicate, in replicate order.
    pub values: Vec<Vec<T>>,
    pub failed: usize,
}

impl<T: Scalar> BootstrapDraws<T> {
    /// Bootstrap variance of `f(replicate)`.
    pub fn variance_of(&self, f: impl Fn(&[T]) -> T) -> VarianceEstimate<T> {
        let points: Vec<T> = self.values.iter().map(|v| f(v)).collect();
        let mut est = VarianceEstimate::new(VarianceMethod::Bootstrap, sample_variance(&points));
        est.replicates = Some(points.len());
        est.failed_replicates = Some(self.failed);
        est
    }
}

/// Nonparametric bootstrap with the trial and target samples resampled
/// separately (sizes `n1`, `n0` fixed). `pipeline` refits everything on the
/// resampled data and returns the quantities of interest. Replicate `b` draws
/// from stream `b` of `seed`, so the result is independent of thread count.
pub fn bootstrap_replicates<T, E, F>(
    ds: &StudyDataset,
    pipeline: F,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapDraws<T>, InferenceError>
where
    T: Scalar,
    E: std::fmt::Display,
    F: Fn(&StudyDataset) -> Result<Vec<T>, E> + Sync,
{
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(InferenceError::TooFewReplicates(replicates));
    }
    // Strata are put in a content order first, so permuting the input rows
    // leaves every resample (and so the variance) unchanged.
    let recs = ds.records();
    let key = |i: &usize, j: &usize| {
        let (a, b) = (&recs[*i], &recs[*j]);
        a.arm()
            .cmp(&b.arm())
            .then_with(|| a.trial.map(|t| t.z).cmp(&b.trial.map(|t| t.z)))
            .then_with(|| a.trial.map_or(0.0, |t| t.y).total_cmp(&b.trial.map_or(0.0, |t| t.y)))
            .then_with(|| a.w.iter().zip(&b.w).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    };
    let mut trial: Vec<usize> = (0..ds.len()).filter(|&i| recs[i].is_trial()).collect();
    let mut target: Vec<usize> = (0..ds.len()).filter(|&i| !recs[i].is_trial()).collect();
    trial.sort_by(key);
    target.sort_by(key);

    let outcomes: Vec<Result<Vec<T>, String>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let mut idx = Vec::with_capacity(ds.len());
            idx.extend((0..trial.len()).map(|_| trial[rng.random_range(0..trial.len())]));
            idx.extend((0..target.len()).map(|_| target[rng.random_range(0..target.len())]));
            pipeline(&ds.resample(&idx)).map_err(|e| e.to_string())
        })
        .collect();

    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    if failed as f64 > BOOTSTRAP_FAILURE_BUDGET * replicates as f64 {
        let first = outcomes.iter().find_map(|r| r.as_ref().err().cloned()).unwrap_or_default();
        return Err(InferenceError::BootstrapFailures { failed, total: replicates, first });
    }
    if failed > 0 {
        log::warn!("dropped {failed} failed bootstrap replicates of {replicates}");
    }
    Ok(BootstrapDraws { values: outcomes.into_iter().filter_map(Result::ok).collect(), failed })
}

/// Bootstrap variance of a single point estimate; see [`bootstrap_replicates`].
pub fn bootstrap_variance<T, E, F>(
    ds: &StudyDataset,
    pipeline: F,
    replicates: usize,
    seed: u64,
) -> Result<VarianceEstimate<T>, InferenceError>
where
    T: Scalar,
    E: std::fmt::Display,
    F: Fn(&StudyDataset) -> Result<T, E> + Sync,
{
    let draws = bootstrap_replicates(ds, |d: &StudyDataset| pipeline(d).map(|v| vec![v]), replicates, seed)?;
    Ok(draws.variance_of(|v| v[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StackKind {
    /// Outcome and adherence scores plus the g-computation equation.
    Gcomp,
    /// Adds the treatment and selection scores and the one-step equation.
    Onestep,
}

#[derive(Debug, Clone, Copy)]
enum TreatmentParam {
    /// `g ≡ 1` (single arm): no parameters.
    None,
    /// `expit(xγ)` models `Pr(A = indicator_arm)`; the estimand arm uses the
    /// model directly or its complement.
    Model { indicator_arm: usize, complement: bool },
}

/// Stacked estimating equations for one arm and one `δ`, evaluated at an
/// arbitrary parameter vector `(β₁, β₀, α, [γ, ε], ψ)`.
pub struct SandwichStack<'a, T> {
    ds: &'a StudyDataset,
    nu: &'a NuisanceSet<T>,
    arm: usize,
    kind: StackKind,
    deltas: Vec<T>,
    x_outcome: Vec<Vec<T>>,
    x_adherence: Vec<Vec<T>>,
    x_treatment: Vec<Vec<T>>,
    x_selection: Vec<Vec<T>>,
    treatment: TreatmentParam,
    fitted: Vec<T>,
    blocks: Vec<usize>,
}

impl<'a, T: Scalar> SandwichStack<'a, T> {
    pub fn new(
        ds: &'a StudyDataset,
        nu: &'a NuisanceSet<T>,
        arm: usize,
        delta: &DeltaValue<T>,
        kind: StackKind,
    ) -> Result<Self, InferenceError> {
        let models: &FittedModels<T> = nu.full_models().ok_or(InferenceError::CrossFitNuisances)?;
        if arm >= ds.arms().len() {
            return Err(EstimatorError::UnknownArm(arm).into());
        }
        if nu.len() != ds.len() {
            return Err(EstimatorError::SizeMismatch { nuisance: nu.len(), dataset: ds.len() }.into());
        }
        let deltas = delta.resolve(ds, nu, arm)?;
        let f = &nu.options.formulas;
        let rows = |sel| ds.records().iter().map(|r| design_row::<T>(ds.schema(), sel, &r.w)).collect::<Vec<_>>();
        let am = &models.arms[arm];

        let mut fitted = Vec::new();
        let mut blocks = Vec::new();
        for c in [&am.outcome_adherent.coefficients, &am.outcome_nonadherent.coefficients, &am.adherence.coefficients] {
            fitted.extend_from_slice(c);
            blocks.push(c.len());
        }
        let mut treatment = TreatmentParam::None;
        let (x_treatment, x_selection) = match kind {
            StackKind::Gcomp => (Vec::new(), Vec::new()),
            StackKind::Onestep => {
                match &models.treatment {
                    TreatmentModel::Single => {}
                    TreatmentModel::Complement { model } => {
                        treatment = TreatmentParam::Model { indicator_arm: 1, complement: arm == 0 };
                        fitted.extend_from_slice(&model.coefficients);
                        blocks.push(model.coefficients.len());
                    }
                    TreatmentModel::OneVsRest { models } => {
                        treatment = TreatmentParam::Model { indicator_arm: arm, complement: false };
                        fitted.extend_from_slice(&models[arm].coefficients);
                        blocks.push(models[arm].coefficients.len());
                    }
                }
                fitted.extend_from_slice(&models.selection.coefficients);
                blocks.push(models.selection.coefficients.len());
                (rows(&f.treatment), rows(&f.selection))
            }
        };
        fitted.push(T::zero());
        blocks.push(1);

        let mut stack = Self {
            ds,
            nu,
            arm,
            kind,
            deltas,
            x_outcome: rows(&f.outcome),
            x_adherence: rows(&f.adherence),
            x_treatment,
            x_selection,
            treatment,
            fitted,
            blocks,
        };
        let last = stack.fitted.len() - 1;
        stack.fitted[last] = stack.solve_psi(&stack.fitted.clone());
        Ok(stack)
    }

    pub fn dimension(&self) -> usize {
        self.fitted.len()
    }

    /// Fitted nuisance coefficients followed by the estimate that zeroes the
    /// last equation.
    pub fn fitted_parameters(&self) -> &[T] {
        &self.fitted
    }

    pub fn psi_hat(&self) -> T {
        self.fitted[self.fitted.len() - 1]
    }

    fn split<'p>(&self, theta: &'p [T]) -> Vec<&'p [T]> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for &len in &self.blocks {
            out.push(&theta[at..at + len]);
            at += len;
        }
        out
    }

    fn clamp(&self, p: T) -> T {
        self.nu.options.truncation.apply(p).0
    }

    /// Contribution of record `i` to the estimator equation, without `ψ`
    /// (`Y*` for g-computation, `Y†` for one-step).
    fn pseudo_outcome(&self, parts: &[&[T]], i: usize) -> T {
        let dot = |x: &[T], b: &[T]| x.iter().zip(b).map(|(&u, &v)| u * v).sum::<T>();
        let one = T::one();
        let r = &self.ds.records()[i];
        let q1 = self.clamp(expit(dot(&self.x_outcome[i], parts[0])));
        let q0 = self.clamp(expit(dot(&self.x_outcome[i], parts[1])));
        let m = self.clamp(expit(dot(&self.x_adherence[i], parts[2])));
        let delta = self.deltas[i];
        match (self.kind, r.trial) {
            (_, None) => q1 * m * delta + q0 * (one - m * delta),
            (StackKind::Gcomp, Some(_)) => T::zero(),
            (StackKind::Onestep, Some(t)) if t.arm == self.arm => {
                let mut next = 3;
                let g = match self.treatment {
                    TreatmentParam::None => one,
                    TreatmentParam::Model { complement, .. } => {
                        next += 1;
                        let p = expit(dot(&self.x_treatment[i], parts[3]));
                        self.clamp(if complement { one - p } else { p })
                    }
                };
                let h = self.clamp(expit(dot(&self.x_selection[i], parts[next])));
                let (weight, qz, zf) =
                    if t.z { (delta, q1, one) } else { ((one - m * delta) / (one - m), q0, T::zero()) };
                let core = weight * (T::lit(t.y) - qz) + delta * (q1 - q0) * (zf - m);
                core / g * ((one - h) / h)
            }
            (StackKind::Onestep, Some(_)) => T::zero(),
        }
    }

    fn solve_psi(&self, theta: &[T]) -> T {
        let parts = self.split(theta);
        let total: T = (0..self.ds.len()).map(|i| self.pseudo_outcome(&parts, i)).sum();
        total / T::from_count(self.ds.n0())
    }

    /// Stacked score vector of record `i` at `theta`.
    pub fn record_scores(&self, theta: &[T], i: usize) -> Vec<T> {
        let parts = self.split(theta);
        let r = &self.ds.records()[i];
        let mut out = Vec::with_capacity(theta.len());
        let mut push_logistic = |x: &[T], beta: &[T], active: bool, response: T| {
            if active {
                let eta: T = x.iter().zip(beta).map(|(&u, &v)| u * v).sum();
                let resid = response - expit(eta);
                out.extend(x.iter().map(|&v| v * resid));
            } else {
                out.extend(std::iter::repeat_n(T::zero(), beta.len()));
            }
        };
        let in_arm = r.arm() == Some(self.arm);
        let z = r.trial.is_some_and(|t| t.z);
        let y = T::lit(r.trial.map_or(0.0, |t| t.y));
        let zf = if z { T::one() } else { T::zero() };
        push_logistic(&self.x_outcome[i], parts[0], in_arm && z, y);
        push_logistic(&self.x_outcome[i], parts[1], in_arm && !z, y);
        push_logistic(&self.x_adherence[i], parts[2], in_arm, zf);
        let mut next = 3;
        if self.kind == StackKind::Onestep {
            if let TreatmentParam::Model { indicator_arm, .. } = self.treatment {
                let a = if r.arm() == Some(indicator_arm) { T::one() } else { T::zero() };
                push_logistic(&self.x_treatment[i], parts[next], r.is_trial(), a);
                next += 1;
            }
            let s = if r.is_trial() { T::one() } else { T::zero() };
            push_logistic(&self.x_selection[i], parts[next], true, s);
        }
        let psi = theta[theta.len() - 1];
        let target = if r.is_trial() { T::zero() } else { T::one() };
        out.push(self.pseudo_outcome(&parts, i) - target * psi);
        out
    }

    /// Mean of the stacked scores over all records.
    pub fn mean_scores(&self, theta: &[T]) -> Vec<T> {
        let n = self.ds.len();
        let mut acc = vec![T::zero(); theta.len()];
        for i in 0..n {
            for (a, s) in acc.iter_mut().zip(self.record_scores(theta, i)) {
                *a = *a + s;
            }
        }
        let nn = T::from_count(n);
        acc.into_iter().map(|v| v / nn).collect()
    }

    /// Central-difference Jacobian of the mean scores at the fitted
    /// parameters, step `max(1e-6, 1e-6·|θ_j|)`.
    pub fn bread(&self) -> Matrix<T> {
        let d = self.dimension();
        let mut jac = Matrix::zeros(d, d);
        let eps = T::lit(1e-6);
        for j in 0..d {
            let step = eps.max(eps * self.fitted[j].abs());
            let mut up = self.fitted.clone();
            let mut down = self.fitted.clone();
            up[j] = up[j] + step;
            down[j] = down[j] - step;
            let (fu, fd) = (self.mean_scores(&up), self.mean_scores(&down));
            for i in 0..d {
                jac[(i, j)] = (fu[i] - fd[i]) / (step + step);
            }
        }
        jac
    }

    /// Mean outer product of per-record scores at the fitted parameters.
    pub fn meat(&self) -> Matrix<T> {
        let d = self.dimension();
        let mut m = Matrix::zeros(d, d);
        for i in 0..self.ds.len() {
            let s = self.record_scores(&self.fitted, i);
            m.add_outer(&s, &s, T::one());
        }
        m.scale(T::one() / T::from_count(self.ds.len()))
    }

    /// Per-record influence of the estimate, `−[A⁻¹ sᵢ]_last`. Its mean square
    /// divided by `n` is the sandwich variance, and differencing two arms'
    /// vectors gives the contrast variance with their covariance included.
    pub fn influence(&self) -> Result<Vec<T>, InferenceError> {
        let a_inv = self.bread().inverse().ok_or(InferenceError::SingularBread)?;
        let last = self.dimension() - 1;
        let row = a_inv.row(last).to_vec();
        Ok((0..self.ds.len())
            .map(|i| -self.record_scores(&self.fitted, i).iter().zip(&row).map(|(&s, &a)| s * a).sum::<T>())
            .collect())
    }

    /// Full sandwich covariance `(1/n) A⁻¹ B A⁻ᵀ`.
    pub fn covariance(&self) -> Result<Matrix<T>, InferenceError> {
        let a_inv = self.bread().inverse().ok_or(InferenceError::SingularBread)?;
        let cov = a_inv.matmul(&self.meat()).matmul(&a_inv.transpose());
        Ok(cov.scale(T::one() / T::from_count(self.ds.len())))
    }
}

/// Sandwich variance of the g-computation or one-step estimate: the last
/// diagonal entry of the stacked covariance.
pub fn sandwich_variance<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    delta: &DeltaValue<T>,
    which: StackKind,
) -> Result<VarianceEstimate<T>, InferenceError> {
    let stack = SandwichStack::new(ds, nu, arm, delta, which)?;
    let cov = stack.covariance()?;
    let d = stack.dimension();
    let mut est = VarianceEstimate::new(VarianceMethod::Sandwich, cov[(d - 1, d - 1)]);
    est.stack_dimension = Some(d);
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CiResult<T> {
    pub level: T,
    pub lower: T,
    pub upper: T,
    pub point: T,
}

/// Symmetric Wald interval `point ± z_{(1+level)/2} · se`.
pub fn wald_ci<T: Scalar>(point: T, var: &VarianceEstimate<T>, level: T) -> Result<CiResult<T>, InferenceError> {
    if !(level > T::zero() && level < T::one()) {
        return Err(InferenceError::Level(level.as_f64()));
    }
    let z = T::lit(normal_quantile((T::one() + level).as_f64() / 2.0));
    let half = z * var.se;
    Ok(CiResult { level, lower: point - half, upper: point + half, point })
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative error).
#[allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r + 67265.770_927_008_7) * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_6;
        let den = ((((((5226.495_278_852_546 * r + 28729.085_735_721_943) * r + 39307.895_800_092_71) * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_8e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
