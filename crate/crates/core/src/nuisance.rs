//! Nuisance models `Q_{a,1}`, `Q_{a,0}`, `m_a`, `g_a`, `h` and their
//! per-record predictions, optionally cross-fit.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{design_row_into, CovariateSelection, StudyDataset, StudyRecord};
use crate::linalg::Matrix;
use crate::logistic::{fit_logistic, FitError, FitOptions, LogisticModel};
use crate::scalar::Scalar;

/// The nuisance functions, named by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Nuisance {
    /// Outcome models `Q_{a,z}` (both adherence strata).
    #[serde(rename = "Q")]
    Outcome,
    /// Adherence model `m_a`.
    #[serde(rename = "m")]
    Adherence,
    /// Treatment model `g_a`.
    #[serde(rename = "g")]
    Treatment,
    /// Selection model `h`.
    #[serde(rename = "h")]
    Selection,
}

impl fmt::Display for Nuisance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Outcome => "Q",
            Self::Adherence => "m",
            Self::Treatment => "g",
            Self::Selection => "h",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("fitting {model}{}: {source}", fold.map(|f| format!(" (fold {f})")).unwrap_or_default())]
pub struct NuisanceError {
    pub model: String,
    pub fold: Option<usize>,
    #[source]
    pub source: FitError,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("fold count must be at least 2, got {0}")]
pub struct FoldCountError(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Truncation<T> {
    pub fn new(lo: T, hi: T) -> Option<Self> {
        (T::zero() < lo && lo < hi && hi < T::one()).then_some(Self { lo, hi })
    }

    /// Returns the clamped value and whether clamping happened.
    #[inline]
    pub fn apply(&self, p: T) -> (T, bool) {
        if p < self.lo {
            (self.lo, true)
        } else if p > self.hi {
            (self.hi, true)
        } else {
            (p, false)
        }
    }
}

impl<T: Scalar> Default for Truncation<T> {
    fn default() -> Self {
        Self { lo: T::lit(0.001), hi: T::lit(0.999) }
    }
}

/// Covariates entering each nuisance model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelFormulas {
    pub outcome: CovariateSelection,
    pub adherence: CovariateSelection,
    pub treatment: CovariateSelection,
    pub selection: CovariateSelection,
}

impl ModelFormulas {
    pub fn get(&self, which: Nuisance) -> &CovariateSelection {
        match which {
            Nuisance::Outcome => &self.outcome,
            Nuisance::Adherence => &self.adherence,
            Nuisance::Treatment => &self.treatment,
            Nuisance::Selection => &self.selection,
        }
    }

    pub fn set(&mut self, which: Nuisance, sel: CovariateSelection) {
        match which {
            Nuisance::Outcome => self.outcome = sel,
            Nuisance::Adherence => self.adherence = sel,
            Nuisance::Treatment => self.treatment = sel,
            Nuisance::Selection => self.selection = sel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceOptions<T> {
    pub truncation: Truncation<T>,
    pub fit: FitOptions<T>,
    pub formulas: ModelFormulas,
}

impl<T: Scalar> Default for NuisanceOptions<T> {
    fn default() -> Self {
        Self { truncation: Truncation::default(), fit: FitOptions::default(), formulas: ModelFormulas::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmModels<T> {
    /// `Q_{a,1}`: outcome among adherent trial records of the arm.
    pub outcome_adherent: LogisticModel<T>,
    /// `Q_{a,0}`: outcome among non-adherent trial records of the arm.
    pub outcome_nonadherent: LogisticModel<T>,
    /// `m_a`: adherence among trial records of the arm.
    pub adherence: LogisticModel<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentModel<T> {
    /// Only one arm observed: `g ≡ 1`.
    Single,
    /// Two arms: one model for `Pr(A = arms[1])`, the other arm is its complement.
    Complement { model: LogisticModel<T> },
    /// More than two arms: one-vs-rest model per arm.
    OneVsRest { models: Vec<LogisticModel<T>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedModels<T> {
    pub arms: Vec<ArmModels<T>>,
    pub treatment: TreatmentModel<T>,
    pub selection: LogisticModel<T>,
}

/// Per-record predictions; per-arm vectors are indexed `[arm][record]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub q1: Vec<Vec<T>>,
    pub q0: Vec<Vec<T>>,
    pub m: Vec<Vec<T>>,
    pub g: Vec<Vec<T>>,
    pub h: Vec<T>,
}

impl<T: Scalar> Predictions<T> {
    fn empty(n_arms: usize, n: usize) -> Self {
        let blank = || vec![vec![T::nan(); n]; n_arms];
        Self { q1: blank(), q0: blank(), m: blank(), g: blank(), h: vec![T::nan(); n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fits<T> {
    Full(FittedModels<T>),
    CrossFit { folds: FoldAssignment, models: Vec<FittedModels<T>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet<T> {
    pub fits: Fits<T>,
    pub predictions: Predictions<T>,
    /// Empirical `Pr(S=0) = n0/n`.
    pub k_hat: T,
    pub n0: usize,
    pub n1: usize,
    pub truncation_events: usize,
    pub options: NuisanceOptions<T>,
}

impl<T: Scalar> NuisanceSet<T> {
    pub fn len(&self) -> usize {
        self.predictions.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.h.is_empty()
    }

    pub fn is_crossfit(&self) -> bool {
        matches!(self.fits, Fits::CrossFit { .. })
    }

    pub fn full_models(&self) -> Option<&FittedModels<T>> {
        match &self.fits {
            Fits::Full(m) => Some(m),
            Fits::CrossFit { .. } => None,
        }
    }

    /// `Q'_a(w) = Q_{a,1} m_a + Q_{a,0} (1 − m_a)` for record `i`.
    pub fn mixture_outcome(&self, arm: usize, i: usize) -> T {
        let p = &self.predictions;
        p.q1[arm][i] * p.m[arm][i] + p.q0[arm][i] * (T::one() - p.m[arm][i])
    }
}

fn fit_on<T: Scalar>(
    ds: &StudyDataset,
    sel: &CovariateSelection,
    train: &[usize],
    keep: impl Fn(&StudyRecord) -> bool,
    response: impl Fn(&StudyRecord) -> f64,
    opts: &FitOptions<T>,
) -> Result<LogisticModel<T>, FitError> {
    let width = sel.width(ds.schema());
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut row = Vec::with_capacity(width);
    for &i in train {
        let r = &ds.records()[i];
        if keep(r) {
            design_row_into(ds.schema(), sel, &r.w, &mut row);
            data.extend_from_slice(&row);
            y.push(T::lit(response(r)));
        }
    }
    if y.is_empty() {
        return Err(FitError::TooFewRows { rows: 0, cols: width });
    }
    fit_logistic(&Matrix::from_row_major(y.len(), width, data), &y, opts)
}

/// Fits every nuisance model on the records listed in `train`.
pub fn fit_models<T: Scalar>(
    ds: &StudyDataset,
    train: &[usize],
    opts: &NuisanceOptions<T>,
    fold: Option<usize>,
) -> Result<FittedModels<T>, NuisanceError> {
    let label = |model: String| move |source| NuisanceError { model, fold, source };
    let f = &opts.formulas;
    let trial = |r: &StudyRecord| r.trial;

    let mut arms = Vec::with_capacity(ds.arms().len());
    for (a, name) in ds.arms().iter().enumerate() {
        let outcome_adherent = fit_on(
            ds,
            &f.outcome,
            train,
            |r| trial(r).is_some_and(|t| t.arm == a && t.z),
            |r| r.trial.map_or(0.0, |t| t.y),
            &opts.fit,
        )
        .map_err(label(format!("Q[{name},z=1]")))?;
        let outcome_nonadherent = fit_on(
            ds,
            &f.outcome,
            train,
            |r| trial(r).is_some_and(|t| t.arm == a && !t.z),
            |r| r.trial.map_or(0.0, |t| t.y),
            &opts.fit,
        )
        .map_err(label(format!("Q[{name},z=0]")))?;
        let adherence = fit_on(
            ds,
            &f.adherence,
            train,
            |r| trial(r).is_some_and(|t| t.arm == a),
            |r| r.trial.map_or(0.0, |t| f64::from(u8::from(t.z))),
            &opts.fit,
        )
        .map_err(label(format!("m[{name}]")))?;
        arms.push(ArmModels { outcome_adherent, outcome_nonadherent, adherence });
    }

    let fit_arm_indicator = |a: usize| {
        fit_on(
            ds,
            &f.treatment,
            train,
            |r| r.is_trial(),
            |r| if r.arm() == Some(a) { 1.0 } else { 0.0 },
            &opts.fit,
        )
        .map_err(label(format!("g[{}]", ds.arms()[a])))
    };
    let treatment = match ds.arms().len() {
        1 => TreatmentModel::Single,
        2 => TreatmentModel::Complement { model: fit_arm_indicator(1)? },
        k => TreatmentModel::OneVsRest { models: (0..k).map(fit_arm_indicator).collect::<Result<_, _>>()? },
    };

    let selection = fit_on(ds, &f.selection, train, |_| true, |r| f64::from(r.s()), &opts.fit)
        .map_err(label("h".to_owned()))?;

    Ok(FittedModels { arms, treatment, selection })
}

/// Raw (untruncated) predictions of every nuisance at covariate vector `w`.
pub struct RawPrediction<T> {
    pub q1: Vec<T>,
    pub q0: Vec<T>,
    pub m: Vec<T>,
    pub g: Vec<T>,
    pub h: T,
}

impl<T: Scalar> FittedModels<T> {
    pub fn predict_raw(&self, ds: &StudyDataset, formulas: &ModelFormulas, w: &[f64]) -> RawPrediction<T> {
        let schema = ds.schema();
        let mut buf = Vec::new();
        let mut at = |sel: &CovariateSelection, model: &LogisticModel<T>| {
            design_row_into(schema, sel, w, &mut buf);
            model.predict(&buf)
        };
        let q1 = self.arms.iter().map(|m| at(&formulas.outcome, &m.outcome_adherent)).collect();
        let q0 = self.arms.iter().map(|m| at(&formulas.outcome, &m.outcome_nonadherent)).collect();
        let m = self.arms.iter().map(|m| at(&formulas.adherence, &m.adherence)).collect();
        let g = match &self.treatment {
            TreatmentModel::Single => vec![T::one()],
            TreatmentModel::Complement { model } => {
                let p = at(&formulas.treatment, model);
                vec![T::one() - p, p]
            }
            TreatmentModel::OneVsRest { models } => models.iter().map(|mdl| at(&formulas.treatment, mdl)).collect(),
        };
        let h = at(&formulas.selection, &self.selection);
        RawPrediction { q1, q0, m, g, h }
    }
}

fn fill_predictions<T: Scalar>(
    ds: &StudyDataset,
    models: &FittedModels<T>,
    opts: &NuisanceOptions<T>,
    records: &[usize],
    out: &mut Predictions<T>,
) -> usize {
    let mut events = 0;
    let mut clamp = |p: T| {
        let (v, hit) = opts.truncation.apply(p);
        events += usize::from(hit);
        v
    };
    let schema = ds.schema();
    let mut buf = Vec::new();
    let mut column = |sel: &CovariateSelection, model: &LogisticModel<T>, complement: bool, dst: &mut [T]| {
        for &i in records {
            design_row_into(schema, sel, &ds.records()[i].w, &mut buf);
            let p = model.predict(&buf);
            dst[i] = clamp(if complement { T::one() - p } else { p });
        }
    };
    let f = &opts.formulas;
    for (a, am) in models.arms.iter().enumerate() {
        column(&f.outcome, &am.outcome_adherent, false, &mut out.q1[a]);
        column(&f.outcome, &am.outcome_nonadherent, false, &mut out.q0[a]);
        column(&f.adherence, &am.adherence, false, &mut out.m[a]);
    }
    match &models.treatment {
        TreatmentModel::Single => records.iter().for_each(|&i| out.g[0][i] = T::one()),
        TreatmentModel::Complement { model } => {
            column(&f.treatment, model, true, &mut out.g[0]);
            column(&f.treatment, model, false, &mut out.g[1]);
        }
        TreatmentModel::OneVsRest { models } => {
            for (a, mdl) in models.iter().enumerate() {
                column(&f.treatment, mdl, false, &mut out.g[a]);
            }
        }
    }
    column(&f.selection, &models.selection, false, &mut out.h);
    events
}

fn k_hat<T: Scalar>(ds: &StudyDataset) -> T {
    T::from_count(ds.n0()) / T::from_count(ds.len())
}

/// Fits all nuisances on the full dataset and predicts for every record.
pub fn fit_nuisance_set<T: Scalar>(ds: &StudyDataset, opts: &NuisanceOptions<T>) -> Result<NuisanceSet<T>, NuisanceError> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let models = fit_models(ds, &all, opts, None)?;
    let mut predictions = Predictions::empty(ds.arms().len(), ds.len());
    let truncation_events = fill_predictions(ds, &models, opts, &all, &mut predictions);
    Ok(NuisanceSet {
        fits: Fits::Full(models),
        predictions,
        k_hat: k_hat(ds),
        n0: ds.n0(),
        n1: ds.n1(),
        truncation_events,
        options: opts.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    /// Per stratum `(s, arm)`: size and number of folds it spans.
    pub strata: Vec<FoldStratum>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldStratum {
    pub s: u8,
    pub arm: Option<usize>,
    pub size: usize,
    pub folds_used: usize,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.fold_of.iter().enumerate().filter(|(_, &f)| f == fold).map(|(i, _)| i).collect()
    }
}

/// Stratified (by `(s, arm)`) fold assignment, deterministic given `seed`.
///
/// Within a stratum, shuffled members are dealt to consecutive folds starting
/// where the previous stratum stopped, so `k = n` gives leave-one-out and every
/// stratum is split as evenly as its size allows. A stratum smaller than `k`
/// spans only `size` folds, which is reported as a warning.
pub fn make_folds(ds: &StudyDataset, k: usize, seed: u64) -> Result<FoldAssignment, FoldCountError> {
    if k < 2 {
        return Err(FoldCountError(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(u8, Option<usize>)> = vec![(0, None)];
    keys.extend((0..ds.arms().len()).map(|a| (1, Some(a))));

    let mut fold_of = vec![usize::MAX; ds.len()];
    let mut strata = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0;
    for (s, arm) in keys {
        let mut members: Vec<usize> = ds
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.s() == s && r.arm() == arm)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + pos) % k;
        }
        offset += members.len();
        let folds_used = members.len().min(k);
        if folds_used < k {
            let label = arm.map_or_else(|| "target".to_owned(), |a| format!("trial arm `{}`", ds.arms()[a]));
            let msg = format!("{label} stratum has {} records; using {folds_used} folds instead of {k}", members.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        strata.push(FoldStratum { s, arm, size: members.len(), folds_used });
    }
    Ok(FoldAssignment { k, fold_of, strata, warnings })
}

/// Cross-fit predictions: each record is predicted by models trained on every
/// fold except its own. `k_hat` is the full-sample value.
pub fn crossfit_predictions<T: Scalar>(
    ds: &StudyDataset,
    folds: &FoldAssignment,
    opts: &NuisanceOptions<T>,
) -> Result<NuisanceSet<T>, NuisanceError> {
    let used: Vec<usize> = (0..folds.k).filter(|&f| folds.fold_of.contains(&f)).collect();
    let models: Vec<(usize, FittedModels<T>)> = used
        .par_iter()
        .map(|&f| {
            let train: Vec<usize> = (0..ds.len()).filter(|&i| folds.fold_of[i] != f).collect();
            fit_models(ds, &train, opts, Some(f)).map(|m| (f, m))
        })
        .collect::<Result<_, _>>()?;

    let mut predictions = Predictions::empty(ds.arms().len(), ds.len());
    let mut truncation_events = 0;
    for (f, m) in &models {
        truncation_events += fill_predictions(ds, m, opts, &folds.members(*f), &mut predictions);
    }
    Ok(NuisanceSet {
        fits: Fits::CrossFit { folds: folds.clone(), models: models.into_iter().map(|(_, m)| m).collect() },
        predictions,
        k_hat: k_hat(ds),
        n0: ds.n0(),
        n1: ds.n1(),
        truncation_events,
        options: opts.clone(),
    })
}
