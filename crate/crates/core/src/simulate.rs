//! Synthetic data-generating processes over a finite covariate grid, the
//! exact enumeration oracle for `ψ(a, δ)`, and the misspecification harness
//! used to check double robustness by simulation.
//!
//! Cell probabilities are generic: data generation needs `ToPrimitive`,
//! while the oracle only needs field operations, so it can run in exact
//! rational arithmetic.

use std::collections::BTreeSet;

use num_traits::{FromPrimitive, Num, ToPrimitive};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Covariate, CovariateSchema, CovariateSelection, DataError, StudyDataset, StudyRecord};
use crate::estimators::{gcomp_psi, onestep_psi, DeltaValue};
use crate::inference::{eic_variance, normal_quantile, sandwich_variance, StackKind};
use crate::nuisance::{fit_nuisance_set, ModelFormulas, Nuisance, NuisanceOptions};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid DGP: {0}")]
    Spec(String),
    #[error("arm index {0} out of range")]
    UnknownArm(usize),
    #[error("cell {cell}: m·δ = {product} exceeds 1")]
    AdherenceAboveOne { cell: usize, product: f64 },
    #[error("experiment needs at least one replicate and one sample size")]
    Empty,
    #[error("{failed} of {reps} replicates failed at n={n} (budget 2%); first failure: {first}")]
    TooManyFailures { n: usize, failed: usize, reps: usize, first: String },
    #[error("generated data invalid: {0}")]
    Data(String),
}

impl From<DataError> for SimulationError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

/// One cell of the covariate grid. Per-arm vectors are indexed like
/// [`DgpSpec::arms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpCell<T> {
    /// Covariate values (level indices for discrete covariates).
    pub w: Vec<f64>,
    pub p_trial: T,
    pub p_target: T,
    /// Assignment probabilities `g_a(w)`; sum to 1 over arms.
    pub assign: Vec<T>,
    /// Adherence probabilities `m_a(w)`.
    pub adherence: Vec<T>,
    /// `Q_{a,1}(w)`.
    pub outcome_adherent: Vec<T>,
    /// `Q_{a,0}(w)`.
    pub outcome_nonadherent: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSpec<T> {
    pub schema: CovariateSchema,
    pub arms: Vec<String>,
    pub cells: Vec<DgpCell<T>>,
    pub n1: usize,
    pub n0: usize,
    pub seed: u64,
}

fn ratio<T: Num + FromPrimitive>(num: i64, den: i64) -> T {
    T::from_i64(num).expect("small integer") / T::from_i64(den).expect("small integer")
}

impl<T: Num + FromPrimitive + Copy> DgpSpec<T> {
    /// Toy process: one binary covariate, arms "0" and "1" assigned 1:1,
    /// `Pr(W=1)` 0.4 in the trial and 0.5 in the target. For arm 1,
    /// `m = (0.8, 0.6)`, `Q₁ = (0.3, 0.5)`, `Q₀ = (0.7, 0.9)` at `w = (0, 1)`;
    /// for arm 0, `m = (0.95, 0.9)`, `Q₁ = (0.2, 0.4)`, `Q₀ = (0.6, 0.8)`.
    pub fn toy(n1: usize, n0: usize, seed: u64) -> Self {
        let r = ratio::<T>;
        let half = r(1, 2);
        let cell = |w: f64, pt: T, pg: T, m: [T; 2], q1: [T; 2], q0: [T; 2]| DgpCell {
            w: vec![w],
            p_trial: pt,
            p_target: pg,
            assign: vec![half, half],
            adherence: m.to_vec(),
            outcome_adherent: q1.to_vec(),
            outcome_nonadherent: q0.to_vec(),
        };
        Self {
            schema: CovariateSchema::new(vec![Covariate::binary("w")]).expect("valid schema"),
            arms: vec!["0".into(), "1".into()],
            cells: vec![
                cell(0.0, r(3, 5), half, [r(95, 100), r(4, 5)], [r(1, 5), r(3, 10)], [r(3, 5), r(7, 10)]),
                cell(1.0, r(2, 5), half, [r(9, 10), r(3, 5)], [r(2, 5), r(1, 2)], [r(4, 5), r(9, 10)]),
            ],
            n1,
            n0,
            seed,
        }
    }
}

impl<T: Num + Copy + PartialOrd + ToPrimitive> DgpSpec<T> {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::Spec(m));
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if self.arms.is_empty() {
            return bad("no arms".into());
        }
        let k = self.arms.len();
        let unit = |v: T| v > T::zero() && v < T::one();
        let (mut st, mut sg) = (0.0, 0.0);
        for (c, cell) in self.cells.iter().enumerate() {
            if cell.w.len() != self.schema.len() {
                return bad(format!("cell {c}: {} covariate values for {} covariates", cell.w.len(), self.schema.len()));
            }
            for (j, (&v, cov)) in cell.w.iter().zip(self.schema.covariates()).enumerate() {
                if let Some(levels) = cov.n_levels() {
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= levels {
                        return bad(format!("cell {c}: covariate {j} value {v} is not a level"));
                    }
                }
            }
            for (name, v) in [
                ("assign", &cell.assign),
                ("adherence", &cell.adherence),
                ("outcome_adherent", &cell.outcome_adherent),
                ("outcome_nonadherent", &cell.outcome_nonadherent),
            ] {
                if v.len() != k {
                    return bad(format!("cell {c}: {name} has {} entries for {k} arms", v.len()));
                }
                if name != "assign" && !v.iter().all(|&p| unit(p)) {
                    return bad(format!("cell {c}: {name} probabilities must lie in (0,1)"));
                }
            }
            let assign_sum: f64 = cell.assign.iter().filter_map(|p| p.to_f64()).sum();
            if (assign_sum - 1.0).abs() > 1e-9 || cell.assign.iter().any(|&p| p < T::zero()) {
                return bad(format!("cell {c}: assignment probabilities sum to {assign_sum}"));
            }
            if cell.p_trial < T::zero() || cell.p_target < T::zero() {
                return bad(format!("cell {c}: negative cell probability"));
            }
            st += cell.p_trial.to_f64().unwrap_or(f64::NAN);
            sg += cell.p_target.to_f64().unwrap_or(f64::NAN);
        }
        if (st - 1.0).abs() > 1e-9 || (sg - 1.0).abs() > 1e-9 {
            return bad(format!("cell probabilities sum to {st} (trial) and {sg} (target)"));
        }
        Ok(())
    }

    /// Draws `n1` trial and `n0` target records; deterministic given `seed`.
    pub fn generate(&self) -> Result<StudyDataset, SimulationError> {
        self.validate()?;
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        let mut rng = substream(self.seed, 0);
        let trial_cells = WeightedIndex::new(self.cells.iter().map(|c| f(c.p_trial)))
            .map_err(|e| SimulationError::Spec(e.to_string()))?;
        let target_cells = WeightedIndex::new(self.cells.iter().map(|c| f(c.p_target)))
            .map_err(|e| SimulationError::Spec(e.to_string()))?;
        let mut records = Vec::with_capacity(self.n1 + self.n0);
        for _ in 0..self.n1 {
            let cell = &self.cells[trial_cells.sample(&mut rng)];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut arm = self.arms.len() - 1;
            for (a, &p) in cell.assign.iter().enumerate() {
                acc += f(p);
                if u < acc {
                    arm = a;
                    break;
                }
            }
            let z = rng.random::<f64>() < f(cell.adherence[arm]);
            let q = if z { cell.outcome_adherent[arm] } else { cell.outcome_nonadherent[arm] };
            let y = if rng.random::<f64>() < f(q) { 1.0 } else { 0.0 };
            records.push(StudyRecord::trial(cell.w.clone(), arm, z, y));
        }
        for _ in 0..self.n0 {
            records.push(StudyRecord::target(self.cells[target_cells.sample(&mut rng)].w.clone()));
        }
        Ok(StudyDataset::new(self.schema.clone(), records, self.arms.clone())?)
    }
}

impl<T: Num + Copy + PartialOrd> DgpSpec<T> {
    fn check_arm(&self, arm: usize) -> Result<(), SimulationError> {
        if arm < self.arms.len() {
            Ok(())
        } else {
            Err(SimulationError::UnknownArm(arm))
        }
    }

    /// Exact `ψ(a, δ) = Σ_w p_target(w) [Q₁ m δ + Q₀ (1 − m δ)]`.
    pub fn oracle_psi(&self, arm: usize, delta: T) -> Result<T, SimulationError>
    where
        T: ToPrimitive,
    {
        self.check_arm(arm)?;
        let mut total = T::zero();
        for (c, cell) in self.cells.iter().enumerate() {
            let md = cell.adherence[arm] * delta;
            if md > T::one() || delta < T::zero() {
                return Err(SimulationError::AdherenceAboveOne { cell: c, product: md.to_f64().unwrap_or(f64::NAN) });
            }
            total = total
                + cell.p_target * (cell.outcome_adherent[arm] * md + cell.outcome_nonadherent[arm] * (T::one() - md));
        }
        Ok(total)
    }

    /// Exact slope of `δ ↦ ψ(a, δ)`: `Σ_w p_target m (Q₁ − Q₀)`.
    pub fn oracle_slope(&self, arm: usize) -> Result<T, SimulationError> {
        self.check_arm(arm)?;
        Ok(self.cells.iter().fold(T::zero(), |acc, c| {
            acc + c.p_target * c.adherence[arm] * (c.outcome_adherent[arm] - c.outcome_nonadherent[arm])
        }))
    }

    /// Exact `E[Y | A=a, W=w, S=1]` standardised to the target covariate law.
    pub fn oracle_setting1(&self, arm: usize) -> Result<T, SimulationError> {
        self.check_arm(arm)?;
        Ok(self.cells.iter().fold(T::zero(), |acc, c| {
            let m = c.adherence[arm];
            acc + c.p_target * (c.outcome_adherent[arm] * m + c.outcome_nonadherent[arm] * (T::one() - m))
        }))
    }

    /// Exact `E[Y^a | S=1]`.
    pub fn oracle_trial_mean(&self, arm: usize) -> Result<T, SimulationError> {
        self.check_arm(arm)?;
        Ok(self.cells.iter().fold(T::zero(), |acc, c| {
            let m = c.adherence[arm];
            acc + c.p_trial * (c.outcome_adherent[arm] * m + c.outcome_nonadherent[arm] * (T::one() - m))
        }))
    }

    /// Exact mean target adherence `Σ_w p_target m δ`.
    pub fn oracle_adherence(&self, arm: usize, delta: T) -> Result<T, SimulationError> {
        self.check_arm(arm)?;
        Ok(self.cells.iter().fold(T::zero(), |acc, c| acc + c.p_target * c.adherence[arm] * delta))
    }
}

/// Which nuisances are fit with the full covariate set. The others are
/// deliberately misspecified by omitting a covariate (or, with a single
/// covariate, by fitting an intercept only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisspecConfig {
    pub correct: BTreeSet<Nuisance>,
    /// Schema index of the covariate dropped from misspecified models when
    /// the grid has at least two covariates.
    #[serde(default)]
    pub omit: usize,
}

impl MisspecConfig {
    pub fn new(correct: &[Nuisance]) -> Self {
        Self { correct: correct.iter().copied().collect(), omit: 0 }
    }

    pub fn all_correct() -> Self {
        Self::new(&[Nuisance::Outcome, Nuisance::Adherence, Nuisance::Treatment, Nuisance::Selection])
    }

    /// Whether the correctly specified set contains one of the subsets under
    /// which the one-step estimator stays consistent:
    /// `{Q, m}`, `{g, h, m}` or `{Q, g, h}`.
    pub fn is_valid_subset(&self) -> bool {
        use Nuisance::*;
        let has = |s: &[Nuisance]| s.iter().all(|n| self.correct.contains(n));
        has(&[Outcome, Adherence]) || has(&[Treatment, Selection, Adherence]) || has(&[Outcome, Treatment, Selection])
    }

    pub fn formulas(&self, schema: &CovariateSchema) -> ModelFormulas {
        let wrong = if schema.len() >= 2 {
            CovariateSelection::Without(vec![self.omit])
        } else {
            CovariateSelection::InterceptOnly
        };
        let mut f = ModelFormulas::default();
        for n in [Nuisance::Outcome, Nuisance::Adherence, Nuisance::Treatment, Nuisance::Selection] {
            if !self.correct.contains(&n) {
                f.set(n, wrong.clone());
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOptions {
    pub arm: usize,
    pub deltas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
    /// Also compute sandwich intervals for the g-computation estimator.
    pub gcomp_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub delta: f64,
    pub estimator: &'static str,
    pub oracle: f64,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    /// Monte Carlo standard error of the mean estimate.
    pub mc_se: f64,
    pub rmse: f64,
    /// `NaN` when no interval was computed.
    pub coverage: f64,
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub config: MisspecConfig,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn row(&self, n: usize, delta: f64, estimator: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.n == n && r.delta == delta && r.estimator == estimator)
    }
}

/// Per-replicate, per-δ outcome: (ψ_G, ψ_G covered, ψ_OS, ψ_OS covered).
type RepOutcome = Vec<(f64, Option<bool>, f64, bool)>;

/// Repeated generate–fit–estimate at each total sample size `n` (split
/// between trial and target in the process's `n1 : n0` proportion), reporting
/// bias, Monte Carlo SE, RMSE and Wald coverage against the oracle.
pub fn run_dr_experiment(
    spec: &DgpSpec<f64>,
    config: &MisspecConfig,
    opts: &ExperimentOptions,
) -> Result<ExperimentTable, SimulationError> {
    spec.validate()?;
    if opts.reps == 0 || opts.sizes.is_empty() || opts.deltas.is_empty() {
        return Err(SimulationError::Empty);
    }
    let oracles: Vec<f64> = opts.deltas.iter().map(|&d| spec.oracle_psi(opts.arm, d)).collect::<Result<_, _>>()?;
    let nuisance_opts = NuisanceOptions::<f64> { formulas: config.formulas(&spec.schema), ..Default::default() };
    let z = normal_quantile((1.0 + opts.level) / 2.0);
    let frac1 = spec.n1 as f64 / (spec.n1 + spec.n0) as f64;

    let mut rows = Vec::new();
    for (si, &n) in opts.sizes.iter().enumerate() {
        let n1 = ((n as f64) * frac1).round() as usize;
        let n0 = n - n1;
        let results: Vec<Result<RepOutcome, String>> = (0..opts.reps)
            .into_par_iter()
            .map(|rep| {
                let mut s = spec.clone();
                s.n1 = n1;
                s.n0 = n0;
                s.seed = derive_seed(opts.seed, &[si as u64, rep as u64]);
                let ds = s.generate().map_err(|e| e.to_string())?;
                let nu = fit_nuisance_set(&ds, &nuisance_opts).map_err(|e| e.to_string())?;
                opts.deltas
                    .iter()
                    .zip(&oracles)
                    .map(|(&d, &truth)| {
                        let delta = DeltaValue::constant(d);
                        let g = gcomp_psi(&ds, &nu, opts.arm, &delta).map_err(|e| e.to_string())?;
                        let g_cover = if opts.gcomp_coverage {
                            let v = sandwich_variance(&ds, &nu, opts.arm, &delta, StackKind::Gcomp)
                                .map_err(|e| e.to_string())?;
                            Some((g.point - truth).abs() <= z * v.se)
                        } else {
                            None
                        };
                        let os = onestep_psi(&ds, &nu, opts.arm, &delta).map_err(|e| e.to_string())?;
                        let v = eic_variance(&os.influence).map_err(|e| e.to_string())?;
                        Ok((g.point, g_cover, os.point, (os.point - truth).abs() <= z * v.se))
                    })
                    .collect()
            })
            .collect();

        let failures = results.iter().filter(|r| r.is_err()).count();
        if failures as f64 > 0.02 * opts.reps as f64 {
            let first = results.iter().find_map(|r| r.as_ref().err().cloned()).unwrap_or_default();
            return Err(SimulationError::TooManyFailures { n, failed: failures, reps: opts.reps, first });
        }
        let ok: Vec<RepOutcome> = results.into_iter().filter_map(Result::ok).collect();
        for (di, (&delta, &oracle)) in opts.deltas.iter().zip(&oracles).enumerate() {
            let g: Vec<f64> = ok.iter().map(|r| r[di].0).collect();
            let g_cov: Vec<bool> = ok.iter().filter_map(|r| r[di].1).collect();
            let os: Vec<f64> = ok.iter().map(|r| r[di].2).collect();
            let os_cov: Vec<bool> = ok.iter().map(|r| r[di].3).collect();
            rows.push(summarise_rep("psi_G", n, delta, oracle, &g, &g_cov, failures));
            rows.push(summarise_rep("psi_OS", n, delta, oracle, &os, &os_cov, failures));
        }
    }
    Ok(ExperimentTable { config: config.clone(), rows })
}

fn summarise_rep(
    estimator: &'static str,
    n: usize,
    delta: f64,
    oracle: f64,
    estimates: &[f64],
    covered: &[bool],
    failures: usize,
) -> ExperimentRow {
    let reps = estimates.len();
    let mean_estimate = crate::scalar::mean(estimates);
    let sd = if reps > 1 { crate::scalar::sample_variance(estimates).sqrt() } else { f64::NAN };
    let rmse = (estimates.iter().map(|e| (e - oracle).powi(2)).sum::<f64>() / reps as f64).sqrt();
    let coverage =
        if covered.is_empty() { f64::NAN } else { covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64 };
    ExperimentRow {
        n,
        delta,
        estimator,
        oracle,
        mean_estimate,
        mean_bias: mean_estimate - oracle,
        mc_se: sd / (reps as f64).sqrt(),
        rmse,
        coverage,
        reps,
        failures,
    }
}

/// A toy-family process with randomly drawn cell probabilities, for property
/// tests over many datasets.
pub fn random_toy<R: Rng + ?Sized>(rng: &mut R, n1: usize, n0: usize, seed: u64) -> DgpSpec<f64> {
    let mut spec = DgpSpec::<f64>::toy(n1, n0, seed);
    let mut p = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let pt = p(0.25, 0.75);
    let pg = p(0.25, 0.75);
    let g1 = p(0.3, 0.7);
    for (c, cell) in spec.cells.iter_mut().enumerate() {
        cell.p_trial = if c == 0 { 1.0 - pt } else { pt };
        cell.p_target = if c == 0 { 1.0 - pg } else { pg };
        cell.assign = vec![1.0 - g1, g1];
        for a in 0..2 {
            cell.adherence[a] = p(0.3, 0.9);
            cell.outcome_adherent[a] = p(0.15, 0.85);
            cell.outcome_nonadherent[a] = p(0.15, 0.85);
        }
    }
    spec
}
