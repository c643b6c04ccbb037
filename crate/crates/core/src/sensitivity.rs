//! Ways of specifying `δ`: static grids, ranges (bounds), and trapezoidal
//! distributions sampled by Monte Carlo, plus the summaries reported for them.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::StudyDataset;
use crate::estimators::EstimatorError;
use crate::nuisance::NuisanceSet;
use crate::pipeline::{Analysis, ContrastRows, PipelineError};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Draws below this count are rejected by [`run_mc`].
pub const MIN_MC_DRAWS: usize = 100;
/// Fraction of Monte Carlo draws allowed to violate `m̂·δ ≤ 1`.
pub const MC_VIOLATION_BUDGET: f64 = 0.05;

/// Stream indices under the Monte Carlo seed.
const STREAM_ARM: u64 = 1;
const STREAM_REFERENT: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("invalid trapezoid ({a}, {b}, {c}, {d}): need a ≤ b ≤ c ≤ d")]
    Trapezoid { a: f64, b: f64, c: f64, d: f64 },
    #[error("delta {value} outside [0, {max}]")]
    DeltaOutOfRange { value: f64, max: f64 },
    #[error("range [{lo}, {hi}] is empty")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("Monte Carlo needs at least {MIN_MC_DRAWS} draws, got {0}")]
    TooFewDraws(usize),
    #[error("{violated} of {draws} draws violate m̂·δ ≤ 1 (budget 5%)")]
    TooManyViolations { violated: usize, draws: usize },
    #[error("draw table is empty")]
    EmptyTable,
    #[error("no draws satisfy the constraint {0}")]
    EmptySubset(Constraint),
    #[error("static grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Trapezoidal density on `[a, d]`: rising on `[a, b]`, flat on `[b, c]`,
/// falling on `[c, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidDist<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

/// `(p³ − q³)/(p − q)`, continuous at `p = q`.
fn cube_ratio<T: Scalar>(p: T, q: T) -> T {
    p * p + p * q + q * q
}

impl<T: Scalar> TrapezoidDist<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Result<Self, SensitivityError> {
        let t = Self { a, b, c, d };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SensitivityError> {
        let Self { a, b, c, d } = *self;
        let finite = [a, b, c, d].iter().all(|v| v.is_finite());
        if !finite || !(a <= b && b <= c && c <= d) {
            return Err(SensitivityError::Trapezoid { a: a.as_f64(), b: b.as_f64(), c: c.as_f64(), d: d.as_f64() });
        }
        Ok(())
    }

    /// All four corners equal: a point mass at `a`.
    pub fn is_point_mass(&self) -> bool {
        self.a == self.d
    }

    /// Plateau height `2 / (d + c − a − b)`; infinite for a point mass.
    pub fn height(&self) -> T {
        T::lit(2.0) / (self.d + self.c - self.a - self.b)
    }

    pub fn pdf(&self, x: T) -> T {
        let Self { a, b, c, d } = *self;
        let h = self.height();
        if self.is_point_mass() {
            return if x == a { T::infinity() } else { T::zero() };
        }
        if x < a || x > d {
            T::zero()
        } else if x < b {
            h * (x - a) / (b - a)
        } else if x <= c {
            h
        } else {
            h * (d - x) / (d - c)
        }
    }

    pub fn cdf(&self, x: T) -> T {
        let Self { a, b, c, d } = *self;
        let h = self.height();
        let half = T::lit(0.5);
        if self.is_point_mass() {
            return if x < a { T::zero() } else { T::one() };
        }
        if x <= a {
            T::zero()
        } else if x < b {
            half * h * (x - a) * (x - a) / (b - a)
        } else if x <= c {
            half * h * (b - a) + h * (x - b)
        } else if x < d {
            T::one() - half * h * (d - x) * (d - x) / (d - c)
        } else {
            T::one()
        }
    }

    pub fn mean(&self) -> T {
        let Self { a, b, c, d } = *self;
        if self.is_point_mass() {
            return a;
        }
        (cube_ratio(d, c) - cube_ratio(b, a)) / (T::lit(3.0) * (d + c - a - b))
    }

    /// Inverse CDF: square-root inversion on the ramps, linear on the plateau.
    pub fn inverse_cdf(&self, u: T) -> T {
        let Self { a, b, c, d } = *self;
        if self.is_point_mass() {
            return a;
        }
        let u = u.max(T::zero()).min(T::one());
        let h = self.height();
        let two = T::lit(2.0);
        let fb = h * (b - a) / two;
        let fc = fb + h * (c - b);
        let x = if u <= fb && b > a {
            a + (two * u * (b - a) / h).sqrt()
        } else if u <= fc {
            b + (u - fb) / h
        } else {
            d - (two * (T::one() - u) * (d - c) / h).sqrt()
        };
        x.max(a).min(d)
    }
}

/// Maps a uniform deviate to a trapezoid draw.
pub fn sample_trapezoid<T: Scalar>(dist: &TrapezoidDist<T>, u: T) -> T {
    dist.inverse_cdf(u)
}

/// Per-arm `δ` specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaSpec<T> {
    Constant { value: T },
    Range { lo: T, hi: T },
    Trapezoid(TrapezoidDist<T>),
}

impl<T: Scalar> DeltaSpec<T> {
    /// Checks the support lies in `[0, delta_max]`.
    pub fn validate(&self, delta_max: T) -> Result<(), SensitivityError> {
        let check = |v: T| {
            if v < T::zero() || v > delta_max || v.is_nan() {
                Err(SensitivityError::DeltaOutOfRange { value: v.as_f64(), max: delta_max.as_f64() })
            } else {
                Ok(())
            }
        };
        match *self {
            Self::Constant { value } => check(value),
            Self::Range { lo, hi } => {
                check(lo)?;
                check(hi)?;
                if lo > hi {
                    return Err(SensitivityError::EmptyRange { lo: lo.as_f64(), hi: hi.as_f64() });
                }
                Ok(())
            }
            Self::Trapezoid(t) => {
                t.validate()?;
                check(t.a)?;
                check(t.d)
            }
        }
    }
}

/// Restriction on a joint `(δ_arm, δ_referent)` draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `δ_arm ≤ δ_referent`.
    ArmAtMostReferent,
    /// `δ_arm ≥ δ_referent`.
    ArmAtLeastReferent,
}

impl Constraint {
    pub fn holds<T: PartialOrd>(&self, delta_arm: T, delta_ref: T) -> bool {
        match self {
            Self::ArmAtMostReferent => delta_arm <= delta_ref,
            Self::ArmAtLeastReferent => delta_arm >= delta_ref,
        }
    }
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ArmAtMostReferent => "delta_arm <= delta_referent",
            Self::ArmAtLeastReferent => "delta_arm >= delta_referent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow<T> {
    pub delta: T,
    pub rows: ContrastRows<T>,
}

/// Estimates at each constant `δ`, shared by both arms. With `include_one`,
/// `δ = 1` (equal adherence) is prepended unless already present.
pub fn run_static_grid<T: Scalar>(
    analysis: &Analysis<'_, T>,
    arm: usize,
    referent: usize,
    constants: &[T],
    include_one: bool,
    delta_max: T,
) -> Result<Vec<GridRow<T>>, SensitivityError> {
    let mut grid = Vec::with_capacity(constants.len() + 1);
    if include_one && !constants.contains(&T::one()) {
        grid.push(T::one());
    }
    grid.extend_from_slice(constants);
    if grid.is_empty() {
        return Err(SensitivityError::EmptyGrid);
    }
    grid.iter()
        .map(|&delta| {
            DeltaSpec::Constant { value: delta }.validate(delta_max)?;
            Ok(GridRow { delta, rows: analysis.contrast(arm, delta, referent, delta)? })
        })
        .collect()
}

/// Extremes of one quantity over a `δ` range or rectangle, with the `δ`
/// values attaining them and the outer Wald limits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bound<T> {
    pub lower: T,
    pub upper: T,
    /// `(δ_arm, δ_referent)` at the lower and upper bound; the unused entry
    /// repeats the other for per-arm bounds.
    pub at_lower: (T, T),
    pub at_upper: (T, T),
    /// Smallest lower and largest upper Wald limit. The standard error is a
    /// convex function of `δ`, so these are also attained at the endpoints.
    pub ci_lower: T,
    pub ci_upper: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsResult<T> {
    pub arm: Bound<T>,
    pub referent: Bound<T>,
    pub contrast: Bound<T>,
}

fn extremes<T: Scalar>(cands: &[((T, T), T, T, T)]) -> Bound<T> {
    // (deltas, point, ci lower, ci upper)
    let mut lo = cands[0];
    let mut hi = cands[0];
    let mut ci_lower = cands[0].2;
    let mut ci_upper = cands[0].3;
    for &c in &cands[1..] {
        if c.1 < lo.1 {
            lo = c;
        }
        if c.1 > hi.1 {
            hi = c;
        }
        ci_lower = ci_lower.min(c.2);
        ci_upper = ci_upper.max(c.3);
    }
    Bound { lower: lo.1, upper: hi.1, at_lower: lo.0, at_upper: hi.0, ci_lower, ci_upper }
}

/// Bounds over `δ_arm ∈ range_arm`, `δ_referent ∈ range_ref`. Estimates are
/// affine in each constant `δ`, so per-arm bounds sit at the range endpoints
/// and contrast bounds at the four corners.
pub fn run_bounds<T: Scalar>(
    analysis: &Analysis<'_, T>,
    arm: usize,
    range_arm: (T, T),
    referent: usize,
    range_ref: (T, T),
    delta_max: T,
) -> Result<BoundsResult<T>, SensitivityError> {
    DeltaSpec::Range { lo: range_arm.0, hi: range_arm.1 }.validate(delta_max)?;
    DeltaSpec::Range { lo: range_ref.0, hi: range_ref.1 }.validate(delta_max)?;
    let mut arm_c = Vec::new();
    let mut ref_c = Vec::new();
    let mut rd_c = Vec::new();
    for d1 in [range_arm.0, range_arm.1] {
        for d0 in [range_ref.0, range_ref.1] {
            let r = analysis.contrast(arm, d1, referent, d0)?;
            let pick = |row: &crate::pipeline::Row<T>| (row.estimate.point, row.ci.lower, row.ci.upper);
            let (p, l, u) = pick(&r.arm);
            arm_c.push(((d1, d1), p, l, u));
            let (p, l, u) = pick(&r.referent);
            ref_c.push(((d0, d0), p, l, u));
            let (p, l, u) = pick(&r.contrast);
            rd_c.push(((d1, d0), p, l, u));
        }
    }
    Ok(BoundsResult { arm: extremes(&arm_c), referent: extremes(&ref_c), contrast: extremes(&rd_c) })
}

/// Independent draws of `(δ_arm, δ_referent)`, each arm from its own
/// substream of `seed`.
pub fn draw_deltas<T: Scalar>(
    dist_arm: &TrapezoidDist<T>,
    dist_ref: &TrapezoidDist<T>,
    draws: usize,
    seed: u64,
) -> Vec<(T, T)> {
    let mut r1 = substream(seed, STREAM_ARM);
    let mut r0 = substream(seed, STREAM_REFERENT);
    (0..draws)
        .map(|_| {
            let u1 = T::lit(r1.random::<f64>());
            let u0 = T::lit(r0.random::<f64>());
            (dist_arm.inverse_cdf(u1), dist_ref.inverse_cdf(u0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McDraw<T> {
    pub index: usize,
    pub delta_arm: T,
    pub delta_ref: T,
    pub psi_arm: T,
    pub psi_ref: T,
    pub rd: T,
    pub se_arm: T,
    pub se_ref: T,
    pub se_rd: T,
    /// Mean predicted target adherence `mean(m̂)·δ`, per arm.
    pub adherence_arm: T,
    pub adherence_ref: T,
    /// The draw violated `m̂·δ ≤ 1`; estimates are `NaN`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McTable<T> {
    pub seed: u64,
    pub draws: Vec<McDraw<T>>,
}

impl<T: Scalar> McTable<T> {
    pub fn valid(&self) -> impl Iterator<Item = &McDraw<T>> {
        self.draws.iter().filter(|d| !d.flagged)
    }

    pub fn flagged(&self) -> usize {
        self.draws.iter().filter(|d| d.flagged).count()
    }
}

/// Monte Carlo over independent trapezoid draws. Nuisances are those of
/// `analysis`, fit once; rows come back in draw order.
pub fn run_mc<T: Scalar>(
    analysis: &Analysis<'_, T>,
    arm: usize,
    dist_arm: &TrapezoidDist<T>,
    referent: usize,
    dist_ref: &TrapezoidDist<T>,
    draws: usize,
    seed: u64,
) -> Result<McTable<T>, SensitivityError> {
    if draws < MIN_MC_DRAWS {
        return Err(SensitivityError::TooFewDraws(draws));
    }
    dist_arm.validate()?;
    dist_ref.validate()?;
    let deltas = draw_deltas(dist_arm, dist_ref, draws, seed);
    let ds = analysis.dataset();
    let nu = analysis.nuisances();
    let m_arm = mean_target_adherence(ds, nu, arm);
    let m_ref = mean_target_adherence(ds, nu, referent);

    let rows: Vec<Result<McDraw<T>, PipelineError>> = deltas
        .par_iter()
        .enumerate()
        .map(|(index, &(d1, d0))| {
            let base = McDraw {
                index,
                delta_arm: d1,
                delta_ref: d0,
                psi_arm: T::nan(),
                psi_ref: T::nan(),
                rd: T::nan(),
                se_arm: T::nan(),
                se_ref: T::nan(),
                se_rd: T::nan(),
                adherence_arm: m_arm * d1,
                adherence_ref: m_ref * d0,
                flagged: true,
            };
            match analysis.contrast(arm, d1, referent, d0) {
                Ok(r) => Ok(McDraw {
                    psi_arm: r.arm.estimate.point,
                    psi_ref: r.referent.estimate.point,
                    rd: r.contrast.estimate.point,
                    se_arm: r.arm.variance.se,
                    se_ref: r.referent.variance.se,
                    se_rd: r.contrast.variance.se,
                    flagged: false,
                    ..base
                }),
                Err(PipelineError::Estimator(
                    EstimatorError::AdherenceAboveOne { .. } | EstimatorError::NegativeDelta { .. },
                )) => Ok(base),
                Err(e) => Err(e),
            }
        })
        .collect();
    let draws_out: Vec<McDraw<T>> = rows.into_iter().collect::<Result<_, _>>()?;
    let table = McTable { seed, draws: draws_out };
    let violated = table.flagged();
    if violated as f64 > MC_VIOLATION_BUDGET * draws as f64 {
        return Err(SensitivityError::TooManyViolations { violated, draws });
    }
    if violated > 0 {
        log::warn!("{violated} of {draws} draws violate m̂·δ ≤ 1 and are excluded from summaries");
    }
    Ok(table)
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// sorted data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = T::from_count(n - 1) * p;
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - T::from_count(lo)) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles<T> {
    pub median: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Percentiles<T> {
    /// Median and 2.5th / 97.5th percentiles.
    pub fn of(values: &[T]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Self {
            median: quantile_sorted(&v, T::lit(0.5)),
            lower: quantile_sorted(&v, T::lit(0.025)),
            upper: quantile_sorted(&v, T::lit(0.975)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryBlock<T> {
    /// `None` for all draws.
    pub constraint: Option<Constraint>,
    pub random_error: bool,
    pub size: usize,
    pub psi_arm: Percentiles<T>,
    pub psi_ref: Percentiles<T>,
    pub rd: Percentiles<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary<T> {
    pub draws: usize,
    pub flagged: usize,
    /// Draws satisfying the constraint, when one is set.
    pub subset_size: Option<usize>,
    pub blocks: Vec<SummaryBlock<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryOptions {
    /// Also summarise estimates minus an independent `N(0, se²)` draw.
    pub se_augment: bool,
    pub constraint: Option<Constraint>,
}

/// Medians and simulation intervals over the valid draws, for all draws and
/// (optionally) the constrained subset, without and (optionally) with
/// random-error augmentation. Augmentation deviates come from their own
/// substream of the table's seed, one per quantity per draw in draw order.
pub fn summarize_mc<T: Scalar>(table: &McTable<T>, opts: &SummaryOptions) -> Result<McSummary<T>, SensitivityError> {
    let valid: Vec<&McDraw<T>> = table.valid().collect();
    if valid.is_empty() {
        return Err(SensitivityError::EmptyTable);
    }
    let mut rng = substream(table.seed, STREAM_AUGMENT);
    let noisy: Vec<[T; 3]> = valid
        .iter()
        .map(|d| {
            let mut z = || T::lit(rng.sample::<f64, _>(StandardNormal));
            [d.psi_arm - z() * d.se_arm, d.psi_ref - z() * d.se_ref, d.rd - z() * d.se_rd]
        })
        .collect();
    let plain: Vec<[T; 3]> = valid.iter().map(|d| [d.psi_arm, d.psi_ref, d.rd]).collect();

    let block = |constraint: Option<Constraint>, random_error: bool| -> Result<SummaryBlock<T>, SensitivityError> {
        let src = if random_error { &noisy } else { &plain };
        let rows: Vec<[T; 3]> = valid
            .iter()
            .zip(src)
            .filter(|(d, _)| constraint.is_none_or(|c| c.holds(d.delta_arm, d.delta_ref)))
            .map(|(_, v)| *v)
            .collect();
        if rows.is_empty() {
            return Err(SensitivityError::EmptySubset(constraint.expect("non-empty table")));
        }
        let col = |j: usize| Percentiles::of(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
        Ok(SummaryBlock { constraint, random_error, size: rows.len(), psi_arm: col(0), psi_ref: col(1), rd: col(2) })
    };

    let mut blocks = Vec::new();
    let subsets: Vec<Option<Constraint>> = std::iter::once(None).chain(opts.constraint.map(Some)).collect();
    for &c in &subsets {
        blocks.push(block(c, false)?);
        if opts.se_augment {
            blocks.push(block(c, true)?);
        }
    }
    let subset_size = opts.constraint.map(|c| valid.iter().filter(|d| c.holds(d.delta_arm, d.delta_ref)).count());
    Ok(McSummary { draws: table.draws.len(), flagged: table.flagged(), subset_size, blocks })
}

/// Distribution of predicted target adherence `m̂_a(w)·δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdherenceSummary<T> {
    pub delta: T,
    pub mean: T,
    pub median: T,
    pub q1: T,
    pub q3: T,
    pub min: T,
    pub max: T,
}

fn mean_target_adherence<T: Scalar>(ds: &StudyDataset, nu: &NuisanceSet<T>, arm: usize) -> T {
    let m = &nu.predictions.m[arm];
    let vals: Vec<T> = ds.records().iter().enumerate().filter(|(_, r)| !r.is_trial()).map(|(i, _)| m[i]).collect();
    crate::scalar::mean(&vals)
}

/// Summary of `m̂_a(w)·δ` over target records. Computed as `δ` times the
/// summary of `m̂_a`, so every entry is exactly linear in `δ`.
pub fn predicted_adherence_under_delta<T: Scalar>(
    ds: &StudyDataset,
    nu: &NuisanceSet<T>,
    arm: usize,
    delta: T,
) -> Result<AdherenceSummary<T>, SensitivityError> {
    if arm >= ds.arms().len() {
        return Err(PipelineError::from(EstimatorError::UnknownArm(arm)).into());
    }
    if delta < T::zero() || delta.is_nan() {
        return Err(PipelineError::from(EstimatorError::NegativeDelta { value: delta.as_f64() }).into());
    }
    let m = &nu.predictions.m[arm];
    let mut vals: Vec<T> =
        ds.records().iter().enumerate().filter(|(_, r)| !r.is_trial()).map(|(i, _)| m[i]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite predictions"));
    let q = |p: f64| quantile_sorted(&vals, T::lit(p)) * delta;
    Ok(AdherenceSummary {
        delta,
        mean: crate::scalar::mean(&vals) * delta,
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
        min: vals[0] * delta,
        max: vals[vals.len() - 1] * delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn application_pair() -> (TrapezoidDist<f64>, TrapezoidDist<f64>) {
        (TrapezoidDist::new(0.5, 0.6, 0.75, 1.0).unwrap(), TrapezoidDist::new(0.5, 0.75, 0.9, 1.0).unwrap())
    }

    #[test]
    fn trapezoid_closed_forms() {
        let (t1, _) = application_pair();
        assert!((t1.mean() - 0.719_230_769_230_769).abs() < 1e-12);
        assert!((t1.cdf(1.0) - 1.0).abs() < 1e-15);
        assert!((t1.cdf(0.6) - 0.5 * t1.height() * 0.1).abs() < 1e-15);
        assert_eq!(t1.inverse_cdf(0.0), 0.5);
        assert_eq!(t1.inverse_cdf(1.0), 1.0);
        for &u in &[0.01, 0.1, 0.3, 0.5, 0.77, 0.95, 0.999] {
            assert!((t1.cdf(t1.inverse_cdf(u)) - u).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn degenerate_trapezoid_is_uniform() {
        let t = TrapezoidDist::<f64>::new(0.2, 0.2, 0.8, 0.8).unwrap();
        assert!((t.inverse_cdf(0.5) - 0.5).abs() < 1e-15);
        assert!((t.mean() - 0.5).abs() < 1e-15);
        assert!((t.cdf(0.35) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn triangular_limits() {
        let t = TrapezoidDist::<f64>::new(0.0, 0.5, 0.5, 1.0).unwrap();
        assert!((t.mean() - 0.5).abs() < 1e-15);
        assert!((t.inverse_cdf(0.5) - 0.5).abs() < 1e-12);
        assert!((t.inverse_cdf(0.125) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_trapezoids() {
        assert!(TrapezoidDist::new(0.5, 0.4, 0.75, 1.0).is_err());
        assert!(TrapezoidDist::new(0.5, 0.5, 0.5, 0.5).unwrap().is_point_mass());
        assert!(TrapezoidDist::new(f64::NAN, 0.5, 0.6, 1.0).is_err());
    }

    #[test]
    fn draws_are_reproducible_and_streams_independent() {
        let (t1, t0) = application_pair();
        let a = draw_deltas(&t1, &t0, 500, 9);
        assert_eq!(a, draw_deltas(&t1, &t0, 500, 9));
        let u = TrapezoidDist::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = draw_deltas(&u, &t0, 500, 9);
        assert!(a.iter().zip(&b).all(|(x, y)| x.1 == y.1));
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn delta_spec_bounds() {
        assert!(DeltaSpec::Constant { value: 1.2 }.validate(1.0).is_err());
        assert!(DeltaSpec::Constant { value: 1.2 }.validate(1.5).is_ok());
        assert!(DeltaSpec::Range { lo: 0.8, hi: 0.5 }.validate(1.0).is_err());
        assert!(DeltaSpec::Trapezoid(application_pair().0).validate(1.0).is_ok());
    }
}
