mod common;

use transport_sa::sensitivity::{quantile_sorted, Percentiles, SensitivityError};
use transport_sa::*;

fn fits(ds: &StudyDataset) -> NuisanceSet {
    fit_nuisance_set(ds, &NuisanceOptions::default()).unwrap()
}

fn application_pair() -> (TrapezoidDist, TrapezoidDist) {
    (TrapezoidDist::new(0.5, 0.6, 0.75, 1.0).unwrap(), TrapezoidDist::new(0.5, 0.75, 0.9, 1.0).unwrap())
}

#[test]
fn trapezoid_draws_pass_ks() {
    let (t1, t0) = application_pair();
    let n = 100_000;
    let draws = draw_deltas(&t1, &t0, n, 2024);
    for (dist, col) in [(t1, 0), (t0, 1)] {
        let mut v: Vec<f64> = draws.iter().map(|p| if col == 0 { p.0 } else { p.1 }).collect();
        v.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &x) in v.iter().enumerate() {
            let f = dist.cdf(x);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // 1% critical value.
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS {ks}");
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - dist.mean()).abs() < 3.0 * (var / n as f64).sqrt());
    }
}

#[test]
fn trapezoid_mean_and_order_probability() {
    let (t1, t0) = application_pair();
    assert!((t1.mean() - 0.7192307692307692).abs() < 1e-12);
    // Pr(δ1 > δ0) = ∫ F0(x) f1(x) dx by the midpoint rule.
    let k = 200_000;
    let h = 0.5 / k as f64;
    let p: f64 = (0..k).map(|i| 0.5 + (i as f64 + 0.5) * h).map(|x| t0.cdf(x) * t1.pdf(x) * h).sum();
    assert!((p - 0.3420118).abs() < 1e-6, "{p}");
}

#[test]
fn degenerate_trapezoid_samples_constant() {
    let t = TrapezoidDist::new(0.8, 0.8, 0.8, 0.8).unwrap();
    let draws = draw_deltas(&t, &t, 200, 1);
    assert!(draws.iter().all(|&(a, b)| a == 0.8 && b == 0.8));
    assert!(matches!(TrapezoidDist::new(0.9, 0.8, 0.8, 1.0), Err(SensitivityError::Trapezoid { .. })));
}

#[test]
fn delta_spec_validation() {
    assert!(DeltaSpec::Constant { value: 1.2 }.validate(1.5).is_ok());
    assert!(matches!(DeltaSpec::Constant { value: 1.2 }.validate(1.0), Err(SensitivityError::DeltaOutOfRange { .. })));
    assert!(DeltaSpec::Range { lo: 0.8, hi: 0.5 }.validate(1.0).is_err());
    assert!(DeltaSpec::Trapezoid(application_pair().0).validate(1.0).is_ok());
}

fn analysis_inputs() -> (StudyDataset, NuisanceSet, PipelineConfig) {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    (ds, nu, PipelineConfig::default())
}

#[test]
fn mc_is_reproducible_and_ordered() {
    let (ds, nu, cfg) = analysis_inputs();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let (t1, t0) = application_pair();
    let a = run_mc(&an, 1, &t1, 0, &t0, 300, 77).unwrap();
    let b = run_mc(&an, 1, &t1, 0, &t0, 300, 77).unwrap();
    assert_eq!(a, b);
    assert!(a.draws.iter().enumerate().all(|(i, d)| d.index == i));
    let pairs = draw_deltas(&t1, &t0, 300, 77);
    for (d, p) in a.draws.iter().zip(&pairs) {
        assert_eq!((d.delta_arm, d.delta_ref), *p);
        // Exact toy: ψ_1(δ) = 0.80 − 0.28δ, ψ_0(δ) = 0.70 − 0.37δ.
        assert!((d.psi_arm - (0.80 - 0.28 * d.delta_arm)).abs() < 1e-9);
        assert!((d.psi_ref - (0.70 - 0.37 * d.delta_ref)).abs() < 1e-9);
        assert!((d.rd - (d.psi_arm - d.psi_ref)).abs() < 1e-15);
    }
    assert!(matches!(run_mc(&an, 1, &t1, 0, &t0, 50, 1), Err(SensitivityError::TooFewDraws(50))));
}

#[test]
fn mc_summary_blocks() {
    let (ds, nu, cfg) = analysis_inputs();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let (t1, t0) = application_pair();
    let table = run_mc(&an, 1, &t1, 0, &t0, 2000, 5).unwrap();
    let opts = SummaryOptions { se_augment: true, constraint: Some(Constraint::ArmAtMostReferent) };
    let s = summarize_mc(&table, &opts).unwrap();
    assert_eq!(s.blocks.len(), 4);
    assert_eq!(s.draws, 2000);
    assert_eq!(s.blocks[0].size, 2000);
    let subset = table.draws.iter().filter(|d| d.delta_arm <= d.delta_ref).count();
    assert_eq!(s.subset_size, Some(subset));
    assert_eq!(s.blocks[2].size, subset);
    let mut rd: Vec<f64> = table.draws.iter().map(|d| d.rd).collect();
    rd.sort_by(f64::total_cmp);
    assert_eq!(s.blocks[0].rd.median, quantile_sorted(&rd, 0.5));
    assert_eq!(s.blocks[0].rd.lower, quantile_sorted(&rd, 0.025));
    // Augmented intervals are wider.
    assert!(s.blocks[1].rd.upper - s.blocks[1].rd.lower > s.blocks[0].rd.upper - s.blocks[0].rd.lower);
    let plain = summarize_mc(&table, &SummaryOptions { se_augment: false, constraint: None }).unwrap();
    assert_eq!(plain.blocks.len(), 1);
    assert_eq!(plain.blocks[0], s.blocks[0]);
}

#[test]
fn se_augment_with_zero_se_changes_nothing() {
    let (ds, nu, cfg) = analysis_inputs();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let (t1, t0) = application_pair();
    let mut table = run_mc(&an, 1, &t1, 0, &t0, 500, 9).unwrap();
    for d in &mut table.draws {
        d.se_arm = 0.0;
        d.se_ref = 0.0;
        d.se_rd = 0.0;
    }
    let s = summarize_mc(&table, &SummaryOptions { se_augment: true, constraint: None }).unwrap();
    assert_eq!(s.blocks[0].rd, s.blocks[1].rd);
    assert_eq!(s.blocks[0].psi_arm, s.blocks[1].psi_arm);
}

#[test]
fn empty_constraint_subset_is_an_error() {
    let (ds, nu, cfg) = analysis_inputs();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let hi = TrapezoidDist::new(0.9, 0.92, 0.95, 1.0).unwrap();
    let lo = TrapezoidDist::new(0.1, 0.2, 0.3, 0.4).unwrap();
    let table = run_mc(&an, 1, &hi, 0, &lo, 200, 2).unwrap();
    let r = summarize_mc(&table, &SummaryOptions { se_augment: false, constraint: Some(Constraint::ArmAtMostReferent) });
    assert!(matches!(r, Err(SensitivityError::EmptySubset(Constraint::ArmAtMostReferent))));
}

#[test]
fn mc_flags_adherence_violations() {
    let (ds, nu, cfg) = analysis_inputs();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    // Arm 0 has m̂ = 0.95 at w=0, so δ above 1/0.95 is infeasible there.
    let wide = TrapezoidDist::new(0.5, 0.6, 0.7, 1.1).unwrap();
    let table = run_mc(&an, 1, &wide, 0, &wide, 1000, 3).unwrap();
    let flagged = table.draws.iter().filter(|d| d.flagged).count();
    assert_eq!(flagged, table.flagged());
    assert!(flagged > 0 && (flagged as f64) < 0.05 * 1000.0, "{flagged}");
    assert!(table.draws.iter().filter(|d| d.flagged).all(|d| d.delta_ref * 0.95 > 1.0));
    let worse = TrapezoidDist::new(0.9, 1.0, 1.1, 1.2).unwrap();
    assert!(matches!(run_mc(&an, 1, &wide, 0, &worse, 200, 3), Err(SensitivityError::TooManyViolations { .. })));
}

#[test]
fn predicted_adherence_is_linear_in_delta() {
    let (ds, nu, _) = analysis_inputs();
    let at1 = predicted_adherence_under_delta(&ds, &nu, 1, 1.0).unwrap();
    assert!((at1.mean - 0.70).abs() < 1e-9);
    let at0 = predicted_adherence_under_delta(&ds, &nu, 1, 0.0).unwrap();
    assert_eq!((at0.mean, at0.min, at0.max), (0.0, 0.0, 0.0));
    let at_half = predicted_adherence_under_delta(&ds, &nu, 1, 0.5).unwrap();
    assert!((at_half.mean - 0.35).abs() < 1e-9);
    assert_eq!(at_half.max, 0.5 * at1.max);
    assert!(predicted_adherence_under_delta(&ds, &nu, 1, -0.1).is_err());
}

#[test]
fn grid_at_one_is_the_equal_adherence_estimate() {
    let ds = common::mixed(600, 400, 31);
    let nu = fits(&ds);
    let cfg = PipelineConfig::default();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let grid = run_static_grid(&an, 1, 0, &[1.0], true, 1.0).unwrap();
    assert_eq!(grid.len(), 1);
    let s1 = transport_onestep_setting1(&ds, &nu, 1).unwrap();
    let s0 = transport_onestep_setting1(&ds, &nu, 0).unwrap();
    assert!((grid[0].rows.arm.estimate.point - s1.point).abs() < 1e-12);
    assert!((grid[0].rows.contrast.estimate.point - (s1.point - s0.point)).abs() < 1e-12);
    let rd = risk_difference(&s1, &s0).unwrap();
    let var = eic_variance(&rd.influence).unwrap().variance;
    assert!((grid[0].rows.contrast.variance.variance - var).abs() < 1e-12);

    let g = run_static_grid(&an, 1, 0, &[0.5, 0.8], true, 1.0).unwrap();
    assert_eq!(g.iter().map(|r| r.delta).collect::<Vec<_>>(), vec![1.0, 0.5, 0.8]);
    assert!(matches!(run_static_grid(&an, 1, 0, &[], false, 1.0), Err(SensitivityError::EmptyGrid)));
    assert!(run_static_grid(&an, 1, 0, &[1.2], false, 1.0).is_err());
}

#[test]
fn bounds_contain_refined_grid() {
    let ds = common::mixed(600, 400, 13);
    let nu = fits(&ds);
    let cfg = PipelineConfig::default();
    let an = Analysis::new(&ds, &nu, &cfg, &[1, 0]).unwrap();
    let b = run_bounds(&an, 1, (0.6, 0.9), 0, (0.7, 1.0), 1.0).unwrap();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut ci_lo = f64::INFINITY;
    let mut ci_hi = f64::NEG_INFINITY;
    for i in 0..=30 {
        for j in 0..=30 {
            let d1 = 0.6 + 0.3 * i as f64 / 30.0;
            let d0 = 0.7 + 0.3 * j as f64 / 30.0;
            let r = an.contrast(1, d1, 0, d0).unwrap().contrast;
            lo = lo.min(r.estimate.point);
            hi = hi.max(r.estimate.point);
            ci_lo = ci_lo.min(r.ci.lower);
            ci_hi = ci_hi.max(r.ci.upper);
        }
    }
    assert!((b.contrast.lower - lo).abs() < 1e-12 && (b.contrast.upper - hi).abs() < 1e-12);
    assert!(b.contrast.ci_lower <= ci_lo + 1e-12 && b.contrast.ci_upper >= ci_hi - 1e-12);
    assert!((b.contrast.ci_lower - ci_lo).abs() < 1e-12 && (b.contrast.ci_upper - ci_hi).abs() < 1e-12);

    let point = run_bounds(&an, 1, (0.8, 0.8), 0, (0.8, 0.8), 1.0).unwrap();
    assert_eq!(point.contrast.lower, point.contrast.upper);
    let direct = an.contrast(1, 0.8, 0, 0.8).unwrap().contrast.estimate.point;
    assert!((point.contrast.lower - direct).abs() < 1e-12);
}

#[test]
fn percentiles_are_type_seven() {
    let v: Vec<f64> = (1..=10).map(f64::from).collect();
    assert!((quantile_sorted(&v, 0.025) - 1.225).abs() < 1e-12);
    assert!((quantile_sorted(&v, 0.975) - 9.775).abs() < 1e-12);
    let p = Percentiles::of(&[3.0, 1.0, 2.0]);
    assert_eq!((p.median, p.lower, p.upper), (2.0, 1.05, 2.95));
}
