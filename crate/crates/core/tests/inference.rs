mod common;

use transport_sa::inference::{bootstrap_replicates, normal_quantile, InferenceError, SandwichStack};
use transport_sa::*;

fn fits(ds: &StudyDataset) -> NuisanceSet {
    fit_nuisance_set(ds, &NuisanceOptions::default()).unwrap()
}

fn d(v: f64) -> DeltaValue {
    DeltaValue::constant(v)
}

#[test]
fn stacked_scores_vanish_at_fitted_parameters() {
    let ds = common::mixed(1500, 1000, 4);
    let nu = fits(&ds);
    for kind in [StackKind::Gcomp, StackKind::Onestep] {
        let stack = SandwichStack::new(&ds, &nu, 1, &d(0.6), kind).unwrap();
        let means = stack.mean_scores(stack.fitted_parameters());
        assert!(means.iter().all(|v| v.abs() <= 1e-6), "{kind:?}: {means:?}");
    }
}

#[test]
fn psi_perturbation_moves_last_score_by_target_share() {
    let ds = common::mixed(600, 400, 8);
    let nu = fits(&ds);
    let stack = SandwichStack::new(&ds, &nu, 0, &d(0.8), StackKind::Onestep).unwrap();
    let mut theta = stack.fitted_parameters().to_vec();
    let base = *stack.mean_scores(&theta).last().unwrap();
    *theta.last_mut().unwrap() += 0.1;
    let moved = *stack.mean_scores(&theta).last().unwrap();
    let expected = -0.1 * ds.n0() as f64 / ds.len() as f64;
    assert!((moved - base - expected).abs() < 1e-12);
}

#[test]
fn stack_psi_matches_estimators() {
    let ds = common::mixed(600, 400, 9);
    let nu = fits(&ds);
    let g = SandwichStack::new(&ds, &nu, 1, &d(0.7), StackKind::Gcomp).unwrap();
    let o = SandwichStack::new(&ds, &nu, 1, &d(0.7), StackKind::Onestep).unwrap();
    assert!((g.psi_hat() - gcomp_psi(&ds, &nu, 1, &d(0.7)).unwrap().point).abs() < 1e-12);
    assert!((o.psi_hat() - onestep_psi(&ds, &nu, 1, &d(0.7)).unwrap().point).abs() < 1e-12);
    assert!(o.dimension() > g.dimension());
}

#[test]
fn sandwich_agrees_with_eic_when_models_are_correct() {
    let ds = DgpSpec::toy(20_000, 20_000, 21).generate().unwrap();
    let nu = fits(&ds);
    let os = onestep_psi(&ds, &nu, 1, &d(0.75)).unwrap();
    let e = eic_variance(&os.influence).unwrap();
    let s = sandwich_variance(&ds, &nu, 1, &d(0.75), StackKind::Onestep).unwrap();
    let ratio = e.variance / s.variance;
    assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    assert_eq!(s.method, VarianceMethod::Sandwich);
    assert!(s.stack_dimension.is_some());
}

#[test]
fn stack_influence_reproduces_sandwich_variance() {
    let ds = common::mixed(800, 500, 12);
    let nu = fits(&ds);
    let stack = SandwichStack::new(&ds, &nu, 1, &d(0.5), StackKind::Gcomp).unwrap();
    let inf = stack.influence().unwrap();
    let n = inf.len() as f64;
    let from_inf = inf.iter().map(|v| v * v).sum::<f64>() / n / n;
    let cov = stack.covariance().unwrap();
    let last = stack.dimension() - 1;
    assert!((from_inf - cov[(last, last)]).abs() < 1e-12 * cov[(last, last)].abs().max(1.0));
}

#[test]
fn sandwich_refuses_crossfit_nuisances() {
    let ds = common::mixed(400, 300, 1);
    let folds = make_folds(&ds, 3, 5).unwrap();
    let nu = crossfit_predictions(&ds, &folds, &NuisanceOptions::default()).unwrap();
    assert!(matches!(
        sandwich_variance(&ds, &nu, 1, &d(1.0), StackKind::Onestep),
        Err(InferenceError::CrossFitNuisances)
    ));
}

fn os_point(ds: &StudyDataset) -> Result<f64, String> {
    let nu = fit_nuisance_set(ds, &NuisanceOptions::default()).map_err(|e| e.to_string())?;
    onestep_psi(ds, &nu, 1, &d(0.7)).map(|r| r.point).map_err(|e| e.to_string())
}

#[test]
fn bootstrap_is_deterministic_and_order_invariant() {
    let ds = common::mixed(300, 200, 6);
    let a = bootstrap_variance(&ds, os_point, 60, 99).unwrap();
    let b = bootstrap_variance(&ds, os_point, 60, 99).unwrap();
    assert_eq!(a.variance, b.variance);
    let mut recs = ds.records().to_vec();
    recs.reverse();
    recs.rotate_left(77);
    let shuffled = ds.with_records(recs).unwrap();
    let c = bootstrap_variance(&shuffled, os_point, 60, 99).unwrap();
    assert!((a.variance - c.variance).abs() <= 1e-12 * a.variance, "{} vs {}", a.variance, c.variance);
    let other = bootstrap_variance(&ds, os_point, 60, 100).unwrap();
    assert_ne!(a.variance, other.variance);
}

#[test]
fn bootstrap_keeps_sample_sizes() {
    let ds = common::mixed(300, 200, 6);
    let draws = bootstrap_replicates(&ds, |r: &StudyDataset| Ok::<_, String>(vec![r.n1() as f64, r.n0() as f64]), 50, 3).unwrap();
    assert_eq!(draws.values.len(), 50);
    assert!(draws.values.iter().all(|v| v[0] == 300.0 && v[1] == 200.0));
}

#[test]
fn bootstrap_rejects_few_replicates_and_excess_failures() {
    let ds = common::mixed(100, 100, 2);
    assert!(matches!(bootstrap_variance(&ds, os_point, 10, 0), Err(InferenceError::TooFewReplicates(10))));
    let always = |_: &StudyDataset| Err::<f64, _>("boom");
    match bootstrap_variance(&ds, always, 50, 0) {
        Err(InferenceError::BootstrapFailures { failed, total, first }) => {
            assert_eq!((failed, total), (50, 50));
            assert_eq!(first, "boom");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn eic_variance_is_sample_variance_over_n() {
    let v = eic_variance(&[1.0f64, -1.0, 2.0, -2.0]).unwrap();
    // Sample variance 10/3, divided by 4.
    assert!((v.variance - 10.0 / 12.0).abs() < 1e-15);
    assert!((v.se - (10.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert!(matches!(eic_variance(&[1.0f64]), Err(InferenceError::TooFewInfluenceValues(1))));
}

#[test]
fn wald_interval() {
    let v = VarianceEstimate::new(VarianceMethod::Eic, 0.0004);
    let ci = wald_ci(0.5, &v, 0.95).unwrap();
    assert!((ci.lower - (0.5 - 1.959963984540054 * 0.02)).abs() < 1e-12);
    assert!((ci.upper - (0.5 + 1.959963984540054 * 0.02)).abs() < 1e-12);
    assert!(wald_ci(0.5, &v, 1.0).is_err());
    assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    assert!((normal_quantile(0.5)).abs() < 1e-15);
}
