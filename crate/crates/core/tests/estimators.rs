mod common;

use proptest::prelude::*;
use transport_sa::estimators::{eic_evaluate, Estimand};
use transport_sa::simulate::DgpSpec;
use transport_sa::*;

fn fits(ds: &StudyDataset) -> NuisanceSet {
    fit_nuisance_set(ds, &NuisanceOptions::default()).unwrap()
}

fn d(v: f64) -> DeltaValue {
    DeltaValue::constant(v)
}

#[test]
fn gcomp_reproduces_oracle_on_exact_frequencies() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    let spec = DgpSpec::<f64>::toy(1, 1, 0);
    for arm in 0..2 {
        for delta in [0.0, 0.5, 0.75, 1.0] {
            let g = gcomp_psi(&ds, &nu, arm, &d(delta)).unwrap().point;
            let truth = spec.oracle_psi(arm, delta).unwrap();
            assert!((g - truth).abs() < 1e-9, "arm {arm} δ {delta}: {g} vs {truth}");
        }
    }
    assert!((gcomp_psi(&ds, &nu, 1, &d(1.0)).unwrap().point - 0.52).abs() < 1e-9);
    assert!((gcomp_psi(&ds, &nu, 1, &d(0.0)).unwrap().point - 0.80).abs() < 1e-9);
    assert!((gcomp_psi(&ds, &nu, 0, &d(0.5)).unwrap().point - 0.515).abs() < 1e-9);
}

#[test]
fn onestep_equals_gcomp_under_saturated_fits() {
    // Saturated fits solve every score equation, so the correction averages to zero.
    let ds = common::exact_toy();
    let nu = fits(&ds);
    for delta in [0.0, 0.3, 1.0] {
        let g = gcomp_psi(&ds, &nu, 1, &d(delta)).unwrap().point;
        let o = onestep_psi(&ds, &nu, 1, &d(delta)).unwrap().point;
        assert!((g - o).abs() < 1e-9);
    }
}

#[test]
fn risk_difference_matches_oracle() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    let r1 = onestep_psi(&ds, &nu, 1, &d(1.0)).unwrap();
    let r0 = onestep_psi(&ds, &nu, 0, &d(1.0)).unwrap();
    let rd = risk_difference(&r1, &r0).unwrap();
    assert!((rd.point - 0.19).abs() < 1e-9);
    assert_eq!(rd.influence.len(), ds.len());
    assert_eq!(rd.arm, "1 - 0");
    let same = risk_difference(&r1, &r1).unwrap();
    assert_eq!(same.point, 0.0);
    let r1h = onestep_psi(&ds, &nu, 1, &d(0.5)).unwrap();
    let r0h = onestep_psi(&ds, &nu, 0, &d(0.5)).unwrap();
    assert!((risk_difference(&r1h, &r0h).unwrap().point - 0.145).abs() < 1e-9);
}

#[test]
fn contrast_with_gcomp_has_no_influence() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    let g1 = gcomp_psi(&ds, &nu, 1, &d(1.0)).unwrap();
    let g0 = gcomp_psi(&ds, &nu, 0, &d(1.0)).unwrap();
    assert!(risk_difference(&g1, &g0).unwrap().influence.is_empty());
    let o0 = onestep_psi(&ds, &nu, 0, &d(1.0)).unwrap();
    assert!(matches!(risk_difference(&g1, &o0), Err(EstimatorError::IncompatibleContrast { .. })));
}

#[test]
fn trial_onestep_is_standardised_trial_mean() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    // Trial W law (0.6, 0.4); arm 1 stratum means 0.3·0.8+0.7·0.2 = 0.38 and 0.5·0.6+0.9·0.4 = 0.66.
    let oracle = 0.6 * 0.38 + 0.4 * 0.66;
    let t = trial_onestep(&ds, &nu, 1).unwrap();
    assert_eq!(t.estimand, Estimand::ThetaOs);
    assert!((t.point - oracle).abs() < 1e-9);
    assert!((oracle - DgpSpec::<f64>::toy(1, 1, 0).oracle_trial_mean(1).unwrap()).abs() < 1e-15);
}

#[test]
fn trial_onestep_ignores_target_records() {
    let ds = common::mixed(400, 300, 3);
    let nu = fits(&ds);
    let base = trial_onestep(&ds, &nu, 1).unwrap().point;
    let mut more = ds.records().to_vec();
    more.extend((0..200).map(|i| StudyRecord::target(vec![i as f64 / 100.0, 1.0, 2.0])));
    let ds2 = ds.with_records(more).unwrap();
    // Same outcome, adherence and treatment fits on the unchanged trial records.
    let nu2 = fits(&ds2);
    let after = trial_onestep(&ds2, &nu2, 1).unwrap().point;
    assert!((base - after).abs() < 1e-9, "{base} vs {after}");
}

#[test]
fn trial_onestep_without_covariates_is_arm_mean() {
    let schema = CovariateSchema::empty();
    let mut recs = Vec::new();
    let ys = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    for (i, &y) in ys.iter().enumerate() {
        recs.push(StudyRecord::trial(vec![], i % 2, (i / 2) % 2 == 0, y));
    }
    recs.push(StudyRecord::target(vec![]));
    recs.push(StudyRecord::target(vec![]));
    let ds = StudyDataset::new(schema, recs, vec!["0".into(), "1".into()]).unwrap();
    let nu = fits(&ds);
    let arm1: Vec<f64> = ys.iter().enumerate().filter(|(i, _)| i % 2 == 1).map(|(_, &y)| y).collect();
    let mean = arm1.iter().sum::<f64>() / arm1.len() as f64;
    assert!((trial_onestep(&ds, &nu, 1).unwrap().point - mean).abs() < 1e-9);
}

#[test]
fn setting1_approaches_trial_mean_when_laws_agree() {
    let mut spec = DgpSpec::<f64>::toy(60_000, 60_000, 17);
    for c in &mut spec.cells {
        c.p_target = c.p_trial;
    }
    let ds = spec.generate().unwrap();
    let nu = fits(&ds);
    let a = transport_onestep_setting1(&ds, &nu, 1).unwrap().point;
    let b = trial_onestep(&ds, &nu, 1).unwrap().point;
    assert!((a - b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn setting1_recovers_oracle() {
    let ds = DgpSpec::<f64>::toy(50_000, 50_000, 5).generate().unwrap();
    let nu = fits(&ds);
    let t = transport_onestep_setting1(&ds, &nu, 1).unwrap();
    let se = eic_variance(&t.influence).unwrap().se;
    assert!((t.point - 0.52).abs() < 4.0 * se, "{} ± {se}", t.point);
}

#[test]
fn onestep_near_oracle_at_large_n() {
    let ds = DgpSpec::<f64>::toy(100_000, 100_000, 11).generate().unwrap();
    let nu = fits(&ds);
    let p = onestep_psi(&ds, &nu, 1, &d(0.5)).unwrap().point;
    assert!((p - 0.66).abs() < 0.01, "{p}");
}

#[test]
fn eic_worked_examples() {
    // Target record: μ̂ = 0.6, ψ = 0.52, k̂ = 0.5 → 0.16. Trial record with
    // A=a, Z=1, Y=1: 2.48 (hand algebra).
    let schema = CovariateSchema::empty();
    let recs = vec![
        StudyRecord::trial(vec![], 1, true, 1.0),
        StudyRecord::trial(vec![], 0, true, 1.0),
        StudyRecord::target(vec![]),
    ];
    let ds = StudyDataset::new(schema, recs, vec!["0".into(), "1".into()]).unwrap();
    let mut nu = fits_allowing_degenerate(&ds);
    let p = &mut nu.predictions;
    for i in 0..3 {
        p.q1[1][i] = 0.3;
        p.q0[1][i] = 0.7;
        p.m[1][i] = 0.8;
        p.g[1][i] = 0.5;
        p.h[i] = 0.5;
    }
    // μ̂ = 0.3·0.8 + 0.7·0.2 = 0.38; make the target record's μ̂ 0.6 with q0 = 1.
    p.q0[1][2] = 0.6;
    p.q1[1][2] = 0.6;
    nu.k_hat = 0.5;
    let eic = eic_evaluate(&ds, &nu, 1, &d(1.0), 0.52).unwrap();
    assert!((eic[0] - 2.48).abs() < 1e-12, "{}", eic[0]);
    assert_eq!(eic[1], 0.0);
    assert!((eic[2] - 0.16).abs() < 1e-12);
}

/// A nuisance set with the right shapes for hand-set predictions.
fn fits_allowing_degenerate(ds: &StudyDataset) -> NuisanceSet {
    let big = {
        let mut recs = ds.records().to_vec();
        for i in 0..8 {
            recs.push(StudyRecord::trial(vec![], i % 2, i % 4 < 2, f64::from(u8::from(i % 3 == 0))));
        }
        ds.with_records(recs).unwrap()
    };
    let mut nu = fits(&big);
    let n = ds.len();
    let p = &mut nu.predictions;
    for v in p.q1.iter_mut().chain(p.q0.iter_mut()).chain(p.m.iter_mut()).chain(p.g.iter_mut()) {
        v.truncate(n);
    }
    p.h.truncate(n);
    nu
}

#[test]
fn delta_precondition_names_record() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    match gcomp_psi(&ds, &nu, 0, &d(1.2)) {
        Err(EstimatorError::AdherenceAboveOne { record, product }) => {
            assert!(!ds.records()[record].is_trial());
            assert!(product > 1.0);
        }
        other => panic!("expected violation, got {other:?}"),
    }
    assert!(matches!(onestep_psi(&ds, &nu, 1, &d(-0.1)), Err(EstimatorError::NegativeDelta { .. })));
}

#[test]
fn by_level_delta_matches_constant_when_levels_agree() {
    let ds = common::exact_toy();
    let nu = fits(&ds);
    let by = DeltaValue::ByLevel { covariate: 0, values: vec![0.7, 0.7] };
    let a = onestep_psi(&ds, &nu, 1, &by).unwrap().point;
    let b = onestep_psi(&ds, &nu, 1, &d(0.7)).unwrap().point;
    assert!((a - b).abs() < 1e-12);
    // δ = 0.5 at w=0 and 1 at w=1: 0.5·(0.8·0.3·0.5 + 0.7·0.6) + 0.5·(0.5·0.6 + 0.9·0.4).
    let mixed = DeltaValue::ByLevel { covariate: 0, values: vec![0.5, 1.0] };
    let oracle = 0.5 * (0.3 * 0.4 + 0.7 * 0.6) + 0.5 * (0.5 * 0.6 + 0.9 * 0.4);
    assert!((gcomp_psi(&ds, &nu, 1, &mixed).unwrap().point - oracle).abs() < 1e-9);
}


proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reduction_to_equal_adherence(seed in 0u64..10_000) {
        let (ds, nu) = common::random_fitted(250, 250, seed);
        for arm in 0..2 {
            let a = onestep_psi(&ds, &nu, arm, &d(1.0)).unwrap();
            let b = transport_onestep_setting1(&ds, &nu, arm).unwrap();
            prop_assert!((a.point - b.point).abs() < 1e-12);
            for (x, y) in a.influence.iter().zip(&b.influence) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn affine_in_constant_delta(seed in 0u64..10_000, d0 in 0.0f64..1.0, d1 in 0.0f64..1.0, lam in 0.0f64..1.0) {
        let (ds, nu) = common::random_fitted(250, 250, seed);
        let mid = lam * d0 + (1.0 - lam) * d1;
        for f in [gcomp_psi::<f64>, onestep_psi::<f64>] {
            let a = f(&ds, &nu, 1, &d(d0)).unwrap().point;
            let b = f(&ds, &nu, 1, &d(d1)).unwrap().point;
            let m = f(&ds, &nu, 1, &d(mid)).unwrap().point;
            prop_assert!((m - (lam * a + (1.0 - lam) * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn eic_mean_zero_and_construction_identity(seed in 0u64..10_000, delta in 0.0f64..1.0) {
        let ds = common::mixed(800, 400, seed);
        let nu = fits(&ds);
        let os = onestep_psi(&ds, &nu, 0, &d(delta)).unwrap();
        let mean_eic = os.influence.iter().sum::<f64>() / os.influence.len() as f64;
        prop_assert!(mean_eic.abs() < 1e-10);
        let g = gcomp_psi(&ds, &nu, 0, &d(delta)).unwrap().point;
        let at_g = eic_evaluate(&ds, &nu, 0, &d(delta), g).unwrap();
        let correction = at_g.iter().sum::<f64>() / at_g.len() as f64;
        prop_assert!((os.point - (g + correction)).abs() < 1e-12);
    }

    #[test]
    fn estimates_ignore_row_order(seed in 0u64..10_000, rot in 1usize..1200) {
        let ds = common::mixed(800, 400, seed);
        let mut recs = ds.records().to_vec();
        recs.rotate_left(rot);
        let ds2 = ds.with_records(recs).unwrap();
        let (nu, nu2) = (fits(&ds), fits(&ds2));
        let a = onestep_psi(&ds, &nu, 1, &d(0.8)).unwrap().point;
        let b = onestep_psi(&ds2, &nu2, 1, &d(0.8)).unwrap().point;
        prop_assert!((a - b).abs() < 1e-9);
    }
}
