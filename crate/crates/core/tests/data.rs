mod common;

use std::io::Write;

use proptest::prelude::*;
use transport_sa::data::{load_dataset, read_dataset, DataError};
use transport_sa::*;

fn schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        Covariate::continuous("age"),
        Covariate::binary("female"),
        Covariate::categorical("site", &["a", "b", "c"]),
    ])
    .unwrap()
}

fn record() -> impl Strategy<Value = StudyRecord> {
    let w = (-1e3f64..1e3, 0u8..2, 0u8..3).prop_map(|(a, f, s)| vec![a, f64::from(f), f64::from(s)]);
    (w, proptest::option::of((0usize..3, any::<bool>(), 0u8..2))).prop_map(|(w, t)| match t {
        Some((arm, z, y)) => StudyRecord::trial(w, arm, z, f64::from(y)),
        None => StudyRecord::target(w),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(mut recs in proptest::collection::vec(record(), 2..60), tab in any::<bool>()) {
        // Guarantee both samples and every arm label are present.
        recs.push(StudyRecord::target(vec![0.5, 1.0, 2.0]));
        for arm in 0..3 {
            recs.push(StudyRecord::trial(vec![0.0, 0.0, 0.0], arm, true, 1.0));
        }
        let arms = vec!["ctl".to_string(), "high".to_string(), "low".to_string()];
        let ds = StudyDataset::new(schema(), recs, arms).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let delim = if tab { b'\t' } else { b',' };
        ds.write(&path, delim).unwrap();
        let back = load_dataset(&path, &schema(), delim).unwrap();
        prop_assert_eq!(back.arms(), ds.arms());
        prop_assert_eq!(back.records(), ds.records());
    }
}

fn parse(text: &str) -> Result<StudyDataset, DataError> {
    read_dataset(text.as_bytes(), &common::binary_schema(), b',')
}

#[test]
fn columns_may_come_in_any_order() {
    let ds = parse("y,z,a,s,w\n1,1,t,1,1\n0,0,c,1,0\n,,,0,1\n").unwrap();
    assert_eq!(ds.arms(), ["c", "t"]);
    assert_eq!(ds.records()[0], StudyRecord::trial(vec![1.0], 1, true, 1.0));
    assert_eq!(ds.records()[2], StudyRecord::target(vec![1.0]));
    assert_eq!((ds.n1(), ds.n0()), (2, 1));
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(matches!(parse("w,s,a,z\n1,1,t,1\n"), Err(DataError::Header(_))));
    assert!(matches!(parse("w,s,a,z,y,extra\n1,1,t,1,1,9\n"), Err(DataError::Header(_))));
    assert!(matches!(parse("w,s,a,z,y\n1,1,t,,1\n,,,0,1\n"), Err(DataError::Value { .. }) | Err(DataError::MissingTrialField { .. })));
    assert!(matches!(parse("w,s,a,z,y\n1,1,t,1,1\n0,0,t,,\n"), Err(DataError::TargetCarriesTrialField { row: 2, field: "a" })));
    assert!(matches!(parse("w,s,a,z,y\n1,1,t,1,1.5\n0,0,,,\n"), Err(DataError::Value { .. })));
    assert!(matches!(parse("w,s,a,z,y\n1,2,t,1,1\n0,0,,,\n"), Err(DataError::Value { .. })));
    assert!(matches!(parse("w,s,a,z,y\n1,1,t,1,1\n"), Err(DataError::EmptySample { n1: 1, n0: 0 })));
}

#[test]
fn missing_file_is_an_io_error() {
    let r = load_dataset(std::path::Path::new("/nonexistent/data.csv"), &common::binary_schema(), b',');
    assert!(matches!(r, Err(DataError::Io { .. })));
}

#[test]
fn fractional_outcomes_are_accepted() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "w,s,a,z,y\n1,1,t,1,0.25\n0,1,t,0,1\n1,0,,,").unwrap();
    let ds = load_dataset(f.path(), &common::binary_schema(), b',').unwrap();
    assert_eq!(ds.records()[0].trial.unwrap().y, 0.25);
}

#[test]
fn permuting_rows_leaves_estimates_unchanged() {
    let ds = common::mixed(500, 300, 40);
    let mut recs = ds.records().to_vec();
    // A fixed interleaving permutation.
    let n = recs.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 37) % n).collect();
    assert_eq!(perm.iter().collect::<std::collections::BTreeSet<_>>().len(), n);
    recs = perm.iter().map(|&i| recs[i].clone()).collect();
    let ds2 = ds.with_records(recs).unwrap();
    let nu = fit_nuisance_set(&ds, &NuisanceOptions::default()).unwrap();
    let nu2 = fit_nuisance_set(&ds2, &NuisanceOptions::default()).unwrap();
    for arm in 0..2 {
        let a = onestep_psi(&ds, &nu, arm, &DeltaValue::constant(0.6)).unwrap();
        let b = onestep_psi(&ds2, &nu2, arm, &DeltaValue::constant(0.6)).unwrap();
        assert!((a.point - b.point).abs() < 1e-10);
        let (va, vb) = (eic_variance(&a.influence).unwrap(), eic_variance(&b.influence).unwrap());
        assert!((va.variance - vb.variance).abs() < 1e-12);
    }
}
