#![allow(dead_code)]

use transport_sa::{Covariate, CovariateSchema, StudyDataset, StudyRecord};

/// Toy process realised with exact cell frequencies: 1000 trial and 1000
/// target records, so saturated fits reproduce the true nuisance functions.
///
/// Per (w, arm): trial count, adherent count, adherent Y=1, non-adherent Y=1.
pub fn exact_toy() -> StudyDataset {
    // (w, arm, n, n_adherent, y1_adherent, y1_nonadherent)
    let cells = [
        (0.0, 1, 300, 240, 72, 42),
        (1.0, 1, 200, 120, 60, 72),
        (0.0, 0, 300, 285, 57, 9),
        (1.0, 0, 200, 180, 72, 16),
    ];
    let mut records = Vec::new();
    for (w, arm, n, adh, y1a, y1n) in cells {
        for k in 0..n {
            let z = k < adh;
            let y = if z { k < y1a } else { k - adh < y1n };
            records.push(StudyRecord::trial(vec![w], arm, z, if y { 1.0 } else { 0.0 }));
        }
    }
    for k in 0..1000 {
        records.push(StudyRecord::target(vec![if k < 500 { 0.0 } else { 1.0 }]));
    }
    StudyDataset::new(binary_schema(), records, vec!["0".into(), "1".into()]).unwrap()
}

pub fn binary_schema() -> CovariateSchema {
    CovariateSchema::new(vec![Covariate::binary("w")]).unwrap()
}

/// Mixed-covariate dataset drawn from a smooth logistic process.
pub fn mixed(n1: usize, n0: usize, seed: u64) -> StudyDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let schema = CovariateSchema::new(vec![
        Covariate::continuous("age"),
        Covariate::binary("female"),
        Covariate::categorical("site", &["a", "b", "c"]),
    ])
    .unwrap();
    let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut records = Vec::new();
    for i in 0..n1 + n0 {
        let trial = i < n1;
        let shift = if trial { 0.0 } else { 0.4 };
        let age: f64 = rng.random::<f64>() * 2.0 - 1.0 + shift;
        let female = f64::from(u8::from(rng.random::<f64>() < 0.5));
        let site = f64::from(rng.random_range(0..3u8));
        let w = vec![age, female, site];
        if trial {
            let arm = usize::from(rng.random::<f64>() < 0.5);
            let z = rng.random::<f64>() < expit(0.3 + 0.5 * age - 0.3 * arm as f64 + 0.1 * site);
            let y = rng.random::<f64>() < expit(-0.2 + 0.6 * age + 0.4 * female + if z { -0.8 } else { 0.3 });
            records.push(StudyRecord::trial(w, arm, z, if y { 1.0 } else { 0.0 }));
        } else {
            records.push(StudyRecord::target(w));
        }
    }
    StudyDataset::new(schema, records, vec!["0".into(), "1".into()]).unwrap()
}

/// Random toy-family dataset that fits without separation. Small cells at this
/// size occasionally have identical outcomes, so those draws are replaced.
pub fn random_fitted(n1: usize, n0: usize, seed: u64) -> (StudyDataset, transport_sa::NuisanceSet) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..100u64 {
        let ds = transport_sa::simulate::random_toy(&mut rng, n1, n0, seed.wrapping_add(attempt << 32)).generate().unwrap();
        if let Ok(nu) = transport_sa::fit_nuisance_set(&ds, &transport_sa::NuisanceOptions::default()) {
            return (ds, nu);
        }
    }
    panic!("no fittable dataset for seed {seed}");
}
