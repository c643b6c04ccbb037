//! Writes the synthetic analogue dataset bundled with the CLI: a two-arm
//! opioid-use-disorder style trial (extended-release naltrexone vs
//! buprenorphine-naloxone, adherence = initiation, outcome = relapse) and a
//! larger external target sample with a shifted covariate mix.
//!
//! Usage: `cargo run -p transport-sa --example analogue_data -- <out.csv> [seed]`

use transport_sa::simulate::{DgpCell, DgpSpec};
use transport_sa::{Covariate, CovariateSchema};

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn analogue(n1: usize, n0: usize, seed: u64) -> DgpSpec<f64> {
    let schema = CovariateSchema::new(vec![
        Covariate::categorical("age_group", &["18-29", "30-39", "40+"]),
        Covariate::binary("female"),
        Covariate::binary("injects"),
    ])
    .expect("valid schema");
    let age_trial = [0.35, 0.35, 0.30];
    let age_target = [0.45, 0.30, 0.25];
    let (fem_trial, fem_target) = (0.30, 0.35);
    let (inj_trial, inj_target) = (0.60, 0.45);
    let mut cells = Vec::new();
    for age in 0..3 {
        for female in 0..2 {
            for inj in 0..2 {
                let bern = |p: f64, on: usize| if on == 1 { p } else { 1.0 - p };
                let p_trial = age_trial[age] * bern(fem_trial, female) * bern(inj_trial, inj);
                let p_target = age_target[age] * bern(fem_target, female) * bern(inj_target, inj);
                let (a, f, i) = (age as f64, female as f64, inj as f64);
                // Arm 0 is buprenorphine-naloxone, arm 1 naltrexone.
                let adherence = [
                    expit(logit(0.88) - 0.5 * i + 0.15 * a),
                    expit(logit(0.72) - 0.45 * i + 0.2 * a - 0.1 * f),
                ];
                let outcome_adherent = [
                    expit(logit(0.50) + 0.5 * i - 0.2 * a + 0.1 * f),
                    expit(logit(0.45) + 0.6 * i - 0.25 * a),
                ];
                let outcome_nonadherent = [
                    expit(logit(0.80) + 0.4 * i - 0.1 * a),
                    expit(logit(0.88) + 0.3 * i - 0.1 * a),
                ];
                cells.push(DgpCell {
                    w: vec![a, f, i],
                    p_trial,
                    p_target,
                    assign: vec![0.5, 0.5],
                    adherence: adherence.to_vec(),
                    outcome_adherent: outcome_adherent.to_vec(),
                    outcome_nonadherent: outcome_nonadherent.to_vec(),
                });
            }
        }
    }
    DgpSpec { schema, arms: vec!["bup".into(), "ntx".into()], cells, n1, n0, seed }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "analogue.csv".into());
    let seed = args.next().map_or(20_240_601, |s| s.parse().expect("seed must be an integer"));
    let spec = analogue(1200, 6000, seed);
    let ds = spec.generate().expect("valid process");
    ds.write(std::path::Path::new(&out), b',').expect("writable output");
    for arm in 0..2 {
        println!(
            "{}: psi(1) = {:.4}, psi(0.75) = {:.4}",
            spec.arms[arm],
            spec.oracle_psi(arm, 1.0).unwrap(),
            spec.oracle_psi(arm, 0.75).unwrap()
        );
    }
    println!("wrote {} trial and {} target records to {out}", ds.n1(), ds.n0());
}
