use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use transport_sa::nuisance::{Fits, FittedModels, TreatmentModel};
use transport_sa::pipeline::{reference_rows, Row};
use transport_sa::sensitivity::{Bound, McTable};
use transport_sa::simulate::{DgpSpec, ExperimentOptions};
use transport_sa::{
    fit_nuisances, load_dataset, predicted_adherence_under_delta, run_bounds, run_dr_experiment, run_mc,
    run_static_grid, summarize_mc, Analysis, CovariateSchema, DeltaSpec, EstimatorKind, LogisticModel, MisspecConfig,
    NuisanceSet, PipelineConfig, StudyDataset, SummaryOptions,
};

use crate::config::{DeltaBlock, RunConfig};
use crate::error::CliError;
use crate::report::{sig10, Report};

struct Prepared {
    ds: StudyDataset,
    pipe: PipelineConfig,
    arm: usize,
    referent: usize,
}

impl Prepared {
    fn label(&self, arm: usize) -> &str {
        &self.ds.arms()[arm]
    }

    fn contrast_label(&self) -> String {
        format!("{} - {}", self.label(self.arm), self.label(self.referent))
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let data = cfg.data.as_ref().ok_or_else(|| CliError::Config("a [data] block is required".into()))?;
    let schema = cfg.schema()?;
    let pipe = cfg.pipeline()?;
    let (arm_label, ref_label) = cfg.arm_labels()?;
    let ds = load_dataset(&data.path, &schema, data.delimiter.byte())?;
    for w in ds.warnings() {
        log::warn!("{w}");
    }
    let find = |label: &str, role: &str| {
        ds.arm_index(label).ok_or_else(|| {
            CliError::Config(format!("{role} arm `{label}` does not occur in the data (arms: {})", ds.arms().join(", ")))
        })
    };
    let arm = find(arm_label, "treatment")?;
    let referent = find(ref_label, "referent")?;
    Ok(Prepared { ds, pipe, arm, referent })
}

fn estimand_name(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Gcomp => "psi_g",
        EstimatorKind::Onestep => "psi_os",
    }
}

fn row_record(row: &Row<f64>, estimand: &str, arm: &str, delta_arm: Option<f64>, delta_ref: Option<f64>) -> Value {
    json!({
        "estimand": estimand,
        "arm": arm,
        "delta_arm": delta_arm,
        "delta_referent": delta_ref,
        "estimate": row.estimate.point,
        "se": row.variance.se,
        "variance_method": row.variance.method,
        "ci_level": row.ci.level,
        "ci_lower": row.ci.lower,
        "ci_upper": row.ci.upper,
        "out_of_range": row.estimate.out_of_range,
        "n1": row.estimate.n1,
        "n0": row.estimate.n0,
    })
}

fn push_model(report: &mut Report, name: String, columns: Vec<String>, m: &LogisticModel, fold: Option<usize>) {
    report.push(
        "nuisance",
        json!({
            "model": name,
            "fold": fold,
            "columns": columns,
            "coefficients": m.coefficients,
            "converged": m.converged,
            "iterations": m.iterations,
            "log_likelihood": m.log_likelihood,
        }),
    );
}

fn push_models(report: &mut Report, ds: &StudyDataset, nu: &NuisanceSet, models: &FittedModels<f64>, fold: Option<usize>) {
    let schema: &CovariateSchema = ds.schema();
    let f = &nu.options.formulas;
    let (qc, mc, gc, hc) = (
        f.outcome.column_names(schema),
        f.adherence.column_names(schema),
        f.treatment.column_names(schema),
        f.selection.column_names(schema),
    );
    for (a, am) in models.arms.iter().enumerate() {
        let label = &ds.arms()[a];
        push_model(report, format!("Q[{label},z=1]"), qc.clone(), &am.outcome_adherent, fold);
        push_model(report, format!("Q[{label},z=0]"), qc.clone(), &am.outcome_nonadherent, fold);
        push_model(report, format!("m[{label}]"), mc.clone(), &am.adherence, fold);
    }
    match &models.treatment {
        TreatmentModel::Single => {}
        TreatmentModel::Complement { model } => {
            push_model(report, format!("g[{}]", ds.arms()[1]), gc.clone(), model, fold);
        }
        TreatmentModel::OneVsRest { models: per_arm } => {
            for (a, m) in per_arm.iter().enumerate() {
                push_model(report, format!("g[{}]", ds.arms()[a]), gc.clone(), m, fold);
            }
        }
    }
    push_model(report, "h".into(), hc, &models.selection, fold);
}

fn push_nuisance(report: &mut Report, ds: &StudyDataset, nu: &NuisanceSet) {
    match &nu.fits {
        Fits::Full(m) => push_models(report, ds, nu, m, None),
        Fits::CrossFit { models, .. } => {
            for (k, m) in models.iter().enumerate() {
                push_models(report, ds, nu, m, Some(k));
            }
        }
    }
    report.push(
        "fit_summary",
        json!({
            "n1": nu.n1,
            "n0": nu.n0,
            "crossfit": nu.is_crossfit(),
            "truncation_lo": nu.options.truncation.lo,
            "truncation_hi": nu.options.truncation.hi,
            "truncation_events": nu.truncation_events,
        }),
    );
}

fn push_adherence(report: &mut Report, p: &Prepared, nu: &NuisanceSet, deltas: &[f64]) -> Result<(), CliError> {
    for &delta in deltas {
        for arm in [p.arm, p.referent] {
            let s = predicted_adherence_under_delta(&p.ds, nu, arm, delta)?;
            report.push(
                "adherence",
                json!({
                    "arm": p.label(arm),
                    "delta": delta,
                    "mean": s.mean,
                    "median": s.median,
                    "q1": s.q1,
                    "q3": s.q3,
                    "min": s.min,
                    "max": s.max,
                }),
            );
        }
    }
    Ok(())
}

pub fn estimate(cfg: &RunConfig, report: &mut Report) -> Result<(), CliError> {
    let values = match &cfg.delta {
        None => vec![1.0],
        Some(DeltaBlock::Constant { values }) => values.clone(),
        Some(_) => return Err(CliError::Config("`estimate` needs delta mode \"constant\"".into())),
    };
    let p = prepare(cfg)?;
    let nu = fit_nuisances(&p.ds, &p.pipe)?;
    let an = Analysis::new(&p.ds, &nu, &p.pipe, &[p.arm, p.referent])?;
    let grid = run_static_grid(&an, p.arm, p.referent, &values, true, cfg.analysis.delta_max)?;
    let deltas: Vec<f64> = grid.iter().map(|g| g.delta).collect();
    report.push("delta", json!({ "mode": "constant", "values": deltas }));

    let name = estimand_name(p.pipe.estimator);
    for g in &grid {
        let d = Some(g.delta);
        report.push("estimate", row_record(&g.rows.arm, name, p.label(p.arm), d, None));
        report.push("estimate", row_record(&g.rows.referent, name, p.label(p.referent), None, d));
        report.push("estimate", row_record(&g.rows.contrast, "rd", &p.contrast_label(), d, d));
    }
    let refs = reference_rows(&p.ds, &nu, p.arm, p.referent, p.pipe.level)?;
    for (chunk, estimand) in refs.chunks(3).zip(["theta_os", "theta_prime_os"]) {
        let labels = [p.label(p.arm).to_owned(), p.label(p.referent).to_owned(), p.contrast_label()];
        for (row, label) in chunk.iter().zip(&labels) {
            let e = if label.contains(" - ") { format!("rd_{estimand}") } else { estimand.to_owned() };
            report.push("reference", row_record(row, &e, label, None, None));
        }
    }
    push_adherence(report, &p, &nu, &deltas)?;
    push_nuisance(report, &p.ds, &nu);
    Ok(())
}

fn bound_record(b: &Bound<f64>, quantity: &str, arm: &str) -> Value {
    json!({
        "quantity": quantity,
        "arm": arm,
        "lower": b.lower,
        "upper": b.upper,
        "delta_at_lower": [b.at_lower.0, b.at_lower.1],
        "delta_at_upper": [b.at_upper.0, b.at_upper.1],
        "ci_lower": b.ci_lower,
        "ci_upper": b.ci_upper,
    })
}

pub fn bounds(cfg: &RunConfig, report: &mut Report) -> Result<(), CliError> {
    let Some(DeltaBlock::Range { arm: ra, referent: rr }) = cfg.delta else {
        return Err(CliError::Config("`bounds` needs delta mode \"range\"".into()));
    };
    let p = prepare(cfg)?;
    let nu = fit_nuisances(&p.ds, &p.pipe)?;
    let an = Analysis::new(&p.ds, &nu, &p.pipe, &[p.arm, p.referent])?;
    let b = run_bounds(&an, p.arm, (ra[0], ra[1]), p.referent, (rr[0], rr[1]), cfg.analysis.delta_max)?;
    report.push("delta", json!({ "mode": "range", "arm": ra, "referent": rr }));
    let name = estimand_name(p.pipe.estimator);
    report.push("bound", bound_record(&b.arm, name, p.label(p.arm)));
    report.push("bound", bound_record(&b.referent, name, p.label(p.referent)));
    report.push("bound", bound_record(&b.contrast, "rd", &p.contrast_label()));
    let mut ends: Vec<f64> = vec![ra[0], ra[1], rr[0], rr[1]];
    ends.sort_by(f64::total_cmp);
    ends.dedup();
    push_adherence(report, &p, &nu, &ends)?;
    push_nuisance(report, &p.ds, &nu);
    Ok(())
}

fn draws_path(cfg: &RunConfig, report_path: Option<&Path>) -> Result<PathBuf, CliError> {
    if let Some(p) = &cfg.output.draws {
        return Ok(p.clone());
    }
    report_path.map(|p| p.with_extension("draws.csv")).ok_or_else(|| {
        CliError::Config("`mc` writes a draw table: set output.draws or give an output path".into())
    })
}

fn na(v: f64) -> String {
    if v.is_finite() {
        sig10(v).to_string()
    } else {
        "NA".into()
    }
}

fn write_draws(path: &Path, table: &McTable<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    w.write_record([
        "draw",
        "delta_arm",
        "delta_referent",
        "psi_arm",
        "psi_referent",
        "rd",
        "se_arm",
        "se_referent",
        "se_rd",
        "adherence_arm",
        "adherence_referent",
        "flagged",
    ])?;
    for d in &table.draws {
        let mut row = vec![d.index.to_string()];
        row.extend(
            [d.delta_arm, d.delta_ref, d.psi_arm, d.psi_ref, d.rd, d.se_arm, d.se_ref, d.se_rd, d.adherence_arm, d.adherence_ref]
                .map(na),
        );
        row.push(u8::from(d.flagged).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn mc(cfg: &RunConfig, report: &mut Report, report_path: Option<&Path>) -> Result<(), CliError> {
    let Some(DeltaBlock::Trapezoid { arm: t1, referent: t0, draws, se_augment, constraint }) = cfg.delta else {
        return Err(CliError::Config("`mc` needs delta mode \"trapezoid\"".into()));
    };
    DeltaSpec::Trapezoid(t1).validate(cfg.analysis.delta_max)?;
    DeltaSpec::Trapezoid(t0).validate(cfg.analysis.delta_max)?;
    if draws < transport_sa::sensitivity::MIN_MC_DRAWS {
        return Err(transport_sa::SensitivityError::TooFewDraws(draws).into());
    }
    let out = draws_path(cfg, report_path)?;
    let p = prepare(cfg)?;
    let nu = fit_nuisances(&p.ds, &p.pipe)?;
    let an = Analysis::new(&p.ds, &nu, &p.pipe, &[p.arm, p.referent])?;
    let table = run_mc(&an, p.arm, &t1, p.referent, &t0, draws, cfg.seed)?;
    let summary = summarize_mc(&table, &SummaryOptions { se_augment, constraint })?;
    write_draws(&out, &table)?;

    report.push("delta", json!({ "mode": "trapezoid", "arm": t1, "referent": t0, "draws": draws }));
    let valid = summary.draws - summary.flagged;
    report.push(
        "mc_summary",
        json!({
            "arm": p.label(p.arm),
            "referent": p.label(p.referent),
            "draws": summary.draws,
            "flagged": summary.flagged,
            "constraint": constraint.map(|c| c.to_string()),
            "subset_size": summary.subset_size,
            "subset_fraction": summary.subset_size.map(|s| s as f64 / valid as f64),
            "mean_delta_arm": table.valid().map(|d| d.delta_arm).sum::<f64>() / valid as f64,
            "mean_delta_referent": table.valid().map(|d| d.delta_ref).sum::<f64>() / valid as f64,
            "draw_table": out.display().to_string(),
        }),
    );
    let labels = [p.label(p.arm).to_owned(), p.label(p.referent).to_owned(), p.contrast_label()];
    for b in &summary.blocks {
        for ((quantity, pct), label) in [("psi_arm", &b.psi_arm), ("psi_referent", &b.psi_ref), ("rd", &b.rd)].iter().zip(&labels) {
            report.push(
                "mc_block",
                json!({
                    "subset": b.constraint.map_or("all".to_owned(), |c| c.to_string()),
                    "random_error": b.random_error,
                    "size": b.size,
                    "quantity": quantity,
                    "arm": label,
                    "median": pct.median,
                    "lower": pct.lower,
                    "upper": pct.upper,
                }),
            );
        }
    }
    push_nuisance(report, &p.ds, &nu);
    Ok(())
}

pub fn simulate(cfg: &RunConfig, report: &mut Report) -> Result<(), CliError> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| CliError::Config("a [simulate] block is required".into()))?;
    let spec = match (&sim.preset, &sim.process) {
        (Some(p), None) if p == "toy" => DgpSpec::toy(sim.n1, sim.n0, cfg.seed),
        (Some(p), None) => return Err(CliError::Config(format!("unknown preset `{p}` (known: toy)"))),
        (None, Some(proc_)) => DgpSpec {
            schema: CovariateSchema::new(proc_.schema.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            arms: proc_.arms.clone(),
            cells: proc_.cells.clone(),
            n1: sim.n1,
            n0: sim.n0,
            seed: cfg.seed,
        },
        _ => return Err(CliError::Config("[simulate] needs exactly one of `preset` and `process`".into())),
    };
    spec.validate()?;
    let arm = spec.arms.iter().position(|a| *a == sim.arm).ok_or_else(|| {
        CliError::Config(format!("simulated arm `{}` is not one of {:?}", sim.arm, spec.arms))
    })?;
    let opts = ExperimentOptions {
        arm,
        deltas: sim.deltas.clone(),
        sizes: sim.sizes.clone(),
        reps: sim.reps,
        seed: cfg.seed,
        level: sim.level,
        gcomp_coverage: sim.gcomp_coverage,
    };
    if sim.configs.is_empty() {
        return Err(CliError::Config("[simulate] configs is empty".into()));
    }
    for correct in &sim.configs {
        let mis = MisspecConfig { correct: correct.iter().copied().collect::<BTreeSet<_>>(), omit: sim.omit };
        if !mis.is_valid_subset() {
            log::warn!("correct set {:?} is not one under which the one-step estimator is consistent", mis.correct);
        }
        let table = run_dr_experiment(&spec, &mis, &opts)?;
        let names: Vec<String> = mis.correct.iter().map(ToString::to_string).collect();
        for r in &table.rows {
            let mut v = serde_json::to_value(r).unwrap_or(Value::Null);
            if let Value::Object(m) = &mut v {
                m.insert("correct".into(), json!(names));
                m.insert("arm".into(), json!(sim.arm));
            }
            report.push("simulation", v);
        }
    }
    Ok(())
}
