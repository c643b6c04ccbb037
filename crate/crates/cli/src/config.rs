//! Run configuration. One TOML file carries everything; only the seed and the
//! output path can be overridden from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transport_sa::pipeline::CrossFitConfig;
use transport_sa::simulate::DgpCell;
use transport_sa::{
    Constraint, Covariate, CovariateSchema, EstimatorKind, Nuisance, NuisanceOptions, PipelineConfig, TrapezoidDist,
    Truncation, VarianceEngine,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schema: Vec<Covariate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent: Option<String>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaBlock>,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
}

impl Delimiter {
    pub fn byte(self) -> u8 {
        match self {
            Self::Comma => b',',
            Self::Tab => b'\t',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    /// Relative paths are taken from the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub delimiter: Delimiter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    pub lo: f64,
    pub hi: f64,
}

impl Default for TruncationBlock {
    fn default() -> Self {
        let t = Truncation::default();
        Self { lo: t.lo, hi: t.hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossFitBlock {
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisBlock {
    pub estimator: EstimatorKind,
    pub variance: VarianceEngine,
    pub bootstrap_replicates: usize,
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossfit: Option<CrossFitBlock>,
    pub truncation: TruncationBlock,
    /// Largest admissible `δ`.
    pub delta_max: f64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            estimator: p.estimator,
            variance: p.variance,
            bootstrap_replicates: p.bootstrap_replicates,
            level: p.level,
            crossfit: None,
            truncation: TruncationBlock::default(),
            delta_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaBlock {
    /// The same constant `δ` for both arms, one analysis per value.
    Constant {
        #[serde(default = "default_constants")]
        values: Vec<f64>,
    },
    Range { arm: [f64; 2], referent: [f64; 2] },
    Trapezoid {
        arm: TrapezoidDist,
        referent: TrapezoidDist,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default = "default_true")]
        se_augment: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constraint: Option<Constraint>,
    },
}

fn default_constants() -> Vec<f64> {
    vec![1.0]
}

fn default_draws() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// JSON lines.
    #[default]
    Structured,
    /// Long-format CSV: `record_id, record, field, value`.
    Delimited,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Report path; standard output when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
    /// Draw table of `mc`; defaults to the report path with `.draws.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessBlock {
    pub schema: Vec<Covariate>,
    pub arms: Vec<String>,
    pub cells: Vec<DgpCell<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// `"toy"`, or absent when `process` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessBlock>,
    /// Trial and target sizes; only their ratio matters, each total in
    /// `sizes` is split in this proportion.
    #[serde(default = "one")]
    pub n1: usize,
    #[serde(default = "one")]
    pub n0: usize,
    #[serde(default = "default_sim_arm")]
    pub arm: String,
    #[serde(default = "default_sim_deltas")]
    pub deltas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub gcomp_coverage: bool,
    /// Correctly specified nuisance sets, one experiment each.
    #[serde(default = "default_configs")]
    pub configs: Vec<Vec<Nuisance>>,
    /// Covariate dropped from misspecified models.
    #[serde(default)]
    pub omit: usize,
}

fn one() -> usize {
    1
}

fn default_sim_arm() -> String {
    "1".into()
}

fn default_sim_deltas() -> Vec<f64> {
    vec![0.5, 0.75, 1.0]
}

fn default_level() -> f64 {
    0.95
}

fn default_configs() -> Vec<Vec<Nuisance>> {
    vec![vec![Nuisance::Outcome, Nuisance::Adherence, Nuisance::Treatment, Nuisance::Selection]]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(data) = &mut cfg.data {
            if data.path.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                data.path = base.join(&data.path);
            }
        }
        Ok(cfg)
    }

    pub fn schema(&self) -> Result<CovariateSchema, CliError> {
        CovariateSchema::new(self.schema.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let a = &self.analysis;
        let truncation = Truncation::new(a.truncation.lo, a.truncation.hi).ok_or_else(|| {
            CliError::Config(format!(
                "truncation bounds ({}, {}) must satisfy 0 < lo < hi < 1",
                a.truncation.lo, a.truncation.hi
            ))
        })?;
        if !(a.level > 0.0 && a.level < 1.0) {
            return Err(CliError::Config(format!("level {} outside (0, 1)", a.level)));
        }
        if !(a.delta_max.is_finite() && a.delta_max > 0.0) {
            return Err(CliError::Config(format!("delta_max {} must be positive", a.delta_max)));
        }
        Ok(PipelineConfig {
            estimator: a.estimator,
            variance: a.variance,
            bootstrap_replicates: a.bootstrap_replicates,
            level: a.level,
            seed: self.seed,
            crossfit: a.crossfit.map(|c| CrossFitConfig { folds: c.folds, seed: self.seed }),
            nuisance: NuisanceOptions { truncation, ..NuisanceOptions::default() },
        })
    }

    /// Arm and referent labels; both must be set and differ.
    pub fn arm_labels(&self) -> Result<(&str, &str), CliError> {
        let arm = self.arm.as_deref().ok_or_else(|| CliError::Config("`arm` is required".into()))?;
        let referent = self.referent.as_deref().ok_or_else(|| CliError::Config("`referent` is required".into()))?;
        if arm == referent {
            return Err(CliError::Config(format!("arm and referent are both `{arm}`")));
        }
        Ok((arm, referent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: RunConfig = toml::from_str(
            r#"
            arm = "t"
            referent = "c"
            [data]
            path = "d.csv"
            [delta]
            mode = "constant"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.delta, Some(DeltaBlock::Constant { values: vec![1.0] }));
        assert_eq!(cfg.analysis.bootstrap_replicates, 500);
        assert_eq!(cfg.output.format, Format::Structured);
        let p = cfg.pipeline().unwrap();
        assert_eq!(p.level, 0.95);
        assert!(p.crossfit.is_none());
    }

    #[test]
    fn one_delta_mode_only() {
        let two = r#"
            [delta]
            mode = "range"
            arm = [0.5, 1.0]
            referent = [0.5, 1.0]
            values = [1.0]
        "#;
        assert!(toml::from_str::<RunConfig>(two).is_err());
        assert!(toml::from_str::<RunConfig>("[delta]\nmode = \"sometimes\"").is_err());
    }

    #[test]
    fn trapezoid_block_parses() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [delta]
            mode = "trapezoid"
            arm = { a = 0.5, b = 0.6, c = 0.75, d = 1.0 }
            referent = { a = 0.5, b = 0.75, c = 0.9, d = 1.0 }
            constraint = "arm_at_most_referent"
            "#,
        )
        .unwrap();
        match cfg.delta.unwrap() {
            DeltaBlock::Trapezoid { draws, se_augment, constraint, arm, .. } => {
                assert_eq!(draws, 10_000);
                assert!(se_augment);
                assert_eq!(constraint, Some(Constraint::ArmAtMostReferent));
                assert_eq!(arm.c, 0.75);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_truncation_is_a_config_error() {
        let mut cfg: RunConfig = toml::from_str("").unwrap();
        cfg.analysis.truncation = TruncationBlock { lo: 0.5, hi: 0.2 };
        assert!(matches!(cfg.pipeline(), Err(CliError::Config(_))));
    }
}
