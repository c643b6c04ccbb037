//! Two-sample data model: trial records `(W, S=1, A, Z, Y)` and target
//! records `(W, S=0)` under one covariate schema.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited file: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: {0}")]
    Header(String),
    #[error("row {row}: trial record lacks {field}")]
    MissingTrialField { row: usize, field: &'static str },
    #[error("row {row}: target record carries trial-only field `{field}`")]
    TargetCarriesTrialField { row: usize, field: &'static str },
    #[error("row {row}, column `{column}`: {message}")]
    Value { row: usize, column: String, message: String },
    #[error("dataset needs at least one trial and one target record (n1={n1}, n0={n0})")]
    EmptySample { n1: usize, n0: usize },
    #[error("design matrix subset selects no records")]
    EmptySubset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.to_owned(), kind: CovariateKind::Continuous }
    }

    pub fn binary(name: &str) -> Self {
        Self { name: name.to_owned(), kind: CovariateKind::Binary }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            kind: CovariateKind::Categorical { levels: levels.iter().map(|s| (*s).to_owned()).collect() },
        }
    }

    /// Number of design-matrix columns this covariate expands to.
    pub fn width(&self) -> usize {
        match &self.kind {
            CovariateKind::Continuous | CovariateKind::Binary => 1,
            CovariateKind::Categorical { levels } => levels.len() - 1,
        }
    }

    /// Number of discrete levels, `None` for continuous covariates.
    pub fn n_levels(&self) -> Option<usize> {
        match &self.kind {
            CovariateKind::Continuous => None,
            CovariateKind::Binary => Some(2),
            CovariateKind::Categorical { levels } => Some(levels.len()),
        }
    }
}

/// Ordered covariate declarations. Construct through [`CovariateSchema::new`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for c in &covariates {
            if c.name.trim().is_empty() {
                return Err(DataError::Schema("covariate names must be non-empty".into()));
            }
            if ["s", "a", "z", "y"].contains(&c.name.as_str()) {
                return Err(DataError::Schema(format!("covariate name `{}` is reserved", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate covariate `{}`", c.name)));
            }
            if let CovariateKind::Categorical { levels } = &c.kind {
                if levels.len() < 2 {
                    return Err(DataError::Schema(format!("categorical `{}` needs at least 2 levels", c.name)));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(DataError::Schema(format!("categorical `{}` repeats a level", c.name)));
                }
            }
        }
        Ok(Self { covariates })
    }

    pub fn empty() -> Self {
        Self { covariates: Vec::new() }
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// `1 + Σ width` over all covariates.
    pub fn design_width(&self) -> usize {
        1 + self.covariates.iter().map(Covariate::width).sum::<usize>()
    }

    /// Parses one raw cell into its stored numeric value (level index for
    /// discrete covariates).
    fn parse_value(&self, j: usize, raw: &str) -> Result<f64, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err("missing value".into());
        }
        match &self.covariates[j].kind {
            CovariateKind::Continuous => {
                let v: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("`{raw}` is not finite"))
                }
            }
            CovariateKind::Binary => match raw {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                _ => Err(format!("`{raw}` is not 0 or 1")),
            },
            CovariateKind::Categorical { levels } => levels
                .iter()
                .position(|l| l == raw)
                .map(|i| i as f64)
                .ok_or_else(|| format!("`{raw}` is not a declared level")),
        }
    }

    fn format_value(&self, j: usize, v: f64) -> String {
        match &self.covariates[j].kind {
            CovariateKind::Continuous => format!("{v}"),
            CovariateKind::Binary => format!("{}", v as u8),
            CovariateKind::Categorical { levels } => levels[v as usize].clone(),
        }
    }
}

/// Trial-only observations; present exactly when the record is a trial record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialObs {
    /// Index into [`StudyDataset::arms`].
    pub arm: usize,
    pub z: bool,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    /// Covariate values in schema order; discrete covariates hold their level
    /// index.
    pub w: Vec<f64>,
    pub trial: Option<TrialObs>,
}

impl StudyRecord {
    pub fn target(w: Vec<f64>) -> Self {
        Self { w, trial: None }
    }

    pub fn trial(w: Vec<f64>, arm: usize, z: bool, y: f64) -> Self {
        Self { w, trial: Some(TrialObs { arm, z, y }) }
    }

    pub fn is_trial(&self) -> bool {
        self.trial.is_some()
    }

    pub fn s(&self) -> u8 {
        u8::from(self.is_trial())
    }

    pub fn arm(&self) -> Option<usize> {
        self.trial.map(|t| t.arm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    schema: CovariateSchema,
    records: Vec<StudyRecord>,
    arms: Vec<String>,
    n1: usize,
    n0: usize,
    warnings: Vec<String>,
}

impl StudyDataset {
    /// Validates and assembles a dataset. `arms` are the labels that trial
    /// records index into.
    pub fn new(schema: CovariateSchema, records: Vec<StudyRecord>, arms: Vec<String>) -> Result<Self, DataError> {
        let mut n1 = 0;
        for (i, r) in records.iter().enumerate() {
            if r.w.len() != schema.len() {
                return Err(DataError::Value {
                    row: i + 1,
                    column: "w".into(),
                    message: format!("expected {} covariates, got {}", schema.len(), r.w.len()),
                });
            }
            for (j, (&v, c)) in r.w.iter().zip(schema.covariates()).enumerate() {
                let ok = match c.n_levels() {
                    None => v.is_finite(),
                    Some(k) => v >= 0.0 && v.fract() == 0.0 && (v as usize) < k,
                };
                if !ok {
                    return Err(DataError::Value {
                        row: i + 1,
                        column: schema.covariates()[j].name.clone(),
                        message: format!("value {v} outside declared levels"),
                    });
                }
            }
            if let Some(t) = r.trial {
                n1 += 1;
                if t.arm >= arms.len() {
                    return Err(DataError::Value { row: i + 1, column: "a".into(), message: "unknown arm".into() });
                }
                if !(0.0..=1.0).contains(&t.y) {
                    return Err(DataError::Value {
                        row: i + 1,
                        column: "y".into(),
                        message: format!("outcome {} outside [0,1]", t.y),
                    });
                }
            }
        }
        let n0 = records.len() - n1;
        if n1 == 0 || n0 == 0 {
            return Err(DataError::EmptySample { n1, n0 });
        }
        let mut ds = Self { schema, records, arms, n1, n0, warnings: Vec::new() };
        ds.warnings = ds.degenerate_arm_warnings();
        for w in &ds.warnings {
            log::warn!("{w}");
        }
        Ok(ds)
    }

    fn degenerate_arm_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (a, label) in self.arms.iter().enumerate() {
            let (mut adh, mut non) = (0, 0);
            for t in self.records.iter().filter_map(|r| r.trial).filter(|t| t.arm == a) {
                if t.z {
                    adh += 1;
                } else {
                    non += 1;
                }
            }
            if adh == 0 || non == 0 {
                out.push(format!(
                    "arm `{label}` has {adh} adherent and {non} non-adherent trial records; \
                     adherence-stratified fits will be degenerate"
                ));
            }
        }
        out
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[StudyRecord] {
        &self.records
    }

    pub fn arms(&self) -> &[String] {
        &self.arms
    }

    pub fn arm_index(&self, label: &str) -> Option<usize> {
        self.arms.iter().position(|a| a == label)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// New dataset sharing schema and arm labels, holding `records`.
    pub fn with_records(&self, records: Vec<StudyRecord>) -> Result<Self, DataError> {
        Self::new(self.schema.clone(), records, self.arms.clone())
    }

    /// Dataset holding the listed records (repeats allowed), without
    /// re-validating. Callers keep at least one trial and one target record.
    pub fn resample(&self, indices: &[usize]) -> Self {
        let records: Vec<StudyRecord> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let n1 = records.iter().filter(|r| r.is_trial()).count();
        let n0 = records.len() - n1;
        Self { schema: self.schema.clone(), records, arms: self.arms.clone(), n1, n0, warnings: Vec::new() }
    }

    /// Writes the dataset in the same layout [`load_dataset`] reads.
    pub fn write(&self, path: &Path, delimiter: u8) -> Result<(), DataError> {
        let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        let mut header: Vec<&str> = self.schema.covariates().iter().map(|c| c.name.as_str()).collect();
        header.extend(["s", "a", "z", "y"]);
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> =
                r.w.iter().enumerate().map(|(j, &v)| self.schema.format_value(j, v)).collect();
            match r.trial {
                Some(t) => row.extend([
                    "1".to_owned(),
                    self.arms[t.arm].clone(),
                    u8::from(t.z).to_string(),
                    format!("{}", t.y),
                ]),
                None => row.extend(["0", "", "", ""].map(String::from)),
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
        Ok(())
    }
}

/// Reads a delimited file whose header holds every schema covariate plus the
/// columns `s`, `a`, `z`, `y` (any order). Row order is preserved and arm labels
/// are sorted.
pub fn load_dataset(path: &Path, schema: &CovariateSchema, delimiter: u8) -> Result<StudyDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    read_dataset(file, schema, delimiter)
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    schema: &CovariateSchema,
    delimiter: u8,
) -> Result<StudyDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| -> Result<usize, DataError> {
        let mut hits = header.iter().enumerate().filter(|(_, h)| *h == name);
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(DataError::Header(format!("missing column `{name}`"))),
            (Some(_), Some(_)) => Err(DataError::Header(format!("duplicate column `{name}`"))),
        }
    };
    let cov_cols: Vec<usize> = schema.covariates().iter().map(|c| find(&c.name)).collect::<Result<_, _>>()?;
    let (s_col, a_col, z_col, y_col) = (find("s")?, find("a")?, find("z")?, find("y")?);
    let expected = schema.len() + 4;
    if header.len() != expected {
        let known: HashSet<&str> =
            schema.covariates().iter().map(|c| c.name.as_str()).chain(["s", "a", "z", "y"]).collect();
        let extra: Vec<&str> = header.iter().map(String::as_str).filter(|h| !known.contains(h)).collect();
        return Err(DataError::Header(format!("unexpected columns {extra:?}")));
    }

    struct Raw {
        w: Vec<f64>,
        trial: Option<(String, bool, f64)>,
    }
    let mut raws = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let value_err = |column: &str, message: String| DataError::Value { row, column: column.into(), message };
        let w = cov_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| schema.parse_value(j, cell(c)).map_err(|m| value_err(&schema.covariates()[j].name, m)))
            .collect::<Result<Vec<_>, _>>()?;
        let trial = match cell(s_col) {
            "1" => {
                let a = cell(a_col);
                if a.is_empty() {
                    return Err(DataError::MissingTrialField { row, field: "arm" });
                }
                let z = match cell(z_col) {
                    "" => return Err(DataError::MissingTrialField { row, field: "adherence" }),
                    "0" => false,
                    "1" => true,
                    other => return Err(value_err("z", format!("`{other}` is not 0 or 1"))),
                };
                let y_raw = cell(y_col);
                if y_raw.is_empty() {
                    return Err(DataError::MissingTrialField { row, field: "outcome" });
                }
                let y: f64 = y_raw.parse().map_err(|_| value_err("y", format!("`{y_raw}` is not a number")))?;
                if !(0.0..=1.0).contains(&y) {
                    return Err(value_err("y", format!("outcome {y} outside [0,1]")));
                }
                Some((a.to_owned(), z, y))
            }
            "0" => {
                for (col, field) in [(a_col, "a"), (z_col, "z"), (y_col, "y")] {
                    if !cell(col).is_empty() {
                        return Err(DataError::TargetCarriesTrialField { row, field });
                    }
                }
                None
            }
            other => return Err(value_err("s", format!("`{other}` is not 0 or 1"))),
        };
        raws.push(Raw { w, trial });
    }

    let arms: Vec<String> = raws
        .iter()
        .filter_map(|r| r.trial.as_ref().map(|t| t.0.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let records = raws
        .into_iter()
        .map(|r| StudyRecord {
            w: r.w,
            trial: r.trial.map(|(a, z, y)| TrialObs { arm: arms.binary_search(&a).expect("collected above"), z, y }),
        })
        .collect();
    StudyDataset::new(schema.clone(), records, arms)
}

/// Which covariates enter a model. Misspecified fits in the simulation
/// harness drop covariates through this.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSelection {
    #[default]
    All,
    InterceptOnly,
    /// Every covariate except the listed schema indices.
    Without(Vec<usize>),
}

impl CovariateSelection {
    pub fn includes(&self, j: usize) -> bool {
        match self {
            Self::All => true,
            Self::InterceptOnly => false,
            Self::Without(drop) => !drop.contains(&j),
        }
    }

    pub fn width(&self, schema: &CovariateSchema) -> usize {
        1 + schema.covariates().iter().enumerate().filter(|(j, _)| self.includes(*j)).map(|(_, c)| c.width()).sum::<usize>()
    }

    pub fn column_names(&self, schema: &CovariateSchema) -> Vec<String> {
        let mut names = vec!["(intercept)".to_owned()];
        for (j, c) in schema.covariates().iter().enumerate() {
            if !self.includes(j) {
                continue;
            }
            match &c.kind {
                CovariateKind::Continuous | CovariateKind::Binary => names.push(c.name.clone()),
                CovariateKind::Categorical { levels } => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{}={}", c.name, l)))
                }
            }
        }
        names
    }
}

/// Writes the design row `(1, W)` for one covariate vector into `out`:
/// intercept first, then schema order, categoricals one-hot with the first
/// level as reference.
pub fn design_row_into<T: Scalar>(schema: &CovariateSchema, sel: &CovariateSelection, w: &[f64], out: &mut Vec<T>) {
    out.clear();
    out.push(T::one());
    for (j, c) in schema.covariates().iter().enumerate() {
        if !sel.includes(j) {
            continue;
        }
        match &c.kind {
            CovariateKind::Continuous | CovariateKind::Binary => out.push(T::lit(w[j])),
            CovariateKind::Categorical { levels } => {
                let level = w[j] as usize;
                out.extend((1..levels.len()).map(|l| if l == level { T::one() } else { T::zero() }));
            }
        }
    }
}

pub fn design_row<T: Scalar>(schema: &CovariateSchema, sel: &CovariateSelection, w: &[f64]) -> Vec<T> {
    let mut out = Vec::with_capacity(sel.width(schema));
    design_row_into(schema, sel, w, &mut out);
    out
}

/// Design matrix restricted to a record subset, with the record index of
/// every row.
#[derive(Debug, Clone)]
pub struct DesignMatrix<T> {
    pub x: Matrix<T>,
    pub rows: Vec<usize>,
    pub columns: Vec<String>,
}

pub fn design_matrix<T: Scalar>(
    ds: &StudyDataset,
    subset: impl Fn(&StudyRecord) -> bool,
) -> Result<DesignMatrix<T>, DataError> {
    design_matrix_with(ds, &CovariateSelection::All, subset)
}

pub fn design_matrix_with<T: Scalar>(
    ds: &StudyDataset,
    sel: &CovariateSelection,
    subset: impl Fn(&StudyRecord) -> bool,
) -> Result<DesignMatrix<T>, DataError> {
    let rows: Vec<usize> = ds.records().iter().enumerate().filter(|(_, r)| subset(r)).map(|(i, _)| i).collect();
    if rows.is_empty() {
        return Err(DataError::EmptySubset);
    }
    let x = Matrix::from_rows(
        &rows.iter().map(|&i| design_row(ds.schema(), sel, &ds.records()[i].w)).collect::<Vec<_>>(),
    );
    Ok(DesignMatrix { x, rows, columns: sel.column_names(ds.schema()) })
}
