//! Report emission. Every report opens with a header record holding the
//! resolved configuration, so any output reproduces from its own first line.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};
use crate::error::CliError;

/// Bumped on any non-additive change to record layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 10 significant digits.
pub fn sig10(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.9e}").parse().unwrap_or(v)
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            *v = serde_json::Number::from_f64(sig10(x)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

pub struct Report {
    records: Vec<Value>,
}

impl Report {
    pub fn new(command: &str, cfg: &RunConfig, timestamp: u64) -> Result<Self, CliError> {
        let config = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let header = json!({
            "record": "header",
            "schema_version": SCHEMA_VERSION,
            "tool": "transport-sa",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "generated_at": timestamp,
            "seed": cfg.seed,
            "config": config,
        });
        Ok(Self { records: vec![header] })
    }

    /// Appends `fields` under the record kind `kind`.
    pub fn push(&mut self, kind: &str, fields: Value) {
        let mut map = Map::new();
        map.insert("record".into(), Value::String(kind.into()));
        if let Value::Object(f) = fields {
            map.extend(f);
        }
        self.records.push(Value::Object(map));
    }

    pub fn records(&self) -> &[Value] {
        &self.records
    }

    pub fn write(&self, path: Option<&Path>, format: Format) -> Result<(), CliError> {
        let mut out: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| {
                CliError::Config(format!("cannot create {}: {e}", p.display()))
            })?)),
            None => Box::new(std::io::stdout().lock()),
        };
        let rounded: Vec<Value> = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                round_numbers(&mut r);
                r
            })
            .collect();
        match format {
            Format::Structured => {
                for r in &rounded {
                    serde_json::to_writer(&mut out, r).map_err(|e| CliError::Config(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
            Format::Delimited => {
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(["record_id", "record", "field", "value"])?;
                for (id, r) in rounded.iter().enumerate() {
                    let kind = r.get("record").and_then(Value::as_str).unwrap_or("");
                    let mut rows = Vec::new();
                    flatten("", r, &mut rows);
                    for (field, value) in rows.into_iter().filter(|(f, _)| f != "record") {
                        w.write_record([id.to_string(), kind.to_owned(), field, value])?;
                    }
                }
                w.flush()?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Dotted paths to scalar leaves; scalar arrays are joined with `;`.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_owned() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            out.push((prefix.to_owned(), items.iter().map(scalar).collect::<Vec<_>>().join(";")));
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        other => out.push((prefix.to_owned(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "NA".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
