//! Result files: CSV tables, the run manifest and the error record.
//!
//! Every file is written to a hidden temporary name in the output directory
//! and renamed into place once complete, so readers never see partial files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sclab_core::divergences::TVEstimate;
use toml::{Table, Value};

use crate::config::ExperimentConfig;

pub const RESULTS_HEADER: [&str; 12] = [
    "scenario",
    "replicate",
    "generation",
    "n_total",
    "n_real",
    "tv_est",
    "tv_method",
    "tv_tol",
    "bound_value",
    "kl_prior",
    "seed",
    "runtime_ms",
];

pub const BOUNDS_HEADER: [&str; 6] = ["schedule", "i", "k", "A_k", "bound_term", "total_bound"];

/// Locale-free float text; `{:?}` keeps full round-trip precision and uses
/// exponent notation for very small or large values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub replicate: usize,
    pub generation: usize,
    pub n_total: usize,
    pub n_real: usize,
    pub tv: TVEstimate,
    pub bound_value: f64,
    pub kl_prior: Option<f64>,
    pub seed: u64,
    pub runtime_ms: f64,
}

impl ResultRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.replicate.to_string(),
            self.generation.to_string(),
            self.n_total.to_string(),
            self.n_real.to_string(),
            fmt_f64(self.tv.value),
            self.tv.method.as_str().to_string(),
            fmt_f64(self.tv.tolerance),
            fmt_f64(self.bound_value),
            self.kl_prior.map(fmt_f64).unwrap_or_default(),
            self.seed.to_string(),
            fmt_f64(self.runtime_ms),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub schedule: String,
    pub i: usize,
    pub k: usize,
    pub a_k: f64,
    pub bound_term: f64,
    pub total_bound: f64,
}

impl BoundRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.schedule.clone(),
            self.i.to_string(),
            self.k.to_string(),
            fmt_f64(self.a_k),
            fmt_f64(self.bound_term),
            fmt_f64(self.total_bound),
        ]
    }
}

/// A CSV table held in memory until it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn results(rows: &[ResultRow]) -> Self {
        let mut t = Self::new(&RESULTS_HEADER);
        rows.iter().for_each(|r| t.push(r.fields()));
        t
    }

    pub fn bounds(rows: &[BoundRow]) -> Self {
        let mut t = Self::new(&BOUNDS_HEADER);
        rows.iter().for_each(|r| t.push(r.fields()));
        t
    }

    pub fn to_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| e.into_error())
    }
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(target)
}

/// Config echo plus a `[manifest]` section; parsing ignores that section, so
/// the file is itself a runnable config.
pub fn manifest_text(cfg: &ExperimentConfig) -> String {
    let mut doc: Table = cfg.source().clone();
    let mut m = Table::new();
    m.insert("scenario".into(), Value::String(cfg.scenario.as_str().into()));
    m.insert("seed".into(), Value::Integer(cfg.base_seed as i64));
    m.insert("sclab_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    m.insert("core_version".into(), Value::String(sclab_core::VERSION.into()));
    m.insert("results_columns".into(), Value::Array(RESULTS_HEADER.iter().map(|s| Value::String(s.to_string())).collect()));
    doc.insert("manifest".into(), Value::Table(m));
    toml::to_string(&doc).expect("a TOML table always serializes")
}

/// Machine-readable failure record.
pub fn error_record(kind: &str, exit_code: i32, messages: &[String]) -> String {
    serde_json::json!({
        "status": "error",
        "kind": kind,
        "exit_code": exit_code,
        "errors": messages,
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sclab_core::divergences::TvMethod;

    #[test]
    fn floats_are_locale_free_and_round_trip() {
        for x in [0.1, 1.0, 1e-300, 123456.789, f64::INFINITY] {
            let s = fmt_f64(x);
            assert!(!s.contains(','));
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn results_header_and_empty_kl_field() {
        let row = ResultRow {
            scenario: "full_synthetic".into(),
            replicate: 0,
            generation: 1,
            n_total: 10,
            n_real: 10,
            tv: TVEstimate { value: 0.25, method: TvMethod::Quadrature, tolerance: 1e-9, unclamped: 0.25 },
            bound_value: 1.5,
            kl_prior: None,
            seed: 7,
            runtime_ms: 0.0,
        };
        let text = String::from_utf8(CsvTable::results(&[row]).to_csv().unwrap()).unwrap();
        let mut lines = text.split("\r\n");
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "full_synthetic,0,1,10,10,0.25,quadrature,1e-9,1.5,,7,0.0");
    }
}
