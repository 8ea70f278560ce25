//! CSV and JSON rendering with a provenance line.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Run identity written at the top of every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub trials: u64,
    pub config_sha256: String,
}

impl Metadata {
    pub fn new(command: &str, seed: u64, trials: u64, config_text: &str) -> Self {
        Self {
            tool: "noma-rep",
            version: VERSION,
            command: command.to_owned(),
            seed,
            trials,
            config_sha256: config_hash(config_text),
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# {} {} command={} seed={} trials={} config_sha256={}\n",
            self.tool, self.version, self.command, self.seed, self.trials, self.config_sha256
        )
    }
}

/// A table rendered as CSV under a `#` metadata line.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, meta: &Metadata) -> Result<String, CliError> {
        let mut out = meta.comment_line().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header).map_err(other)?;
            for r in &self.rows {
                w.write_record(r).map_err(other)?;
            }
            w.flush().map_err(other)?;
        }
        String::from_utf8(out).map_err(other)
    }
}

fn other<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Other(e.into())
}

/// JSON document `{"meta": ..., <body fields>}`.
pub fn render_json<T: Serialize>(meta: &Metadata, body: &T) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        meta: &'a Metadata,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Doc { meta, body }).map_err(other)?;
    s.push('\n');
    Ok(s)
}

/// Shortest round-trip form; exponent notation for very small or large
/// magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// A probability interval clipped to `[0, 1]`.
pub fn prob_ci((lo, hi): (f64, f64)) -> (String, String) {
    (num(lo.max(0.0)), num(hi.min(1.0)))
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
