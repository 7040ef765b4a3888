//! Tabular reports rendered as CSV or JSON, each carrying a reproducibility
//! stanza (seed, configuration hash, version).

use std::fs;
use std::io::Write;
use std::path::Path;

use flmm_core::mc::fmt_f64;
use serde_json::{json, Map, Value};

use crate::config::{Format, Params, VERSION};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_f64(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) if x.is_finite() => json!(x),
            Cell::Num(x) => json!(fmt_f64(*x)),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stanza {
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub version: &'static str,
}

impl Stanza {
    pub fn new(params: &Params) -> Self {
        Self {
            seed: params.seed,
            config_sha256: params.config_hash(),
            version: VERSION,
        }
    }

    /// `# flmm v0.1.0 seed=42 config_sha256=...`
    pub fn csv_line(&self) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!("# flmm {} seed={} config_sha256={}", self.version, seed, self.config_sha256)
    }

    pub fn to_json(&self) -> Value {
        json!({ "seed": self.seed, "config_sha256": self.config_sha256, "version": self.version })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra scalar results (e.g. a fitted slope), rendered as `# key=value`
    /// lines after the stanza in CSV.
    pub summary: Vec<(&'static str, Cell)>,
}

impl Report {
    pub fn new(command: &'static str, columns: &[&'static str]) -> Self {
        Self {
            command,
            columns: columns.to_vec(),
            rows: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &'static str, value: impl Into<Cell>) {
        self.summary.push((key, value.into()));
    }

    pub fn csv(&self, stanza: &Stanza) -> String {
        let mut out = stanza.csv_line();
        out.push('\n');
        for (k, v) in &self.summary {
            out.push_str(&format!("# {k}={}\n", v.csv()));
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn json(&self, stanza: &Stanza) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let m: Map<String, Value> = self.columns.iter().map(|c| c.to_string()).zip(r.iter().map(Cell::json)).collect();
                Value::Object(m)
            })
            .collect();
        let summary: Map<String, Value> = self.summary.iter().map(|(k, v)| (k.to_string(), v.json())).collect();
        let doc = json!({
            "command": self.command,
            "stanza": stanza.to_json(),
            "summary": summary,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).unwrap_or_default();
        s.push('\n');
        s
    }

    pub fn render(&self, params: &Params) -> String {
        let stanza = Stanza::new(params);
        match params.format() {
            Format::Csv => self.csv(&stanza),
            Format::Json => self.json(&stanza),
        }
    }

    /// Writes to `params.output`, or stdout when unset.
    pub fn emit(&self, params: &Params) -> CliResult<()> {
        let text = self.render(params);
        match &params.output {
            Some(path) => write_file(path, &text),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .map_err(|e| CliError::io(Path::new("<stdout>"), e))
            }
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo", &["a", "b", "status"]);
        r.push(vec![0.1.into(), 3usize.into(), "ok".into()]);
        r.note("slope", 1.0);
        r
    }

    #[test]
    fn csv_layout() {
        let p = Params {
            seed: Some(7),
            ..Params::default()
        };
        let text = sample().render(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# flmm v0.1.0 seed=7 config_sha256="));
        assert_eq!(lines[1], "# slope=1e0");
        assert_eq!(lines[2], "a,b,status");
        assert_eq!(lines[3], "1e-1,3,ok");
    }

    #[test]
    fn json_layout() {
        let p = Params {
            format: Some(Format::Json),
            ..Params::default()
        };
        let v: Value = serde_json::from_str(&sample().render(&p)).unwrap();
        assert_eq!(v["rows"][0]["b"], json!(3));
        assert_eq!(v["stanza"]["seed"], Value::Null);
        assert_eq!(v["stanza"]["version"], json!("v0.1.0"));
    }
}
