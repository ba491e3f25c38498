use std::fmt::Write as _;
use std::time::Duration;

use super::Function;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no {mode} row for `{function}`")]
    MissingMode { function: String, mode: Mode },
    #[error("duplicate {mode} row for `{function}`")]
    DuplicateRow { function: String, mode: Mode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Enclave,
    Plain,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Enclave => "enclave",
            Mode::Plain => "plain",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// `exp(mean(ln v))`. Every value must be finite and positive.
pub fn geometric_mean(values: &[f64]) -> Result<f64, ReportError> {
    if values.is_empty() {
        return Err(ReportError::InvalidArgument("geometric mean of no values".into()));
    }
    let mut log_sum = 0.0;
    for &v in values {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ReportError::InvalidArgument(format!("geometric mean needs positive values, got {v}")));
        }
        log_sum += v.ln();
    }
    if let [only] = values {
        return Ok(*only);
    }
    Ok((log_sum / values.len() as f64).exp())
}

fn ms(d: &Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two samples.
pub fn sample_stddev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub function: String,
    pub mode: Mode,
    pub upload_mean_ms: f64,
    pub compute_mean_ms: f64,
    pub total_ms: f64,
    /// Over per-iteration totals.
    pub stddev_ms: f64,
}

impl ReportRow {
    pub fn new(function: impl Into<String>, mode: Mode, upload_mean_ms: f64, compute_mean_ms: f64, stddev_ms: f64) -> Self {
        Self {
            function: function.into(),
            mode,
            upload_mean_ms,
            compute_mean_ms,
            total_ms: upload_mean_ms + compute_mean_ms,
            stddev_ms,
        }
    }

    /// `uploads[i]` and `computes[i]` belong to the same iteration.
    pub fn from_samples(function: Function, mode: Mode, uploads: &[Duration], computes: &[Duration]) -> Self {
        assert_eq!(uploads.len(), computes.len(), "one upload and one compute per iteration");
        assert!(!uploads.is_empty(), "at least one iteration");
        let up: Vec<f64> = uploads.iter().map(ms).collect();
        let comp: Vec<f64> = computes.iter().map(ms).collect();
        let totals: Vec<f64> = up.iter().zip(&comp).map(|(a, b)| a + b).collect();
        Self::new(function.name(), mode, mean(&up), mean(&comp), sample_stddev(&totals))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    rows: Vec<ReportRow>,
    geomean_enclave_ms: f64,
    geomean_plain_ms: f64,
}

impl BenchmarkReport {
    /// Every function must have exactly one row per mode. Row order is kept.
    pub fn from_rows(rows: Vec<ReportRow>) -> Result<Self, ReportError> {
        let mut functions: Vec<&str> = Vec::new();
        for row in &rows {
            if !functions.contains(&row.function.as_str()) {
                functions.push(&row.function);
            }
        }
        if functions.is_empty() {
            return Err(ReportError::InvalidArgument("report has no rows".into()));
        }
        let mut totals = [Vec::new(), Vec::new()];
        for f in &functions {
            for (slot, mode) in [Mode::Enclave, Mode::Plain].into_iter().enumerate() {
                let matching: Vec<&ReportRow> = rows.iter().filter(|r| r.function == *f && r.mode == mode).collect();
                match matching[..] {
                    [row] => totals[slot].push(row.total_ms),
                    [] => return Err(ReportError::MissingMode { function: f.to_string(), mode }),
                    _ => return Err(ReportError::DuplicateRow { function: f.to_string(), mode }),
                }
            }
        }
        let geomean_enclave_ms = geometric_mean(&totals[0])?;
        let geomean_plain_ms = geometric_mean(&totals[1])?;
        Ok(Self { rows, geomean_enclave_ms, geomean_plain_ms })
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn geomean_enclave_ms(&self) -> f64 {
        self.geomean_enclave_ms
    }

    pub fn geomean_plain_ms(&self) -> f64 {
        self.geomean_plain_ms
    }

    pub fn overhead(&self) -> f64 {
        self.geomean_enclave_ms / self.geomean_plain_ms
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<10} {:<8} {:>12} {:>12} {:>12} {:>10}",
            "function", "mode", "upload_ms", "compute_ms", "total_ms", "sigma_ms"
        )
        .unwrap();
        let mut previous: Option<&str> = None;
        for r in &self.rows {
            let name = if previous == Some(r.function.as_str()) { "" } else { r.function.as_str() };
            previous = Some(&r.function);
            writeln!(
                out,
                "{:<10} {:<8} {:>12.2} {:>12.2} {:>12.2} {:>10.2}",
                name, r.mode, r.upload_mean_ms, r.compute_mean_ms, r.total_ms, r.stddev_ms
            )
            .unwrap();
        }
        writeln!(
            out,
            "geometric mean: enclave {:.2} ms, plain {:.2} ms, overhead {:.2}",
            self.geomean_enclave_ms,
            self.geomean_plain_ms,
            self.overhead()
        )
        .unwrap();
        out
    }

    /// Header, one row per (function, mode), then `GEOMEAN` rows carrying
    /// the mean in the total column and an `OVERHEAD` row likewise.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("function,mode,upload_mean_ms,compute_mean_ms,total_ms,stddev_ms\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.function, r.mode, r.upload_mean_ms, r.compute_mean_ms, r.total_ms, r.stddev_ms
            )
            .unwrap();
        }
        writeln!(out, "GEOMEAN,enclave,,,{:.6},", self.geomean_enclave_ms).unwrap();
        writeln!(out, "GEOMEAN,plain,,,{:.6},", self.geomean_plain_ms).unwrap();
        writeln!(out, "OVERHEAD,,,,{:.6},", self.overhead()).unwrap();
        out
    }
}
