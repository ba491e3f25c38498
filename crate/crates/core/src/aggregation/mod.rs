//! Aggregation functions run over decrypted records.
//!
//! # Payload codecs
//!
//! | spec        | payload text               |
//! |-------------|----------------------------|
//! | `sum`       | decimal integer, `42`      |
//! | `histogram` | decimal real, `3.25`       |
//! | `lsf`       | `x,y`, `3.0,7.5`           |
//! | `svm`       | sparse `idx:val idx:val`   |
//! | `zone_count`| `x,y`                      |
//!
//! Surrounding ASCII whitespace is ignored. A record that does not parse is
//! skipped and counted; the aggregation still runs over the remaining records.
//!
//! # Result text
//!
//! Sum is a decimal integer. Histogram and zone counts are comma-separated
//! counts (zones in row-major order). LSF is `c0,c1`. SVM is the
//! comma-separated predicted labels in input order. A failed aggregation is
//! `error: <message>`.

mod kernels;
mod svm;

use std::fmt::Write as _;
use std::sync::Arc;

pub use kernels::{agg_histogram, agg_lsf, agg_sum, agg_zone_count, histogram_edge, HistogramResult, LsfResult, ZoneDistribution};
pub use svm::{svm_predict, Kernel, SparseVector, SvmModel};

use crate::crypto::UserId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integer overflow")]
    Overflow,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("model line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },
    /// An `error: ...` result produced by the enclave.
    #[error("aggregation failed remotely: {0}")]
    Reported(String),
}

/// The function an enclave embodies.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregationSpec {
    Sum,
    Histogram { min: f64, max: f64, bins: u32 },
    Lsf,
    SvmClassify { model: Arc<SvmModel> },
    ZoneCount { grid_side: u32, zone_side: u32 },
}

impl AggregationSpec {
    pub fn validate(&self) -> Result<(), AggregationError> {
        match *self {
            AggregationSpec::Histogram { min, max, bins } => kernels::check_histogram(min, max, bins),
            AggregationSpec::ZoneCount { grid_side, zone_side } => kernels::check_zones(grid_side, zone_side).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Canonical text: `sum`, `histogram min=<f64> max=<f64> bins=<n>`, `lsf`,
    /// `svm`, `zone_count grid_side=<n> zone_side=<n>`. The SVM model is
    /// committed to separately through [`AggregationSpec::model_text`].
    pub fn canonical(&self) -> String {
        match self {
            AggregationSpec::Sum => "sum".into(),
            AggregationSpec::Histogram { min, max, bins } => format!("histogram min={min} max={max} bins={bins}"),
            AggregationSpec::Lsf => "lsf".into(),
            AggregationSpec::SvmClassify { .. } => "svm".into(),
            AggregationSpec::ZoneCount { grid_side, zone_side } => {
                format!("zone_count grid_side={grid_side} zone_side={zone_side}")
            }
        }
    }

    pub fn model_text(&self) -> Option<String> {
        match self {
            AggregationSpec::SvmClassify { model } => Some(model.to_model_text()),
            _ => None,
        }
    }

    pub fn parse(canonical: &str, model: Option<SvmModel>) -> Result<Self, AggregationError> {
        let mut parts = canonical.split_ascii_whitespace();
        let name = parts.next().unwrap_or_default();
        let params: Vec<(&str, &str)> = parts
            .map(|p| p.split_once('=').ok_or_else(|| bad_spec(canonical)))
            .collect::<Result<_, _>>()?;
        let param = |key: &str| -> Result<&str, AggregationError> {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| AggregationError::InvalidArgument(format!("spec `{canonical}` lacks `{key}`")))
        };
        let num = |key: &str| -> Result<f64, AggregationError> { param(key)?.parse().map_err(|_| bad_spec(canonical)) };
        let int = |key: &str| -> Result<u32, AggregationError> { param(key)?.parse().map_err(|_| bad_spec(canonical)) };
        let spec = match name {
            "sum" => AggregationSpec::Sum,
            "lsf" => AggregationSpec::Lsf,
            "histogram" => AggregationSpec::Histogram { min: num("min")?, max: num("max")?, bins: int("bins")? },
            "zone_count" => AggregationSpec::ZoneCount { grid_side: int("grid_side")?, zone_side: int("zone_side")? },
            "svm" => AggregationSpec::SvmClassify {
                model: Arc::new(model.ok_or_else(|| {
                    AggregationError::InvalidArgument("svm spec requires a model".into())
                })?),
            },
            _ => return Err(bad_spec(canonical)),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn bad_spec(text: &str) -> AggregationError {
    AggregationError::InvalidArgument(format!("unrecognized aggregation spec `{text}`"))
}

/// A decrypted user datum inside the enclave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainRecord {
    pub user_id: UserId,
    pub payload: Vec<u8>,
}

/// Payloads decoded under a spec's codec.
#[derive(Debug, Clone, PartialEq)]
pub enum TypedInputs {
    Integers(Vec<i64>),
    Reals(Vec<f64>),
    Points(Vec<(f64, f64)>),
    Vectors(Vec<SparseVector>),
}

impl TypedInputs {
    pub fn len(&self) -> usize {
        match self {
            TypedInputs::Integers(v) => v.len(),
            TypedInputs::Reals(v) => v.len(),
            TypedInputs::Points(v) => v.len(),
            TypedInputs::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPayloads {
    pub inputs: TypedInputs,
    pub skipped: usize,
}

fn payload_text(payload: &[u8]) -> Result<&str, AggregationError> {
    std::str::from_utf8(payload)
        .map(str::trim)
        .map_err(|_| AggregationError::Parse("payload is not UTF-8".into()))
}

// Parse errors never quote the payload: they may surface in logs.
fn parse_int(payload: &[u8]) -> Result<i64, AggregationError> {
    payload_text(payload)?
        .parse()
        .map_err(|_| AggregationError::Parse("expected decimal integer".into()))
}

fn parse_real(payload: &[u8]) -> Result<f64, AggregationError> {
    let v: f64 = payload_text(payload)?
        .parse()
        .map_err(|_| AggregationError::Parse("expected decimal real".into()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AggregationError::Parse("non-finite real".into()))
    }
}

fn parse_point(payload: &[u8]) -> Result<(f64, f64), AggregationError> {
    let (x, y) = payload_text(payload)?
        .split_once(',')
        .ok_or_else(|| AggregationError::Parse("expected x,y".into()))?;
    Ok((parse_real(x.as_bytes())?, parse_real(y.as_bytes())?))
}

pub fn parse_payloads<'a, I>(spec: &AggregationSpec, payloads: I) -> ParsedPayloads
where
    I: IntoIterator<Item = &'a [u8]>,
{
    fn collect<'a, T>(
        payloads: impl IntoIterator<Item = &'a [u8]>,
        parse: impl Fn(&[u8]) -> Result<T, AggregationError>,
    ) -> (Vec<T>, usize) {
        let mut out = Vec::new();
        let mut skipped = 0;
        for p in payloads {
            match parse(p) {
                Ok(v) => out.push(v),
                Err(_) => skipped += 1,
            }
        }
        (out, skipped)
    }

    let (inputs, skipped) = match spec {
        AggregationSpec::Sum => {
            let (v, s) = collect(payloads, parse_int);
            (TypedInputs::Integers(v), s)
        }
        AggregationSpec::Histogram { .. } => {
            let (v, s) = collect(payloads, parse_real);
            (TypedInputs::Reals(v), s)
        }
        AggregationSpec::Lsf | AggregationSpec::ZoneCount { .. } => {
            let (v, s) = collect(payloads, parse_point);
            (TypedInputs::Points(v), s)
        }
        AggregationSpec::SvmClassify { .. } => {
            let (v, s) = collect(payloads, |p| SparseVector::parse(payload_text(p)?));
            (TypedInputs::Vectors(v), s)
        }
    };
    if skipped > 0 {
        log::debug!("skipped {skipped} unparseable payloads");
    }
    ParsedPayloads { inputs, skipped }
}

/// The aggregate as the recipient sees it.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateOutput {
    Sum(i64),
    Histogram(Vec<u64>),
    Lsf(LsfResult),
    Labels(Vec<i32>),
    Zones(Vec<u64>),
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{item}").expect("string write");
    }
    out
}

fn split_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, AggregationError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| t.parse().map_err(|_| AggregationError::Parse("malformed result list".into())))
        .collect()
}

impl AggregateOutput {
    pub fn to_text(&self) -> String {
        match self {
            AggregateOutput::Sum(v) => v.to_string(),
            AggregateOutput::Histogram(c) | AggregateOutput::Zones(c) => join(c),
            AggregateOutput::Lsf(fit) => format!("{},{}", fit.c0, fit.c1),
            AggregateOutput::Labels(l) => join(l),
        }
    }

    pub fn from_text(spec: &AggregationSpec, text: &str) -> Result<Self, AggregationError> {
        if let Some(msg) = text.strip_prefix("error: ") {
            return Err(AggregationError::Reported(msg.to_owned()));
        }
        let malformed = || AggregationError::Parse("malformed result".into());
        Ok(match spec {
            AggregationSpec::Sum => AggregateOutput::Sum(text.parse().map_err(|_| malformed())?),
            AggregationSpec::Histogram { bins, .. } => {
                let counts = split_list(text)?;
                if counts.len() != *bins as usize {
                    return Err(malformed());
                }
                AggregateOutput::Histogram(counts)
            }
            AggregationSpec::Lsf => {
                let v: Vec<f64> = split_list(text)?;
                let [c0, c1] = v[..] else { return Err(malformed()) };
                AggregateOutput::Lsf(LsfResult { c0, c1 })
            }
            AggregationSpec::SvmClassify { .. } => AggregateOutput::Labels(split_list(text)?),
            AggregationSpec::ZoneCount { grid_side, zone_side } => {
                let per_side = (grid_side / zone_side) as usize;
                let counts = split_list(text)?;
                if counts.len() != per_side * per_side {
                    return Err(malformed());
                }
                AggregateOutput::Zones(counts)
            }
        })
    }

    /// Equality with `rel_tol` relative tolerance on reals, exact otherwise.
    pub fn approx_eq(&self, other: &AggregateOutput, rel_tol: f64) -> bool {
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs());
        match (self, other) {
            (AggregateOutput::Lsf(a), AggregateOutput::Lsf(b)) => close(a.c0, b.c0) && close(a.c1, b.c1),
            _ => self == other,
        }
    }
}

/// Outcome of running a spec over raw payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub output: Result<AggregateOutput, AggregationError>,
    pub parsed: usize,
    pub skipped: usize,
}

impl Evaluation {
    /// Result text the enclave seals, including failures.
    pub fn result_text(&self) -> String {
        match &self.output {
            Ok(out) => out.to_text(),
            Err(e) => format!("error: {e}"),
        }
    }
}

pub fn run_kernel(spec: &AggregationSpec, inputs: &TypedInputs) -> Result<AggregateOutput, AggregationError> {
    match (spec, inputs) {
        (AggregationSpec::Sum, TypedInputs::Integers(v)) => agg_sum(v).map(AggregateOutput::Sum),
        (AggregationSpec::Histogram { min, max, bins }, TypedInputs::Reals(v)) => {
            let h = agg_histogram(v, *min, *max, *bins)?;
            if h.dropped > 0 {
                log::debug!("histogram dropped {} out-of-range values", h.dropped);
            }
            Ok(AggregateOutput::Histogram(h.counts))
        }
        (AggregationSpec::Lsf, TypedInputs::Points(p)) => agg_lsf(p).map(AggregateOutput::Lsf),
        (AggregationSpec::SvmClassify { model }, TypedInputs::Vectors(v)) => {
            Ok(AggregateOutput::Labels(v.iter().map(|x| svm_predict(model, x)).collect()))
        }
        (AggregationSpec::ZoneCount { grid_side, zone_side }, TypedInputs::Points(p)) => {
            agg_zone_count(p, *grid_side, *zone_side).map(|d| AggregateOutput::Zones(d.counts))
        }
        _ => Err(AggregationError::InvalidArgument("inputs do not match spec".into())),
    }
}

pub fn evaluate<'a, I>(spec: &AggregationSpec, payloads: I) -> Evaluation
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let parsed = parse_payloads(spec, payloads);
    Evaluation { output: run_kernel(spec, &parsed.inputs), parsed: parsed.inputs.len(), skipped: parsed.skipped }
}
