//! Binary SVM prediction from libsvm-format model files.
//!
//! Header lines are `key value...` pairs until a line containing `SV`. Keys
//! read: `svm_type` (`c_svc` or `nu_svc`), `kernel_type` (`linear` or `rbf`),
//! `gamma`, `nr_class` (must be 2), `total_sv`, `rho`, `label`, `nr_sv`.
//! Other keys (`probA`, `probB`, `degree`, `coef0`) are ignored. Each of the
//! `total_sv` lines after `SV` is `coefficient idx:value idx:value ...`.

use std::fmt::Write as _;

use super::AggregationError;

/// Sparse feature vector with strictly increasing indices starting at 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector(Vec<(u32, f64)>);

impl SparseVector {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self, AggregationError> {
        let mut prev = 0u32;
        for &(idx, _) in &entries {
            if idx <= prev {
                return Err(AggregationError::InvalidArgument(format!(
                    "feature index {idx} not strictly increasing from {prev}"
                )));
            }
            prev = idx;
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    /// Parses `idx:val idx:val ...`; an empty string is the zero vector.
    pub fn parse(text: &str) -> Result<Self, AggregationError> {
        let mut entries = Vec::new();
        for token in text.split_ascii_whitespace() {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| AggregationError::Parse(format!("feature token without ':' ({} bytes)", token.len())))?;
            let idx: u32 = idx.parse().map_err(|_| AggregationError::Parse("bad feature index".into()))?;
            let val: f64 = val.parse().map_err(|_| AggregationError::Parse("bad feature value".into()))?;
            if !val.is_finite() {
                return Err(AggregationError::Parse("non-finite feature value".into()));
            }
            entries.push((idx, val));
        }
        Self::new(entries)
    }

    fn write_to(&self, out: &mut String) {
        for (i, (idx, val)) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{idx}:{val}").expect("string write");
        }
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        sum
    }

    pub fn squared_distance(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Equal => {
                    let d = a[i].1 - b[j].1;
                    sum += d * d;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    sum += a[i].1 * a[i].1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    sum += b[j].1 * b[j].1;
                    j += 1;
                }
            }
        }
        sum += a[i..].iter().map(|(_, v)| v * v).sum::<f64>();
        sum += b[j..].iter().map(|(_, v)| v * v).sum::<f64>();
        sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, u: &SparseVector, v: &SparseVector) -> f64 {
        match *self {
            Kernel::Linear => u.dot(v),
            Kernel::Rbf { gamma } => (-gamma * u.squared_distance(v)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<SparseVector>,
    /// `alpha_i * y_i`, one per support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub labels: [i32; 2],
}

fn model_err(line: usize, reason: impl Into<String>) -> AggregationError {
    AggregationError::ModelFormat { line, reason: reason.into() }
}

impl SvmModel {
    pub fn new(
        kernel: Kernel,
        support_vectors: Vec<SparseVector>,
        coefficients: Vec<f64>,
        rho: f64,
        labels: [i32; 2],
    ) -> Result<Self, AggregationError> {
        if support_vectors.len() != coefficients.len() {
            return Err(AggregationError::InvalidArgument(format!(
                "{} support vectors but {} coefficients",
                support_vectors.len(),
                coefficients.len()
            )));
        }
        if let Kernel::Rbf { gamma } = kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(AggregationError::InvalidArgument(format!("gamma must be positive, got {gamma}")));
            }
        }
        Ok(Self { kernel, support_vectors, coefficients, rho, labels })
    }

    pub fn parse(text: &str) -> Result<Self, AggregationError> {
        let mut lines = text.lines().enumerate();
        let mut kernel_name: Option<String> = None;
        let mut gamma: Option<f64> = None;
        let mut rho: Option<f64> = None;
        let mut labels: Option<[i32; 2]> = None;
        let mut total_sv: Option<usize> = None;
        let mut saw_sv = false;

        for (n, line) in lines.by_ref() {
            let lineno = n + 1;
            let mut parts = line.split_ascii_whitespace();
            let Some(key) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            let single = || -> Result<&str, AggregationError> {
                match values.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(model_err(lineno, format!("{key} expects one value"))),
                }
            };
            match key {
                "svm_type" => {
                    let t = single()?;
                    if t != "c_svc" && t != "nu_svc" {
                        return Err(model_err(lineno, format!("unsupported svm_type {t}")));
                    }
                }
                "kernel_type" => kernel_name = Some(single()?.to_owned()),
                "gamma" => gamma = Some(single()?.parse().map_err(|_| model_err(lineno, "bad gamma"))?),
                "nr_class" => {
                    if single()? != "2" {
                        return Err(model_err(lineno, "only binary models are supported"));
                    }
                }
                "total_sv" => total_sv = Some(single()?.parse().map_err(|_| model_err(lineno, "bad total_sv"))?),
                "rho" => rho = Some(single()?.parse().map_err(|_| model_err(lineno, "bad rho"))?),
                "label" => {
                    let parsed: Result<Vec<i32>, _> = values.iter().map(|v| v.parse()).collect();
                    match parsed.as_deref() {
                        Ok([a, b]) => labels = Some([*a, *b]),
                        _ => return Err(model_err(lineno, "label expects two integers")),
                    }
                }
                "SV" => {
                    saw_sv = true;
                    break;
                }
                _ => {}
            }
        }
        if !saw_sv {
            return Err(model_err(0, "missing SV section"));
        }
        let kernel = match kernel_name.as_deref() {
            Some("linear") => Kernel::Linear,
            Some("rbf") => Kernel::Rbf { gamma: gamma.ok_or_else(|| model_err(0, "rbf kernel without gamma"))? },
            Some(other) => return Err(model_err(0, format!("unsupported kernel_type {other}"))),
            None => return Err(model_err(0, "missing kernel_type")),
        };
        let rho = rho.ok_or_else(|| model_err(0, "missing rho"))?;
        let labels = labels.ok_or_else(|| model_err(0, "missing label"))?;

        let mut coefficients = Vec::new();
        let mut support_vectors = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (coef, features) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let coef: f64 = coef.parse().map_err(|_| model_err(n + 1, "bad coefficient"))?;
            let sv = SparseVector::parse(features).map_err(|e| model_err(n + 1, e.to_string()))?;
            coefficients.push(coef);
            support_vectors.push(sv);
        }
        if let Some(expected) = total_sv {
            if expected != coefficients.len() {
                return Err(model_err(0, format!("total_sv {expected} but {} vectors", coefficients.len())));
            }
        }
        SvmModel::new(kernel, support_vectors, coefficients, rho, labels)
    }

    /// Canonical libsvm-compatible text; what the enclave identity hashes.
    pub fn to_model_text(&self) -> String {
        let mut out = String::from("svm_type c_svc\n");
        match self.kernel {
            Kernel::Linear => out.push_str("kernel_type linear\n"),
            Kernel::Rbf { gamma } => {
                writeln!(out, "kernel_type rbf\ngamma {gamma}").expect("string write");
            }
        }
        writeln!(
            out,
            "nr_class 2\ntotal_sv {}\nrho {}\nlabel {} {}\nSV",
            self.coefficients.len(),
            self.rho,
            self.labels[0],
            self.labels[1]
        )
        .expect("string write");
        for (coef, sv) in self.coefficients.iter().zip(&self.support_vectors) {
            write!(out, "{coef}").expect("string write");
            if !sv.entries().is_empty() {
                out.push(' ');
                sv.write_to(&mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn decision_value(&self, x: &SparseVector) -> f64 {
        let mut sum = 0.0;
        for (coef, sv) in self.coefficients.iter().zip(&self.support_vectors) {
            sum += coef * self.kernel.eval(sv, x);
        }
        sum - self.rho
    }
}

/// `labels[0]` for a strictly positive decision value, otherwise `labels[1]`.
pub fn svm_predict(model: &SvmModel, x: &SparseVector) -> i32 {
    if model.decision_value(x) > 0.0 {
        model.labels[0]
    } else {
        model.labels[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(coef: f64) -> SvmModel {
        let s = SparseVector::new(vec![(1, 0.5), (3, -2.0)]).unwrap();
        SvmModel::new(Kernel::Linear, vec![s], vec![coef], 0.0, [1, -1]).unwrap()
    }

    #[test]
    fn sign_of_single_vector_model() {
        let x = SparseVector::new(vec![(1, 0.5), (3, -2.0)]).unwrap();
        assert_eq!(svm_predict(&single(1.0), &x), 1);
        assert_eq!(svm_predict(&single(-1.0), &x), -1);
        // zero decision value goes to the second label
        assert_eq!(svm_predict(&single(1.0), &SparseVector::default()), -1);
    }

    #[test]
    fn sparse_parse_and_order() {
        let v = SparseVector::parse("1:0.5 4:2.0").unwrap();
        assert_eq!(v.entries(), &[(1, 0.5), (4, 2.0)]);
        assert!(SparseVector::parse("4:1 2:1").is_err());
        assert!(SparseVector::parse("0:1").is_err());
        assert!(SparseVector::parse("1=2").is_err());
        assert!(SparseVector::parse("").unwrap().entries().is_empty());
    }

    #[test]
    fn sparse_distance_counts_disjoint_indices() {
        let a = SparseVector::parse("1:1 3:2").unwrap();
        let b = SparseVector::parse("2:1 3:1 5:3").unwrap();
        assert_eq!(a.dot(&b), 2.0);
        assert_eq!(a.squared_distance(&b), 1.0 + 1.0 + 1.0 + 9.0);
    }

    #[test]
    fn model_text_roundtrip() {
        let text = "svm_type c_svc\nkernel_type rbf\ngamma 0.5\nnr_class 2\ntotal_sv 2\nrho -0.25\nlabel 4 2\nnr_sv 1 1\nSV\n1 1:0.5 2:1\n-0.75 2:-1\n";
        let model = SvmModel::parse(text).unwrap();
        assert_eq!(model.kernel, Kernel::Rbf { gamma: 0.5 });
        assert_eq!(model.labels, [4, 2]);
        assert_eq!(model.coefficients, vec![1.0, -0.75]);
        assert_eq!(SvmModel::parse(&model.to_model_text()).unwrap(), model);
    }

    #[test]
    fn model_errors_name_lines() {
        let bad = "svm_type c_svc\nkernel_type rbf\ngamma 0.5\nrho bogus\nlabel 1 -1\nSV\n";
        assert!(matches!(SvmModel::parse(bad), Err(AggregationError::ModelFormat { line: 4, .. })));
        let bad_sv = "kernel_type linear\nrho 0\nlabel 1 -1\nSV\n1 2:1 1:1\n";
        assert!(matches!(SvmModel::parse(bad_sv), Err(AggregationError::ModelFormat { line: 5, .. })));
        assert!(SvmModel::parse("kernel_type poly\nrho 0\nlabel 1 -1\nSV\n").is_err());
        assert!(SvmModel::parse("kernel_type linear\nnr_class 3\nrho 0\nlabel 1 -1\nSV\n").is_err());
        assert!(SvmModel::parse("kernel_type linear\nrho 0\nlabel 1 -1\n").is_err());
    }
}
