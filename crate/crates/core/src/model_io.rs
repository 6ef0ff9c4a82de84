//! Plain-text model files and a uniform scoring front for both learners.
//!
//! ```text
//! ivmkit-model 1
//! kind ivm
//! kernel radial 0.5
//! lambda 0.01
//! features Mean_Speed_C CV_Speed_U
//! scaler_mean 52.1 0.33
//! scaler_scale 21.0 0.22
//! history 1.2 1.1
//! vectors 2
//! 17 0.83 1.5 -0.2
//! 40 -1.1 0.3 0.9
//! ```
//!
//! Vector rows are `index coefficient x...`; for SVMs the coefficient is
//! `y α`. Floats are written in shortest round-trip form, so save → load is
//! exact.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{FeatureMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::ivm::{predict_ivm, IvmModel};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::klr::KlrModel;
use crate::svm::{decision_value, SvmModel};

const MAGIC: &str = "ivmkit-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Ivm(IvmModel),
    Svm(SvmModel),
}

/// A fitted learner plus the input columns and scaling it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub learner: Learner,
    pub features: Vec<String>,
    pub scaler: Option<Standardizer>,
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self.learner {
            Learner::Ivm(_) => "ivm",
            Learner::Svm(_) => "svm",
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        match &self.learner {
            Learner::Ivm(m) => m.kernel(),
            Learner::Svm(m) => &m.kernel,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.learner {
            Learner::Ivm(m) => m.expansion.basis.n_cols(),
            Learner::Svm(m) => m.support_vectors.n_cols(),
        }
    }

    /// Import vectors (IVM) or support vectors (SVM).
    pub fn n_vectors(&self) -> usize {
        match &self.learner {
            Learner::Ivm(m) => m.n_import(),
            Learner::Svm(m) => m.n_support(),
        }
    }

    /// Crash-risk score of one unscaled row: probability for IVM, decision
    /// value for SVM. Higher means riskier for both.
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                scaled = s.apply_row(row);
                &scaled[..]
            }
            None => row,
        };
        match &self.learner {
            Learner::Ivm(m) => predict_ivm(m, x),
            Learner::Svm(m) => decision_value(m, x),
        }
    }

    pub fn score_all(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        x.rows().map(|r| self.score(r)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "kind {}", self.kind());
        let k = self.kernel();
        match k.family() {
            KernelFamily::Linear => s.push_str("kernel linear\n"),
            KernelFamily::Radial => {
                let _ = writeln!(s, "kernel radial {}", k.gamma());
            }
        }
        let _ = writeln!(s, "dim {}", self.dim());
        if !self.features.is_empty() {
            let _ = writeln!(s, "features {}", self.features.join(" "));
        }
        if let Some(sc) = &self.scaler {
            let _ = writeln!(s, "scaler_mean {}", join(&sc.mean));
            let _ = writeln!(s, "scaler_scale {}", join(&sc.scale));
        }
        let (indices, coefs, vectors): (&[usize], &[f64], &FeatureMatrix) = match &self.learner {
            Learner::Ivm(m) => {
                let _ = writeln!(s, "lambda {}", m.lambda);
                let _ = writeln!(s, "history {}", join(&m.history));
                (&m.import_indices, &m.expansion.coef, &m.expansion.basis)
            }
            Learner::Svm(m) => {
                let _ = writeln!(s, "cost {}", m.cost);
                let _ = writeln!(s, "bias {}", m.bias);
                let _ = writeln!(s, "converged {}", m.converged);
                let _ = writeln!(s, "iterations {}", m.iterations);
                (&m.support_indices, &m.dual_coeffs, &m.support_vectors)
            }
        };
        let _ = writeln!(s, "vectors {}", coefs.len());
        for ((i, c), row) in indices.iter().zip(coefs).zip(vectors.rows()) {
            let _ = writeln!(s, "{i} {c} {}", join(row));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let fail = |line: usize, msg: String| Error::Format { line, msg };

        let (ln, head) = lines.next().ok_or_else(|| fail(1, "empty model file".into()))?;
        match head.split_whitespace().collect::<Vec<_>>()[..] {
            [MAGIC, v] if v == VERSION.to_string() => {}
            [MAGIC, v] => return Err(fail(ln, format!("unsupported version {v}"))),
            _ => return Err(fail(ln, format!("expected '{MAGIC} {VERSION}' header"))),
        }

        let mut h = Header::default();
        let mut n_vectors = None;
        let mut last = ln;
        for (ln, line) in lines.by_ref() {
            last = ln;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "kind" => h.kind = Some(rest.to_string()),
                "kernel" => h.kernel = Some(parse_kernel(rest).map_err(|m| fail(ln, m))?),
                "dim" => h.dim = Some(parse(rest, ln)?),
                "features" => h.features = rest.split_whitespace().map(String::from).collect(),
                "scaler_mean" => h.scaler_mean = Some(parse_list(rest, ln)?),
                "scaler_scale" => h.scaler_scale = Some(parse_list(rest, ln)?),
                "lambda" => h.lambda = Some(parse(rest, ln)?),
                "history" => h.history = parse_list(rest, ln)?,
                "cost" => h.cost = Some(parse(rest, ln)?),
                "bias" => h.bias = Some(parse(rest, ln)?),
                "converged" => h.converged = Some(parse(rest, ln)?),
                "iterations" => h.iterations = Some(parse(rest, ln)?),
                "vectors" => {
                    n_vectors = Some(parse::<usize>(rest, ln)?);
                    break;
                }
                other => return Err(fail(ln, format!("unknown key '{other}'"))),
            }
        }
        let n = n_vectors.ok_or_else(|| fail(last, "missing 'vectors' section".into()))?;
        let dim = h.dim.ok_or_else(|| fail(last, "missing 'dim'".into()))?;
        let kernel = h.kernel.ok_or_else(|| fail(last, "missing 'kernel'".into()))?;

        let mut indices = Vec::with_capacity(n);
        let mut coefs = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| fail(last + 1, format!("expected {n} vector rows")))?;
            last = ln;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != dim + 2 {
                return Err(fail(ln, format!("expected {} fields, found {}", dim + 2, parts.len())));
            }
            indices.push(parse::<usize>(parts[0], ln)?);
            coefs.push(parse::<f64>(parts[1], ln)?);
            for p in &parts[2..] {
                values.push(parse::<f64>(p, ln)?);
            }
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(fail(ln, format!("trailing content '{extra}'")));
        }
        let vectors = FeatureMatrix::new(n, dim, values).map_err(|e| fail(last, e.to_string()))?;

        let scaler = match (h.scaler_mean, h.scaler_scale) {
            (Some(mean), Some(scale)) if mean.len() == dim && scale.len() == dim => {
                if scale.iter().any(|s| !(*s > 0.0)) {
                    return Err(fail(last, "scaler scales must be positive".into()));
                }
                Some(Standardizer { mean, scale })
            }
            (None, None) => None,
            _ => return Err(fail(last, "scaler_mean and scaler_scale must both have dim entries".into())),
        };
        if !h.features.is_empty() && h.features.len() != dim {
            return Err(fail(last, "feature list length differs from dim".into()));
        }

        let learner = match h.kind.as_deref() {
            Some("ivm") => {
                let lambda = h.lambda.ok_or_else(|| fail(last, "missing 'lambda'".into()))?;
                let expansion = KlrModel::new(vectors, coefs, kernel).map_err(|e| fail(last, e.to_string()))?;
                Learner::Ivm(
                    IvmModel::new(indices, expansion, lambda, h.history).map_err(|e| fail(last, e.to_string()))?,
                )
            }
            Some("svm") => {
                let cost = h.cost.ok_or_else(|| fail(last, "missing 'cost'".into()))?;
                let bias = h.bias.ok_or_else(|| fail(last, "missing 'bias'".into()))?;
                let mut m = SvmModel::new(indices, vectors, coefs, bias, kernel, cost)
                    .map_err(|e| fail(last, e.to_string()))?;
                m.converged = h.converged.unwrap_or(true);
                m.iterations = h.iterations.unwrap_or(0);
                Learner::Svm(m)
            }
            Some(other) => return Err(fail(last, format!("unknown model kind '{other}'"))),
            None => return Err(fail(last, "missing 'kind'".into())),
        };
        Ok(Self {
            learner,
            features: h.features,
            scaler,
        })
    }
}

#[derive(Default)]
struct Header {
    kind: Option<String>,
    kernel: Option<KernelSpec>,
    dim: Option<usize>,
    features: Vec<String>,
    scaler_mean: Option<Vec<f64>>,
    scaler_scale: Option<Vec<f64>>,
    lambda: Option<f64>,
    history: Vec<f64>,
    cost: Option<f64>,
    bias: Option<f64>,
    converged: Option<bool>,
    iterations: Option<usize>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Format {
        line,
        msg: format!("cannot parse '{s}'"),
    })
}

fn parse_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace().map(|p| parse(p, line)).collect()
}

fn parse_kernel(s: &str) -> std::result::Result<KernelSpec, String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let family: KernelFamily = parts
        .first()
        .ok_or("missing kernel family")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    match (family, parts.get(1)) {
        (KernelFamily::Linear, None) => Ok(KernelSpec::linear()),
        (KernelFamily::Radial, Some(g)) => {
            let g: f64 = g.parse().map_err(|_| format!("bad gamma '{g}'"))?;
            KernelSpec::radial(g).map_err(|e| e.to_string())
        }
        (KernelFamily::Radial, None) => Err("radial kernel needs a gamma".into()),
        (KernelFamily::Linear, Some(_)) => Err("linear kernel takes no parameter".into()),
    }
}
