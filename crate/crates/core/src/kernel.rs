//! Kernel functions and Gram matrices.
//!
//! The radial kernel is `exp(-gamma * ||x - z||^2)`. Configs may instead give a
//! width `sigma`, converted with `gamma = 1 / (2 sigma^2)`.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Radial,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Linear => f.write_str("linear"),
            KernelFamily::Radial => f.write_str("radial"),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelFamily::Linear),
            "radial" | "rbf" => Ok(KernelFamily::Radial),
            other => Err(Error::InvalidParameter(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Kernel family plus width. `gamma` is meaningless for the linear kernel and
/// is stored as 0 there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    gamma: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            gamma: 0.0,
        }
    }

    pub fn radial(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "radial kernel needs gamma > 0, got {gamma}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Radial,
            gamma,
        })
    }

    /// Radial kernel from a width: `gamma = 1 / (2 sigma^2)`.
    pub fn radial_sigma(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel sigma must be > 0, got {sigma}"
            )));
        }
        Self::radial(1.0 / (2.0 * sigma * sigma))
    }

    pub fn new(family: KernelFamily, gamma: f64) -> Result<Self> {
        match family {
            KernelFamily::Linear => Ok(Self::linear()),
            KernelFamily::Radial => Self::radial(gamma),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Kernel value without dimension or finiteness checks.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
            KernelFamily::Radial => {
                let d2: f64 = x
                    .iter()
                    .zip(z)
                    .map(|(a, b)| {
                        let t = a - b;
                        t * t
                    })
                    .sum();
                (-self.gamma * d2).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: z.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("feature vector"));
    }
    if x.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel argument"));
    }
    Ok(spec.eval_unchecked(x, z))
}

/// Kernel values between two observation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
}

impl GramMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Sub-block with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> GramMatrix {
        GramMatrix {
            values: DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
                self.values[(rows[i], cols[j])]
            }),
        }
    }

    /// All rows, a subset of columns.
    pub fn select_columns(&self, cols: &[usize]) -> GramMatrix {
        GramMatrix {
            values: self.values.select_columns(cols),
        }
    }
}

pub fn gram(spec: &KernelSpec, rows: &FeatureMatrix, cols: &FeatureMatrix) -> Result<GramMatrix> {
    if rows.n_cols() != cols.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: rows.n_cols(),
            actual: cols.n_cols(),
        });
    }
    if rows.n_rows() == 0 || cols.n_rows() == 0 {
        return Err(Error::Empty("gram input set"));
    }
    let m = cols.n_rows();
    let flat: Vec<f64> = (0..rows.n_rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let r = rows.row(i);
            (0..m).map(move |j| spec.eval_unchecked(r, cols.row(j)))
        })
        .collect();
    Ok(GramMatrix {
        values: DMatrix::from_row_slice(rows.n_rows(), m, &flat),
    })
}

/// Self-Gram; the lower triangle is mirrored from the upper so symmetry is exact.
pub fn gram_self(spec: &KernelSpec, x: &FeatureMatrix) -> Result<GramMatrix> {
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::Empty("gram input set"));
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = x.row(i);
            (i..n).map(|j| spec.eval_unchecked(r, x.row(j))).collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            values[(i, i + off)] = v;
            values[(i + off, i)] = v;
        }
    }
    Ok(GramMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_dot_product() {
        let k = KernelSpec::linear();
        assert_eq!(kernel_eval(&k, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn radial_examples() {
        let k = KernelSpec::radial(0.5).unwrap();
        assert_eq!(kernel_eval(&k, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        let v = kernel_eval(&k, &[0.0], &[2.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn sigma_conversion() {
        let k = KernelSpec::radial_sigma(2.0).unwrap();
        assert_eq!(k.gamma(), 0.125);
        assert!(KernelSpec::radial(0.0).is_err());
        assert!(KernelSpec::radial(f64::NAN).is_err());
    }

    #[test]
    fn eval_errors() {
        let k = KernelSpec::linear();
        match kernel_eval(&k, &[1.0, 2.0], &[1.0]) {
            Err(Error::DimensionMismatch { expected: 2, actual: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            kernel_eval(&k, &[f64::INFINITY], &[1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn small_grams() {
        let eye = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = gram(&KernelSpec::linear(), &eye, &eye).unwrap();
        assert_eq!(g.values, DMatrix::identity(2, 2));

        let pts = FeatureMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = gram_self(&KernelSpec::radial(1.0).unwrap(), &pts).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g.values, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));
    }

    #[test]
    fn gram_rejects_mismatch_and_empty() {
        let a = FeatureMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[[0.0]]).unwrap();
        assert!(gram(&KernelSpec::linear(), &a, &b).is_err());
        let empty = FeatureMatrix::new(0, 2, vec![]).unwrap();
        assert!(matches!(
            gram(&KernelSpec::linear(), &empty, &a),
            Err(Error::Empty(_))
        ));
    }
}
