//! Regularized kernel logistic regression.
//!
//! With regressor Gram `K_a` (N x q), regularizer Gram `K_q` (q x q), labels
//! `y` in {0, 1} and coefficients `a`, the objective is
//!
//! ```text
//! H(a) = -y'(K_a a) + 1' softplus(K_a a) + (lambda / 2) a' K_q a
//! ```
//!
//! and is minimized by Newton-Raphson in its iteratively-reweighted
//! least-squares form. The fitted function carries no bias term.

use nalgebra::{DMatrix, DVector};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelSpec};

/// Clamp applied to probabilities inside the IRLS weights and working response.
pub const PROB_CLAMP: f64 = 1e-10;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;

/// `ln(1 + e^f)` without overflow.
#[inline]
pub fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct KlrProblem<'a> {
    ka: GramMatrix,
    kq: GramMatrix,
    labels: &'a [u8],
    lambda: f64,
}

impl<'a> KlrProblem<'a> {
    pub fn new(ka: GramMatrix, kq: GramMatrix, labels: &'a [u8], lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        if ka.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: ka.nrows(),
                actual: labels.len(),
            });
        }
        if kq.nrows() != kq.ncols() || ka.ncols() != kq.nrows() {
            return Err(Error::DimensionMismatch {
                expected: ka.ncols(),
                actual: kq.nrows(),
            });
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
        }
        Ok(Self {
            ka,
            kq,
            labels,
            lambda,
        })
    }

    /// Full-basis problem: `K_a = K_q = K`.
    pub fn full(k: GramMatrix, labels: &'a [u8], lambda: f64) -> Result<Self> {
        Self::new(k.clone(), k, labels, lambda)
    }

    pub fn n(&self) -> usize {
        self.ka.nrows()
    }

    pub fn q(&self) -> usize {
        self.ka.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn labels(&self) -> &[u8] {
        self.labels
    }

    pub fn regressor(&self) -> &DMatrix<f64> {
        &self.ka.values
    }

    pub fn regularizer(&self) -> &DMatrix<f64> {
        &self.kq.values
    }

    fn check_len(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.q() {
            return Err(Error::DimensionMismatch {
                expected: self.q(),
                actual: a.len(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient vector"));
        }
        Ok(())
    }

    /// Objective given precomputed `f = K_a a`.
    pub(crate) fn objective_with_f(&self, f: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let fit: f64 = f
            .iter()
            .zip(self.labels)
            .map(|(&fi, &yi)| softplus(fi) - f64::from(yi) * fi)
            .sum();
        let reg = a.dot(&(&self.kq.values * a));
        fit + 0.5 * self.lambda * reg
    }
}

pub fn nll_objective(problem: &KlrProblem<'_>, a: &DVector<f64>) -> Result<f64> {
    problem.check_len(a)?;
    let f = problem.regressor() * a;
    Ok(problem.objective_with_f(&f, a))
}

/// Closed-form gradient `-K_a'(y - p) + lambda K_q a`.
pub fn gradient(problem: &KlrProblem<'_>, a: &DVector<f64>) -> Result<DVector<f64>> {
    problem.check_len(a)?;
    let f = problem.regressor() * a;
    let resid = DVector::from_iterator(
        f.len(),
        f.iter()
            .zip(problem.labels)
            .map(|(&fi, &yi)| sigmoid(fi) - f64::from(yi)),
    );
    Ok(problem.regressor().tr_mul(&resid) + problem.regularizer() * a * problem.lambda)
}

/// IRLS weights `w = p(1-p)` and working response `z = f + (y - p) / w`, with `p`
/// clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub(crate) fn irls_weights(f: &DVector<f64>, labels: &[u8]) -> (DVector<f64>, DVector<f64>) {
    let n = f.len();
    let mut w = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let p = sigmoid(f[i]).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let wi = p * (1.0 - p);
        w[i] = wi;
        z[i] = f[i] + (f64::from(labels[i]) - p) / wi;
    }
    (w, z)
}

/// `K' diag(w) K`.
pub(crate) fn weighted_cross(k: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut kw = k.clone();
    for (i, mut row) in kw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    k.tr_mul(&kw)
}

const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor, or `None` when a pivot is non-positive or negligible
/// relative to the largest diagonal entry.
pub(crate) fn cholesky_checked(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = m.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let chol = nalgebra::Cholesky::new(m)?;
    let floor = PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE);
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| {
        let d = l[(i, i)];
        !(d * d > floor)
    }) {
        return None;
    }
    Some(chol)
}

/// Solves the symmetric positive (semi-)definite system `m x = rhs`.
///
/// On a singular factorization the diagonal is jittered by
/// `1e-10 * trace / q`, escalated by 10x up to `1e-4 * trace / q`.
pub(crate) fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = cholesky_checked(m.clone()) {
        return Ok(chol.solve(rhs));
    }
    let q = m.nrows();
    let mut scale = m.trace().abs() / q as f64;
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut jitter = 1e-10 * scale;
    let limit = 1e-4 * scale * (1.0 + 1e-9);
    while jitter <= limit {
        let mut mj = m.clone();
        for i in 0..q {
            mj[(i, i)] += jitter;
        }
        if let Some(chol) = cholesky_checked(mj) {
            return Ok(chol.solve(rhs));
        }
        jitter *= 10.0;
    }
    Err(Error::Singular {
        jitter: jitter / 10.0,
    })
}

/// One IRLS step: `(K_a' W K_a + lambda K_q)^-1 K_a' W z`.
pub fn newton_step(problem: &KlrProblem<'_>, a_prev: &DVector<f64>) -> Result<DVector<f64>> {
    problem.check_len(a_prev)?;
    let ka = problem.regressor();
    let f = ka * a_prev;
    let (w, z) = irls_weights(&f, problem.labels);
    let mut system = weighted_cross(ka, &w);
    system += problem.regularizer() * problem.lambda;
    let rhs = ka.tr_mul(&w.component_mul(&z));
    solve_spd(&system, &rhs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlrSolution {
    pub a: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point followed by the value after each step.
    pub trace: Vec<f64>,
}

/// Result of backtracking along `delta` from `a`.
pub(crate) struct LineSearch {
    pub a: DVector<f64>,
    pub objective: f64,
    pub improved: bool,
}

/// Halves the step until the objective does not increase.
pub(crate) fn halving_search(
    problem: &KlrProblem<'_>,
    a: &DVector<f64>,
    h: f64,
    delta: &DVector<f64>,
) -> LineSearch {
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let cand = a + delta * t;
        let f = problem.regressor() * &cand;
        let hc = problem.objective_with_f(&f, &cand);
        if hc <= h {
            return LineSearch {
                a: cand,
                objective: hc,
                improved: true,
            };
        }
        t *= 0.5;
    }
    LineSearch {
        a: a.clone(),
        objective: h,
        improved: false,
    }
}

/// Fits from `a = 0`.
pub fn fit_klr(problem: &KlrProblem<'_>, tol: f64, max_iter: usize) -> Result<KlrSolution> {
    fit_klr_from(problem, DVector::zeros(problem.q()), tol, max_iter)
}

/// Damped Newton from an arbitrary start. Stops once
/// `|H_k - H_{k-1}| <= tol (1 + |H_k|)`; hitting `max_iter` first returns the
/// current iterate with `converged = false`.
pub fn fit_klr_from(
    problem: &KlrProblem<'_>,
    a0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<KlrSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    problem.check_len(&a0)?;
    let mut a = a0;
    let mut h = nll_objective(problem, &a)?;
    let mut trace = vec![h];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let proposal = newton_step(problem, &a)?;
        let delta = proposal - &a;
        let step = halving_search(problem, &a, h, &delta);
        let change = (h - step.objective).abs();
        a = step.a;
        h = step.objective;
        trace.push(h);
        if !step.improved || change <= tol * (1.0 + h.abs()) {
            converged = true;
            break;
        }
    }
    Ok(KlrSolution {
        a,
        objective: h,
        iterations,
        converged,
        trace,
    })
}

/// Kernel expansion `p(x) = sigmoid(sum_j a_j K(x, basis_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlrModel {
    pub basis: FeatureMatrix,
    pub coef: Vec<f64>,
    pub kernel: KernelSpec,
}

impl KlrModel {
    pub fn new(basis: FeatureMatrix, coef: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        if basis.n_rows() == 0 {
            return Err(Error::Empty("basis"));
        }
        if coef.len() != basis.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_rows(),
                actual: coef.len(),
            });
        }
        Ok(Self {
            basis,
            coef,
            kernel,
        })
    }

    pub fn latent(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.basis.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.n_cols(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query point"));
        }
        Ok(self
            .basis
            .rows()
            .zip(&self.coef)
            .map(|(b, c)| c * self.kernel.eval_unchecked(x, b))
            .sum())
    }
}

pub fn predict_prob(model: &KlrModel, x: &[f64]) -> Result<f64> {
    model.latent(x).map(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> GramMatrix {
        GramMatrix::from_matrix(DMatrix::from_element(1, 1, v))
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn objective_at_zero_is_n_ln2() {
        let y = [1u8, 0, 1];
        let k = GramMatrix::from_matrix(DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.3 }));
        let p = KlrProblem::full(k, &y, 0.7).unwrap();
        let h = nll_objective(&p, &DVector::zeros(3)).unwrap();
        assert!((h - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn objective_single_point() {
        let y = [1u8];
        let p = KlrProblem::new(scalar(1.0), scalar(1.0), &y, 0.5).unwrap();
        let h = nll_objective(&p, &DVector::from_element(1, 2.0)).unwrap();
        let expected = (1.0 + 2f64.exp()).ln() - 1.0;
        assert!((h - expected).abs() < 1e-14);
        assert!((h - 1.126928).abs() < 1e-6);
    }

    #[test]
    fn newton_hand_case() {
        let y = [1u8];
        let p = KlrProblem::new(scalar(1.0), scalar(1.0), &y, 0.25).unwrap();
        let a = newton_step(&p, &DVector::zeros(1)).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_problems() {
        let y = [1u8];
        assert!(KlrProblem::new(scalar(1.0), scalar(1.0), &y, 0.0).is_err());
        let y2 = [1u8, 0];
        assert!(KlrProblem::new(scalar(1.0), scalar(1.0), &y2, 1.0).is_err());
        let p = KlrProblem::new(scalar(1.0), scalar(1.0), &y, 1.0).unwrap();
        assert!(matches!(
            nll_objective(&p, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
        assert!(fit_klr(&p, 0.0, 10).is_err());
        assert!(fit_klr(&p, 1e-8, 0).is_err());
    }

    #[test]
    fn duplicate_points_need_jitter_but_solve() {
        // Two identical points make the Gram rank one.
        let k = GramMatrix::from_matrix(DMatrix::from_element(2, 2, 1.0));
        let y = [1u8, 1];
        let p = KlrProblem::full(k, &y, 1e-3).unwrap();
        let sol = fit_klr(&p, 1e-10, 100).unwrap();
        assert!(sol.converged);
        assert!(sol.objective < 2.0 * 2f64.ln());
        // Only a[0] + a[1] is identified; the jittered solve keeps the split balanced.
        assert!((sol.a[0] - sol.a[1]).abs() < 1e-4 * sol.a[0].abs());
    }

    #[test]
    fn predict_examples() {
        let basis = FeatureMatrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let k = KernelSpec::radial(3.0).unwrap();
        let m = KlrModel::new(basis.clone(), vec![0.0], k).unwrap();
        assert_eq!(predict_prob(&m, &[10.0, 3.0]).unwrap(), 0.5);
        let m = KlrModel::new(basis, vec![1.0], k).unwrap();
        let p = predict_prob(&m, &[0.5, -1.0]).unwrap();
        assert!((p - 0.731059).abs() < 1e-6);
        assert!(predict_prob(&m, &[0.5]).is_err());
    }

    #[test]
    fn empty_basis_unconstructible() {
        let basis = FeatureMatrix::new(0, 2, vec![]).unwrap();
        assert!(KlrModel::new(basis, vec![], KernelSpec::linear()).is_err());
    }
}
