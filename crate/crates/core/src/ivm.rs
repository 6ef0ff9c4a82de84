//! Import vector machine: kernel logistic regression whose basis is grown one
//! training point at a time.
//!
//! Starting from an empty import set `S`, every remaining point `l` is scored
//! by fitting the subproblem with basis `S ∪ {l}` (regressor rows over all N
//! training points), and the point with the lowest objective joins `S`. This
//! repeats until the objective stops improving or the import cap is reached.
//!
//! Each subproblem is warm-started from the previous coefficients padded with
//! a zero for the new column, which reproduces the previous objective exactly;
//! the damped Newton iterations can therefore only improve on it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::kernel::{gram_self, GramMatrix, KernelSpec};
use crate::klr::{
    self, cholesky_checked, fit_klr_from, halving_search, irls_weights, newton_step, softplus,
    KlrModel, KlrProblem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Every candidate subproblem is solved to convergence.
    Exact,
    /// Every candidate gets one damped Newton step; the winner is then refit
    /// to convergence.
    OneStep,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SelectionMode::Exact),
            "onestep" | "one-step" => Ok(SelectionMode::OneStep),
            other => Err(Error::InvalidParameter(format!(
                "unknown selection mode '{other}'"
            ))),
        }
    }
}

/// Training points above which `OneStep` is the recommended mode.
pub const ONESTEP_THRESHOLD: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct IvmConfig {
    pub kernel: KernelSpec,
    pub lambda: f64,
    /// Relative objective change below which growth stops.
    pub conv_tol: f64,
    /// Compare `H_k` against `H_{k-conv_lag}`.
    pub conv_lag: usize,
    /// Import cap; `None` means N.
    pub max_import: Option<usize>,
    pub selection_mode: SelectionMode,
    pub klr_tol: f64,
    pub klr_max_iter: usize,
}

impl IvmConfig {
    pub fn new(kernel: KernelSpec, lambda: f64) -> Self {
        Self {
            kernel,
            lambda,
            conv_tol: 1e-4,
            conv_lag: 1,
            max_import: None,
            selection_mode: SelectionMode::Exact,
            klr_tol: klr::DEFAULT_TOL,
            klr_max_iter: klr::DEFAULT_MAX_ITER,
        }
    }

    /// `Exact` for small sets, `OneStep` above [`ONESTEP_THRESHOLD`] points.
    pub fn with_auto_mode(mut self, n: usize) -> Self {
        self.selection_mode = if n > ONESTEP_THRESHOLD {
            SelectionMode::OneStep
        } else {
            SelectionMode::Exact
        };
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.conv_tol >= 0.0) {
            return Err(Error::InvalidParameter("conv_tol must be >= 0".into()));
        }
        if self.conv_lag == 0 {
            return Err(Error::InvalidParameter("conv_lag must be >= 1".into()));
        }
        if let Some(m) = self.max_import {
            if m == 0 || m > n {
                return Err(Error::InvalidParameter(format!(
                    "max_import must be in 1..={n}, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// A fitted import vector machine.
#[derive(Debug, Clone, PartialEq)]
pub struct IvmModel {
    /// Training indices of the import points, in selection order.
    pub import_indices: Vec<usize>,
    /// Import points and their coefficients.
    pub expansion: KlrModel,
    pub lambda: f64,
    /// Objective after each greedy addition.
    pub history: Vec<f64>,
}

impl IvmModel {
    pub fn new(
        import_indices: Vec<usize>,
        expansion: KlrModel,
        lambda: f64,
        history: Vec<f64>,
    ) -> Result<Self> {
        let q = expansion.coef.len();
        if q == 0 {
            return Err(Error::Empty("import set"));
        }
        if import_indices.len() != q || history.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                actual: import_indices.len().min(history.len()),
            });
        }
        let mut seen = import_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate import index".into()));
        }
        Ok(Self {
            import_indices,
            expansion,
            lambda,
            history,
        })
    }

    pub fn n_import(&self) -> usize {
        self.import_indices.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.expansion.kernel
    }

    pub fn objective(&self) -> f64 {
        *self.history.last().expect("non-empty history")
    }
}

pub fn predict_ivm(model: &IvmModel, x: &[f64]) -> Result<f64> {
    klr::predict_prob(&model.expansion, x)
}

/// Objective and coefficients of one candidate subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFit {
    pub objective: f64,
    pub a: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyChoice {
    pub chosen: usize,
    pub objective: f64,
    pub a: DVector<f64>,
}

/// Holds the training Gram matrix and runs the greedy search.
pub struct IvmFitter<'a> {
    data: &'a Dataset,
    config: IvmConfig,
    gram: GramMatrix,
}

impl<'a> IvmFitter<'a> {
    pub fn new(data: &'a Dataset, config: IvmConfig) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Insufficient(format!(
                "IVM needs at least 2 observations, got {}",
                data.len()
            )));
        }
        data.require_both_classes()?;
        config.validate(data.len())?;
        let gram = gram_self(&config.kernel, &data.x)?;
        Ok(Self { data, config, gram })
    }

    pub fn config(&self) -> &IvmConfig {
        &self.config
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// The subproblem with basis columns `cols`.
    pub fn subproblem(&self, cols: &[usize]) -> Result<KlrProblem<'a>> {
        KlrProblem::new(
            self.gram.select_columns(cols),
            self.gram.select(cols, cols),
            &self.data.y,
            self.config.lambda,
        )
    }

    fn check_candidate(&self, import_set: &[usize], a_prev: &DVector<f64>, candidate: usize) -> Result<()> {
        if candidate >= self.data.len() {
            return Err(Error::InvalidParameter(format!(
                "candidate {candidate} out of range"
            )));
        }
        if import_set.contains(&candidate) {
            return Err(Error::InvalidParameter(format!(
                "candidate {candidate} already imported"
            )));
        }
        if a_prev.len() != import_set.len() {
            return Err(Error::DimensionMismatch {
                expected: import_set.len(),
                actual: a_prev.len(),
            });
        }
        Ok(())
    }

    /// Fits the subproblem over `import_set ∪ {candidate}` using the direct
    /// solver path. `a_prev` holds the coefficients of `import_set`.
    pub fn candidate_objective(
        &self,
        import_set: &[usize],
        a_prev: &DVector<f64>,
        candidate: usize,
    ) -> Result<CandidateFit> {
        self.check_candidate(import_set, a_prev, candidate)?;
        self.candidate_direct(import_set, a_prev, candidate)
            .map_err(|e| Error::Candidate {
                candidate,
                source: Box::new(e),
            })
    }

    fn candidate_direct(
        &self,
        import_set: &[usize],
        a_prev: &DVector<f64>,
        candidate: usize,
    ) -> Result<CandidateFit> {
        let mut cols = import_set.to_vec();
        cols.push(candidate);
        let problem = self.subproblem(&cols)?;
        let a0 = pad(a_prev);
        match self.config.selection_mode {
            SelectionMode::Exact => {
                let sol = fit_klr_from(&problem, a0, self.config.klr_tol, self.config.klr_max_iter)?;
                if !sol.converged {
                    log::debug!("candidate {candidate}: subproblem hit max_iter");
                }
                Ok(CandidateFit {
                    objective: sol.objective,
                    a: sol.a,
                })
            }
            SelectionMode::OneStep => {
                let h0 = klr::nll_objective(&problem, &a0)?;
                let proposal = newton_step(&problem, &a0)?;
                let delta = proposal - &a0;
                let ls = halving_search(&problem, &a0, h0, &delta);
                Ok(CandidateFit {
                    objective: ls.objective,
                    a: ls.a,
                })
            }
        }
    }

    /// Scores every index in `remaining` and returns the minimizer; ties go to
    /// the lowest index.
    pub fn greedy_step(
        &self,
        import_set: &[usize],
        a_prev: &DVector<f64>,
        remaining: &[usize],
    ) -> Result<GreedyChoice> {
        if remaining.is_empty() {
            return Err(Error::Empty("remaining candidate set"));
        }
        let fast = match self.config.selection_mode {
            SelectionMode::OneStep => OneStepScan::prepare(self, import_set, a_prev)?,
            SelectionMode::Exact => None,
        };
        let results: Vec<(usize, Result<CandidateFit>)> = remaining
            .par_iter()
            .map(|&l| {
                let fit = match &fast {
                    Some(scan) => match scan.candidate(self, l) {
                        Some(fit) => Ok(fit),
                        None => self.candidate_objective(import_set, a_prev, l),
                    },
                    None => self.candidate_objective(import_set, a_prev, l),
                };
                (l, fit)
            })
            .collect();

        let mut best: Option<(usize, CandidateFit)> = None;
        let mut failures = 0usize;
        for (l, fit) in results {
            match fit {
                Ok(fit) if fit.objective.is_finite() => {
                    let better = match &best {
                        None => true,
                        Some((bl, bf)) => {
                            fit.objective < bf.objective || (fit.objective == bf.objective && l < *bl)
                        }
                    };
                    if better {
                        best = Some((l, fit));
                    }
                }
                Ok(_) => failures += 1,
                Err(e) => {
                    log::warn!("{e}");
                    failures += 1;
                }
            }
        }
        let (chosen, fit) = best.ok_or(Error::AllCandidatesFailed(failures))?;
        Ok(GreedyChoice {
            chosen,
            objective: fit.objective,
            a: fit.a,
        })
    }

    pub fn fit(&self) -> Result<IvmModel> {
        let n = self.data.len();
        let cap = self.config.max_import.unwrap_or(n);
        let baseline = n as f64 * std::f64::consts::LN_2;

        let mut import_set: Vec<usize> = Vec::new();
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut a = DVector::zeros(0);
        let mut history: Vec<f64> = Vec::new();
        let mut best: Option<(usize, DVector<f64>)> = None;

        while import_set.len() < cap && !remaining.is_empty() {
            let step = self.greedy_step(&import_set, &a, &remaining)?;
            import_set.push(step.chosen);
            remaining.retain(|&r| r != step.chosen);

            let (objective, coef) = match self.config.selection_mode {
                SelectionMode::Exact => (step.objective, step.a),
                SelectionMode::OneStep => {
                    let problem = self.subproblem(&import_set)?;
                    let sol = fit_klr_from(&problem, step.a, self.config.klr_tol, self.config.klr_max_iter)?;
                    (sol.objective, sol.a)
                }
            };
            a = coef;
            history.push(objective);

            let k = history.len();
            if best
                .as_ref()
                .is_none_or(|(bk, _)| objective < history[*bk])
            {
                best = Some((k - 1, a.clone()));
            }
            if k >= self.config.conv_lag {
                let lagged = if k == self.config.conv_lag {
                    baseline
                } else {
                    history[k - 1 - self.config.conv_lag]
                };
                let rel = (objective - lagged).abs() / objective.abs().max(f64::MIN_POSITIVE);
                if rel < self.config.conv_tol {
                    break;
                }
            }
        }

        let (best_k, coef) = best.ok_or(Error::Empty("import set"))?;
        import_set.truncate(best_k + 1);
        history.truncate(best_k + 1);
        let basis = self.data.x.select_rows(&import_set);
        let expansion = KlrModel::new(basis, coef.iter().copied().collect(), self.config.kernel)?;
        IvmModel::new(import_set, expansion, self.config.lambda, history)
    }
}

fn pad(a: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + 1);
    out.rows_mut(0, a.len()).copy_from(a);
    out
}

/// Quantities shared by every OneStep candidate at a given import set.
///
/// With the previous coefficients padded by zero, the fitted values, IRLS
/// weights and working response are the same for every candidate, so the
/// Newton system differs only in its last row and column. The import-set
/// block is factored once and each candidate's system is completed by a
/// rank-one Cholesky extension.
struct OneStepScan {
    q: usize,
    lambda: f64,
    cols: Vec<usize>,
    a_prev: DVector<f64>,
    f: DVector<f64>,
    labels: Vec<f64>,
    /// Cholesky factor of the import-set block, when q > 0.
    l_block: Option<DMatrix<f64>>,
    min_pivot_sq: f64,
    max_diag: f64,
    /// `L^-1 r_S`.
    u_s: DVector<f64>,
    /// `K_S' diag(w) K`, q x N.
    cross: DMatrix<f64>,
    /// `K' (w ∘ z)`, length N.
    rhs_all: DVector<f64>,
    /// `sum_i w_i K_il^2 + lambda K_ll`, length N.
    corner: DVector<f64>,
    /// `K_SS a_prev`.
    reg_v: DVector<f64>,
    reg0: f64,
    h0: f64,
}

const PIVOT_TOL: f64 = 1e-12;

impl OneStepScan {
    fn prepare(fitter: &IvmFitter<'_>, import_set: &[usize], a_prev: &DVector<f64>) -> Result<Option<Self>> {
        let k = &fitter.gram.values;
        let n = k.nrows();
        let q = import_set.len();
        let lambda = fitter.config.lambda;
        let labels: Vec<f64> = fitter.data.y.iter().map(|&v| f64::from(v)).collect();

        let ks = k.select_columns(import_set);
        let f = &ks * a_prev;
        let (w, z) = irls_weights(&f, &fitter.data.y);
        let wz = w.component_mul(&z);

        let mut kw_s = ks.clone();
        for (i, mut row) in kw_s.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let cross = kw_s.tr_mul(k);
        let rhs_all = k.tr_mul(&wz);
        let mut corner = DVector::zeros(n);
        for l in 0..n {
            let col = k.column(l);
            let s: f64 = col.iter().zip(w.iter()).map(|(kv, wv)| wv * kv * kv).sum();
            corner[l] = s + lambda * k[(l, l)];
        }

        let kss = k.select_rows(import_set).select_columns(import_set);
        let reg_v = &kss * a_prev;
        let reg0 = a_prev.dot(&reg_v);
        let h0: f64 = f
            .iter()
            .zip(&labels)
            .map(|(&fi, &yi)| softplus(fi) - yi * fi)
            .sum::<f64>()
            + 0.5 * lambda * reg0;

        let (l_block, min_pivot_sq, max_diag, u_s) = if q == 0 {
            (None, f64::INFINITY, 0.0, DVector::zeros(0))
        } else {
            let block = cross.select_columns(import_set) + &kss * lambda;
            let max_diag = block.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let Some(chol) = cholesky_checked(block) else {
                return Ok(None);
            };
            let l = chol.unpack();
            let min_pivot_sq = (0..q).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            let r_s = ks.tr_mul(&wz);
            let u_s = l
                .solve_lower_triangular(&r_s)
                .ok_or(Error::Singular { jitter: 0.0 })?;
            (Some(l), min_pivot_sq, max_diag, u_s)
        };

        Ok(Some(Self {
            q,
            lambda,
            cols: import_set.to_vec(),
            a_prev: a_prev.clone(),
            f,
            labels,
            l_block,
            min_pivot_sq,
            max_diag,
            u_s,
            cross,
            rhs_all,
            corner,
            reg_v,
            reg0,
            h0,
        }))
    }

    /// One damped Newton step for candidate `l`; `None` asks the caller to use
    /// the direct path (the extended system needs jitter).
    fn candidate(&self, fitter: &IvmFitter<'_>, l: usize) -> Option<CandidateFit> {
        let k = &fitter.gram.values;
        let q = self.q;
        let c = self.corner[l];
        let floor = PIVOT_TOL * self.max_diag.max(c.abs()).max(f64::MIN_POSITIVE);
        if !(self.min_pivot_sq > floor) {
            return None;
        }

        let k_sl = DVector::from_iterator(q, self.cols.iter().map(|&j| k[(j, l)]));
        let (a_s, a_l) = match &self.l_block {
            None => {
                if !(c > floor) {
                    return None;
                }
                (DVector::zeros(0), self.rhs_all[l] / c)
            }
            Some(lb) => {
                let b = self.cross.column(l).into_owned() + &k_sl * self.lambda;
                let lv = lb.solve_lower_triangular(&b)?;
                let s2 = c - lv.dot(&lv);
                if !(s2 > floor) {
                    return None;
                }
                let s = s2.sqrt();
                let u_l = (self.rhs_all[l] - lv.dot(&self.u_s)) / s;
                let a_l = u_l / s;
                let a_s = lb.tr_solve_lower_triangular(&(&self.u_s - &lv * a_l))?;
                (a_s, a_l)
            }
        };

        // Direction and objective along a(t) = a_prev_padded + t * delta.
        let delta_s = &a_s - &self.a_prev;
        let k_l = k.column(l);
        let mut g = DVector::zeros(k.nrows());
        for (j, &col) in self.cols.iter().enumerate() {
            g.axpy(delta_s[j], &k.column(col), 1.0);
        }
        g.axpy(a_l, &k_l, 1.0);
        let lin = delta_s.dot(&self.reg_v) + a_l * k_sl.dot(&self.a_prev);
        let quad = {
            let kss_d = DVector::from_iterator(
                q,
                self.cols.iter().map(|&i| {
                    self.cols
                        .iter()
                        .zip(delta_s.iter())
                        .map(|(&j, dj)| k[(i, j)] * dj)
                        .sum::<f64>()
                }),
            );
            delta_s.dot(&kss_d) + 2.0 * a_l * delta_s.dot(&k_sl) + a_l * a_l * k[(l, l)]
        };
        let objective_at = |t: f64| -> f64 {
            let fit: f64 = self
                .f
                .iter()
                .zip(g.iter())
                .zip(&self.labels)
                .map(|((&fi, &gi), &yi)| {
                    let v = fi + t * gi;
                    softplus(v) - yi * v
                })
                .sum();
            fit + 0.5 * self.lambda * (self.reg0 + 2.0 * t * lin + t * t * quad)
        };

        let mut t = 1.0;
        for _ in 0..=30 {
            let h = objective_at(t);
            if h <= self.h0 {
                let mut a = DVector::zeros(q + 1);
                for j in 0..q {
                    a[j] = self.a_prev[j] + t * delta_s[j];
                }
                a[q] = t * a_l;
                return Some(CandidateFit { objective: h, a });
            }
            t *= 0.5;
        }
        Some(CandidateFit {
            objective: self.h0,
            a: pad(&self.a_prev),
        })
    }
}

/// Scores one candidate; builds the training Gram on each call.
pub fn candidate_objective(
    data: &Dataset,
    import_set: &[usize],
    a_prev: &DVector<f64>,
    candidate: usize,
    config: &IvmConfig,
) -> Result<CandidateFit> {
    IvmFitter::new(data, config.clone())?.candidate_objective(import_set, a_prev, candidate)
}

pub fn greedy_step(
    data: &Dataset,
    import_set: &[usize],
    a_prev: &DVector<f64>,
    remaining: &[usize],
    config: &IvmConfig,
) -> Result<GreedyChoice> {
    IvmFitter::new(data, config.clone())?.greedy_step(import_set, a_prev, remaining)
}

pub fn fit_ivm(data: &Dataset, config: &IvmConfig) -> Result<IvmModel> {
    IvmFitter::new(data, config.clone())?.fit()
}

/// Probabilities for every row of `x`.
pub fn predict_ivm_batch(model: &IvmModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    x.rows().map(|r| predict_ivm(model, r)).collect()
}
