//! Soft-margin SVM trained by sequential minimal optimization.
//!
//! The dual `min ½ α'Qα − 1'α` s.t. `0 ≤ α ≤ C`, `y'α = 0`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`, is solved two coordinates at a time. The first
//! coordinate is the maximal KKT violator; the second maximizes the error gap
//! `|E_i − E_j|` against it, which for the gradient form used here is the
//! minimal violator on the opposite side. The decision function is
//! `f(x) = b + Σ α_j y_j K(x, x_j)` and classification uses `sign(f)`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::kernel::{gram_self, KernelFamily, KernelSpec};
use crate::rng;

/// Gammas swept per kernel in the reference grid search.
pub const DEFAULT_GAMMAS: [f64; 10] = [0.001, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];
/// Costs swept per kernel in the reference grid search.
pub const DEFAULT_COSTS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub kernel: KernelSpec,
    pub cost: f64,
    pub smo_tol: f64,
    /// Iteration cap in units of N pair updates; `None` means 10·N.
    pub max_passes: Option<usize>,
}

impl SvmConfig {
    pub fn new(kernel: KernelSpec, cost: f64) -> Self {
        Self {
            kernel,
            cost,
            smo_tol: 1e-3,
            max_passes: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.cost.is_finite() && self.cost > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cost must be > 0, got {}",
                self.cost
            )));
        }
        if !(self.smo_tol > 0.0) {
            return Err(Error::InvalidParameter("smo_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Cost equivalent to the regularization weight of the averaged hinge-loss
/// objective: `C = 1 / (2 N lambda)`.
pub fn cost_from_lambda(n: usize, lambda: f64) -> f64 {
    1.0 / (2.0 * n as f64 * lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_indices: Vec<usize>,
    pub support_vectors: FeatureMatrix,
    /// `y_i α_i` per support vector.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl SvmModel {
    pub fn new(
        support_indices: Vec<usize>,
        support_vectors: FeatureMatrix,
        dual_coeffs: Vec<f64>,
        bias: f64,
        kernel: KernelSpec,
        cost: f64,
    ) -> Result<Self> {
        if dual_coeffs.is_empty() || support_vectors.n_rows() == 0 {
            return Err(Error::Empty("support set"));
        }
        if dual_coeffs.len() != support_vectors.n_rows() || support_indices.len() != dual_coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: support_vectors.n_rows(),
                actual: dual_coeffs.len(),
            });
        }
        Ok(Self {
            support_indices,
            support_vectors,
            dual_coeffs,
            bias,
            kernel,
            cost,
            converged: true,
            iterations: 0,
        })
    }

    pub fn n_support(&self) -> usize {
        self.dual_coeffs.len()
    }

    /// `α_i` per support vector.
    pub fn alphas(&self) -> Vec<f64> {
        self.dual_coeffs.iter().map(|c| c.abs()).collect()
    }
}

pub fn decision_value(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.support_vectors.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: model.support_vectors.n_cols(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query point"));
    }
    Ok(model.bias
        + model
            .support_vectors
            .rows()
            .zip(&model.dual_coeffs)
            .map(|(sv, c)| c * model.kernel.eval_unchecked(x, sv))
            .sum::<f64>())
}

pub fn decision_values(model: &SvmModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    x.rows().map(|r| decision_value(model, r)).collect()
}

/// Raw SMO output over a precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual gradient `Qα − 1`.
    pub grad: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Maps {0, 1} labels to {−1, +1}.
pub fn signed_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect()
}

const TAU: f64 = 1e-12;

/// SMO on Gram `k` with signed labels `y`.
pub fn smo(k: &DMatrix<f64>, y: &[f64], cost: f64, tol: f64, max_iter: usize) -> SmoSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut converged = false;

    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < cost) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < cost);

    while iterations < max_iter {
        let mut i = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut big_m = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m {
                m = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < big_m {
                big_m = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || m - big_m <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = k[(i, i)];
        let kjj = k[(j, j)];
        let kij = k[(i, j)];
        if y[i] != y[j] {
            let mut quad = kii + kjj - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = cost - diff;
                }
            } else if alpha[j] > cost {
                alpha[j] = cost;
                alpha[i] = cost + diff;
            }
        } else {
            let mut quad = kii + kjj - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > cost {
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = sum - cost;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cost {
                if alpha[j] > cost {
                    alpha[j] = cost;
                    alpha[i] = sum - cost;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        alpha[i] = alpha[i].clamp(0.0, cost);
        alpha[j] = alpha[j].clamp(0.0, cost);

        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (k[(t, i)] * di + k[(t, j)] * dj);
        }
    }

    let bias = bias_from_gradient(&alpha, &grad, y, cost);
    SmoSolution {
        alpha,
        bias,
        grad,
        converged,
        iterations,
    }
}

/// Mean of `−y_i G_i` over free vectors; otherwise the midpoint of the
/// feasible interval.
fn bias_from_gradient(alpha: &[f64], grad: &[f64], y: &[f64], cost: f64) -> f64 {
    let mut sum = 0.0;
    let mut n_free = 0usize;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for t in 0..y.len() {
        let v = -y[t] * grad[t];
        let a = alpha[t];
        if a > 0.0 && a < cost {
            sum += v;
            n_free += 1;
        } else {
            let at_lower = a <= 0.0;
            // Vectors only in the "up" set bound b from below, "low" from above.
            if (y[t] > 0.0) == at_lower {
                lo = lo.max(v);
            } else {
                hi = hi.min(v);
            }
        }
    }
    if n_free > 0 {
        sum / n_free as f64
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else {
        hi
    }
}

/// Dual objective `1'α − ½ α'Qα` (to be maximized).
pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

fn max_iter_for(config: &SvmConfig, n: usize) -> usize {
    config.max_passes.unwrap_or(10 * n).saturating_mul(n).max(1)
}

fn model_from_solution(
    data: &Dataset,
    rows: &[usize],
    sol: &SmoSolution,
    y: &[f64],
    config: &SvmConfig,
) -> Result<SvmModel> {
    let mut support_indices = Vec::new();
    let mut dual_coeffs = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_indices.push(rows[t]);
            dual_coeffs.push(a * y[t]);
        }
    }
    let support_vectors = data.x.select_rows(&support_indices);
    let mut model = SvmModel::new(
        support_indices,
        support_vectors,
        dual_coeffs,
        sol.bias,
        config.kernel,
        config.cost,
    )?;
    model.converged = sol.converged;
    model.iterations = sol.iterations;
    Ok(model)
}

pub fn fit_svm(data: &Dataset, config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    data.require_both_classes()?;
    let k = gram_self(&config.kernel, &data.x)?;
    let y = signed_labels(&data.y);
    let sol = smo(&k.values, &y, config.cost, config.smo_tol, max_iter_for(config, data.len()));
    if !sol.converged {
        log::warn!(
            "SMO stopped after {} iterations without meeting tol {}",
            sol.iterations,
            config.smo_tol
        );
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    model_from_solution(data, &rows, &sol, &y, config)
}

/// Fits on the rows `rows` of `data` reusing a full Gram matrix.
fn fit_on_rows(data: &Dataset, gram: &DMatrix<f64>, rows: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    let k = DMatrix::from_fn(rows.len(), rows.len(), |i, j| gram[(rows[i], rows[j])]);
    let y: Vec<f64> = rows
        .iter()
        .map(|&r| if data.y[r] == 1 { 1.0 } else { -1.0 })
        .collect();
    let sol = smo(&k, &y, config.cost, config.smo_tol, max_iter_for(config, rows.len()));
    model_from_solution(data, rows, &sol, &y, config)
}

/// Stratified fold assignment: each class is shuffled then dealt round-robin.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("folds must be >= 2, got {folds}")));
    }
    let mut assignment = vec![0usize; labels.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng::stream(seed, &[rng::tag::CV, u64::from(class)]));
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    for fold in 0..folds {
        for class in [0u8, 1] {
            let in_test = (0..labels.len()).any(|i| assignment[i] == fold && labels[i] == class);
            let in_train = (0..labels.len()).any(|i| assignment[i] != fold && labels[i] == class);
            if !in_test || !in_train {
                return Err(Error::Stratification { fold });
            }
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub kernel: KernelFamily,
    pub gamma: f64,
    pub cost: f64,
    pub cv_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: SvmConfig,
    pub best_error: f64,
    pub table: Vec<GridRow>,
}

/// Cross-validated misclassification error over `kernels × gammas × costs`
/// (rows in that nesting order). The linear kernel ignores gamma, so its rows
/// repeat one computation per cost.
pub fn grid_search(
    data: &Dataset,
    kernels: &[KernelFamily],
    gammas: &[f64],
    costs: &[f64],
    folds: usize,
    seed: u64,
    base: &SvmConfig,
) -> Result<GridResult> {
    if kernels.is_empty() || gammas.is_empty() || costs.is_empty() {
        return Err(Error::Empty("grid"));
    }
    data.require_both_classes()?;
    let assignment = stratified_folds(&data.y, folds, seed)?;

    let mut cells = Vec::new();
    for &family in kernels {
        for &gamma in gammas {
            for &cost in costs {
                cells.push((family, gamma, cost));
            }
        }
    }
    // Distinct kernels, each needing one Gram matrix.
    let mut kernel_keys: Vec<(KernelFamily, u64)> = Vec::new();
    for &(family, gamma, _) in &cells {
        let key = kernel_key(family, gamma);
        if !kernel_keys.contains(&key) {
            kernel_keys.push(key);
        }
    }

    let mut errors: Vec<Option<f64>> = vec![None; cells.len()];
    for key in &kernel_keys {
        let kernel = KernelSpec::new(key.0, f64::from_bits(key.1))?;
        let gram = gram_self(&kernel, &data.x)?.values;
        let mut seen_costs: Vec<u64> = Vec::new();
        let todo: Vec<(usize, f64)> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| kernel_key(c.0, c.1) == *key)
            .filter_map(|(idx, c)| {
                if seen_costs.contains(&c.2.to_bits()) {
                    None
                } else {
                    seen_costs.push(c.2.to_bits());
                    Some((idx, c.2))
                }
            })
            .collect();
        let results: Vec<(f64, Result<f64>)> = todo
            .par_iter()
            .map(|&(_, cost)| {
                let config = SvmConfig {
                    kernel,
                    cost,
                    ..*base
                };
                (cost, cv_error(data, &gram, &assignment, folds, &config))
            })
            .collect();
        for (cost, err) in results {
            let err = err?;
            for (idx, c) in cells.iter().enumerate() {
                if kernel_key(c.0, c.1) == *key && c.2.to_bits() == cost.to_bits() {
                    errors[idx] = Some(err);
                }
            }
        }
    }

    let table: Vec<GridRow> = cells
        .iter()
        .zip(&errors)
        .map(|(&(kernel, gamma, cost), e)| GridRow {
            kernel,
            gamma,
            cost,
            cv_error: e.expect("every cell evaluated"),
        })
        .collect();
    let mut best_idx = 0;
    for (i, row) in table.iter().enumerate() {
        if row.cv_error < table[best_idx].cv_error {
            best_idx = i;
        }
    }
    let row = &table[best_idx];
    let best = SvmConfig {
        kernel: KernelSpec::new(row.kernel, row.gamma)?,
        cost: row.cost,
        ..*base
    };
    Ok(GridResult {
        best,
        best_error: row.cv_error,
        table,
    })
}

fn kernel_key(family: KernelFamily, gamma: f64) -> (KernelFamily, u64) {
    match family {
        KernelFamily::Linear => (family, 0f64.to_bits()),
        KernelFamily::Radial => (family, gamma.to_bits()),
    }
}

fn cv_error(
    data: &Dataset,
    gram: &DMatrix<f64>,
    assignment: &[usize],
    folds: usize,
    config: &SvmConfig,
) -> Result<f64> {
    let mut wrong = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == fold).collect();
        let model = fit_on_rows(data, gram, &train, config)?;
        for &t in &test {
            let f = model.bias
                + model
                    .support_indices
                    .iter()
                    .zip(&model.dual_coeffs)
                    .map(|(&s, c)| c * gram[(t, s)])
                    .sum::<f64>();
            let predicted = u8::from(f > 0.0);
            if predicted != data.y[t] {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}
