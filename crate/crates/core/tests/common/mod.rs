//! Independent oracles and fixtures shared by the integration suites.
//!
//! Nothing here calls into the library's numerical code: kernels, KLR
//! objectives, the SVM dual and the pairwise AUC are written out in plain
//! `Vec<f64>` arithmetic so they can check it.
#![allow(dead_code)]

use ivmkit::{Dataset, FeatureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two Gaussian classes in 2-D with unit variance and centres `±sep/2` on the diagonal.
pub fn two_blob(n: usize, sep: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let c = if label == 1 { sep / 2.0 } else { -sep / 2.0 } / std::f64::consts::SQRT_2;
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        rows.push(vec![c + a, c + b]);
        y.push(label);
    }
    Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y).unwrap()
}

/// Small random problem with labels drawn from a noisy linear rule.
pub fn random_problem(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    loop {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.5..1.5)).collect()).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|x| u8::from(x.iter().sum::<f64>() + r.gen_range(-1.0..1.0) > 0.0))
            .collect();
        if y.contains(&0) && y.contains(&1) {
            return Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y).unwrap();
        }
    }
}

pub fn rows(d: &Dataset) -> Vec<Vec<f64>> {
    d.x.rows().map(|r| r.to_vec()).collect()
}

pub fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    (-gamma * x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

pub fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// Dense kernel matrix; `gamma = None` means linear.
pub fn kernel_matrix(xs: &[Vec<f64>], gamma: Option<f64>) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|a| {
            xs.iter()
                .map(|b| match gamma {
                    Some(g) => rbf(a, b, g),
                    None => dot(a, b),
                })
                .collect()
        })
        .collect()
}

fn matvec(k: &[Vec<f64>], a: &[f64]) -> Vec<f64> {
    k.iter().map(|row| dot(row, a)).collect()
}

fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

fn sigmoid(f: f64) -> f64 {
    1.0 / (1.0 + (-f).exp())
}

/// Full-basis KLR objective `-y'Ka + Σ softplus(Ka) + λ/2 a'Ka`.
pub fn klr_objective(k: &[Vec<f64>], y: &[u8], lambda: f64, a: &[f64]) -> f64 {
    let f = matvec(k, a);
    let mut h = 0.0;
    for i in 0..y.len() {
        h += softplus(f[i]) - f64::from(y[i]) * f[i];
    }
    h + 0.5 * lambda * dot(a, &f)
}

pub fn klr_gradient(k: &[Vec<f64>], y: &[u8], lambda: f64, a: &[f64]) -> Vec<f64> {
    let f = matvec(k, a);
    let r: Vec<f64> = (0..y.len()).map(|i| sigmoid(f[i]) - f64::from(y[i]) + lambda * a[i]).collect();
    // K symmetric: ∇ = K (p − y) + λ K a = K (p − y + λ a).
    matvec(k, &r)
}

/// Nesterov-accelerated gradient descent with a fixed 1/L step, run long.
pub fn klr_gd_oracle(k: &[Vec<f64>], y: &[u8], lambda: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    // Power iteration for ‖K‖₂; the Hessian is bounded by K(1/4 + λ)K... ≤ ‖K‖(‖K‖/4 + λ).
    let mut v = vec![1.0; n];
    let mut norm = 0.0;
    for _ in 0..200 {
        let w = matvec(k, &v);
        norm = dot(&w, &w).sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let l = norm * (norm / 4.0 + lambda);
    let step = 1.0 / l;
    let mut a = vec![0.0; n];
    let mut prev = a.clone();
    for t in 0..iters {
        let beta = t as f64 / (t as f64 + 3.0);
        let z: Vec<f64> = (0..n).map(|i| a[i] + beta * (a[i] - prev[i])).collect();
        let g = klr_gradient(k, y, lambda, &z);
        prev = a;
        a = (0..n).map(|i| z[i] - step * g[i]).collect();
    }
    let h = klr_objective(k, y, lambda, &a);
    (a, h)
}

/// Root of a continuous increasing function on `[lo, hi]` by bisection.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    assert!(f(lo) <= 0.0 && f(hi) >= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Optimal objective of the one-column subproblem with basis point `l`:
/// `H(a) = Σ softplus(a K_il) − y_i a K_il + λ/2 a² K_ll`, minimised by
/// bisection on its derivative.
pub fn singleton_objective(k: &[Vec<f64>], y: &[u8], lambda: f64, l: usize) -> f64 {
    let col: Vec<f64> = k.iter().map(|row| row[l]).collect();
    let h = |a: f64| -> f64 {
        col.iter()
            .zip(y)
            .map(|(c, &yi)| softplus(a * c) - f64::from(yi) * a * c)
            .sum::<f64>()
            + 0.5 * lambda * a * a * k[l][l]
    };
    let dh = |a: f64| -> f64 {
        col.iter().zip(y).map(|(c, &yi)| (sigmoid(a * c) - f64::from(yi)) * c).sum::<f64>() + lambda * a * k[l][l]
    };
    let mut hi = 1.0;
    while dh(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = -1.0;
    while dh(lo) > 0.0 {
        lo *= 2.0;
    }
    h(bisect(lo, hi, dh))
}

/// SVM dual `Σα − ½ Σ α_i α_j y_i y_j K_ij`.
pub fn svm_dual(k: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 ≤ α ≤ C, y'α = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - mu * yi).clamp(0.0, c)).collect() };
    let g = |mu: f64| -> f64 { dot(&at(mu), y) };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // g is non-increasing in mu.
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient ascent on the SVM dual.
pub fn svm_qp_oracle(k: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> Vec<f64> {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect()).collect();
    let mut v = vec![1.0; n];
    let mut norm = 0.0;
    for _ in 0..200 {
        let w = matvec(&q, &v);
        norm = dot(&w, &w).sqrt().max(1e-12);
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / norm;
    let mut a = vec![0.0; n];
    let mut prev = a.clone();
    for t in 0..iters {
        let beta = t as f64 / (t as f64 + 3.0);
        let z: Vec<f64> = (0..n).map(|i| a[i] + beta * (a[i] - prev[i])).collect();
        let qz = matvec(&q, &z);
        let ascent: Vec<f64> = (0..n).map(|i| z[i] + step * (1.0 - qz[i])).collect();
        prev = a;
        a = project(&ascent, y, c);
    }
    a
}

/// `(wins + ties/2) / (P·N)` by explicit pair enumeration, as the exact
/// rational `(2·wins + ties) / (2·P·N)`.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice: u64 = 0;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            p += 1;
        } else {
            n += 1;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
