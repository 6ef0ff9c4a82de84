mod common;

use common::*;
use ivmkit::kernel::{gram_self, kernel_eval};
use ivmkit::klr::{self, fit_klr, gradient, newton_step, nll_objective, KlrModel, KlrProblem};
use ivmkit::{Dataset, FeatureMatrix, GramMatrix, KernelSpec};
use nalgebra::{DMatrix, DVector};

fn problem_for<'a>(data: &'a Dataset, spec: &KernelSpec, lambda: f64) -> KlrProblem<'a> {
    KlrProblem::full(gram_self(spec, &data.x).unwrap(), &data.y, lambda).unwrap()
}

#[test]
fn gram_matches_entrywise_loop() {
    let data = random_problem(20, 3, 1);
    let spec = KernelSpec::radial(1.0).unwrap();
    let g = gram_self(&spec, &data.x).unwrap();
    let xs = rows(&data);
    for i in 0..20 {
        for j in 0..20 {
            assert_eq!(g.get(i, j), kernel_eval(&spec, &xs[i], &xs[j]).unwrap());
            assert!((g.get(i, j) - rbf(&xs[i], &xs[j], 1.0)).abs() < 1e-15);
        }
    }
}

#[test]
fn objective_matches_independent_evaluation() {
    for seed in 0..5 {
        let data = random_problem(25, 2, seed);
        let spec = KernelSpec::radial(0.7).unwrap();
        let p = problem_for(&data, &spec, 0.3);
        let mut r = rng(100 + seed);
        let a: Vec<f64> = (0..25).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let k = kernel_matrix(&rows(&data), Some(0.7));
        let ours = nll_objective(&p, &DVector::from_vec(a.clone())).unwrap();
        assert!(rel_diff(ours, klr_objective(&k, &data.y, 0.3, &a)) < 1e-10);
    }
}

#[test]
fn gradient_matches_central_differences() {
    for (seed, spec) in [(0, KernelSpec::linear()), (1, KernelSpec::radial(0.5).unwrap())] {
        let data = random_problem(15, 3, seed);
        let p = problem_for(&data, &spec, 0.8);
        let a = DVector::from_fn(15, |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.1);
        let g = gradient(&p, &a).unwrap();
        for i in 0..15 {
            let h = 1e-5;
            let mut up = a.clone();
            let mut dn = a.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (nll_objective(&p, &up).unwrap() - nll_objective(&p, &dn).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "coordinate {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn newton_hand_case() {
    for lambda in [0.25, 1.0] {
        let k = GramMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0));
        let y = [1u8];
        let p = KlrProblem::full(k, &y, lambda).unwrap();
        let a = newton_step(&p, &DVector::zeros(1)).unwrap();
        assert!((a[0] - 0.5 / (0.25 + lambda)).abs() < 1e-12);
    }
}

#[test]
fn newton_step_matches_finite_difference_direction() {
    let data = random_problem(10, 2, 9);
    let p = problem_for(&data, &KernelSpec::radial(1.0).unwrap(), 0.5);
    let a0 = DVector::zeros(10);
    let step = newton_step(&p, &a0).unwrap();
    // Hessian by central differences of the closed-form gradient, itself checked above.
    let h = 1e-5;
    let mut hess = DMatrix::zeros(10, 10);
    for j in 0..10 {
        let mut up = a0.clone();
        let mut dn = a0.clone();
        up[j] += h;
        dn[j] -= h;
        let col = (gradient(&p, &up).unwrap() - gradient(&p, &dn).unwrap()) / (2.0 * h);
        hess.set_column(j, &col);
    }
    let g = gradient(&p, &a0).unwrap();
    let want = -hess.lu().solve(&g).unwrap();
    // Compare through the fitted values; the RBF Gram is ill-conditioned in `a`.
    let k = p.regressor();
    let got_f = k * &step;
    let want_f = k * &want;
    assert!((got_f - &want_f).norm() <= 1e-6 * want_f.norm());
}

#[test]
fn fit_matches_gradient_descent_oracle() {
    let mut r = rng(42);
    for seed in 0..5u64 {
        let n = 20 + (seed as usize * 5);
        let data = random_problem(n, 2, 500 + seed);
        let (spec, gamma) = if seed % 2 == 0 {
            (KernelSpec::linear(), None)
        } else {
            (KernelSpec::radial(0.5).unwrap(), Some(0.5))
        };
        let lambda = rand::Rng::gen_range(&mut r, 0.1..2.0);
        let sol = fit_klr(&problem_for(&data, &spec, lambda), 1e-10, 100).unwrap();
        let (_, h) = klr_gd_oracle(&kernel_matrix(&rows(&data), gamma), &data.y, lambda, 100_000);
        assert!(rel_diff(sol.objective, h) < 1e-6, "seed {seed}: {} vs {h}", sol.objective);
        assert!(sol.objective <= h * (1.0 + 1e-12));
    }
}

#[test]
fn single_point_fixed_point_by_bisection() {
    let k = GramMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0));
    let y = [1u8];
    let p = KlrProblem::full(k, &y, 0.25).unwrap();
    let sol = fit_klr(&p, 1e-12, 100).unwrap();
    let root = bisect(0.0, 10.0, |a| 0.25 * a - (1.0 - 1.0 / (1.0 + (-a).exp())));
    assert!((sol.a[0] - root).abs() < 1e-8);
}

#[test]
fn score_equation_holds_at_optimum() {
    let data = random_problem(30, 2, 77);
    let lambda = 0.4;
    let p = problem_for(&data, &KernelSpec::radial(1.0).unwrap(), lambda);
    let sol = fit_klr(&p, 1e-12, 100).unwrap();
    let model = KlrModel::new(data.x.clone(), sol.a.iter().copied().collect(), KernelSpec::radial(1.0).unwrap()).unwrap();
    // p_i − y_i + λ a_i = 0 for the full basis (K is non-singular here).
    for i in 0..30 {
        let prob = klr::predict_prob(&model, data.x.row(i)).unwrap();
        let resid = prob - f64::from(data.y[i]) + lambda * sol.a[i];
        assert!(resid.abs() <= 1e-6, "row {i}: {resid}");
    }
}

#[test]
fn predictions_are_probabilities_and_monotone_in_latent() {
    let basis = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let m = KlrModel::new(basis, vec![2.0, -1.0], KernelSpec::linear()).unwrap();
    let mut last = f64::NEG_INFINITY;
    for t in -20..=20 {
        let x = [f64::from(t)];
        let p = klr::predict_prob(&m, &x).unwrap();
        assert!((0.0..=1.0).contains(&p));
        // latent = 2·0·x − 1·1·x = −x: probability decreases in x.
        let q = -p;
        assert!(q >= last);
        last = q;
    }
}
