mod common;

use common::*;
use ivmkit::eval::auc;
use ivmkit::ivm::{self, fit_ivm, greedy_step, predict_ivm_batch, IvmConfig, SelectionMode};
use ivmkit::kernel::gram_self;
use ivmkit::klr::{fit_klr, predict_prob, KlrModel, KlrProblem};
use ivmkit::{Dataset, FeatureMatrix, KernelSpec};
use nalgebra::DVector;
use proptest::prelude::*;

fn exact_full(kernel: KernelSpec, lambda: f64, n: usize) -> IvmConfig {
    let mut c = IvmConfig::new(kernel, lambda);
    c.selection_mode = SelectionMode::Exact;
    c.max_import = Some(n);
    c.conv_tol = 0.0;
    c
}

#[test]
fn full_basis_equals_klr() {
    for seed in 0..3 {
        let n = 15 + 5 * seed as usize;
        let data = random_problem(n, 2, 900 + seed);
        let kernel = KernelSpec::radial(0.8).unwrap();
        let m = fit_ivm(&data, &exact_full(kernel, 0.5, n)).unwrap();
        let p = KlrProblem::full(gram_self(&kernel, &data.x).unwrap(), &data.y, 0.5).unwrap();
        let sol = fit_klr(&p, 1e-12, 100).unwrap();
        assert!(rel_diff(m.objective(), sol.objective) < 1e-8);
        let full = KlrModel::new(data.x.clone(), sol.a.iter().copied().collect(), kernel).unwrap();
        let probe = random_problem(20, 2, 7);
        for row in probe.x.rows() {
            let a = ivm::predict_ivm(&m, row).unwrap();
            let b = predict_prob(&full, row).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn first_choice_matches_exhaustive_singletons() {
    for seed in 0..10 {
        let data = random_problem(12, 2, 300 + seed);
        let k = kernel_matrix(&rows(&data), Some(1.0));
        let cfg = IvmConfig::new(KernelSpec::radial(1.0).unwrap(), 1.0);
        let all: Vec<usize> = (0..12).collect();
        let step = greedy_step(&data, &[], &DVector::zeros(0), &all, &cfg).unwrap();
        let hs: Vec<f64> = (0..12).map(|l| singleton_objective(&k, &data.y, 1.0, l)).collect();
        let best = (0..12).fold(0, |b, l| if hs[l] < hs[b] { l } else { b });
        assert_eq!(step.chosen, best, "seed {seed}");
        assert!(rel_diff(step.objective, hs[best]) < 1e-8);
    }
}

#[test]
fn two_point_choice_is_the_lower_objective() {
    let data = Dataset::new(FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap(), vec![1, 0]).unwrap();
    let k = kernel_matrix(&rows(&data), Some(1.0));
    let h: Vec<f64> = (0..2).map(|l| singleton_objective(&k, &data.y, 1.0, l)).collect();
    let cfg = IvmConfig::new(KernelSpec::radial(1.0).unwrap(), 1.0);
    let step = greedy_step(&data, &[], &DVector::zeros(0), &[0, 1], &cfg).unwrap();
    let want = if h[1] < h[0] { 1 } else { 0 };
    assert_eq!(step.chosen, want);
}

#[test]
fn separated_blobs_need_few_imports() {
    let train = two_blob(80, 5.0, 1);
    let test = two_blob(200, 5.0, 2);
    // A kernel width on the scale of the blob separation.
    let mut cfg = IvmConfig::new(KernelSpec::radial(0.1).unwrap(), 10.0);
    cfg.conv_tol = 1e-3;
    let m = fit_ivm(&train, &cfg).unwrap();
    assert!(m.n_import() <= 6, "{} imports", m.n_import());
    let s = predict_ivm_batch(&m, &test.x).unwrap();
    assert!(auc(&s, &test.y).unwrap() >= 0.95);
}

#[test]
fn onestep_tracks_exact_on_small_data() {
    let train = two_blob(120, 2.0, 5);
    let test = two_blob(300, 2.0, 6);
    let mut cfg = IvmConfig::new(KernelSpec::radial(0.5).unwrap(), 1.0);
    cfg.conv_tol = 1e-3;
    let exact = fit_ivm(&train, &cfg).unwrap();
    cfg.selection_mode = SelectionMode::OneStep;
    let one = fit_ivm(&train, &cfg).unwrap();
    let a = auc(&predict_ivm_batch(&exact, &test.x).unwrap(), &test.y).unwrap();
    let b = auc(&predict_ivm_batch(&one, &test.x).unwrap(), &test.y).unwrap();
    assert!((a - b).abs() < 0.03, "exact {a} onestep {b}");
}

#[test]
fn rejects_bad_configuration() {
    let data = random_problem(10, 2, 1);
    let mut cfg = IvmConfig::new(KernelSpec::linear(), 0.0);
    assert!(fit_ivm(&data, &cfg).is_err());
    cfg.lambda = 1.0;
    cfg.max_import = Some(11);
    assert!(fit_ivm(&data, &cfg).is_err());
    let one_class = Dataset::new(data.x.clone(), vec![1; 10]).unwrap();
    assert!(fit_ivm(&one_class, &IvmConfig::new(KernelSpec::linear(), 1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Warm starts make the objective non-increasing and never above N ln 2.
    #[test]
    fn history_non_increasing(seed in 0u64..10_000, lambda in 0.1f64..5.0, gamma in 0.1f64..3.0) {
        let data = random_problem(18, 2, seed);
        let mut cfg = IvmConfig::new(KernelSpec::radial(gamma).unwrap(), lambda);
        cfg.conv_tol = 0.0;
        cfg.max_import = Some(8);
        let m = fit_ivm(&data, &cfg).unwrap();
        prop_assert!(m.history[0] <= 18.0 * std::f64::consts::LN_2 + 1e-12);
        for w in m.history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let p = predict_ivm_batch(&m, &data.x).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn import_set_is_distinct_and_capped(seed in 0u64..10_000, cap in 1usize..6) {
        let data = random_problem(14, 3, seed);
        let mut cfg = IvmConfig::new(KernelSpec::radial(0.5).unwrap(), 1.0);
        cfg.max_import = Some(cap);
        let m = fit_ivm(&data, &cfg).unwrap();
        prop_assert!(m.n_import() <= cap);
        let mut idx = m.import_indices.clone();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), m.n_import());
    }
}
