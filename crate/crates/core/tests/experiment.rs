use std::fs;
use std::path::Path;

use ivmkit::experiment::{cmd_evaluate, cmd_reproduce, cmd_select, cmd_simulate, cmd_train, ExperimentConfig, ModelChoice};

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 17;
    cfg.out = out.to_path_buf();
    cfg.synthetic.n_cases = 80;
    cfg.select.ntree = 100;
    cfg.ivm.sigmas = vec![2.0];
    cfg.ivm.lambdas = vec![1.0];
    cfg.svm.gammas = vec![0.1];
    cfg.svm.costs = vec![1.0];
    cfg.svm.folds = 3;
    cfg
}

#[test]
fn simulate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        cfg.out = dir.path().join(run);
        let paths = cmd_simulate(&cfg).unwrap();
        texts.push(paths.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(texts[0], texts[1]);
    let csv = String::from_utf8(texts[0][0].clone()).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.split(',').count() >= 28);
    assert_eq!(csv.lines().count(), 1 + 524 + 2096);
}

#[test]
fn default_selection_keeps_four_features_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let a = cmd_select(&cfg).unwrap();
    let b = cmd_select(&cfg).unwrap();
    assert_eq!(a.selected.len(), 4);
    assert_eq!(a.selected, b.selected);
}

#[test]
fn single_cell_grid_trains_one_model_and_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("a"));
    let t = cmd_train(&cfg, ModelChoice::Ivm).unwrap();
    let ivm = t.ivm.as_ref().unwrap();
    assert_eq!(ivm.grid.len(), 1);
    assert_eq!(t.models().len(), 1);
    let first = fs::read(cfg.out.join("ivm.model")).unwrap();

    let report = fs::read_to_string(cfg.out.join("training_report.csv")).unwrap();
    assert!(report.starts_with("model,kernel,gamma,sigma,lambda,cost,n_vectors,"));
    let row = report.lines().nth(1).unwrap();
    assert_eq!(row.split(',').nth(6).unwrap(), ivm.model.n_vectors().to_string());

    cfg.out = dir.path().join("b");
    cmd_train(&cfg, ModelChoice::Ivm).unwrap();
    assert_eq!(fs::read(cfg.out.join("ivm.model")).unwrap(), first);
}

#[test]
fn three_models_give_three_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let t = cmd_train(&cfg, ModelChoice::Both).unwrap();
    assert_eq!(t.models().len(), 3);
    let ev = cmd_evaluate(&cfg, &[]).unwrap();
    assert_eq!(ev.curves.len(), 3);
    let svg = fs::read_to_string(dir.path().join("roc.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    // Three fpr targets, thresholds from the test and the training curve.
    assert_eq!(ev.rows.len(), 3 * 3 * 2);

    let one = cmd_evaluate(&cfg, &[dir.path().join("ivm.model")]).unwrap();
    assert_eq!(one.curves.len(), 1);
    let perf = fs::read_to_string(dir.path().join("performance.csv")).unwrap();
    assert_eq!(perf.lines().count(), 1 + 3 * 2);
}

/// End-to-end on the committed quick manifest: the kernel baselines land
/// near the IVM.
#[test]
fn rbf_svm_auc_is_close_to_ivm_auc() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml");
    let mut cfg = ExperimentConfig::load(Path::new(manifest)).unwrap();
    cfg.out = dir.path().to_path_buf();
    let r = cmd_reproduce(&cfg).unwrap();
    let auc = |name: &str| r.evaluation.rows.iter().find(|row| row.model == name).unwrap().test_auc;
    let (ivm, rbf) = (auc("ivm"), auc("svm_radial"));
    assert!((ivm - rbf).abs() <= 0.05, "IVM {ivm:.4} vs RBF SVM {rbf:.4}");
}
