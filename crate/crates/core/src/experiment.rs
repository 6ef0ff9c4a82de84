//! Experiment manifest and the batch commands behind the CLI.
//!
//! Every command is a pure function of the manifest (including its seed):
//! data come from the synthetic generator or a case-control CSV, are split by
//! stratum, and flow through feature selection, model training and
//! evaluation. Outputs are written atomically into the output directory.
//! Wall-clock timings go to `timing.csv` only, so every other artifact is
//! byte-identical across runs with the same manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::eval::{self, OperatingPoint, RocCurve};
use crate::forest::{self, ForestConfig, Importance, OobReport};
use crate::io::write_atomic;
use crate::ivm::{self, IvmConfig, SelectionMode};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::model_io::{Learner, TrainedModel};
use crate::svm::{self, GridRow, SvmConfig, DEFAULT_COSTS, DEFAULT_GAMMAS};
use crate::traffic::{self, CaseControlDataset, Marginal, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    /// Exact for small training sets, one-step above the threshold.
    Auto,
    Exact,
    Onestep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Ivm,
    Svm,
    Both,
}

impl std::str::FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ivm" => Ok(Self::Ivm),
            "svm" => Ok(Self::Svm),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Case-control CSV when `source = "csv"`.
    pub path: Option<PathBuf>,
    /// Keep windows whose CV was undefined (zero mean).
    pub keep_flagged: bool,
    /// Abort loading past this many invalid rows.
    pub max_row_errors: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            keep_flagged: false,
            max_row_errors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_cases: usize,
    pub controls_per_case: usize,
    /// Case shift per drawn feature in latent standard deviations; omitted
    /// features get the built-in default. Set `effect_scale = 0` for none.
    pub effect: BTreeMap<String, f64>,
    /// Multiplies the whole effect vector.
    pub effect_scale: f64,
    /// Overrides of the built-in marginals, matched by name.
    pub marginals: Vec<Marginal>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_cases: 524,
            controls_per_case: 4,
            effect: BTreeMap::new(),
            effect_scale: 1.0,
            marginals: Vec::new(),
        }
    }
}

impl SyntheticConfig {
    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::calibrated_defaults();
        spec.n_cases = self.n_cases;
        spec.controls_per_case = self.controls_per_case;
        for m in &self.marginals {
            let slot = spec
                .marginals
                .iter_mut()
                .find(|d| d.name == m.name)
                .ok_or_else(|| Error::Config(format!("no drawn feature named '{}'", m.name)))?;
            *slot = m.clone();
        }
        for (name, v) in &self.effect {
            let pos = spec
                .marginals
                .iter()
                .position(|d| &d.name == name)
                .ok_or_else(|| Error::Config(format!("effect for unknown drawn feature '{name}'")))?;
            spec.effect[pos] = *v;
        }
        spec.effect.iter_mut().for_each(|e| *e *= self.effect_scale);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub ntree: usize,
    pub mtry: usize,
    pub min_node: usize,
    pub k: usize,
    pub corr_threshold: f64,
    /// Fixed model inputs; when set, training skips the forest.
    pub features: Vec<String>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            ntree: 400,
            mtry: 2,
            min_node: 1,
            k: 4,
            corr_threshold: 0.7,
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvmGridConfig {
    pub kernel: KernelFamily,
    /// Widths σ with gamma = 1/(2σ²). Exclusive with `gammas`.
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mode: ModeSetting,
    pub conv_tol: f64,
    pub conv_lag: usize,
    pub max_import: Option<usize>,
    /// Folds for the cross-validated AUC that picks the grid cell.
    pub cv_folds: usize,
    pub standardize: bool,
}

impl Default for IvmGridConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Radial,
            sigmas: (1..=20).map(f64::from).collect(),
            gammas: Vec::new(),
            lambdas: (1..=20).map(f64::from).collect(),
            mode: ModeSetting::Auto,
            conv_tol: 1e-3,
            conv_lag: 1,
            max_import: None,
            cv_folds: 3,
            standardize: true,
        }
    }
}

impl IvmGridConfig {
    /// `(sigma, kernel)` per grid column.
    pub fn kernels(&self) -> Result<Vec<(Option<f64>, KernelSpec)>> {
        match self.kernel {
            KernelFamily::Linear => Ok(vec![(None, KernelSpec::linear())]),
            KernelFamily::Radial => match (self.sigmas.is_empty(), self.gammas.is_empty()) {
                (false, true) => self
                    .sigmas
                    .iter()
                    .map(|&s| KernelSpec::radial_sigma(s).map(|k| (Some(s), k)))
                    .collect(),
                (true, false) => self.gammas.iter().map(|&g| KernelSpec::radial(g).map(|k| (None, k))).collect(),
                (true, true) => Err(Error::Config("ivm: give either sigmas or gammas".into())),
                (false, false) => Err(Error::Config("ivm: sigmas and gammas are mutually exclusive".into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmGridConfig {
    pub kernels: Vec<KernelFamily>,
    pub gammas: Vec<f64>,
    pub costs: Vec<f64>,
    pub folds: usize,
    pub smo_tol: f64,
    pub standardize: bool,
}

impl Default for SvmGridConfig {
    fn default() -> Self {
        Self {
            kernels: vec![KernelFamily::Radial, KernelFamily::Linear],
            gammas: DEFAULT_GAMMAS.to_vec(),
            costs: DEFAULT_COSTS.to_vec(),
            folds: 10,
            smo_tol: 1e-3,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub fpr_targets: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            fpr_targets: vec![0.101, 0.200, 0.301],
        }
    }
}

/// The experiment manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub select: SelectConfig,
    pub ivm: IvmGridConfig,
    pub svm: SvmGridConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            split: SplitConfig::default(),
            select: SelectConfig::default(),
            ivm: IvmGridConfig::default(),
            svm: SvmGridConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn positive_grid(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config(format!("{name}: every entry must be a positive number")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Csv {
            match &self.data.path {
                None => return Err(Error::Config("data.path is required for csv data".into())),
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!("data.path {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        let s = &self.select;
        if s.ntree == 0 || s.mtry == 0 || s.k == 0 {
            return Err(Error::Config("select: ntree, mtry and k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s.corr_threshold) {
            return Err(Error::Config("select.corr_threshold must lie in [0, 1]".into()));
        }
        for f in &s.features {
            if traffic::feature_position(f).is_none() {
                return Err(Error::Config(format!("select.features: unknown feature '{f}'")));
            }
        }
        self.ivm.kernels()?;
        positive_grid("ivm.sigmas", &self.ivm.sigmas)?;
        positive_grid("ivm.gammas", &self.ivm.gammas)?;
        positive_grid("ivm.lambdas", &self.ivm.lambdas)?;
        if self.ivm.lambdas.is_empty() {
            return Err(Error::Config("ivm.lambdas is empty".into()));
        }
        if self.ivm.cv_folds < 2 || self.svm.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        if !(self.ivm.conv_tol >= 0.0) || self.ivm.conv_lag == 0 {
            return Err(Error::Config("ivm: conv_tol must be >= 0 and conv_lag >= 1".into()));
        }
        if self.svm.kernels.is_empty() || self.svm.gammas.is_empty() || self.svm.costs.is_empty() {
            return Err(Error::Config("svm grids must be non-empty".into()));
        }
        positive_grid("svm.gammas", &self.svm.gammas)?;
        positive_grid("svm.costs", &self.svm.costs)?;
        if self.evaluate.fpr_targets.is_empty()
            || self.evaluate.fpr_targets.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::Config("evaluate.fpr_targets must be non-empty and within [0, 1]".into()));
        }
        if self.data.source == DataSource::Synthetic {
            self.synthetic.to_spec()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Steps

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<CaseControlDataset> {
    match cfg.data.source {
        DataSource::Synthetic => Ok(traffic::generate_synthetic(&cfg.synthetic.to_spec()?, cfg.seed)?.0),
        DataSource::Csv => {
            let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config("data.path missing".into()))?;
            let file = fs::File::open(path)?;
            let (data, errors) = traffic::read_case_control_csv(file, cfg.data.max_row_errors)?;
            for e in &errors {
                log::warn!("{}:{}: {}", path.display(), e.line, e.message);
            }
            if data.is_empty() {
                return Err(Error::Data(format!("{} holds no valid rows", path.display())));
            }
            Ok(data)
        }
    }
}

pub fn split(cfg: &ExperimentConfig, data: &CaseControlDataset) -> Result<(CaseControlDataset, CaseControlDataset)> {
    traffic::train_test_split(data, cfg.split.train_fraction, cfg.seed)
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub names: Vec<String>,
    pub importance: Importance,
    pub oob: OobReport,
    pub selected: Vec<String>,
    pub short: bool,
}

/// Forest on the training split over all 27 candidates, permutation
/// importance, then correlation-filtered top-k.
pub fn run_select(cfg: &ExperimentConfig, train: &CaseControlDataset) -> Result<SelectOutcome> {
    let names = traffic::feature_names();
    let data = train.to_dataset(&[], cfg.data.keep_flagged)?;
    let fc = ForestConfig {
        ntree: cfg.select.ntree,
        mtry: cfg.select.mtry.min(data.dim()),
        min_node: cfg.select.min_node,
        seed: cfg.seed,
    };
    let forest = forest::fit_forest(&data, &fc)?;
    let oob = forest::oob_error(&forest, &data)?;
    let importance = forest::permutation_importance(&forest, &data, cfg.seed)?;
    let corr = forest::correlation_matrix(&data.x);
    let sel = forest::select_features(&importance.raw, &corr, cfg.select.k, cfg.select.corr_threshold)?;
    Ok(SelectOutcome {
        selected: sel.features.iter().map(|&j| names[j].clone()).collect(),
        short: sel.short,
        names,
        importance,
        oob,
    })
}

fn prepare(
    data: &CaseControlDataset,
    features: &[String],
    keep_flagged: bool,
    standardize: bool,
) -> Result<(Dataset, Option<Standardizer>)> {
    let d = data.to_dataset(features, keep_flagged)?;
    d.require_both_classes()?;
    if !standardize {
        return Ok((d, None));
    }
    let sc = Standardizer::fit(&d.x);
    let scaled = Dataset::new(sc.apply(&d.x), d.y.clone())?;
    Ok((scaled, Some(sc)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvmGridRow {
    pub sigma: Option<f64>,
    pub gamma: f64,
    pub lambda: f64,
    /// Pooled out-of-fold AUC; NaN when a fold failed.
    pub cv_auc: f64,
    pub mean_import: f64,
}

#[derive(Debug, Clone)]
pub struct IvmTraining {
    pub model: TrainedModel,
    pub grid: Vec<IvmGridRow>,
    pub best: IvmGridRow,
    pub train_auc: f64,
    pub seconds: f64,
}

fn ivm_config(cfg: &IvmGridConfig, kernel: KernelSpec, lambda: f64, n: usize) -> IvmConfig {
    let mut c = IvmConfig::new(kernel, lambda).with_auto_mode(n);
    match cfg.mode {
        ModeSetting::Auto => {}
        ModeSetting::Exact => c.selection_mode = SelectionMode::Exact,
        ModeSetting::Onestep => c.selection_mode = SelectionMode::OneStep,
    }
    c.conv_tol = cfg.conv_tol;
    c.conv_lag = cfg.conv_lag;
    c.max_import = cfg.max_import.map(|m| m.min(n));
    c
}

/// Grid over (kernel width, λ) scored by cross-validated AUC; the best cell
/// (first in grid order on ties) is refit on the whole training split.
pub fn train_ivm(cfg: &ExperimentConfig, train: &CaseControlDataset, features: &[String]) -> Result<IvmTraining> {
    let started = Instant::now();
    let g = &cfg.ivm;
    let (data, scaler) = prepare(train, features, cfg.data.keep_flagged, g.standardize)?;
    let folds = svm::stratified_folds(&data.y, g.cv_folds, cfg.seed)?;
    let fold_sets: Vec<(Dataset, Vec<usize>)> = (0..g.cv_folds)
        .map(|f| {
            let tr: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let te: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            (data.subset(&tr), te)
        })
        .collect();

    let mut cells = Vec::new();
    for (sigma, kernel) in g.kernels()? {
        for &lambda in &g.lambdas {
            cells.push((sigma, kernel, lambda));
        }
    }
    let grid: Vec<IvmGridRow> = cells
        .par_iter()
        .map(|&(sigma, kernel, lambda)| {
            let mut pooled = vec![0.0; data.len()];
            let mut imports = 0usize;
            for (sub, held) in &fold_sets {
                let model = match ivm::fit_ivm(sub, &ivm_config(g, kernel, lambda, sub.len())) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("ivm cell gamma={} lambda={lambda}: {e}", kernel.gamma());
                        return IvmGridRow {
                            sigma,
                            gamma: kernel.gamma(),
                            lambda,
                            cv_auc: f64::NAN,
                            mean_import: f64::NAN,
                        };
                    }
                };
                imports += model.n_import();
                for &i in held {
                    pooled[i] = ivm::predict_ivm(&model, data.x.row(i)).unwrap_or(f64::NAN);
                }
            }
            let cv_auc = eval::auc(&pooled, &data.y).unwrap_or(f64::NAN);
            IvmGridRow {
                sigma,
                gamma: kernel.gamma(),
                lambda,
                cv_auc,
                mean_import: imports as f64 / fold_sets.len() as f64,
            }
        })
        .collect();

    let best = grid
        .iter()
        .filter(|r| r.cv_auc.is_finite())
        .fold(None::<&IvmGridRow>, |b, r| match b {
            Some(b) if b.cv_auc >= r.cv_auc => Some(b),
            _ => Some(r),
        })
        .cloned()
        .ok_or_else(|| Error::NotConverged("every IVM grid cell failed".into()))?;
    let kernel = match g.kernel {
        KernelFamily::Linear => KernelSpec::linear(),
        KernelFamily::Radial => KernelSpec::radial(best.gamma)?,
    };
    let model = ivm::fit_ivm(&data, &ivm_config(g, kernel, best.lambda, data.len()))?;
    let scores = ivm::predict_ivm_batch(&model, &data.x)?;
    let train_auc = eval::auc(&scores, &data.y)?;
    Ok(IvmTraining {
        model: TrainedModel {
            learner: Learner::Ivm(model),
            features: features.to_vec(),
            scaler,
        },
        grid,
        best,
        train_auc,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct SvmTraining {
    pub family: KernelFamily,
    pub model: TrainedModel,
    pub grid: Vec<GridRow>,
    pub best_error: f64,
    pub train_auc: f64,
    pub seconds: f64,
}

/// Cross-validated (gamma, cost) grid for one kernel family, then a refit of
/// the lowest-error cell.
pub fn train_svm(
    cfg: &ExperimentConfig,
    train: &CaseControlDataset,
    features: &[String],
    family: KernelFamily,
) -> Result<SvmTraining> {
    let started = Instant::now();
    let s = &cfg.svm;
    let (data, scaler) = prepare(train, features, cfg.data.keep_flagged, s.standardize)?;
    let mut base = SvmConfig::new(KernelSpec::linear(), 1.0);
    base.smo_tol = s.smo_tol;
    let result = svm::grid_search(&data, &[family], &s.gammas, &s.costs, s.folds, cfg.seed, &base)?;
    let model = svm::fit_svm(&data, &result.best)?;
    if !model.converged {
        return Err(Error::NotConverged(format!(
            "SMO for {family} kernel stopped after {} updates",
            model.iterations
        )));
    }
    let scores = svm::decision_values(&model, &data.x)?;
    let train_auc = eval::auc(&scores, &data.y)?;
    Ok(SvmTraining {
        family,
        model: TrainedModel {
            learner: Learner::Svm(model),
            features: features.to_vec(),
            scaler,
        },
        grid: result.table,
        best_error: result.best_error,
        train_auc,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRow {
    pub model: String,
    pub n_vectors: usize,
    pub train_auc: f64,
    pub test_auc: f64,
    /// Split on which the operating threshold was chosen.
    pub threshold_source: &'static str,
    pub point: OperatingPoint,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<PerformanceRow>,
    pub curves: Vec<(String, RocCurve)>,
}

/// AUC on both splits and test-set operating points, with thresholds picked
/// on the test curve itself and, separately, on the training curve.
pub fn evaluate_models(
    cfg: &ExperimentConfig,
    models: &[(String, TrainedModel)],
    train: &CaseControlDataset,
    test: &CaseControlDataset,
) -> Result<Evaluation> {
    if models.is_empty() {
        return Err(Error::Empty("model list"));
    }
    let targets = &cfg.evaluate.fpr_targets;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (name, model) in models {
        let te = test.to_dataset(&model.features, cfg.data.keep_flagged)?;
        let tr = train.to_dataset(&model.features, cfg.data.keep_flagged)?;
        let test_scores = model.score_all(&te.x)?;
        let train_scores = model.score_all(&tr.x)?;
        let test_curve = eval::roc_curve(&test_scores, &te.y)?;
        let train_curve = eval::roc_curve(&train_scores, &tr.y)?;
        let base = |source, point| PerformanceRow {
            model: name.clone(),
            n_vectors: model.n_vectors(),
            train_auc: train_curve.auc,
            test_auc: test_curve.auc,
            threshold_source: source,
            point,
        };
        for p in eval::operating_points(&test_curve, targets)? {
            rows.push(base("test", p));
        }
        for p in eval::operating_points(&train_curve, targets)? {
            rows.push(base(
                "train",
                eval::operating_point_at(&test_scores, &te.y, p.target_fpr, p.threshold)?,
            ));
        }
        curves.push((name.clone(), test_curve));
    }
    Ok(Evaluation { rows, curves })
}

// ---------------------------------------------------------------------------
// Artifacts

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn importance_csv(sel: &SelectOutcome) -> String {
    let mut s = String::from("rank,feature,raw,percent,selected\n");
    for (rank, j) in forest::ranking(&sel.importance.raw).into_iter().enumerate() {
        let chosen = sel.selected.contains(&sel.names[j]);
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            rank + 1,
            sel.names[j],
            num(sel.importance.raw[j]),
            num(sel.importance.percent[j]),
            u8::from(chosen)
        );
    }
    s
}

pub fn performance_csv(rows: &[PerformanceRow]) -> String {
    let mut s = String::from(
        "model,n_vectors,train_auc,test_auc,threshold_source,target_fpr,fpr,sensitivity,accuracy,threshold\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{}",
            r.model,
            r.n_vectors,
            r.train_auc,
            r.test_auc,
            r.threshold_source,
            num(r.point.target_fpr),
            r.point.fpr,
            r.point.sensitivity,
            r.point.accuracy,
            num(r.point.threshold)
        );
    }
    s
}

fn training_report_row(s: &mut String, name: &str, m: &TrainedModel, cv_metric: &str, cv: f64, extra: (Option<f64>, Option<f64>, Option<f64>), train_auc: f64) {
    let (sigma, lambda, cost) = extra;
    let k = m.kernel();
    let gamma = match k.family() {
        KernelFamily::Linear => String::new(),
        KernelFamily::Radial => num(k.gamma()),
    };
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let _ = writeln!(
        s,
        "{name},{},{gamma},{},{},{},{},{cv_metric},{},{:.6}",
        k.family(),
        opt(sigma),
        opt(lambda),
        opt(cost),
        m.n_vectors(),
        num(cv),
        train_auc
    );
}

pub const TRAINING_REPORT_HEADER: &str = "model,kernel,gamma,sigma,lambda,cost,n_vectors,cv_metric,cv_value,train_auc\n";

pub fn ivm_grid_csv(rows: &[IvmGridRow]) -> String {
    let mut s = String::from("sigma,gamma,lambda,cv_auc,mean_import\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.sigma.map(num).unwrap_or_default(),
            num(r.gamma),
            num(r.lambda),
            num(r.cv_auc),
            num(r.mean_import)
        );
    }
    s
}

pub fn svm_grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("kernel,gamma,cost,cv_error\n");
    let mut linear_costs: Vec<u64> = Vec::new();
    for r in rows {
        let gamma = match r.kernel {
            // One row per cost; gamma does not enter the linear kernel.
            KernelFamily::Linear if linear_costs.contains(&r.cost.to_bits()) => continue,
            KernelFamily::Linear => {
                linear_costs.push(r.cost.to_bits());
                String::new()
            }
            KernelFamily::Radial => num(r.gamma),
        };
        let _ = writeln!(s, "{},{gamma},{},{}", r.kernel, num(r.cost), num(r.cv_error));
    }
    s
}

pub fn model_name(family: KernelFamily) -> &'static str {
    match family {
        KernelFamily::Linear => "svm_linear",
        KernelFamily::Radial => "svm_radial",
    }
}

/// Model files looked up by `cmd_evaluate` when none are given.
pub const MODEL_NAMES: [&str; 3] = ["ivm", "svm_linear", "svm_radial"];

fn write_text(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = out.join(name);
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.data.source != DataSource::Synthetic {
        return Err(Error::Config("simulate needs data.source = \"synthetic\"".into()));
    }
    let (data, truth) = traffic::generate_synthetic(&cfg.synthetic.to_spec()?, cfg.seed)?;
    let csv = cfg.out.join("case_control.csv");
    traffic::write_case_control_csv(&csv, &data)?;
    let truth_text = toml::to_string(&truth).map_err(|e| Error::Data(e.to_string()))?;
    let gt = write_text(&cfg.out, "ground_truth.toml", &truth_text)?;
    Ok(vec![csv, gt])
}

pub fn cmd_select(cfg: &ExperimentConfig) -> Result<SelectOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let (train, _) = split(cfg, &data)?;
    let sel = run_select(cfg, &train)?;
    write_selection(cfg, &sel)?;
    Ok(sel)
}

fn write_selection(cfg: &ExperimentConfig, sel: &SelectOutcome) -> Result<()> {
    write_text(&cfg.out, "importance.csv", &importance_csv(sel))?;
    let mut s = String::new();
    for f in &sel.selected {
        let _ = writeln!(s, "{f}");
    }
    write_text(&cfg.out, "selected_features.txt", &s)?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub features: Vec<String>,
    pub ivm: Option<IvmTraining>,
    pub svm: Vec<SvmTraining>,
}

impl TrainOutcome {
    pub fn models(&self) -> Vec<(String, TrainedModel)> {
        let mut v = Vec::new();
        if let Some(t) = &self.ivm {
            v.push(("ivm".to_string(), t.model.clone()));
        }
        let mut svms: Vec<&SvmTraining> = self.svm.iter().collect();
        svms.sort_by_key(|t| model_name(t.family));
        v.extend(svms.into_iter().map(|t| (model_name(t.family).to_string(), t.model.clone())));
        v
    }
}

fn resolve_features(cfg: &ExperimentConfig, train: &CaseControlDataset) -> Result<(Vec<String>, Option<SelectOutcome>)> {
    if !cfg.select.features.is_empty() {
        return Ok((cfg.select.features.clone(), None));
    }
    log::info!("ranking {} candidate features on {} training rows", traffic::N_FEATURES, train.len());
    let sel = run_select(cfg, train)?;
    log::info!("selected {} (oob error {:.4})", sel.selected.join(", "), sel.oob.error);
    Ok((sel.selected.clone(), Some(sel)))
}

fn train_models(
    cfg: &ExperimentConfig,
    train: &CaseControlDataset,
    features: &[String],
    choice: ModelChoice,
) -> Result<TrainOutcome> {
    let mut out = TrainOutcome {
        features: features.to_vec(),
        ..Default::default()
    };
    if matches!(choice, ModelChoice::Ivm | ModelChoice::Both) {
        log::info!("ivm: searching the kernel-width × lambda grid");
        let iv = train_ivm(cfg, train, features)?;
        log::info!("ivm: {} import vectors, cv auc {:.4}, {:.1} s", iv.model.n_vectors(), iv.best.cv_auc, iv.seconds);
        out.ivm = Some(iv);
    }
    if matches!(choice, ModelChoice::Svm | ModelChoice::Both) {
        for &family in &cfg.svm.kernels {
            log::info!("{}: searching the gamma × cost grid", model_name(family));
            let sv = train_svm(cfg, train, features, family)?;
            log::info!("{}: {} support vectors, cv error {:.4}, {:.1} s", model_name(family), sv.model.n_vectors(), sv.best_error, sv.seconds);
            out.svm.push(sv);
        }
    }
    write_training(cfg, &out)?;
    Ok(out)
}

fn write_training(cfg: &ExperimentConfig, t: &TrainOutcome) -> Result<()> {
    let mut report = String::from(TRAINING_REPORT_HEADER);
    let mut timing = String::from("model,seconds\n");
    if let Some(iv) = &t.ivm {
        iv.model.save(&cfg.out.join("ivm.model"))?;
        training_report_row(
            &mut report,
            "ivm",
            &iv.model,
            "cv_auc",
            iv.best.cv_auc,
            (iv.best.sigma, Some(iv.best.lambda), None),
            iv.train_auc,
        );
        write_text(&cfg.out, "ivm_grid.csv", &ivm_grid_csv(&iv.grid))?;
        let _ = writeln!(timing, "ivm,{:.3}", iv.seconds);
    }
    let mut svm_rows = Vec::new();
    for s in &t.svm {
        let name = model_name(s.family);
        s.model.save(&cfg.out.join(format!("{name}.model")))?;
        let cost = match &s.model.learner {
            Learner::Svm(m) => Some(m.cost),
            Learner::Ivm(_) => None,
        };
        training_report_row(&mut report, name, &s.model, "cv_error", s.best_error, (None, None, cost), s.train_auc);
        svm_rows.extend(s.grid.iter().cloned());
        let _ = writeln!(timing, "{name},{:.3}", s.seconds);
    }
    if !svm_rows.is_empty() {
        write_text(&cfg.out, "svm_grid.csv", &svm_grid_csv(&svm_rows))?;
    }
    write_text(&cfg.out, "training_report.csv", &report)?;
    write_text(&cfg.out, "timing.csv", &timing)?;
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, choice: ModelChoice) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let (train, _) = split(cfg, &data)?;
    let (features, sel) = resolve_features(cfg, &train)?;
    if let Some(sel) = &sel {
        write_selection(cfg, sel)?;
    }
    train_models(cfg, &train, &features, choice)
}

/// Scores the given model files (default: every known model in the output
/// directory) on the test split and writes the report and ROC artifacts.
pub fn cmd_evaluate(cfg: &ExperimentConfig, model_paths: &[PathBuf]) -> Result<Evaluation> {
    cfg.validate()?;
    let paths: Vec<PathBuf> = if model_paths.is_empty() {
        MODEL_NAMES
            .iter()
            .map(|n| cfg.out.join(format!("{n}.model")))
            .filter(|p| p.exists())
            .collect()
    } else {
        model_paths.to_vec()
    };
    if paths.is_empty() {
        return Err(Error::Config(format!("no model files found in {}", cfg.out.display())));
    }
    let models: Vec<(String, TrainedModel)> = paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            TrainedModel::load(p).map(|m| (name, m))
        })
        .collect::<Result<_>>()?;
    let data = load_dataset(cfg)?;
    let (train, test) = split(cfg, &data)?;
    let ev = evaluate_models(cfg, &models, &train, &test)?;
    write_evaluation(cfg, &ev)?;
    Ok(ev)
}

fn write_evaluation(cfg: &ExperimentConfig, ev: &Evaluation) -> Result<()> {
    write_text(&cfg.out, "performance.csv", &performance_csv(&ev.rows))?;
    eval::emit_roc_plot(&ev.curves, &cfg.out, "roc")
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub n_train: usize,
    pub n_test: usize,
    pub selection: Option<SelectOutcome>,
    pub training: TrainOutcome,
    pub evaluation: Evaluation,
}

/// simulate → select → train both → evaluate, in one pass.
pub fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<Reproduction> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    if cfg.data.source == DataSource::Synthetic {
        traffic::write_case_control_csv(&cfg.out.join("case_control.csv"), &data)?;
        let truth = traffic::generate_synthetic(&cfg.synthetic.to_spec()?, cfg.seed)?.1;
        write_text(
            &cfg.out,
            "ground_truth.toml",
            &toml::to_string(&truth).map_err(|e| Error::Data(e.to_string()))?,
        )?;
    }
    let (train, test) = split(cfg, &data)?;
    let (features, selection) = resolve_features(cfg, &train)?;
    if let Some(sel) = &selection {
        write_selection(cfg, sel)?;
    }
    let training = train_models(cfg, &train, &features, ModelChoice::Both)?;
    let evaluation = evaluate_models(cfg, &training.models(), &train, &test)?;
    write_evaluation(cfg, &evaluation)?;
    Ok(Reproduction {
        n_train: train.len(),
        n_test: test.len(),
        selection,
        training,
        evaluation,
    })
}
