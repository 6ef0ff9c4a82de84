//! Confusion counts, ROC curves, AUC and operating points.
//!
//! A score predicts positive iff `score >= threshold`. ROC vertices are taken
//! at every distinct score, so tied scores move the curve diagonally and the
//! trapezoidal area equals the Mann-Whitney statistic with ties counted ½.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    /// `TP / (TP + FN)`.
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.positives())
    }

    /// `FP / (FP + TN)`, i.e. 1 − specificity.
    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.negatives())
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.positives() + self.negatives())
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    Ok(())
}

pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Scores `>= threshold` are predicted positive.
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From threshold +inf at (0, 0) down to -inf at (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::Data("ROC needs at least one positive (label 1)".into()));
    }
    if n_neg == 0 {
        return Err(Error::Data("ROC needs at least one negative (label 0)".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |threshold: f64, tp: usize, fp: usize| RocPoint {
        threshold,
        tp,
        fp,
        fpr: fp as f64 / n_neg as f64,
        tpr: tp as f64 / n_pos as f64,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of one positive-negative pair.
    let mut twice_area: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += ((fp - fp0) as u128) * ((tp + tp0) as u128);
        points.push(point(s, tp, fp));
    }
    points.push(point(f64::NEG_INFINITY, n_pos, n_neg));
    let auc = twice_area as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocCurve {
        points,
        auc,
        n_pos,
        n_neg,
    })
}

/// Area by the trapezoid rule over the stored points. Sums in integer counts
/// (exact) when the points end at (n_neg, n_pos), as full curves do.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    match points.last() {
        Some(last) if last.tp > 0 && last.fp > 0 && last.tpr == 1.0 && last.fpr == 1.0 => {
            let twice: u128 = points
                .windows(2)
                .map(|w| ((w[1].fp - w[0].fp) as u128) * ((w[1].tp + w[0].tp) as u128))
                .sum();
            twice as f64 / (2 * last.tp as u128 * last.fp as u128) as f64
        }
        _ => points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum(),
    }
}

pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    roc_curve(scores, labels).map(|c| c.auc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub target_fpr: f64,
    pub threshold: f64,
    pub fpr: f64,
    pub sensitivity: f64,
    pub accuracy: f64,
}

/// For each target, the vertex with the largest false-positive rate not above
/// it (highest sensitivity among equals). No interpolation.
pub fn operating_points(curve: &RocCurve, targets: &[f64]) -> Result<Vec<OperatingPoint>> {
    let total = (curve.n_pos + curve.n_neg) as f64;
    targets
        .iter()
        .map(|&target| {
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::InvalidParameter(format!(
                    "fpr target {target} outside [0, 1]"
                )));
            }
            let v = curve
                .points
                .iter()
                .filter(|p| p.fpr <= target)
                .max_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)))
                .expect("the (0, 0) vertex always qualifies");
            let tn = curve.n_neg - v.fp;
            Ok(OperatingPoint {
                target_fpr: target,
                threshold: v.threshold,
                fpr: v.fpr,
                sensitivity: v.tpr,
                accuracy: (v.tp + tn) as f64 / total,
            })
        })
        .collect()
}

/// Applies a fixed threshold (e.g. chosen on training data) to new scores.
pub fn operating_point_at(scores: &[f64], labels: &[u8], target: f64, threshold: f64) -> Result<OperatingPoint> {
    let c = confusion_at(scores, labels, threshold)?;
    Ok(OperatingPoint {
        target_fpr: target,
        threshold,
        fpr: c.false_positive_rate().unwrap_or(f64::NAN),
        sensitivity: c.sensitivity().unwrap_or(f64::NAN),
        accuracy: c.accuracy().unwrap_or(f64::NAN),
    })
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:?}")
    }
}

/// `model,threshold,fpr,tpr` rows for every curve.
pub fn roc_csv(curves: &[(String, RocCurve)]) -> String {
    let mut out = String::from("model,threshold,fpr,tpr\n");
    for (name, curve) in curves {
        for p in &curve.points {
            let _ = writeln!(out, "{name},{},{:?},{:?}", fmt_threshold(p.threshold), p.fpr, p.tpr);
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Standalone SVG with the unit square, the chance diagonal, one polyline per
/// curve and a legend carrying each AUC.
pub fn roc_svg(curves: &[(String, RocCurve)]) -> String {
    let (w, h) = (520.0, 520.0);
    let (left, top, size) = (60.0, 30.0, 420.0);
    let px = |x: f64| left + x * size;
    let py = |y: f64| top + (1.0 - y) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=5 {
        let v = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>",
            px(v),
            top + size + 18.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>",
            left - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1 - Specificity</text>",
        left + size / 2.0,
        top + size + 38.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">Sensitivity</text>",
        top + size / 2.0,
        top + size / 2.0
    );
    let _ = writeln!(
        s,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = top + size - 20.0 - 18.0 * (curves.len() - 1 - k) as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            px(0.45),
            px(0.52)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">{} (AUC = {:.3})</text>",
            px(0.54),
            ly + 4.0,
            xml_escape(name),
            curve.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg` next to each other.
pub fn emit_roc_plot(curves: &[(String, RocCurve)], dir: &Path, stem: &str) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Empty("ROC curve list"));
    }
    write_atomic(&dir.join(format!("{stem}.csv")), roc_csv(curves).as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.svg")), roc_svg(curves).as_bytes())?;
    Ok(())
}
