//! Loop-detector pipeline: 20-second records → 5-minute features → matched
//! case-control datasets, plus a calibrated synthetic generator.

mod aggregate;
mod csvio;
mod matching;
mod records;
mod synthetic;

pub use aggregate::{aggregate_records, aggregate_window, AggregateOptions, RecordIndex};
pub use csvio::{
    read_case_control_csv, read_detector_csv, write_case_control_csv, write_detector_csv, RowError,
    CASE_CONTROL_TAIL,
};
pub use matching::{
    build_case_control, case_window, extract_case_window, match_controls, CrashEvent, MatchOutcome,
    PipelineReport,
};
pub use records::{DetectorRecord, SLOT_SECONDS, WINDOW_SECONDS};
pub use synthetic::{
    generate_synthetic, synthetic_month, truncated_normal_moments, FeatureTruth, GroundTruth, Marginal,
    MonthData, MonthSpec, SyntheticSpec,
};

use std::collections::BTreeSet;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;

pub const SEGMENTS: [&str; 3] = ["U", "C", "D"];
pub const MEASURES: [&str; 3] = ["Flow", "Speed", "Occupancy"];
pub const STATS: [&str; 3] = ["Mean", "Std", "CV"];
pub const N_FEATURES: usize = 27;

/// Feature column for a (segment, measure, statistic) triple, in the
/// segment-major order U, C, D × Flow, Speed, Occupancy × Mean, Std, CV.
pub const fn feature_index(segment: usize, measure: usize, stat: usize) -> usize {
    segment * 9 + measure * 3 + stat
}

/// `Mean_Flow_U`, `Std_Flow_U`, … `CV_Occupancy_D`.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(N_FEATURES);
    for seg in SEGMENTS {
        for m in MEASURES {
            for s in STATS {
                names.push(format!("{s}_{m}_{seg}"));
            }
        }
    }
    names
}

pub fn feature_position(name: &str) -> Option<usize> {
    feature_names().iter().position(|n| n == name)
}

/// The 27 statistics of one 5-minute window at an upstream/crash/downstream
/// detector triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub values: [f64; N_FEATURES],
    pub window_end: i64,
    pub detectors: [String; 3],
    /// Set when some series had a zero mean, making its CV undefined (stored as 0).
    pub zero_mean: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub window: FeatureWindow,
    pub label: u8,
    pub stratum: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseControlDataset {
    pub observations: Vec<Observation>,
    pub selected_features: Vec<String>,
}

impl CaseControlDataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_cases(&self) -> usize {
        self.observations.iter().filter(|o| o.label == 1).count()
    }

    pub fn n_controls(&self) -> usize {
        self.len() - self.n_cases()
    }

    pub fn strata(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.observations.iter().map(|o| o.stratum).collect();
        set.into_iter().collect()
    }

    /// Learner input over the named columns (all 27 when `features` is empty).
    /// Zero-mean-flagged windows are dropped unless `keep_flagged`.
    pub fn to_dataset(&self, features: &[String], keep_flagged: bool) -> Result<Dataset> {
        let cols: Vec<usize> = if features.is_empty() {
            (0..N_FEATURES).collect()
        } else {
            features
                .iter()
                .map(|f| {
                    feature_position(f).ok_or_else(|| Error::Data(format!("unknown feature '{f}'")))
                })
                .collect::<Result<_>>()?
        };
        let kept: Vec<&Observation> = self
            .observations
            .iter()
            .filter(|o| keep_flagged || !o.window.zero_mean)
            .collect();
        if kept.is_empty() {
            return Err(Error::Empty("case-control dataset"));
        }
        let mut values = Vec::with_capacity(kept.len() * cols.len());
        for o in &kept {
            values.extend(cols.iter().map(|&c| o.window.values[c]));
        }
        let x = FeatureMatrix::new(kept.len(), cols.len(), values)?;
        Dataset::new(x, kept.iter().map(|o| o.label).collect())
    }

    fn filtered(&self, keep: &BTreeSet<u32>) -> CaseControlDataset {
        CaseControlDataset {
            observations: self
                .observations
                .iter()
                .filter(|o| keep.contains(&o.stratum))
                .cloned()
                .collect(),
            selected_features: self.selected_features.clone(),
        }
    }
}

/// Splits by stratum so a case and its controls stay together;
/// `round(fraction · strata)` strata go to training.
pub fn train_test_split(
    data: &CaseControlDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(CaseControlDataset, CaseControlDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut strata = data.strata();
    if strata.len() < 2 {
        return Err(Error::Insufficient(format!(
            "split needs at least 2 strata, found {}",
            strata.len()
        )));
    }
    strata.shuffle(&mut rng::stream(seed, &[rng::tag::SPLIT]));
    let n_train = ((train_fraction * strata.len() as f64).round() as usize).clamp(1, strata.len() - 1);
    let train: BTreeSet<u32> = strata[..n_train].iter().copied().collect();
    let test: BTreeSet<u32> = strata[n_train..].iter().copied().collect();
    Ok((data.filtered(&train), data.filtered(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_strata: u32) -> CaseControlDataset {
        let mut obs = Vec::new();
        for s in 0..n_strata {
            for k in 0..5 {
                obs.push(Observation {
                    window: FeatureWindow {
                        values: [f64::from(s); N_FEATURES],
                        window_end: 0,
                        detectors: ["u".into(), "c".into(), "d".into()],
                        zero_mean: false,
                    },
                    label: u8::from(k == 0),
                    stratum: s,
                });
            }
        }
        CaseControlDataset {
            observations: obs,
            selected_features: vec![],
        }
    }

    #[test]
    fn names_follow_table_order() {
        let n = feature_names();
        assert_eq!(n.len(), 27);
        assert_eq!(n[0], "Mean_Flow_U");
        assert_eq!(n[26], "CV_Occupancy_D");
        assert_eq!(n[feature_index(1, 1, 0)], "Mean_Speed_C");
        assert_eq!(n[feature_index(1, 2, 1)], "Std_Occupancy_C");
    }

    #[test]
    fn split_keeps_strata_whole() {
        let d = toy(10);
        let (tr, te) = train_test_split(&d, 0.7, 1).unwrap();
        assert_eq!(tr.strata().len(), 7);
        assert_eq!(te.strata().len(), 3);
        let a: BTreeSet<_> = tr.strata().into_iter().collect();
        assert!(te.strata().iter().all(|s| !a.contains(s)));
        assert_eq!(tr.n_controls(), 4 * tr.n_cases());
        assert_eq!(te.n_controls(), 4 * te.n_cases());
        assert!(train_test_split(&toy(1), 0.7, 1).is_err());
    }
}
