use std::collections::{BTreeMap, HashMap};

use super::records::{DetectorRecord, SLOT_SECONDS, WINDOW_SECONDS};
use super::{feature_index, FeatureWindow, N_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    /// Minimum populated 20-s slots (of 15) per segment.
    pub min_records: usize,
    /// Flow-weighted lane speed (arithmetic when the slot's flow is 0).
    pub flow_weighted_speed: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            min_records: 10,
            flow_weighted_speed: true,
        }
    }
}

/// Records grouped by detector and slot for window lookups.
#[derive(Debug, Default, Clone)]
pub struct RecordIndex {
    slots: HashMap<String, BTreeMap<i64, Vec<[f64; 3]>>>,
}

impl RecordIndex {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a DetectorRecord>) -> Self {
        let mut idx = Self::default();
        for r in records {
            idx.insert(r);
        }
        idx
    }

    pub fn insert(&mut self, r: &DetectorRecord) {
        self.slots
            .entry(r.detector_id.clone())
            .or_default()
            .entry(r.timestamp)
            .or_default()
            .push([r.flow, r.speed, r.occupancy]);
    }

    /// Lane-averaged (flow, speed, occupancy) per populated slot in `[start, end)`.
    fn slot_series(&self, detector: &str, start: i64, end: i64, opts: &AggregateOptions) -> [Vec<f64>; 3] {
        let mut out: [Vec<f64>; 3] = Default::default();
        let Some(slots) = self.slots.get(detector) else {
            return out;
        };
        for (_, lanes) in slots.range(start..end) {
            let n = lanes.len() as f64;
            let flow: f64 = lanes.iter().map(|l| l[0]).sum();
            let occ: f64 = lanes.iter().map(|l| l[2]).sum::<f64>() / n;
            let speed = if opts.flow_weighted_speed && flow > 0.0 {
                lanes.iter().map(|l| l[0] * l[1]).sum::<f64>() / flow
            } else {
                lanes.iter().map(|l| l[1]).sum::<f64>() / n
            };
            out[0].push(flow / n);
            out[1].push(speed);
            out[2].push(occ);
        }
        out
    }
}

/// Mean, sample standard deviation and CV; CV is 0 (and the flag set) when
/// the mean is 0.
fn summarize(xs: &[f64]) -> ([f64; 3], bool) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    if mean > 0.0 {
        ([mean, std, std / mean], false)
    } else {
        ([mean, std, 0.0], true)
    }
}

/// The 27 features over `[window_end − 300 s, window_end)` for the
/// (upstream, crash, downstream) detectors.
pub fn aggregate_window(
    index: &RecordIndex,
    triplet: &[String; 3],
    window_end: i64,
    opts: &AggregateOptions,
) -> Result<FeatureWindow> {
    if opts.min_records < 2 {
        return Err(Error::InvalidParameter(
            "min_records must be at least 2 for a sample standard deviation".into(),
        ));
    }
    if window_end.rem_euclid(SLOT_SECONDS) != 0 {
        return Err(Error::InvalidParameter(format!(
            "window end {window_end} is not on the {SLOT_SECONDS}-s grid"
        )));
    }
    let start = window_end - WINDOW_SECONDS;
    let mut values = [0.0; N_FEATURES];
    let mut zero_mean = false;
    let mut shortfalls = Vec::new();
    for (seg, det) in triplet.iter().enumerate() {
        let series = index.slot_series(det, start, window_end, opts);
        let have = series[0].len();
        if have < opts.min_records {
            shortfalls.push(format!("{det}: {have}/{} slots", WINDOW_SECONDS / SLOT_SECONDS));
            continue;
        }
        for (m, xs) in series.iter().enumerate() {
            let (stats, flag) = summarize(xs);
            zero_mean |= flag;
            for (s, v) in stats.into_iter().enumerate() {
                values[feature_index(seg, m, s)] = v;
            }
        }
    }
    if !shortfalls.is_empty() {
        return Err(Error::Insufficient(format!(
            "window ending {window_end} needs {} slots per segment; {}",
            opts.min_records,
            shortfalls.join(", ")
        )));
    }
    Ok(FeatureWindow {
        values,
        window_end,
        detectors: triplet.clone(),
        zero_mean,
    })
}

/// Convenience wrapper that indexes `records` first.
pub fn aggregate_records(
    records: &[DetectorRecord],
    triplet: &[String; 3],
    window_end: i64,
    opts: &AggregateOptions,
) -> Result<FeatureWindow> {
    aggregate_window(&RecordIndex::new(records), triplet, window_end, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(det: &str, t: i64, lane: &str, flow: f64, speed: f64, occ: f64) -> DetectorRecord {
        DetectorRecord {
            detector_id: det.into(),
            timestamp: t,
            lane: lane.into(),
            flow,
            speed,
            occupancy: occ,
        }
    }

    fn triplet() -> [String; 3] {
        ["u".into(), "c".into(), "d".into()]
    }

    #[test]
    fn constant_speed() {
        let mut rs = Vec::new();
        for det in ["u", "c", "d"] {
            for k in 0..15 {
                rs.push(rec(det, 600 + 20 * k, "1", 3.0, 60.0, 10.0));
            }
        }
        let w = aggregate_records(&rs, &triplet(), 900, &AggregateOptions::default()).unwrap();
        let i = feature_index(1, 1, 0);
        assert_eq!(&w.values[i..i + 3], &[60.0, 0.0, 0.0]);
        assert!(!w.zero_mean);
    }

    #[test]
    fn three_slot_sample_std() {
        let mut rs = Vec::new();
        for det in ["u", "c", "d"] {
            for (k, s) in [50.0, 60.0, 70.0].into_iter().enumerate() {
                rs.push(rec(det, 840 + 20 * k as i64, "1", 1.0, s, 5.0));
            }
        }
        let opts = AggregateOptions {
            min_records: 3,
            ..Default::default()
        };
        let w = aggregate_records(&rs, &triplet(), 900, &opts).unwrap();
        let i = feature_index(1, 1, 0);
        assert_eq!(w.values[i], 60.0);
        assert!((w.values[i + 1] - 10.0).abs() < 1e-12);
        assert!((w.values[i + 2] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn lanes_average_before_time() {
        let mut rs = Vec::new();
        for det in ["u", "c", "d"] {
            for k in 0..15 {
                rs.push(rec(det, 20 * k, "1", 3.0, 90.0, 8.0));
                rs.push(rec(det, 20 * k, "2", 1.0, 50.0, 4.0));
            }
        }
        let w = aggregate_records(&rs, &triplet(), 300, &AggregateOptions::default()).unwrap();
        assert_eq!(w.values[feature_index(0, 0, 0)], 2.0);
        assert_eq!(w.values[feature_index(0, 1, 0)], 80.0);
        assert_eq!(w.values[feature_index(0, 2, 0)], 6.0);
        let plain = AggregateOptions {
            flow_weighted_speed: false,
            ..Default::default()
        };
        let w = aggregate_records(&rs, &triplet(), 300, &plain).unwrap();
        assert_eq!(w.values[feature_index(0, 1, 0)], 70.0);
    }

    #[test]
    fn zero_flow_flags_and_incomplete_rejects() {
        let mut rs = Vec::new();
        for det in ["u", "c", "d"] {
            for k in 0..15 {
                rs.push(rec(det, 20 * k, "1", 0.0, 0.0, 0.0));
            }
        }
        let w = aggregate_records(&rs, &triplet(), 300, &AggregateOptions::default()).unwrap();
        assert!(w.zero_mean);
        assert_eq!(w.values[feature_index(0, 0, 2)], 0.0);

        let short: Vec<_> = rs.into_iter().filter(|r| r.detector_id != "c" || r.timestamp < 100).collect();
        let err = aggregate_records(&short, &triplet(), 300, &AggregateOptions::default()).unwrap_err();
        assert!(err.to_string().contains("c: 5/15"), "{err}");
    }
}
