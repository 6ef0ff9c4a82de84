use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::aggregate::{aggregate_window, AggregateOptions, RecordIndex};
use super::records::WINDOW_SECONDS;
use super::{CaseControlDataset, FeatureWindow, Observation};
use crate::error::{Error, Result};
use crate::rng;

const DAY: i64 = 86_400;

/// A reported crash at a detector triplet (upstream, crash, downstream).
#[derive(Debug, Clone, PartialEq)]
pub struct CrashEvent {
    pub crash_time: i64,
    pub detectors: [String; 3],
}

/// `[crash − 10 min, crash − 5 min)`: the five minutes just before the crash
/// are skipped to absorb errors in the reported time.
pub fn case_window(crash_time: i64) -> (i64, i64) {
    let end = crash_time - WINDOW_SECONDS;
    (end - WINDOW_SECONDS, end)
}

pub fn extract_case_window(
    index: &RecordIndex,
    crash: &CrashEvent,
    opts: &AggregateOptions,
) -> Result<FeatureWindow> {
    aggregate_window(index, &crash.detectors, case_window(crash.crash_time).1, opts)
}

fn day_start(t: i64) -> i64 {
    t.div_euclid(DAY) * DAY
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub controls: Vec<FeatureWindow>,
    /// Day starts the controls came from, in draw order.
    pub days: Vec<i64>,
    /// Fewer than the requested number of valid days were available.
    pub shortfall: bool,
}

/// Draws up to `n` distinct crash-free days (seeded, without replacement)
/// whose window at the crash's detectors and clock time is complete.
/// `candidate_days` are day starts (UTC midnight, epoch seconds).
pub fn match_controls(
    index: &RecordIndex,
    crash: &CrashEvent,
    candidate_days: &[i64],
    n: usize,
    seed: u64,
    opts: &AggregateOptions,
) -> Result<MatchOutcome> {
    let case_end = case_window(crash.crash_time).1;
    let offset = case_end - day_start(crash.crash_time);
    let crash_day = day_start(crash.crash_time);
    let mut days: Vec<i64> = candidate_days
        .iter()
        .copied()
        .filter(|&d| d != crash_day)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    days.shuffle(&mut rng::stream(seed, &[rng::tag::MATCH]));
    let mut out = MatchOutcome {
        controls: Vec::with_capacity(n),
        days: Vec::with_capacity(n),
        shortfall: false,
    };
    for d in days {
        if out.controls.len() == n {
            break;
        }
        match aggregate_window(index, &crash.detectors, d + offset, opts) {
            Ok(w) => {
                out.controls.push(w);
                out.days.push(d);
            }
            Err(Error::Insufficient(msg)) => log::debug!("control day {d} skipped: {msg}"),
            Err(e) => return Err(e),
        }
    }
    out.shortfall = out.controls.len() < n;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineReport {
    pub cases: usize,
    pub controls: usize,
    /// Crash index and reason for cases without detector coverage.
    pub dropped: Vec<(usize, String)>,
    /// Strata emitted with fewer controls than requested.
    pub shortfall_strata: Vec<u32>,
}

/// Case window plus matched controls for every crash. Stratum ids are crash
/// indices; control days exclude any day with a crash at the same triplet.
pub fn build_case_control(
    index: &RecordIndex,
    crashes: &[CrashEvent],
    days: &[i64],
    n_controls: usize,
    opts: &AggregateOptions,
    seed: u64,
) -> Result<(CaseControlDataset, PipelineReport)> {
    let mut data = CaseControlDataset::default();
    let mut report = PipelineReport::default();
    for (i, crash) in crashes.iter().enumerate() {
        let case = match extract_case_window(index, crash, opts) {
            Ok(w) => w,
            Err(Error::Insufficient(msg)) => {
                log::warn!("crash {i} dropped: {msg}");
                report.dropped.push((i, msg));
                continue;
            }
            Err(e) => return Err(e),
        };
        let crash_days: BTreeSet<i64> = crashes
            .iter()
            .filter(|c| c.detectors == crash.detectors)
            .map(|c| day_start(c.crash_time))
            .collect();
        let free: Vec<i64> = days.iter().copied().filter(|d| !crash_days.contains(d)).collect();
        let stratum = i as u32;
        let m = match_controls(
            index,
            crash,
            &free,
            n_controls,
            rng::derive_seed(seed, &[i as u64]),
            opts,
        )?;
        if m.shortfall {
            log::warn!("stratum {stratum}: {} of {n_controls} controls", m.controls.len());
            report.shortfall_strata.push(stratum);
        }
        data.observations.push(Observation {
            window: case,
            label: 1,
            stratum,
        });
        report.cases += 1;
        report.controls += m.controls.len();
        data.observations.extend(m.controls.into_iter().map(|w| Observation {
            window: w,
            label: 0,
            stratum,
        }));
    }
    Ok((data, report))
}
