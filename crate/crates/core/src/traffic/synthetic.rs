//! Synthetic stand-ins for detector data.
//!
//! Feature-level: a Gaussian copula with truncated-normal marginals whose
//! latent parameters are calibrated so each marginal hits its target mean and
//! standard deviation inside `[min, max]`. Correlation comes from a shared
//! congestion factor plus one factor per (measure, statistic) linking the
//! three segments. Cases are the same law shifted in latent units.
//!
//! Only two statistics per (segment, measure) are drawn; the third follows
//! from `CV = Std / Mean` so the identity holds exactly.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::records::{DetectorRecord, SLOT_SECONDS, WINDOW_SECONDS};
use super::{feature_index, matching, CaseControlDataset, CrashEvent, FeatureWindow, Observation, N_FEATURES};
use crate::error::{Error, Result};
use crate::rng;

/// Target moments and bounds of one drawn feature, with its factor loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Loading on the shared congestion factor.
    #[serde(default)]
    pub loading: f64,
    /// Loading on the factor shared by the same statistic across segments.
    #[serde(default)]
    pub link: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// One entry per drawn feature, see [`SyntheticSpec::drawn_features`].
    pub marginals: Vec<Marginal>,
    /// Case shift per marginal, in latent standard deviations.
    pub effect: Vec<f64>,
    pub n_cases: usize,
    pub controls_per_case: usize,
}

// (measure, drawn statistics): Flow and Occupancy draw Mean and Std, Speed
// draws Mean and CV.
const DRAWN: [(usize, [usize; 2]); 3] = [(0, [0, 1]), (1, [0, 2]), (2, [0, 1])];

impl SyntheticSpec {
    /// Names of the 18 drawn features in generation order.
    pub fn drawn_features() -> Vec<String> {
        let names = super::feature_names();
        let mut out = Vec::with_capacity(18);
        for seg in 0..3 {
            for (m, stats) in DRAWN {
                for s in stats {
                    out.push(names[feature_index(seg, m, s)].clone());
                }
            }
        }
        out
    }

    /// Defaults: the Mean_Speed_C, CV_Speed_U, Mean_Flow_C and
    /// Std_Occupancy_C targets (reused for the same statistic on the other
    /// segments) plus assumed values for Std_Flow and Mean_Occupancy. The
    /// case shift (slower, more variable, more occupied crash segment) is a
    /// modelling assumption.
    pub fn calibrated_defaults() -> Self {
        let base = |name: &str| -> (f64, f64, f64, f64, f64, f64) {
            match name.rsplit_once('_').map(|(stem, _)| stem).unwrap_or(name) {
                "Mean_Flow" => (5.82, 2.78, 0.01, 11.80, 0.3, 0.5),
                "Std_Flow" => (1.60, 0.80, 0.05, 6.00, 0.3, 0.4),
                "Mean_Speed" => (52.40, 21.47, 7.59, 94.34, -0.6, 0.5),
                "CV_Speed" => (0.34, 0.23, 0.06, 1.98, 0.5, 0.4),
                "Mean_Occupancy" => (14.00, 9.00, 0.50, 60.00, 0.6, 0.5),
                "Std_Occupancy" => (9.66, 7.59, 0.13, 44.37, 0.5, 0.4),
                other => unreachable!("no default for {other}"),
            }
        };
        let names = Self::drawn_features();
        let marginals: Vec<Marginal> = names
            .iter()
            .map(|n| {
                let (mean, std, min, max, loading, link) = base(n);
                Marginal {
                    name: n.clone(),
                    mean,
                    std,
                    min,
                    max,
                    loading,
                    link,
                }
            })
            .collect();
        let effect = names.iter().map(|n| default_effect(n)).collect();
        Self {
            marginals,
            effect,
            n_cases: 524,
            controls_per_case: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::drawn_features();
        if self.marginals.len() != expected.len() {
            return Err(Error::DimensionMismatch {
                expected: expected.len(),
                actual: self.marginals.len(),
            });
        }
        if self.effect.len() != self.marginals.len() {
            return Err(Error::DimensionMismatch {
                expected: self.marginals.len(),
                actual: self.effect.len(),
            });
        }
        for (m, name) in self.marginals.iter().zip(&expected) {
            if &m.name != name {
                return Err(Error::Config(format!("marginal '{}' where '{name}' was expected", m.name)));
            }
            if !(m.std > 0.0) || !m.std.is_finite() {
                return Err(Error::Config(format!("{}: std must be positive", m.name)));
            }
            if !(m.min < m.max) || !m.min.is_finite() || !m.max.is_finite() {
                return Err(Error::Config(format!("{}: min must be below max", m.name)));
            }
            if !(m.min < m.mean && m.mean < m.max) {
                return Err(Error::Config(format!("{}: mean must lie inside (min, max)", m.name)));
            }
            if m.loading.powi(2) + m.link.powi(2) >= 1.0 {
                return Err(Error::Config(format!(
                    "{}: loading² + link² must stay below 1",
                    m.name
                )));
            }
        }
        if self.marginals.iter().any(|m| m.name.starts_with("Mean_") && m.min <= 0.0) {
            return Err(Error::Config("Mean features need a positive minimum so CV is defined".into()));
        }
        if self.effect.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("effect vector"));
        }
        if self.n_cases == 0 {
            return Err(Error::Config("n_cases must be positive".into()));
        }
        Ok(())
    }
}

/// Default case shift for a drawn feature, in latent standard deviations.
pub fn default_effect(name: &str) -> f64 {
    match name {
        "Mean_Speed_C" => -1.0,
        "CV_Speed_U" => 0.6,
        "Std_Occupancy_C" => 0.7,
        _ => 0.0,
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Mean and standard deviation of `N(mu, sigma²)` truncated to `[lo, hi]`.
pub fn truncated_normal_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = std_normal();
    let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let z = if a > 0.0 { n.sf(a) - n.sf(b) } else { n.cdf(b) - n.cdf(a) };
    let (pa, pb) = (n.pdf(a), n.pdf(b));
    let r = (pa - pb) / z;
    let mean = mu + sigma * r;
    let var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - r * r);
    (mean, var.max(0.0).sqrt())
}

/// Latent `(mu, sigma)` whose truncation to `[min, max]` has the target
/// mean and standard deviation.
fn calibrate(m: &Marginal) -> Result<(f64, f64)> {
    let width = m.max - m.min;
    let mu_for = |sigma: f64| {
        let (mut lo, mut hi) = (m.min - 25.0 * sigma, m.max + 25.0 * sigma);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if truncated_normal_moments(mid, sigma, m.min, m.max).0 < m.mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let (mut lo, mut hi) = ((1e-4 * width).ln(), (1e3 * width).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = mid.exp();
        if truncated_normal_moments(mu_for(s), s, m.min, m.max).1 < m.std {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = (0.5 * (lo + hi)).exp();
    let mu = mu_for(sigma);
    let (mean, std) = truncated_normal_moments(mu, sigma, m.min, m.max);
    if (mean - m.mean).abs() > 1e-6 * m.std || (std - m.std).abs() > 1e-6 * m.std {
        return Err(Error::Config(format!(
            "{}: mean {} / std {} cannot be reached inside [{}, {}]",
            m.name, m.mean, m.std, m.min, m.max
        )));
    }
    Ok((mu, sigma))
}

/// Maps a latent standard-normal draw `z` through the truncated marginal.
fn truncated_quantile(z: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let n = std_normal();
    let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let x = if a > 0.0 {
        // Work with upper tails to keep precision far above the mean.
        let u = n.sf(z);
        let (sa, sb) = (n.sf(a), n.sf(b));
        mu - sigma * n.inverse_cdf(sb + u * (sa - sb))
    } else {
        let u = n.cdf(z);
        let (ca, cb) = (n.cdf(a), n.cdf(b));
        mu + sigma * n.inverse_cdf(ca + u * (cb - ca))
    };
    x.clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTruth {
    pub name: String,
    pub latent_mean: f64,
    pub latent_std: f64,
    pub min: f64,
    pub max: f64,
    pub loading: f64,
    pub link: f64,
    pub shift: f64,
}

/// Everything needed to reproduce or test against the generating law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub n_cases: usize,
    pub controls_per_case: usize,
    pub features: Vec<FeatureTruth>,
}

const BASE_EPOCH: i64 = 1_525_132_800; // 2018-05-01T00:00:00Z
const DAY: i64 = 86_400;

/// Draws `n_cases` complete strata of one case and `controls_per_case`
/// controls each.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(CaseControlDataset, GroundTruth)> {
    spec.validate()?;
    let latent: Vec<(f64, f64)> = spec.marginals.iter().map(calibrate).collect::<Result<_>>()?;
    let truth = GroundTruth {
        seed,
        n_cases: spec.n_cases,
        controls_per_case: spec.controls_per_case,
        features: spec
            .marginals
            .iter()
            .zip(&latent)
            .zip(&spec.effect)
            .map(|((m, &(mu, s)), &shift)| FeatureTruth {
                name: m.name.clone(),
                latent_mean: mu,
                latent_std: s,
                min: m.min,
                max: m.max,
                loading: m.loading,
                link: m.link,
                shift,
            })
            .collect(),
    };

    let per_segment = spec.marginals.len() / 3;
    let mut data = CaseControlDataset::default();
    for s in 0..spec.n_cases {
        let site = s % 50;
        let detectors = [format!("U{site:03}"), format!("C{site:03}"), format!("D{site:03}")];
        let day = (s % 28) as i64;
        let clock = 300 * ((s * 37) % 288) as i64 + WINDOW_SECONDS;
        for k in 0..=spec.controls_per_case {
            let is_case = k == 0;
            let mut r = rng::stream(seed, &[rng::tag::SYNTH, s as u64, k as u64]);
            let congestion: f64 = r.sample(StandardNormal);
            let links: Vec<f64> = (0..per_segment).map(|_| r.sample(StandardNormal)).collect();
            let mut drawn = Vec::with_capacity(spec.marginals.len());
            for (f, m) in spec.marginals.iter().enumerate() {
                let e: f64 = r.sample(StandardNormal);
                let own = (1.0 - m.loading.powi(2) - m.link.powi(2)).sqrt();
                let mut z = m.loading * congestion + m.link * links[f % per_segment] + own * e;
                if is_case {
                    z += spec.effect[f];
                }
                let (mu, sd) = latent[f];
                drawn.push(truncated_quantile(z, mu, sd, m.min, m.max));
            }
            let obs_day = if is_case { day } else { (day + k as i64) % 28 + 28 };
            data.observations.push(Observation {
                window: FeatureWindow {
                    values: derive_window(&drawn),
                    window_end: BASE_EPOCH + obs_day * DAY + clock,
                    detectors: detectors.clone(),
                    zero_mean: false,
                },
                label: u8::from(is_case),
                stratum: s as u32,
            });
        }
    }
    Ok((data, truth))
}

/// Fills all 27 statistics from the 18 drawn ones.
fn derive_window(drawn: &[f64]) -> [f64; N_FEATURES] {
    let mut v = [0.0; N_FEATURES];
    let mut it = drawn.iter().copied();
    for seg in 0..3 {
        for (m, stats) in DRAWN {
            for s in stats {
                v[feature_index(seg, m, s)] = it.next().expect("18 drawn values");
            }
            let (mean, std, cv) = (feature_index(seg, m, 0), feature_index(seg, m, 1), feature_index(seg, m, 2));
            if stats[1] == 2 {
                v[std] = v[cv] * v[mean];
            } else {
                v[cv] = v[std] / v[mean];
            }
        }
    }
    v
}

/// Record-level synthetic study period, used to exercise the aggregation
/// and matching pipeline end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthSpec {
    pub n_days: usize,
    pub n_sites: usize,
    pub n_crashes: usize,
    pub lanes: usize,
    /// Probability that a detector loses most slots in a given window.
    pub missing_rate: f64,
}

impl Default for MonthSpec {
    fn default() -> Self {
        Self {
            n_days: 30,
            n_sites: 6,
            n_crashes: 24,
            lanes: 3,
            missing_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonthData {
    pub records: Vec<DetectorRecord>,
    pub crashes: Vec<CrashEvent>,
    /// Day starts of the study period.
    pub days: Vec<i64>,
}

/// Crashes at random sites and minutes, with detector records generated for
/// the crash clock window on every day of the period (only those windows are
/// materialized). Crash-day windows carry a congestion signature.
pub fn synthetic_month(spec: &MonthSpec, seed: u64) -> Result<MonthData> {
    if spec.n_days == 0 || spec.n_sites == 0 || spec.lanes == 0 {
        return Err(Error::InvalidParameter("month needs days, sites and lanes".into()));
    }
    if !(0.0..=1.0).contains(&spec.missing_rate) {
        return Err(Error::InvalidParameter("missing_rate must lie in [0, 1]".into()));
    }
    let days: Vec<i64> = (0..spec.n_days as i64).map(|d| BASE_EPOCH + d * DAY).collect();
    let mut r = rng::stream(seed, &[rng::tag::SYNTH, u64::MAX]);
    let crashes: Vec<CrashEvent> = (0..spec.n_crashes)
        .map(|_| {
            let site = r.gen_range(0..spec.n_sites);
            let day = r.gen_range(0..spec.n_days) as i64;
            let minute = r.gen_range(0..1440) as i64;
            CrashEvent {
                crash_time: BASE_EPOCH + day * DAY + 60 * minute,
                detectors: [format!("U{site:02}"), format!("C{site:02}"), format!("D{site:02}")],
            }
        })
        .collect();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (ci, crash) in crashes.iter().enumerate() {
        let case_end = matching::case_window(crash.crash_time).1;
        let offset = case_end - crash.crash_time.div_euclid(DAY) * DAY;
        let crash_day = crash.crash_time.div_euclid(DAY) * DAY;
        for (di, &day) in days.iter().enumerate() {
            let end = day + offset;
            let congested = day == crash_day;
            for (seg, det) in crash.detectors.iter().enumerate() {
                let mut w = rng::stream(seed, &[rng::tag::SYNTH, ci as u64, di as u64, seg as u64]);
                let sparse = w.gen::<f64>() < spec.missing_rate;
                let level: f64 = w.sample(StandardNormal);
                let base_speed = 80.0 + 8.0 * level - if congested { 30.0 } else { 0.0 };
                let base_flow = (4.0 + 0.8 * level).max(0.5);
                let slots = WINDOW_SECONDS / SLOT_SECONDS;
                for k in 0..slots {
                    let t = end - WINDOW_SECONDS + k * SLOT_SECONDS;
                    let keep = !sparse || k % 3 == 0;
                    if !keep || !seen.insert((det.clone(), t)) {
                        continue;
                    }
                    for lane in 0..spec.lanes {
                        let flow = (base_flow + w.sample::<f64, _>(StandardNormal)).round().max(0.0);
                        let spread = if congested { 12.0 } else { 5.0 };
                        let speed = (base_speed + spread * w.sample::<f64, _>(StandardNormal)).max(3.0);
                        let occ = (flow * 2.5 + if congested { 12.0 } else { 0.0 }
                            + 2.0 * w.sample::<f64, _>(StandardNormal))
                        .clamp(0.0, 100.0);
                        records.push(DetectorRecord {
                            detector_id: det.clone(),
                            timestamp: t,
                            lane: (lane + 1).to_string(),
                            flow,
                            speed,
                            occupancy: occ,
                        });
                    }
                }
            }
        }
    }
    Ok(MonthData {
        records,
        crashes,
        days,
    })
}
