use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::records::DetectorRecord;
use super::{feature_index, feature_names, CaseControlDataset, FeatureWindow, Observation, N_FEATURES};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const DETECTOR_COLUMNS: [&str; 6] = ["detector_id", "timestamp", "lane", "flow", "speed", "occupancy"];
/// Columns after the 27 features in the case-control schema.
pub const CASE_CONTROL_TAIL: [&str; 4] = ["window_end", "detector_u", "detector_c", "detector_d"];

/// A rejected row and why.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

fn column_positions(headers: &csv::StringRecord, wanted: &[String]) -> Result<Vec<usize>> {
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|w| !headers.iter().any(|h| h.trim() == w.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format {
            line: 1,
            msg: format!("missing columns: {}", missing.join(", ")),
        });
    }
    Ok(wanted
        .iter()
        .map(|w| headers.iter().position(|h| h.trim() == w.as_str()).unwrap())
        .collect())
}

fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Ok(t);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc().timestamp());
        }
    }
    Err(format!("unparseable timestamp '{s}'"))
}

fn parse_f64(s: &str, name: &str) -> std::result::Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("{name}: not a number '{s}'"))
}

fn check_error_budget(errors: &[RowError], max_errors: Option<usize>) -> Result<()> {
    match max_errors {
        Some(max) if errors.len() > max => Err(Error::Data(format!(
            "{} invalid rows exceed the limit of {max}; first at line {}: {}",
            errors.len(),
            errors[0].line,
            errors[0].message
        ))),
        _ => Ok(()),
    }
}

/// Parses detector records, collecting invalid rows instead of failing.
/// More than `max_errors` rejected rows (if set) is fatal.
pub fn read_detector_csv<R: Read>(
    reader: R,
    max_errors: Option<usize>,
) -> Result<(Vec<DetectorRecord>, Vec<RowError>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let wanted: Vec<String> = DETECTOR_COLUMNS.iter().map(|s| s.to_string()).collect();
    let pos = column_positions(rdr.headers()?, &wanted)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(pos[k]).unwrap_or("");
        let parsed = (|| -> std::result::Result<DetectorRecord, String> {
            let r = DetectorRecord {
                detector_id: field(0).trim().to_string(),
                timestamp: parse_timestamp(field(1))?,
                lane: field(2).trim().to_string(),
                flow: parse_f64(field(3), "flow")?,
                speed: parse_f64(field(4), "speed")?,
                occupancy: parse_f64(field(5), "occupancy")?,
            };
            r.validate().map_err(|e| e.to_string())?;
            Ok(r)
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    check_error_budget(&errors, max_errors)?;
    Ok((records, errors))
}

pub fn write_detector_csv(path: &Path, records: &[DetectorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DETECTOR_COLUMNS)?;
    for r in records {
        w.write_record([
            r.detector_id.clone(),
            r.timestamp.to_string(),
            r.lane.clone(),
            r.flow.to_string(),
            r.speed.to_string(),
            r.occupancy.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn case_control_columns() -> Vec<String> {
    let mut cols = vec!["stratum_id".to_string(), "label".to_string()];
    cols.extend(feature_names());
    cols.extend(CASE_CONTROL_TAIL.iter().map(|s| s.to_string()));
    cols
}

/// Serialized case-control table; floats use shortest round-trip formatting.
pub fn case_control_csv_bytes(data: &CaseControlDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(case_control_columns())?;
    for o in &data.observations {
        let mut row = vec![o.stratum.to_string(), o.label.to_string()];
        row.extend(o.window.values.iter().map(|v| v.to_string()));
        row.push(o.window.window_end.to_string());
        row.extend(o.window.detectors.iter().cloned());
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_case_control_csv(path: &Path, data: &CaseControlDataset) -> Result<()> {
    write_atomic(path, &case_control_csv_bytes(data)?)
}

pub fn read_case_control_csv<R: Read>(
    reader: R,
    max_errors: Option<usize>,
) -> Result<(CaseControlDataset, Vec<RowError>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let wanted = case_control_columns();
    let pos = column_positions(rdr.headers()?, &wanted)?;
    let mut data = CaseControlDataset::default();
    let mut errors = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(pos[k]).unwrap_or("").trim();
        let parsed = (|| -> std::result::Result<Observation, String> {
            let stratum = field(0)
                .parse::<u32>()
                .map_err(|_| format!("stratum_id: bad value '{}'", field(0)))?;
            let label = match field(1) {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("label must be 0 or 1, got '{other}'")),
            };
            let mut values = [0.0; N_FEATURES];
            for (k, v) in values.iter_mut().enumerate() {
                *v = parse_f64(field(2 + k), &wanted[2 + k])?;
                if !v.is_finite() {
                    return Err(format!("{} is not finite", wanted[2 + k]));
                }
            }
            let window_end = parse_timestamp(field(2 + N_FEATURES))?;
            let det = |k: usize| field(3 + N_FEATURES + k).to_string();
            let zero_mean = (0..3).any(|s| (0..3).any(|m| values[feature_index(s, m, 0)] <= 0.0));
            Ok(Observation {
                window: FeatureWindow {
                    values,
                    window_end,
                    detectors: [det(0), det(1), det(2)],
                    zero_mean,
                },
                label,
                stratum,
            })
        })();
        match parsed {
            Ok(o) => data.observations.push(o),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    check_error_budget(&errors, max_errors)?;
    Ok((data, errors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_is_empty() {
        let (rs, errs) = read_detector_csv("detector_id,timestamp,lane,flow,speed,occupancy\n".as_bytes(), None).unwrap();
        assert!(rs.is_empty() && errs.is_empty());
    }

    #[test]
    fn bad_occupancy_reported_with_line() {
        let text = "detector_id,timestamp,lane,flow,speed,occupancy\n\
                    d1,0,1,3,60,10\n\
                    d1,20,1,3,60,105\n\
                    d1,2018-05-01T13:50:00Z,1,3,60,10\n";
        let (rs, errs) = read_detector_csv(text.as_bytes(), None).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 3);
        assert!(errs[0].message.contains("occupancy"));
        assert_eq!(rs[1].timestamp, 1_525_182_600);
        assert!(read_detector_csv(text.as_bytes(), Some(0)).is_err());
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = read_detector_csv("detector_id,timestamp,lane,flow,speed\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("occupancy"));
    }
}
