use crate::error::{Error, Result};

pub const SLOT_SECONDS: i64 = 20;
pub const WINDOW_SECONDS: i64 = 300;

/// One lane's 20-second detector reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub detector_id: String,
    /// Seconds since the epoch, on the 20-second grid.
    pub timestamp: i64,
    pub lane: String,
    /// Vehicles in the lane during the slot.
    pub flow: f64,
    /// km/h.
    pub speed: f64,
    /// Percent of the slot the loop was occupied.
    pub occupancy: f64,
}

impl DetectorRecord {
    pub fn validate(&self) -> Result<()> {
        if self.detector_id.is_empty() {
            return Err(Error::Data("empty detector_id".into()));
        }
        if self.timestamp.rem_euclid(SLOT_SECONDS) != 0 {
            return Err(Error::Data(format!(
                "timestamp {} is not on the {SLOT_SECONDS}-s grid",
                self.timestamp
            )));
        }
        for (name, v) in [("flow", self.flow), ("speed", self.speed), ("occupancy", self.occupancy)] {
            if !v.is_finite() {
                return Err(Error::Data(format!("{name} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::Data(format!("{name} {v} is negative")));
            }
        }
        if self.occupancy > 100.0 {
            return Err(Error::Data(format!("occupancy {} exceeds 100", self.occupancy)));
        }
        Ok(())
    }
}
