//! Three-phase pit stops: travel in, service, travel out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CarCondition, CarModelParams};

/// Allowed refuel amounts, in laps of consumption.
pub const REFUEL_OPTIONS: [u32; 3] = [4, 6, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandingWindow {
    pub from_lap: u32,
    pub mandatory_standing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitRegulation {
    pub travel_in: f64,
    pub travel_out: f64,
    pub standing_schedule: Vec<StandingWindow>,
    pub free_service_time: f64,
    /// Kilograms per second.
    pub refuel_rate: f64,
}

impl PitRegulation {
    pub fn validate(&self) -> Result<()> {
        if !(self.travel_in > 0.0) {
            return Err(Error::config("pit.travel_in", "must be > 0"));
        }
        if !(self.travel_out > 0.0) {
            return Err(Error::config("pit.travel_out", "must be > 0"));
        }
        if !(self.free_service_time >= 0.0) {
            return Err(Error::config("pit.free_service_time", "must be >= 0"));
        }
        if !(self.refuel_rate > 0.0) {
            return Err(Error::config("pit.refuel_rate", "must be > 0"));
        }
        let sched = &self.standing_schedule;
        if sched.is_empty() {
            return Err(Error::config("pit.standing_from_laps", "schedule is empty"));
        }
        for w in sched.windows(2) {
            if w[1].from_lap <= w[0].from_lap {
                return Err(Error::config(
                    "pit.standing_from_laps",
                    "laps must be strictly increasing",
                ));
            }
            if w[1].mandatory_standing > w[0].mandatory_standing {
                return Err(Error::config("pit.standing_times", "must be nonincreasing"));
            }
        }
        if sched.iter().any(|w| !(w.mandatory_standing >= 0.0)) {
            return Err(Error::config("pit.standing_times", "must be >= 0"));
        }
        if sched.last().map(|w| w.mandatory_standing) != Some(0.0) {
            return Err(Error::config("pit.standing_times", "final entry must be 0"));
        }
        Ok(())
    }

    /// Mandatory standing time for a stop made at the end of `lap`.
    pub fn mandatory_standing(&self, lap: u32) -> f64 {
        self.standing_schedule
            .iter()
            .take_while(|w| w.from_lap <= lap)
            .last()
            .map_or(0.0, |w| w.mandatory_standing)
    }

    /// First lap from which stops carry no mandatory standing time.
    pub fn first_free_lap(&self) -> u32 {
        self.standing_schedule
            .iter()
            .find(|w| w.mandatory_standing == 0.0)
            .map_or(1, |w| w.from_lap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitRequest {
    pub refuel_laps: u32,
    pub fit_new_tires: bool,
}

impl PitRequest {
    pub fn new(refuel_laps: u32) -> Result<Self> {
        if !REFUEL_OPTIONS.contains(&refuel_laps) {
            return Err(Error::Contract(format!(
                "refuel of {refuel_laps} laps is not one of {REFUEL_OPTIONS:?}"
            )));
        }
        Ok(PitRequest {
            refuel_laps,
            fit_new_tires: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitOutcome {
    /// Replaces the last sector of the in-lap.
    pub last_sector_time: f64,
    /// Replaces the first sector of the following lap.
    pub next_first_sector_time: f64,
    pub service_time: f64,
    pub refuel_amount: f64,
    pub condition: CarCondition,
}

/// Applies a stop at the end of `lap`. `cond` is the condition after the
/// in-lap's fuel burn.
pub fn apply_pit(
    cond: &CarCondition,
    params: &CarModelParams,
    request: &PitRequest,
    regulation: &PitRegulation,
    lap: u32,
) -> Result<PitOutcome> {
    if cond.retired {
        return Err(Error::Contract("pit stop requested for a retired car".into()));
    }
    let headroom = (params.tank_capacity - cond.fuel_mass).max(0.0);
    let refuel_amount = (request.refuel_laps as f64 * params.fuel_per_lap).min(headroom);
    let refuel_time = refuel_amount / regulation.refuel_rate;
    let mandatory = regulation.mandatory_standing(lap);
    let service_time = if mandatory > 0.0 {
        mandatory.max(refuel_time)
    } else {
        regulation.free_service_time + refuel_time
    };
    let mut condition = cond.clone();
    condition.fuel_mass += refuel_amount;
    if request.fit_new_tires {
        condition.tire_age = 0;
        condition.tire_deg = 0.0;
    }
    Ok(PitOutcome {
        last_sector_time: regulation.travel_in,
        next_first_sector_time: regulation.travel_out + service_time,
        service_time,
        refuel_amount,
        condition,
    })
}
