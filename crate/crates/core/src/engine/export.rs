//! Serialisation of race outputs: event log, final standings, lap chart.

use std::fmt::Write;

use super::{classify, RaceState};
use crate::error::Result;

/// One row per event: `lap,sector,car_id,event,time_delta_s`. Race-wide events
/// leave `car_id` empty.
pub fn event_log_csv(state: &RaceState) -> String {
    let mut out = String::from("lap,sector,car_id,event,time_delta_s\n");
    for e in &state.events {
        let car = e.car.map(|c| c.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{:.6}", e.lap, e.sector, car, e.kind.as_str(), e.time_delta).unwrap();
    }
    out
}

/// Final classification as pretty-printed JSON.
pub fn standings_json(state: &RaceState) -> Result<String> {
    Ok(serde_json::to_string_pretty(&classify(state))?)
}

/// Position of every car after each lap: `lap,car_0,car_1,...`.
pub fn lap_chart_csv(state: &RaceState) -> String {
    let mut out = String::from("lap");
    for id in 0..state.cars.len() {
        write!(out, ",car_{id}").unwrap();
    }
    out.push('\n');
    for (i, row) in state.lap_positions.iter().enumerate() {
        write!(out, "{}", i + 1).unwrap();
        for p in row {
            write!(out, ",{p}").unwrap();
        }
        out.push('\n');
    }
    out
}
