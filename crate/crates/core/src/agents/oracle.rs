//! Exhaustive strategy search on the deterministic race.
//!
//! With every random model off the agent's race time depends only on its own
//! decisions, so the search is a memoised recursion over
//! (lap, fuel, tire age, pending pit-out time). Pruning: no stop on the last
//! lap, no stops on consecutive laps, no stop when the fuel already covers
//! the race, and no refuel option larger than the smallest one covering the
//! rest of the race.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::engine::{apply_pit, PitRequest, RaceConfig, REFUEL_OPTIONS};
use crate::env::ActionId;
use crate::error::{Error, Result};
use crate::model::{advance_condition, sector_time, CarCondition};

pub const MAX_ORACLE_LAPS: u32 = 30;

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub actions: Vec<ActionId>,
    pub race_time: f64,
    /// Laps at whose end the car stops.
    pub stop_laps: Vec<u32>,
    /// Refuel of each stop, in laps of consumption.
    pub refuel_laps: Vec<u32>,
}

type Key = (u32, u64, u32, u64);

struct Search<'a> {
    cfg: &'a RaceConfig,
    memo: HashMap<Key, (f64, usize)>,
}

/// Time of one lap and the condition after it, or `None` if the car
/// retires. Mirrors the engine with every random model off.
fn run_lap(
    cfg: &RaceConfig,
    cond: &CarCondition,
    lap: u32,
    pending_out: Option<f64>,
    request: Option<PitRequest>,
) -> Option<(f64, CarCondition, Option<f64>)> {
    let next = advance_condition(cond, &cfg.car);
    if next.retired {
        return None;
    }
    let n = cfg.track.n_sectors();
    let mut t = 0.0;
    for s in 1..=n {
        let mut pit_time = if s == 1 { pending_out } else { None };
        if s == n && request.is_some() {
            pit_time = Some(pit_time.unwrap_or(0.0) + cfg.regulation.travel_in);
        }
        t += match pit_time {
            Some(p) => p,
            None => sector_time(cond, cfg.track.sector(s), &cfg.car, 0.0),
        };
    }
    match request {
        None => Some((t, next, None)),
        Some(req) => {
            let out = apply_pit(&next, &cfg.car, &req, &cfg.regulation, lap).ok()?;
            Some((t, out.condition, Some(out.next_first_sector_time)))
        }
    }
}

impl Search<'_> {
    fn allowed(&self, cond: &CarCondition, lap: u32, pending: Option<f64>) -> Vec<usize> {
        let mut acts = vec![0];
        let c = &self.cfg.car;
        if lap >= self.cfg.laps || pending.is_some() {
            return acts;
        }
        let after = cond.fuel_mass - c.fuel_per_lap;
        let need = (self.cfg.laps - lap) as f64 * c.fuel_per_lap - after;
        if need <= TIE_EPS {
            return acts;
        }
        let headroom = c.tank_capacity - after;
        for (k, &laps) in REFUEL_OPTIONS.iter().enumerate() {
            acts.push(k + 1);
            let amount = laps as f64 * c.fuel_per_lap;
            if amount + TIE_EPS >= need || amount + TIE_EPS >= headroom {
                break;
            }
        }
        acts
    }

    fn best(&mut self, lap: u32, cond: &CarCondition, pending: Option<f64>) -> f64 {
        if lap > self.cfg.laps {
            return 0.0;
        }
        let key = (lap, cond.fuel_mass.to_bits(), cond.tire_age, pending.map_or(u64::MAX, f64::to_bits));
        if let Some(&(t, _)) = self.memo.get(&key) {
            return t;
        }
        let mut best = (f64::INFINITY, 0);
        for a in self.allowed(cond, lap, pending) {
            let req = ActionId::new(a).unwrap().to_request();
            let Some((t, next, out)) = run_lap(self.cfg, cond, lap, pending, req) else {
                continue;
            };
            let total = t + self.best(lap + 1, &next, out);
            if total < best.0 - TIE_EPS {
                best = (total, a);
            }
        }
        self.memo.insert(key, best);
        best.0
    }
}

/// Optimal action sequence for the agent car on the deterministic race.
/// Ties go to the sequence that stops later (lower action index first).
pub fn strategy_oracle(cfg: &RaceConfig) -> Result<OracleResult> {
    cfg.validate()?;
    if cfg.laps > MAX_ORACLE_LAPS {
        return Err(Error::config(
            "race.laps",
            format!("oracle search is limited to {MAX_ORACLE_LAPS} laps"),
        ));
    }
    let mut search = Search {
        cfg,
        memo: HashMap::new(),
    };
    let start = CarCondition::fresh(cfg.starting_fuel, cfg.agent_grid_slot);
    let total = search.best(1, &start, None);
    if !total.is_finite() {
        return Err(Error::Contract("no strategy finishes the race".into()));
    }
    let mut actions = Vec::new();
    let (mut cond, mut pending) = (start, None);
    let (mut stop_laps, mut refuel_laps) = (Vec::new(), Vec::new());
    for lap in 1..=cfg.laps {
        search.best(lap, &cond, pending);
        let key = (lap, cond.fuel_mass.to_bits(), cond.tire_age, pending.map_or(u64::MAX, f64::to_bits));
        let a = ActionId::new(search.memo[&key].1).unwrap();
        actions.push(a);
        if let Some(req) = a.to_request() {
            stop_laps.push(lap);
            refuel_laps.push(req.refuel_laps);
        }
        let (_, next, out) = run_lap(cfg, &cond, lap, pending, a.to_request()).expect("optimal path is feasible");
        cond = next;
        pending = out;
    }
    Ok(OracleResult {
        actions,
        race_time: total,
        stop_laps,
        refuel_laps,
    })
}

/// Deterministic race time of an action sequence for the agent car, or
/// `None` if the car retires. Actions past the sequence end mean no stop.
pub fn oracle_race_time(cfg: &RaceConfig, actions: &[ActionId]) -> Option<f64> {
    let mut cond = CarCondition::fresh(cfg.starting_fuel, cfg.agent_grid_slot);
    let mut pending = None;
    let mut total = 0.0;
    for lap in 1..=cfg.laps {
        let a = actions.get(lap as usize - 1).copied().unwrap_or(ActionId::NO_PIT);
        let (t, next, out) = run_lap(cfg, &cond, lap, pending, a.to_request())?;
        total += t;
        cond = next;
        pending = out;
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    fn base() -> RaceConfig {
        SimConfig::default().race_config().unwrap().deterministic()
    }

    #[test]
    fn short_race_pits_before_running_dry() {
        let mut cfg = base();
        cfg.laps = 5;
        cfg.starting_fuel = 3.0 * cfg.car.fuel_per_lap;
        let r = strategy_oracle(&cfg).unwrap();
        assert!(!r.stop_laps.is_empty());
        assert!(r.stop_laps[0] <= 3);
        assert!(oracle_race_time(&cfg, &r.actions).is_some());
    }

    #[test]
    fn enough_fuel_means_no_stop() {
        let mut cfg = base();
        cfg.laps = 6;
        let r = strategy_oracle(&cfg).unwrap();
        assert!(r.actions.iter().all(|a| *a == ActionId::NO_PIT));
    }

    #[test]
    fn oracle_time_matches_replay() {
        let cfg = base();
        let r = strategy_oracle(&cfg).unwrap();
        let t = oracle_race_time(&cfg, &r.actions).unwrap();
        assert!((t - r.race_time).abs() < 1e-6);
    }

    #[test]
    fn too_long_race_rejected() {
        let mut cfg = base();
        cfg.laps = 31;
        assert!(strategy_oracle(&cfg).is_err());
    }
}
