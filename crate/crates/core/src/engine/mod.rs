//! Race orchestration: grid, rolling start, sector-by-sector laps, pit
//! stops, Code60 phases, overtakes, retirement and classification.
//!
//! The race advances one lap per [`step_lap`] call. Pit decisions for a lap
//! are collected before the lap starts; a stop requested for lap `i`
//! replaces the last sector of lap `i` with the pit-in time and the first
//! sector of lap `i + 1` with pit-out plus service.

mod export;
mod opponent;
mod pit;

pub use export::{event_log_csv, lap_chart_csv, standings_json};
pub use opponent::{opponent_decide, planned_stops, OPPONENT_STOPS};
pub use pit::{apply_pit, PitOutcome, PitRegulation, PitRequest, StandingWindow, REFUEL_OPTIONS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{advance_condition, sector_time, CarCondition, CarModelParams, TrackConfig};
use crate::stochastic::{
    attempt_overtake, c60_sector_time, roll_c60, sample_start_delay, sample_traffic_penalty, C60Event, C60Model,
    Gaussian, OvertakeModel, OvertakeOutcome, RngStream, StartModel, StreamPurpose, TrafficModel,
};

/// Switches for each random model. With everything off a race is a pure
/// function of the configuration and the decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StochasticToggles {
    pub start: bool,
    pub traffic: bool,
    pub c60: bool,
    pub overtakes: bool,
}

impl StochasticToggles {
    pub fn all_on() -> Self {
        StochasticToggles {
            start: true,
            traffic: true,
            c60: true,
            overtakes: true,
        }
    }

    pub fn all_off() -> Self {
        StochasticToggles {
            start: false,
            traffic: false,
            c60: false,
            overtakes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceModels {
    pub start: StartModel,
    pub traffic: TrafficModel,
    pub c60: C60Model,
    pub overtake: OvertakeModel,
    pub toggles: StochasticToggles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig {
    pub laps: u32,
    pub n_opponents: usize,
    /// 1-based grid slot of the agent car (car 0).
    pub agent_grid_slot: usize,
    pub track: TrackConfig,
    pub car: CarModelParams,
    pub starting_fuel: f64,
    /// Distribution of the opponents' per-lap pace offset.
    pub opponent_pace: Gaussian,
    pub regulation: PitRegulation,
    pub models: RaceModels,
}

impl RaceConfig {
    pub fn field_size(&self) -> usize {
        self.n_opponents + 1
    }

    /// Copy with every random model switched off.
    pub fn deterministic(&self) -> Self {
        let mut cfg = self.clone();
        cfg.models.toggles = StochasticToggles::all_off();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.laps < 1 || self.laps > 1000 {
            return Err(Error::config("race.laps", "must lie in 1..=1000"));
        }
        if self.agent_grid_slot < 1 || self.agent_grid_slot > self.field_size() {
            return Err(Error::config(
                "race.agent_grid_slot",
                format!("must lie in 1..={}", self.field_size()),
            ));
        }
        self.track.validate()?;
        self.car.validate()?;
        if !(self.starting_fuel >= 0.0 && self.starting_fuel <= self.car.tank_capacity) {
            return Err(Error::config("car.starting_fuel", "must lie in [0, tank_capacity]"));
        }
        if !(self.opponent_pace.sigma >= 0.0) {
            return Err(Error::config("opponents.pace_offset_stddev", "must be >= 0"));
        }
        self.regulation.validate()?;
        let m = &self.models;
        m.start.validate()?;
        if m.start.per_grid_slot.len() < self.field_size() {
            return Err(Error::config(
                "start",
                format!(
                    "start model covers {} grid slots, field has {}",
                    m.start.per_grid_slot.len(),
                    self.field_size()
                ),
            ));
        }
        let n = self.track.n_sectors();
        m.traffic.validate()?;
        if m.traffic.per_sector.len() != n {
            return Err(Error::config("traffic", format!("expected {n} sectors")));
        }
        m.c60.validate()?;
        if m.c60.per_sector_prob.len() != n {
            return Err(Error::config("c60.probability", format!("expected {n} sectors")));
        }
        m.overtake.validate()?;
        if m.overtake.per_sector.len() != n {
            return Err(Error::config("overtake", format!("expected {n} sectors")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CarStreams {
    start: RngStream,
    traffic: RngStream,
    overtake: RngStream,
}

#[derive(Debug, Clone)]
pub struct CarState {
    pub id: usize,
    pub grid_slot: usize,
    pub params: CarModelParams,
    pub condition: CarCondition,
    pub cumulative_time: f64,
    pub laps_completed: u32,
    pub lap_times: Vec<f64>,
    pub stops: u32,
    pub last_pit_lap: Option<u32>,
    /// Time of the first sector of the next lap when leaving the pits.
    pub pending_out: Option<f64>,
    pub start_delay: Option<f64>,
    streams: CarStreams,
}

impl CarState {
    pub fn retired(&self) -> bool {
        self.condition.retired
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    PitIn,
    PitOut,
    C60,
    Pass,
    FailedPass,
    Retired,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::PitIn => "pit_in",
            EventKind::PitOut => "pit_out",
            EventKind::C60 => "c60",
            EventKind::Pass => "pass",
            EventKind::FailedPass => "failed_pass",
            EventKind::Retired => "retired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceEvent {
    pub lap: u32,
    /// 0 for events not tied to a sector.
    pub sector: usize,
    pub car: Option<usize>,
    pub kind: EventKind,
    pub time_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorRecord {
    pub lap: u32,
    pub sector: usize,
    pub car: usize,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct RaceState {
    pub seed: u64,
    /// Lap simulated by the next [`step_lap`] call.
    pub next_lap: u32,
    pub total_laps: u32,
    pub cars: Vec<CarState>,
    /// Car ids in running order; retired cars at the back.
    pub order: Vec<usize>,
    pub c60s: Vec<C60Event>,
    pub events: Vec<RaceEvent>,
    /// Positions by car id after each completed lap.
    pub lap_positions: Vec<Vec<usize>>,
    pub sector_log: Option<Vec<SectorRecord>>,
    race_rng: RngStream,
}

impl RaceState {
    pub fn finished(&self) -> bool {
        self.next_lap > self.total_laps || self.cars.iter().all(|c| c.retired())
    }

    pub fn position_of(&self, car: usize) -> usize {
        self.order.iter().position(|&c| c == car).map_or(self.cars.len(), |p| p + 1)
    }

    pub fn active_c60s(&self, lap: u32) -> usize {
        self.c60s
            .iter()
            .filter(|e| lap >= e.start_lap && lap < e.start_lap + e.duration_laps)
            .count()
    }

    /// Keeps every sector time, for data emission.
    pub fn record_sectors(&mut self) {
        self.sector_log.get_or_insert_with(Vec::new);
    }

    fn refresh_positions(&mut self) {
        for (i, &id) in self.order.iter().enumerate() {
            self.cars[id].condition.position = i + 1;
        }
    }

    fn reorder(&mut self, running: Vec<usize>) {
        let mut retired: Vec<usize> = self.order.iter().copied().filter(|&c| self.cars[c].retired()).collect();
        retired.sort_by(|&a, &b| {
            let (ca, cb) = (&self.cars[a], &self.cars[b]);
            cb.laps_completed
                .cmp(&ca.laps_completed)
                .then(ca.cumulative_time.total_cmp(&cb.cumulative_time))
        });
        self.order = running;
        self.order.extend(retired);
        self.refresh_positions();
    }
}

/// Builds the grid. The agent is car 0 at its configured slot; opponents
/// fill the remaining slots in id order and draw their pace offsets here.
pub fn init_race(cfg: &RaceConfig, seed: u64) -> Result<RaceState> {
    cfg.validate()?;
    let n = cfg.field_size();
    let mut slots = Vec::with_capacity(n);
    let mut free = (1..=n).filter(|&s| s != cfg.agent_grid_slot);
    for id in 0..n {
        slots.push(if id == 0 { cfg.agent_grid_slot } else { free.next().unwrap() });
    }

    let cars: Vec<CarState> = (0..n)
        .map(|id| {
            let mut params = cfg.car.clone();
            if id > 0 {
                let mut pace = RngStream::derive(seed, id as u64, StreamPurpose::Pace);
                let z = pace.standard_normal();
                params.base_lap_offset = (cfg.opponent_pace.mu + cfg.opponent_pace.sigma * z).max(0.0);
            }
            CarState {
                id,
                grid_slot: slots[id],
                params,
                condition: CarCondition::fresh(cfg.starting_fuel, slots[id]),
                cumulative_time: 0.0,
                laps_completed: 0,
                lap_times: Vec::with_capacity(cfg.laps as usize),
                stops: 0,
                last_pit_lap: None,
                pending_out: None,
                start_delay: None,
                streams: CarStreams {
                    start: RngStream::derive(seed, id as u64, StreamPurpose::Start),
                    traffic: RngStream::derive(seed, id as u64, StreamPurpose::Traffic),
                    overtake: RngStream::derive(seed, id as u64, StreamPurpose::Overtake),
                },
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&id| slots[id]);
    let mut state = RaceState {
        seed,
        next_lap: 1,
        total_laps: cfg.laps,
        cars,
        order,
        c60s: Vec::new(),
        events: Vec::new(),
        lap_positions: Vec::new(),
        sector_log: None,
        race_rng: RngStream::derive(seed, u64::MAX, StreamPurpose::Race),
    };
    state.refresh_positions();
    Ok(state)
}

/// Draws every car's time from the green flag to the end of sector 1. The
/// draws replace the first sector of lap 1.
pub fn simulate_start(state: &mut RaceState, model: &StartModel) -> Result<()> {
    if state.next_lap != 1 {
        return Err(Error::Contract("start simulated after lap 1 began".into()));
    }
    for car in &mut state.cars {
        let delay = sample_start_delay(car.grid_slot, model, &mut car.streams.start)?;
        car.start_delay = Some(delay);
        state.events.push(RaceEvent {
            lap: 1,
            sector: 1,
            car: Some(car.id),
            kind: EventKind::Start,
            time_delta: delay,
        });
    }
    Ok(())
}

/// Simulates one lap for every running car. `decisions` is indexed by car
/// id; missing entries mean no stop.
pub fn step_lap(cfg: &RaceConfig, state: &mut RaceState, decisions: &[Option<PitRequest>]) -> Result<()> {
    if state.finished() {
        return Err(Error::Contract("step_lap called on a finished race".into()));
    }
    let lap = state.next_lap;
    let n_sectors = cfg.track.n_sectors();
    let n_cars = state.cars.len();
    let toggles = cfg.models.toggles;

    // cars that cannot complete the lap retire before it starts
    let mut next_cond: Vec<Option<CarCondition>> = vec![None; n_cars];
    for id in 0..n_cars {
        let car = &mut state.cars[id];
        if car.retired() {
            continue;
        }
        let next = advance_condition(&car.condition, &car.params);
        if next.retired {
            car.condition.retired = true;
            state.events.push(RaceEvent {
                lap,
                sector: 0,
                car: Some(id),
                kind: EventKind::Retired,
                time_delta: 0.0,
            });
        } else {
            next_cond[id] = Some(next);
        }
    }
    let pitting: Vec<Option<PitRequest>> = (0..n_cars)
        .map(|id| if next_cond[id].is_some() { decisions.get(id).copied().flatten() } else { None })
        .collect();

    let mut running: Vec<usize> = state.order.iter().copied().filter(|&c| !state.cars[c].retired()).collect();
    let mut lap_time = vec![0.0; n_cars];

    for s in 1..=n_sectors {
        let sector = cfg.track.sector(s);
        if toggles.c60 && !state.c60s.iter().any(|e| e.covers(lap, s)) {
            if let Some(ev) = roll_c60(s, lap, &cfg.models.c60, &mut state.race_rng) {
                state.c60s.push(ev);
                state.events.push(RaceEvent {
                    lap,
                    sector: s,
                    car: None,
                    kind: EventKind::C60,
                    time_delta: ev.duration_laps as f64,
                });
            }
        }
        let c60_active = state.c60s.iter().any(|e| e.covers(lap, s));
        let c60_time = c60_sector_time(sector.length_km, cfg.models.c60.speed_limit_kmh);
        let start_sector = lap == 1 && s == 1;

        let mut entry = vec![0.0; n_cars];
        let mut exit = vec![0.0; n_cars];
        let mut duration = vec![0.0; n_cars];
        let mut in_pit = vec![false; n_cars];
        for &id in &running {
            let car = &mut state.cars[id];
            // drawn every sector so a car's traffic sequence is independent of events
            let traffic = if toggles.traffic {
                sample_traffic_penalty(s, &cfg.models.traffic, &mut car.streams.traffic)
            } else {
                0.0
            };
            let mut pit_time = None;
            if s == 1 {
                if let Some(out) = car.pending_out.take() {
                    pit_time = Some(out);
                    state.events.push(RaceEvent {
                        lap,
                        sector: s,
                        car: Some(id),
                        kind: EventKind::PitOut,
                        time_delta: out,
                    });
                }
            }
            if s == n_sectors && pitting[id].is_some() {
                pit_time = Some(pit_time.unwrap_or(0.0) + cfg.regulation.travel_in);
                state.events.push(RaceEvent {
                    lap,
                    sector: s,
                    car: Some(id),
                    kind: EventKind::PitIn,
                    time_delta: cfg.regulation.travel_in,
                });
            }
            in_pit[id] = pit_time.is_some();
            let t = match (pit_time, c60_active) {
                (Some(p), true) => p.max(c60_time),
                (Some(p), false) => p,
                (None, true) => c60_time,
                (None, false) => match car.start_delay {
                    Some(d) if start_sector => d,
                    _ => sector_time(&car.condition, sector, &car.params, traffic),
                },
            };
            entry[id] = car.cumulative_time;
            exit[id] = car.cumulative_time + t;
            duration[id] = t;
        }

        let duels_allowed = toggles.overtakes && !c60_active && !start_sector;
        let ot = cfg.models.overtake.per_sector[s - 1];
        // insertion in entry order; `resolved` stays sorted by exit time
        let mut resolved: Vec<(usize, f64)> = Vec::with_capacity(running.len());
        for &f in &running {
            let mut exit_f = exit[f];
            let mut dueled = false;
            let mut k = resolved.len();
            while k > 0 && resolved[k - 1].1 > exit_f {
                let (l, exit_l) = resolved[k - 1];
                let gap = entry[f] - entry[l];
                if !(duels_allowed && !in_pit[f] && !in_pit[l] && gap <= ot.delta_threshold) {
                    k -= 1;
                    continue;
                }
                if dueled {
                    exit_f = exit_l;
                    break;
                }
                dueled = true;
                match attempt_overtake(gap, s, &cfg.models.overtake, &mut state.cars[f].streams.overtake) {
                    OvertakeOutcome::Pass | OvertakeOutcome::NoAttempt => {
                        state.events.push(RaceEvent {
                            lap,
                            sector: s,
                            car: Some(f),
                            kind: EventKind::Pass,
                            time_delta: gap,
                        });
                        k -= 1;
                    }
                    OvertakeOutcome::Fail { penalty } => {
                        exit_f = exit_l + penalty;
                        state.events.push(RaceEvent {
                            lap,
                            sector: s,
                            car: Some(f),
                            kind: EventKind::FailedPass,
                            time_delta: penalty,
                        });
                        break;
                    }
                }
            }
            let pos = resolved.partition_point(|&(_, e)| e <= exit_f);
            resolved.insert(pos, (f, exit_f));
        }

        for &(id, exit_t) in &resolved {
            let car = &mut state.cars[id];
            // the drawn duration, exactly, unless the duel moved the exit
            let t = if exit_t == exit[id] { duration[id] } else { exit_t - car.cumulative_time };
            car.cumulative_time = exit_t;
            lap_time[id] += t;
            if let Some(log) = state.sector_log.as_mut() {
                log.push(SectorRecord {
                    lap,
                    sector: s,
                    car: id,
                    time: t,
                });
            }
        }
        running = resolved.into_iter().map(|(id, _)| id).collect();
        state.reorder(running.clone());
    }

    for &id in &running {
        let car = &mut state.cars[id];
        let mut cond = next_cond[id].take().expect("running car has a next condition");
        if let Some(req) = pitting[id] {
            let out = apply_pit(&cond, &car.params, &req, &cfg.regulation, lap)?;
            cond = out.condition;
            car.pending_out = Some(out.next_first_sector_time);
            car.stops += 1;
            car.last_pit_lap = Some(lap);
        }
        cond.position = car.condition.position;
        car.condition = cond;
        car.laps_completed += 1;
        car.lap_times.push(lap_time[id]);
    }
    state.lap_positions.push((0..n_cars).map(|id| state.cars[id].condition.position).collect());
    state.next_lap += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standing {
    pub position: usize,
    pub car_id: usize,
    pub grid_slot: usize,
    pub laps_completed: u32,
    pub total_time: f64,
    pub retired: bool,
    pub stops: u32,
}

/// Final classification: running cars by total time, then retired cars by
/// laps completed (more first) and time.
pub fn classify(state: &RaceState) -> Vec<Standing> {
    let mut ids: Vec<usize> = (0..state.cars.len()).collect();
    let rank: Vec<usize> = {
        let mut r = vec![0; state.cars.len()];
        for (i, &id) in state.order.iter().enumerate() {
            r[id] = i;
        }
        r
    };
    ids.sort_by(|&a, &b| {
        let (ca, cb) = (&state.cars[a], &state.cars[b]);
        ca.retired()
            .cmp(&cb.retired())
            .then(cb.laps_completed.cmp(&ca.laps_completed))
            .then(ca.cumulative_time.total_cmp(&cb.cumulative_time))
            .then(rank[a].cmp(&rank[b]))
    });
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            let c = &state.cars[id];
            Standing {
                position: i + 1,
                car_id: id,
                grid_slot: c.grid_slot,
                laps_completed: c.laps_completed,
                total_time: c.cumulative_time,
                retired: c.retired(),
                stops: c.stops,
            }
        })
        .collect()
}

/// Runs a whole race with every car on the scripted opponent strategy,
/// except where `agent` supplies the agent's decision for a lap.
pub fn run_race<F>(cfg: &RaceConfig, seed: u64, mut agent: F) -> Result<RaceState>
where
    F: FnMut(&RaceState) -> Option<PitRequest>,
{
    let mut state = init_race(cfg, seed)?;
    if cfg.models.toggles.start {
        simulate_start(&mut state, &cfg.models.start)?;
    }
    while !state.finished() && !state.cars[0].retired() {
        let decisions = scripted_decisions(cfg, &state, Some(agent(&state)));
        step_lap(cfg, &mut state, &decisions)?;
    }
    // field finishes the race after an agent retirement
    while !state.finished() {
        let decisions = scripted_decisions(cfg, &state, None);
        step_lap(cfg, &mut state, &decisions)?;
    }
    Ok(state)
}

/// Opponent decisions for the next lap; `agent` overrides car 0 when given.
pub fn scripted_decisions(
    cfg: &RaceConfig,
    state: &RaceState,
    agent: Option<Option<PitRequest>>,
) -> Vec<Option<PitRequest>> {
    state
        .cars
        .iter()
        .map(|car| match (car.id, agent) {
            (0, Some(a)) => a,
            _ => opponent_decide(&car.condition, &car.params, state.next_lap, cfg.laps, &cfg.regulation),
        })
        .collect()
}
