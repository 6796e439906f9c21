//! Episodic environment around the race engine. One step is one lap; the
//! agent drives car 0 and the rest of the field follows the scripted
//! opponent strategy.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{
    classify, init_race, scripted_decisions, simulate_start, step_lap, PitRequest, RaceConfig, RaceState,
};
use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 4;

/// 0 = no stop, 1/2/3 = stop and refuel for 4/6/8 laps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionId(u8);

impl ActionId {
    pub const NO_PIT: ActionId = ActionId(0);

    pub fn new(value: usize) -> Result<Self> {
        if value >= N_ACTIONS {
            return Err(Error::Contract(format!("action {value} outside 0..{N_ACTIONS}")));
        }
        Ok(ActionId(value as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..N_ACTIONS as u8).map(ActionId)
    }

    pub fn to_request(self) -> Option<PitRequest> {
        match self.0 {
            0 => None,
            k => Some(PitRequest {
                refuel_laps: crate::engine::REFUEL_OPTIONS[k as usize - 1],
                fit_new_tires: true,
            }),
        }
    }

    pub fn from_request(req: Option<PitRequest>) -> Self {
        match req {
            None => ActionId(0),
            Some(r) => {
                let k = crate::engine::REFUEL_OPTIONS
                    .iter()
                    .position(|&l| l == r.refuel_laps)
                    .expect("request built from a refuel option");
                ActionId(k as u8 + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    /// Fuel mass and race position.
    Dqn,
    /// Race position and tire degradation.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Dqn { fuel_mass: f64, position: usize },
    Baseline { position: usize, tire_deg: f64 },
}

impl Observation {
    pub fn raw(&self) -> [f64; 2] {
        match *self {
            Observation::Dqn { fuel_mass, position } => [fuel_mass, position as f64],
            Observation::Baseline { position, tire_deg } => [position as f64, tire_deg],
        }
    }
}

/// How one normalized observation component maps to a table index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsDim {
    /// Component is `k / n` for an integer `k` in 1..=n; one bin per value.
    Exact(usize),
    /// Equal-width bins over [0, 1].
    Uniform(usize),
}

impl ObsDim {
    pub fn bins(self) -> usize {
        match self {
            ObsDim::Exact(n) | ObsDim::Uniform(n) => n,
        }
    }

    pub fn bin(self, x: f64) -> usize {
        match self {
            ObsDim::Exact(n) => ((x * n as f64).round() as usize).clamp(1, n) - 1,
            ObsDim::Uniform(n) => ((x * n as f64).floor().max(0.0) as usize).min(n - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub good_position_threshold: usize,
    pub position_reward: f64,
    pub tire_threshold: f64,
    pub tire_penalty_reward: f64,
    pub retirement_reward: f64,
    /// Terminal reward is `(field - position) / field * terminal_scale`.
    pub terminal_scale: f64,
    /// Weight of positions gained during the step, per place.
    pub progression_weight: f64,
    /// Weight of the time gap to the leader, negative contribution.
    pub leader_gap_weight: f64,
    pub leader_gap_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            good_position_threshold: 4,
            position_reward: 1.0,
            tire_threshold: 90.0,
            tire_penalty_reward: -1.0,
            retirement_reward: -10.0,
            terminal_scale: 10.0,
            progression_weight: 0.0,
            leader_gap_weight: 0.0,
            leader_gap_scale: 60.0,
        }
    }
}

/// The parts of the agent's state a reward looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSnapshot {
    pub position: usize,
    pub tire_deg: f64,
    pub retired: bool,
    pub gap_to_leader: f64,
}

impl AgentSnapshot {
    pub fn of(state: &RaceState) -> Self {
        let car = &state.cars[0];
        let leader = state.order.first().map_or(0.0, |&id| state.cars[id].cumulative_time);
        AgentSnapshot {
            position: state.position_of(0),
            tire_deg: car.condition.tire_deg,
            retired: car.retired(),
            gap_to_leader: (car.cumulative_time - leader).max(0.0),
        }
    }
}

pub fn compute_reward(
    prev: &AgentSnapshot,
    next: &AgentSnapshot,
    done: bool,
    field_size: usize,
    cfg: &RewardConfig,
) -> f64 {
    if next.retired {
        return cfg.retirement_reward;
    }
    if done {
        let n = field_size as f64;
        return (n - next.position as f64) / n * cfg.terminal_scale;
    }
    let mut r = 0.0;
    if next.position <= cfg.good_position_threshold {
        r += cfg.position_reward;
    }
    if next.tire_deg > cfg.tire_threshold {
        r += cfg.tire_penalty_reward;
    }
    if cfg.progression_weight != 0.0 && field_size > 1 {
        let gained = prev.position as f64 - next.position as f64;
        r += cfg.progression_weight * gained / (field_size - 1) as f64;
    }
    if cfg.leader_gap_weight != 0.0 {
        r -= cfg.leader_gap_weight * (next.gap_to_leader / cfg.leader_gap_scale).min(1.0);
    }
    r.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    pub lap: u32,
    pub position: usize,
    pub fuel: f64,
    pub tire_deg: f64,
    pub last_pit: Option<u32>,
    pub active_c60s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub normalized: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Minimal interface the learning agents need.
pub trait Environment {
    /// Binning of each normalized observation component.
    fn obs_dims(&self) -> Vec<ObsDim>;
    /// Starts an episode; returns the normalized observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Returns (normalized next observation, reward, done).
    fn step(&mut self, action: ActionId) -> Result<(Vec<f64>, f64, bool)>;
    /// Agent position after the latest step.
    fn position(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub race: RaceConfig,
    pub reward: RewardConfig,
    pub observation: ObservationKind,
    /// Degradation mapped to 1.0 in the normalized baseline observation.
    pub tire_obs_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub fuel: f64,
    pub tire_deg: f64,
    pub position: usize,
    pub lap: u32,
}

pub struct RaceEnv {
    pub cfg: EnvConfig,
    state: Option<RaceState>,
    done: bool,
    steps: usize,
    episodes: u64,
    trajectory: Vec<TrajectoryRow>,
}

impl RaceEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.race.validate()?;
        if !(cfg.tire_obs_max > 0.0) {
            return Err(Error::config("env.tire_obs_max", "must be > 0"));
        }
        Ok(RaceEnv {
            cfg,
            state: None,
            done: true,
            steps: 0,
            episodes: 0,
            trajectory: Vec::new(),
        })
    }

    pub fn field_size(&self) -> usize {
        self.cfg.race.field_size()
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn state(&self) -> Option<&RaceState> {
        self.state.as_ref()
    }

    pub fn into_state(self) -> Option<RaceState> {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self) -> Observation {
        let state = self.state.as_ref().expect("observe before reset");
        let car = &state.cars[0];
        let position = state.position_of(0);
        match self.cfg.observation {
            ObservationKind::Dqn => Observation::Dqn {
                fuel_mass: car.condition.fuel_mass,
                position,
            },
            ObservationKind::Baseline => Observation::Baseline {
                position,
                tire_deg: car.condition.tire_deg,
            },
        }
    }

    /// Each component divided by its configured maximum, clamped to [0, 1].
    pub fn normalize(&self, obs: &Observation) -> Vec<f64> {
        let n = self.field_size() as f64;
        let v = match *obs {
            Observation::Dqn { fuel_mass, position } => {
                [fuel_mass / self.cfg.race.car.tank_capacity, position as f64 / n]
            }
            Observation::Baseline { position, tire_deg } => [position as f64 / n, tire_deg / self.cfg.tire_obs_max],
        };
        v.iter().map(|x| x.clamp(0.0, 1.0)).collect()
    }

    pub fn reset_full(&mut self, seed: u64) -> Result<Observation> {
        let mut state = init_race(&self.cfg.race, seed)?;
        if self.cfg.race.models.toggles.start {
            simulate_start(&mut state, &self.cfg.race.models.start)?;
        }
        self.state = Some(state);
        self.done = false;
        self.steps = 0;
        self.episodes += 1;
        self.trajectory.clear();
        Ok(self.observe())
    }

    pub fn step_full(&mut self, action: ActionId) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let state = self.state.as_mut().expect("not done implies reset");
        let prev = AgentSnapshot::of(state);
        let decisions = scripted_decisions(&self.cfg.race, state, Some(action.to_request()));
        step_lap(&self.cfg.race, state, &decisions)?;
        let next = AgentSnapshot::of(state);
        let done = next.retired || state.finished();
        let final_pos = if done && !next.retired {
            classify(state).iter().position(|s| s.car_id == 0).unwrap() + 1
        } else {
            next.position
        };
        let next = AgentSnapshot {
            position: final_pos,
            ..next
        };
        let reward = compute_reward(&prev, &next, done, self.field_size(), &self.cfg.reward);
        self.done = done;
        self.steps += 1;

        let state = self.state.as_ref().unwrap();
        let car = &state.cars[0];
        let info = StepInfo {
            lap: car.laps_completed,
            position: final_pos,
            fuel: car.condition.fuel_mass,
            tire_deg: car.condition.tire_deg,
            last_pit: car.last_pit_lap,
            active_c60s: state.active_c60s(state.next_lap.saturating_sub(1)),
        };
        self.trajectory.push(TrajectoryRow {
            step: self.steps,
            action: action.index(),
            reward,
            fuel: info.fuel,
            tire_deg: info.tire_deg,
            position: info.position,
            lap: info.lap,
        });
        let observation = self.observe();
        Ok(StepResult {
            normalized: self.normalize(&observation),
            observation,
            reward,
            done,
            info,
        })
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    /// Current episode as CSV: `step,action,reward,fuel,tire_deg,position,lap`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,action,reward,fuel,tire_deg,position,lap\n");
        for r in &self.trajectory {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.action, r.reward, r.fuel, r.tire_deg, r.position, r.lap
            )
            .unwrap();
        }
        out
    }
}

impl Environment for RaceEnv {
    fn obs_dims(&self) -> Vec<ObsDim> {
        let n = self.field_size();
        match self.cfg.observation {
            ObservationKind::Dqn => vec![ObsDim::Uniform(10), ObsDim::Exact(n)],
            ObservationKind::Baseline => vec![ObsDim::Exact(n), ObsDim::Uniform(10)],
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.reset_full(seed).expect("environment config validated at construction");
        self.normalize(&obs)
    }

    fn step(&mut self, action: ActionId) -> Result<(Vec<f64>, f64, bool)> {
        let r = self.step_full(action)?;
        Ok((r.normalized, r.reward, r.done))
    }

    fn position(&self) -> usize {
        self.trajectory
            .last()
            .map(|r| r.position)
            .unwrap_or(self.cfg.race.agent_grid_slot)
    }
}

/// One-step, single-state environment with a fixed reward per action.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub rewards: [f64; N_ACTIONS],
}

impl Environment for BanditEnv {
    fn obs_dims(&self) -> Vec<ObsDim> {
        vec![ObsDim::Uniform(1)]
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.5]
    }

    fn step(&mut self, action: ActionId) -> Result<(Vec<f64>, f64, bool)> {
        Ok((vec![0.5], self.rewards[action.index()], true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    fn env() -> RaceEnv {
        RaceEnv::new(SimConfig::default().env_config().unwrap()).unwrap()
    }

    fn snap(position: usize, tire_deg: f64, retired: bool) -> AgentSnapshot {
        AgentSnapshot {
            position,
            tire_deg,
            retired,
            gap_to_leader: 0.0,
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let p = snap(5, 0.0, false);
        assert_eq!(compute_reward(&p, &snap(3, 40.0, false), false, 16, &cfg), 1.0);
        assert_eq!(compute_reward(&p, &snap(2, 95.0, false), false, 16, &cfg), 0.0);
        assert_eq!(compute_reward(&p, &snap(1, 0.0, true), true, 16, &cfg), -10.0);
        assert_eq!(compute_reward(&p, &snap(1, 0.0, false), true, 16, &cfg), 15.0 / 16.0 * 10.0);
    }

    #[test]
    fn reset_is_fresh_and_deterministic() {
        let mut e = env();
        let a = e.reset_full(42).unwrap();
        let b = e.reset_full(42).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a,
            Observation::Dqn {
                fuel_mass: 120.0,
                position: 6
            }
        );
        assert_eq!(e.state().unwrap().cars[0].condition.tire_deg, 0.0);
        assert_eq!(e.episodes(), 2);
    }

    #[test]
    fn pit_action_refuels_and_resets_tires() {
        let mut e = env();
        e.reset_full(1).unwrap();
        for _ in 0..3 {
            e.step_full(ActionId::NO_PIT).unwrap();
        }
        // 120 - 4 laps = 60 kg, then +4 laps
        let r = e.step_full(ActionId::new(1).unwrap()).unwrap();
        assert_eq!(r.info.fuel, 120.0);
        assert_eq!(e.state().unwrap().cars[0].condition.tire_age, 0);
        assert_eq!(r.info.last_pit, Some(4));
    }

    #[test]
    fn dry_tank_retires_with_terminal_penalty() {
        let mut e = env();
        e.reset_full(1).unwrap();
        let mut last = None;
        for _ in 0..9 {
            let r = e.step_full(ActionId::NO_PIT).unwrap();
            let done = r.done;
            last = Some(r);
            if done {
                break;
            }
        }
        let r = last.unwrap();
        assert!(r.done);
        assert_eq!(r.reward, -10.0);
        assert_eq!(r.info.lap, 8);
        assert!(e.step_full(ActionId::NO_PIT).is_err());
    }

    #[test]
    fn feasible_sequence_ends_at_lap_25() {
        let mut e = env();
        e.reset_full(3).unwrap();
        let mut n = 0;
        loop {
            n += 1;
            let a = if [8, 16, 22].contains(&n) { 3 } else { 0 };
            let r = e.step_full(ActionId::new(a).unwrap()).unwrap();
            if n < 25 {
                assert!(!r.done);
                assert!((-1.0..=1.0).contains(&r.reward));
            } else {
                assert!(r.done);
                assert_eq!(r.info.lap, 25);
                break;
            }
        }
        assert_eq!(e.trajectory().len(), 25);
        assert_eq!(e.trajectory_csv().lines().count(), 26);
    }

    #[test]
    fn bins() {
        assert_eq!(ObsDim::Exact(16).bin(1.0 / 16.0), 0);
        assert_eq!(ObsDim::Exact(16).bin(1.0), 15);
        assert_eq!(ObsDim::Uniform(10).bin(1.0), 9);
        assert_eq!(ObsDim::Uniform(10).bin(0.0), 0);
        assert_eq!(ObsDim::Uniform(10).bin(0.35), 3);
    }
}
