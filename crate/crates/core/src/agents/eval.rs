use serde::{Deserialize, Serialize};

use super::{DqnAgent, QTable};
use crate::engine::opponent_decide;
use crate::env::{ActionId, EnvConfig, ObservationKind, RaceEnv};
use crate::error::{Error, Result};

/// Greedy decision rule driving the agent car.
pub trait Policy {
    /// Observation variant the policy expects, if it cares.
    fn observation(&self) -> Option<ObservationKind> {
        None
    }

    fn reset(&mut self) {}

    fn act(&mut self, env: &RaceEnv, obs: &[f64]) -> ActionId;
}

impl Policy for QTable {
    fn observation(&self) -> Option<ObservationKind> {
        self.observation
    }

    fn act(&mut self, _env: &RaceEnv, obs: &[f64]) -> ActionId {
        self.greedy(obs)
    }
}

impl Policy for DqnAgent {
    fn observation(&self) -> Option<ObservationKind> {
        self.observation
    }

    fn act(&mut self, _env: &RaceEnv, obs: &[f64]) -> ActionId {
        self.greedy(obs)
    }
}

/// Replays a fixed action list, one entry per lap; no stop once exhausted.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSequence {
    pub actions: Vec<ActionId>,
    next: usize,
}

impl FixedSequence {
    pub fn new(actions: Vec<ActionId>) -> Self {
        FixedSequence { actions, next: 0 }
    }
}

impl Policy for FixedSequence {
    fn reset(&mut self) {
        self.next = 0;
    }

    fn act(&mut self, _env: &RaceEnv, _obs: &[f64]) -> ActionId {
        let a = self.actions.get(self.next).copied().unwrap_or(ActionId::NO_PIT);
        self.next += 1;
        a
    }
}

/// The scripted opponent strategy applied to the agent car.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpponentPolicy;

impl Policy for OpponentPolicy {
    fn act(&mut self, env: &RaceEnv, _obs: &[f64]) -> ActionId {
        let state = env.state().expect("act after reset");
        let car = &state.cars[0];
        let race = &env.cfg.race;
        ActionId::from_request(opponent_decide(
            &car.condition,
            &car.params,
            state.next_lap,
            race.laps,
            &race.regulation,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceRecord {
    pub seed: u64,
    pub final_position: usize,
    pub retired: bool,
    pub laps_completed: u32,
    pub race_time: f64,
    pub stops: u32,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub n_races: usize,
    pub mean_final_position: f64,
    pub win_rate: f64,
    pub retirement_rate: f64,
    /// Mean over races the agent finished; `None` if it finished none.
    pub mean_race_time: Option<f64>,
    pub records: Vec<RaceRecord>,
}

/// Runs one greedy episode with the given seed.
pub fn run_episode<P: Policy>(policy: &mut P, env: &mut RaceEnv, seed: u64) -> Result<RaceRecord> {
    policy.reset();
    let first = env.reset_full(seed)?;
    let mut obs = env.normalize(&first);
    let mut actions = Vec::new();
    let mut position;
    loop {
        let a = policy.act(env, &obs);
        actions.push(a.index());
        let r = env.step_full(a)?;
        obs = r.normalized;
        position = r.info.position;
        if r.done {
            break;
        }
    }
    let car = &env.state().unwrap().cars[0];
    Ok(RaceRecord {
        seed,
        final_position: position,
        retired: car.retired(),
        laps_completed: car.laps_completed,
        race_time: car.cumulative_time,
        stops: car.stops,
        actions,
    })
}

/// Evaluates `policy` on `n_races` races seeded `seed, seed + 1, ...`,
/// spread over up to `jobs` threads. Records come back in seed order.
pub fn evaluate<P>(policy: &P, cfg: &EnvConfig, n_races: usize, seed: u64, jobs: usize) -> Result<EvalStats>
where
    P: Policy + Clone + Send,
{
    if let Some(kind) = policy.observation() {
        if kind != cfg.observation {
            return Err(Error::config(
                "env.observation",
                format!("policy was trained on {kind:?} observations, environment provides {:?}", cfg.observation),
            ));
        }
    }
    let jobs = jobs.clamp(1, n_races.max(1));
    let chunk = n_races.div_ceil(jobs).max(1);
    let indices: Vec<usize> = (0..n_races).collect();
    let results: Vec<Result<Vec<RaceRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| {
                let mut policy = policy.clone();
                scope.spawn(move || {
                    let mut env = RaceEnv::new(cfg.clone())?;
                    part.iter()
                        .map(|&i| run_episode(&mut policy, &mut env, seed.wrapping_add(i as u64)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut records = Vec::with_capacity(n_races);
    for r in results {
        records.extend(r?);
    }
    let n = records.len().max(1) as f64;
    let finished: Vec<f64> = records.iter().filter(|r| !r.retired).map(|r| r.race_time).collect();
    Ok(EvalStats {
        n_races: records.len(),
        mean_final_position: records.iter().map(|r| r.final_position as f64).sum::<f64>() / n,
        win_rate: records.iter().filter(|r| r.final_position == 1 && !r.retired).count() as f64 / n,
        retirement_rate: records.iter().filter(|r| r.retired).count() as f64 / n,
        mean_race_time: (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64),
        records,
    })
}
