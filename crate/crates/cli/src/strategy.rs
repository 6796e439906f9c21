use std::path::Path;

use racesim::agents::{DqnAgent, FixedSequence, OpponentPolicy, Policy, QTable};
use racesim::engine::{PitRequest, REFUEL_OPTIONS};
use racesim::env::{ActionId, ObservationKind, RaceEnv};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Trained agent as stored on disk, tagged by agent kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "agent", rename_all = "lowercase")]
pub enum Checkpoint {
    Q(QTable),
    Dqn(DqnAgent),
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}:{}: not a checkpoint: {e}", path.display(), e.line())))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map(|s| s + "\n").map_err(CliError::runtime)
    }
}

/// Anything that can drive the agent car.
#[derive(Debug, Clone)]
pub enum Strategy {
    Opponent(OpponentPolicy),
    Plan(FixedSequence),
    Agent(Checkpoint),
}

impl Policy for Strategy {
    fn observation(&self) -> Option<ObservationKind> {
        match self {
            Strategy::Agent(Checkpoint::Q(t)) => t.observation(),
            Strategy::Agent(Checkpoint::Dqn(d)) => d.observation(),
            _ => None,
        }
    }

    fn reset(&mut self) {
        match self {
            Strategy::Opponent(p) => p.reset(),
            Strategy::Plan(p) => p.reset(),
            Strategy::Agent(Checkpoint::Q(t)) => t.reset(),
            Strategy::Agent(Checkpoint::Dqn(d)) => d.reset(),
        }
    }

    fn act(&mut self, env: &RaceEnv, obs: &[f64]) -> ActionId {
        match self {
            Strategy::Opponent(p) => p.act(env, obs),
            Strategy::Plan(p) => p.act(env, obs),
            Strategy::Agent(Checkpoint::Q(t)) => t.act(env, obs),
            Strategy::Agent(Checkpoint::Dqn(d)) => d.act(env, obs),
        }
    }
}

/// Parses a stop plan: one `<lap> <refuel_laps>` pair per line, laps
/// strictly increasing; `#` starts a comment. Returns one action per lap.
pub fn parse_plan(text: &str, name: &str, laps: u32) -> Result<Vec<ActionId>, CliError> {
    let mut actions = vec![ActionId::NO_PIT; laps as usize];
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CliError::Input(format!("{name}:{}: {reason}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [lap, refuel] = fields[..] else {
            return Err(err(format!("expected `<lap> <refuel_laps>`, got `{line}`")));
        };
        let lap: u32 = lap.parse().map_err(|_| err(format!("lap `{lap}` is not an integer")))?;
        let refuel: u32 = refuel.parse().map_err(|_| err(format!("refuel `{refuel}` is not an integer")))?;
        if lap < 1 || lap > laps {
            return Err(err(format!("lap {lap} outside 1..={laps}")));
        }
        if lap <= last {
            return Err(err(format!("lap {lap} does not come after lap {last}")));
        }
        if !REFUEL_OPTIONS.contains(&refuel) {
            return Err(err(format!("refuel must be one of {REFUEL_OPTIONS:?} laps, got {refuel}")));
        }
        actions[lap as usize - 1] = ActionId::from_request(Some(PitRequest::new(refuel).map_err(CliError::input)?));
        last = lap;
    }
    Ok(actions)
}
