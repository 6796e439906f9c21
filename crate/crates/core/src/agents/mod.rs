//! Learning agents, evaluation and the exhaustive strategy oracle.

mod dqn;
mod eval;
mod mlp;
mod oracle;
mod qlearn;
mod replay;

pub use dqn::{dqn_train, DqnAgent};
pub use eval::{evaluate, run_episode, EvalStats, FixedSequence, OpponentPolicy, Policy, RaceRecord};
pub use mlp::{Activation, Layer, Mlp, MlpCache};
pub use oracle::{oracle_race_time, strategy_oracle, OracleResult, MAX_ORACLE_LAPS};
pub use qlearn::{qlearn_train, QTable};
pub use replay::{Experience, ReplayBuffer};

use serde::{Deserialize, Serialize};

use crate::env::{ActionId, N_ACTIONS};
use crate::error::{Error, Result};
use crate::stochastic::{splitmix64, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episodes over which epsilon decays to its end value.
    pub epsilon_decay_fraction: f64,
    /// Environment steps between target-network syncs.
    pub target_sync_interval: usize,
    /// Episodes between loss log lines.
    pub eval_interval: usize,
    pub hidden_layers: Vec<usize>,
    pub optimizer: Optimizer,
    pub momentum: f64,
    /// Q-learning step size.
    pub alpha: f64,
    /// Bins for continuous observation components in the Q-table.
    pub q_bins: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 5] = ["paper-v1", "paper-v2", "paper-v3", "desk", "smoke"];

impl TrainConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let base = TrainConfig {
            episodes: 5000,
            learning_rate: 0.001,
            batch_size: 32,
            buffer_capacity: 10_000,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            target_sync_interval: 500,
            eval_interval: 50,
            hidden_layers: vec![50],
            optimizer: Optimizer::Sgd,
            momentum: 0.9,
            alpha: 0.1,
            q_bins: 10,
            seed: 1,
        };
        let c = match name {
            "paper-v1" => TrainConfig {
                episodes: 10_000,
                learning_rate: 0.001,
                ..base
            },
            "paper-v2" => TrainConfig {
                episodes: 50_000,
                learning_rate: 0.01,
                ..base
            },
            "paper-v3" => TrainConfig {
                episodes: 100_000,
                learning_rate: 0.01,
                ..base
            },
            "desk" => base,
            "smoke" => TrainConfig { episodes: 500, ..base },
            _ => return None,
        };
        Some(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(format!("train.{field}"), reason));
        if self.episodes == 0 {
            return bad("episodes", "must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch_size", "must lie in 1..=buffer_capacity");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        for (f, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(f, "must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction", "must lie in [0, 1]");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be >= 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be >= 1");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden_layers", "widths must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must lie in (0, 1]");
        }
        if self.q_bins == 0 {
            return bad("q_bins", "must be >= 1");
        }
        Ok(())
    }

    /// Exponential decay from start to end over the decay window, then flat.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let window = self.epsilon_decay_fraction * self.episodes as f64;
        if window <= 0.0 || episode as f64 >= window {
            return self.epsilon_end;
        }
        let t = episode as f64 / window;
        if self.epsilon_start <= 0.0 || self.epsilon_end <= 0.0 {
            return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t;
        }
        self.epsilon_start * (self.epsilon_end / self.epsilon_start).powf(t)
    }

    /// Race seed of a training episode.
    pub fn episode_seed(&self, episode: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(episode as u64 + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub total_reward: f64,
    pub final_position: usize,
    pub mean_loss: f64,
    pub epsilon: f64,
}

/// Metrics as CSV: `episode,total_reward,final_position,mean_loss,epsilon`.
pub fn metrics_csv(metrics: &[EpisodeMetrics]) -> String {
    let mut out = String::from("episode,total_reward,final_position,mean_loss,epsilon\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.episode, m.total_reward, m.final_position, m.mean_loss, m.epsilon
        ));
    }
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, greedy otherwise.
pub fn epsilon_greedy(q: &[f64], epsilon: f64, rng: &mut RngStream) -> ActionId {
    debug_assert_eq!(q.len(), N_ACTIONS);
    let a = if rng.uniform() < epsilon { rng.below(N_ACTIONS) } else { argmax(q) };
    ActionId::new(a).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_examples() {
        let mut rng = RngStream::new(0);
        assert_eq!(epsilon_greedy(&[0.1, 0.9, 0.3, 0.3], 0.0, &mut rng).index(), 1);
        assert_eq!(epsilon_greedy(&[0.5, 0.5, 0.1, 0.1], 0.0, &mut rng).index(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = RngStream::new(5);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&[0.0, 1.0, 2.0, 3.0], 1.0, &mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::preset("smoke").unwrap();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(300) - 0.05).abs() < 1e-12);
        assert_eq!(c.epsilon(499), 0.05);
        assert!(c.epsilon(100) < c.epsilon(50));
    }

    #[test]
    fn presets() {
        let v1 = TrainConfig::preset("paper-v1").unwrap();
        assert_eq!((v1.episodes, v1.learning_rate), (10_000, 0.001));
        let v2 = TrainConfig::preset("paper-v2").unwrap();
        assert_eq!((v2.episodes, v2.learning_rate), (50_000, 0.01));
        assert_eq!(TrainConfig::preset("paper-v3").unwrap().episodes, 100_000);
        assert_eq!(TrainConfig::preset("smoke").unwrap().episodes, 500);
        for p in PRESETS {
            TrainConfig::preset(p).unwrap().validate().unwrap();
        }
    }
}
