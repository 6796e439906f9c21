use serde::{Deserialize, Serialize};

use super::{argmax, epsilon_greedy, EpisodeMetrics, TrainConfig};
use crate::env::{ActionId, Environment, ObsDim, ObservationKind, N_ACTIONS};
use crate::error::Result;
use crate::stochastic::{RngStream, StreamPurpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    /// Observation variant the table was trained on, when it came from a race.
    pub observation: Option<ObservationKind>,
    pub dims: Vec<ObsDim>,
    pub alpha: f64,
    pub gamma: f64,
    /// One row of action values per state, mixed-radix over `dims`.
    pub values: Vec<[f64; N_ACTIONS]>,
}

impl QTable {
    pub fn new(dims: Vec<ObsDim>, alpha: f64, gamma: f64) -> Self {
        let n: usize = dims.iter().map(|d| d.bins()).product();
        QTable {
            observation: None,
            dims,
            alpha,
            gamma,
            values: vec![[0.0; N_ACTIONS]; n],
        }
    }

    pub fn state_index(&self, obs: &[f64]) -> usize {
        assert_eq!(obs.len(), self.dims.len(), "observation width");
        self.dims
            .iter()
            .zip(obs)
            .fold(0, |acc, (d, &x)| acc * d.bins() + d.bin(x))
    }

    pub fn q(&self, obs: &[f64]) -> &[f64; N_ACTIONS] {
        &self.values[self.state_index(obs)]
    }

    pub fn greedy(&self, obs: &[f64]) -> ActionId {
        ActionId::new(argmax(self.q(obs))).unwrap()
    }

    /// One-step update; returns the TD error.
    pub fn update(&mut self, s: &[f64], a: ActionId, r: f64, s2: &[f64], done: bool) -> f64 {
        let next = if done {
            0.0
        } else {
            self.q(s2).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let i = self.state_index(s);
        let q = &mut self.values[i][a.index()];
        let td = r + self.gamma * next - *q;
        *q += self.alpha * td;
        td
    }
}

/// Tabular Q-learning. Continuous observation components get `cfg.q_bins`
/// uniform bins; exact components keep one bin per value.
pub fn qlearn_train<E: Environment>(env: &mut E, cfg: &TrainConfig) -> Result<(QTable, Vec<EpisodeMetrics>)> {
    cfg.validate()?;
    let dims = env
        .obs_dims()
        .into_iter()
        .map(|d| match d {
            ObsDim::Uniform(_) => ObsDim::Uniform(cfg.q_bins),
            exact => exact,
        })
        .collect();
    let mut table = QTable::new(dims, cfg.alpha, cfg.gamma);
    let mut rng = RngStream::derive(cfg.seed, 0, StreamPurpose::Agent);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let mut s = env.reset(cfg.episode_seed(ep));
        let (mut total, mut sq, mut n) = (0.0, 0.0, 0usize);
        loop {
            let a = epsilon_greedy(table.q(&s), eps, &mut rng);
            let (s2, r, done) = env.step(a)?;
            let td = table.update(&s, a, r, &s2, done);
            total += r;
            sq += td * td;
            n += 1;
            s = s2;
            if done {
                break;
            }
        }
        metrics.push(EpisodeMetrics {
            episode: ep,
            total_reward: total,
            final_position: env.position(),
            mean_loss: sq / n as f64,
            epsilon: eps,
        });
    }
    Ok((table, metrics))
}
