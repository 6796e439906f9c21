//! Seeded random models: rolling start, traffic impairment, Code60 slow
//! zones and overtake duels.
//!
//! Every random draw goes through an [`RngStream`], a ChaCha8 generator
//! seeded from a 64-bit value. Streams for individual cars are derived from
//! the race seed with a SplitMix64 mix of `(seed, car id, purpose)`, so a
//! car's draws do not depend on how many other cars are in the field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a derived stream is used for. Separate purposes keep, for example,
/// overtake draws from shifting the traffic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Pace = 1,
    Start = 2,
    Traffic = 3,
    Overtake = 4,
    Race = 5,
    Agent = 6,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Sub-stream for `(master, car id, purpose)`.
    pub fn derive(master: u64, car_id: u64, purpose: StreamPurpose) -> Self {
        let mixed = splitmix64(splitmix64(master ^ splitmix64(car_id)) ^ purpose as u64);
        RngStream::new(mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

/// Time from race start to the end of sector 1, per grid slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartModel {
    pub per_grid_slot: Vec<Gaussian>,
}

impl StartModel {
    /// `mu(slot) = mu_first + (slot - 1) * mu_step`, common `sigma`.
    pub fn linear(slots: usize, mu_first: f64, mu_step: f64, sigma: f64) -> Self {
        StartModel {
            per_grid_slot: (0..slots)
                .map(|i| Gaussian {
                    mu: mu_first + i as f64 * mu_step,
                    sigma,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.per_grid_slot.iter().enumerate() {
            if !(g.sigma >= 0.0) {
                return Err(Error::config("start.sigma", format!("slot {} sigma < 0", i + 1)));
            }
            if i > 0 && !(g.mu > self.per_grid_slot[i - 1].mu) {
                return Err(Error::config(
                    "start.mu",
                    format!("mu must increase with grid slot (slot {})", i + 1),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
}

impl TrafficParams {
    /// Mean of the clamped draw `max(N(mean, stddev), min)`: the expected
    /// time lost to traffic.
    pub fn expected_penalty(&self) -> f64 {
        if self.stddev == 0.0 {
            return self.mean.max(self.min);
        }
        let n = Normal::standard();
        let a = (self.min - self.mean) / self.stddev;
        // E[X; X > min] + min P(X <= min)
        self.mean * (1.0 - n.cdf(a)) + self.stddev * n.pdf(a) + self.min * n.cdf(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub per_sector: Vec<TrafficParams>,
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.per_sector.iter().enumerate() {
            if !(t.min >= 0.0 && t.mean >= t.min && t.stddev >= 0.0) {
                return Err(Error::config(
                    "traffic",
                    format!("sector {} needs mean >= min >= 0 and stddev >= 0", i + 1),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C60Model {
    pub per_sector_prob: Vec<f64>,
    /// Length of every Code60 phase in laps.
    pub min_duration_laps: u32,
    pub speed_limit_kmh: f64,
}

impl C60Model {
    pub fn validate(&self) -> Result<()> {
        if self.per_sector_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("c60.probability", "probabilities must lie in [0, 1]"));
        }
        if self.min_duration_laps < 1 {
            return Err(Error::config("c60.duration_laps", "must be >= 1"));
        }
        if !(self.speed_limit_kmh > 0.0) {
            return Err(Error::config("c60.speed_limit_kmh", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C60Event {
    pub start_lap: u32,
    pub sector: usize,
    pub duration_laps: u32,
}

impl C60Event {
    pub fn covers(&self, lap: u32, sector: usize) -> bool {
        sector == self.sector && lap >= self.start_lap && lap < self.start_lap + self.duration_laps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvertakeParams {
    pub delta_threshold: f64,
    pub success_prob: f64,
    pub fail_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertakeModel {
    pub per_sector: Vec<OvertakeParams>,
}

impl OvertakeModel {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.per_sector.iter().enumerate() {
            if !(o.delta_threshold > 0.0) {
                return Err(Error::config(
                    "overtake.delta_threshold",
                    format!("sector {} threshold must be > 0", i + 1),
                ));
            }
            if !(0.0..=1.0).contains(&o.success_prob) {
                return Err(Error::config(
                    "overtake.success_prob",
                    format!("sector {} probability outside [0, 1]", i + 1),
                ));
            }
            if !(o.fail_penalty >= 0.0) {
                return Err(Error::config(
                    "overtake.fail_penalty",
                    format!("sector {} penalty must be >= 0", i + 1),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OvertakeOutcome {
    NoAttempt,
    Pass,
    Fail { penalty: f64 },
}

/// Smallest start delay a draw is clamped to.
const MIN_START_DELAY: f64 = 1e-3;

/// Gaussian start delay for a 1-based grid slot, clamped to be positive.
pub fn sample_start_delay(grid_slot: usize, model: &StartModel, rng: &mut RngStream) -> Result<f64> {
    if grid_slot == 0 || grid_slot > model.per_grid_slot.len() {
        return Err(Error::Contract(format!(
            "grid slot {grid_slot} outside 1..={}",
            model.per_grid_slot.len()
        )));
    }
    let g = model.per_grid_slot[grid_slot - 1];
    let z = rng.standard_normal();
    Ok((g.mu + g.sigma * z).max(MIN_START_DELAY))
}

/// Traffic impairment for a 1-based sector: a Gaussian draw clamped at the
/// sector's minimum.
pub fn sample_traffic_penalty(sector_index: usize, model: &TrafficModel, rng: &mut RngStream) -> f64 {
    let t = model.per_sector[sector_index - 1];
    let z = rng.standard_normal();
    (t.mean + t.stddev * z).max(t.min)
}

/// Rolls for a new Code60 phase starting at `lap` in a 1-based sector. The
/// caller must not roll while a phase is active there.
pub fn roll_c60(sector_index: usize, lap: u32, model: &C60Model, rng: &mut RngStream) -> Option<C60Event> {
    let p = model.per_sector_prob[sector_index - 1];
    let u = rng.uniform();
    (u < p).then_some(C60Event {
        start_lap: lap,
        sector: sector_index,
        duration_laps: model.min_duration_laps,
    })
}

/// Sector time of every car under a Code60 phase.
pub fn c60_sector_time(length_km: f64, speed_limit_kmh: f64) -> f64 {
    length_km / speed_limit_kmh * 3600.0
}

/// Resolves one overtake duel. `gap` is the trailing car's deficit at sector
/// entry, seconds.
pub fn attempt_overtake(gap: f64, sector_index: usize, model: &OvertakeModel, rng: &mut RngStream) -> OvertakeOutcome {
    let o = model.per_sector[sector_index - 1];
    if gap > o.delta_threshold {
        return OvertakeOutcome::NoAttempt;
    }
    if rng.uniform() < o.success_prob {
        OvertakeOutcome::Pass
    } else {
        OvertakeOutcome::Fail {
            penalty: o.fail_penalty,
        }
    }
}
