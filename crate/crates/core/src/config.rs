//! Configuration documents.
//!
//! A document is a list of `section.key = value` lines with `#` comments.
//! Every key has a default in the embedded default document; a user
//! document only needs the keys it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::agents::{Optimizer, TrainConfig};
use crate::engine::{PitRegulation, RaceConfig, RaceModels, StandingWindow, StochasticToggles};
use crate::env::{EnvConfig, ObservationKind, RewardConfig};
use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::model::{CarModelParams, TrackConfig};
use crate::stochastic::{
    C60Model, Gaussian, OvertakeModel, OvertakeParams, StartModel, TrafficModel, TrafficParams,
};

pub const DEFAULT_DOCUMENT: &str = include_str!("../config/default.cfg");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceSection {
    pub laps: u32,
    pub opponents: usize,
    pub agent_grid_slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    pub lap_length_km: f64,
    pub base_times: Vec<f64>,
    pub length_fractions: Vec<f64>,
    pub tire_factors: Vec<f64>,
    pub fuel_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarSection {
    pub fuel_sensitivity: f64,
    pub fuel_per_lap: f64,
    pub tank_capacity: f64,
    pub starting_fuel: f64,
    pub tire_log_coeff: f64,
    pub tire_deg_per_lap: f64,
    pub critical_tire_deg: f64,
    pub base_lap_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpponentsSection {
    pub pace_offset_mean: f64,
    pub pace_offset_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitSection {
    pub travel_in: f64,
    pub travel_out: f64,
    pub free_service_time: f64,
    pub refuel_rate: f64,
    pub standing_from_laps: Vec<u32>,
    pub standing_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub mu_first: f64,
    pub mu_step: f64,
    pub sigma: f64,
    /// Explicit per-slot means; overrides the linear form when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub min: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C60Section {
    pub probability: Vec<f64>,
    pub duration_laps: u32,
    pub speed_limit_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvertakeSection {
    pub delta_threshold: Vec<f64>,
    pub success_prob: Vec<f64>,
    pub fail_penalty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    pub start: bool,
    pub traffic: bool,
    pub c60: bool,
    pub overtakes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub observation: ObservationKind,
    pub tire_obs_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub class: String,
    pub c60_ratio: f64,
    pub traffic_ratio: f64,
    pub pit_threshold: f64,
    pub min_samples: usize,
}

/// Training keys; every key is optional and overrides the chosen preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub episodes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub gamma: Option<f64>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub epsilon_decay_fraction: Option<f64>,
    pub target_sync_interval: Option<usize>,
    pub eval_interval: Option<usize>,
    pub hidden_layers: Option<Vec<usize>>,
    pub optimizer: Option<Optimizer>,
    pub momentum: Option<f64>,
    pub alpha: Option<f64>,
    pub q_bins: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub race: RaceSection,
    pub track: TrackSection,
    pub car: CarSection,
    pub opponents: OpponentsSection,
    pub pit: PitSection,
    pub start: StartSection,
    pub traffic: TrafficSection,
    pub c60: C60Section,
    pub overtake: OvertakeSection,
    pub stochastic: StochasticSection,
    pub env: EnvSection,
    pub reward: RewardConfig,
    pub fit: FitSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::from_str_named(DEFAULT_DOCUMENT, "<default>").expect("embedded default document is valid")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_table(text: &str, name: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Parse {
        path: name.to_string(),
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        reason: e.message().to_string(),
    })
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Finds the `section.key` a serde message refers to, for diagnostics.
fn field_of(reason: &str, table: &Table) -> String {
    if let Some(start) = reason.find('`') {
        if let Some(len) = reason[start + 1..].find('`') {
            let key = &reason[start + 1..start + 1 + len];
            for (section, v) in table {
                if let Value::Table(t) = v {
                    if t.contains_key(key) {
                        return format!("{section}.{key}");
                    }
                }
            }
            return key.to_string();
        }
    }
    "config".to_string()
}

impl SimConfig {
    /// Parses a document, filling absent keys from the defaults.
    pub fn from_str_named(text: &str, name: &str) -> Result<Self> {
        let mut table = if name == "<default>" {
            Table::new()
        } else {
            parse_table(DEFAULT_DOCUMENT, "<default>")?
        };
        let user = parse_table(text, name)?;
        merge(&mut table, user);
        let cfg: SimConfig = Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| {
            let reason = e.message().to_string();
            Error::Config {
                field: field_of(&reason, &table),
                reason: format!("{name}: {reason}"),
            }
        })?;
        cfg.race_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn toggles(&self) -> StochasticToggles {
        StochasticToggles {
            start: self.stochastic.start,
            traffic: self.stochastic.traffic,
            c60: self.stochastic.c60,
            overtakes: self.stochastic.overtakes,
        }
    }

    pub fn track(&self) -> Result<TrackConfig> {
        let t = &self.track;
        TrackConfig::from_columns(
            t.lap_length_km,
            &t.base_times,
            &t.length_fractions,
            &t.tire_factors,
            &t.fuel_factors,
        )
    }

    pub fn car(&self) -> CarModelParams {
        let c = &self.car;
        CarModelParams {
            fuel_sensitivity: c.fuel_sensitivity,
            fuel_per_lap: c.fuel_per_lap,
            tank_capacity: c.tank_capacity,
            tire_log_coeff: c.tire_log_coeff,
            tire_deg_per_lap: c.tire_deg_per_lap,
            critical_tire_deg: c.critical_tire_deg,
            base_lap_offset: c.base_lap_offset,
        }
    }

    pub fn regulation(&self) -> Result<PitRegulation> {
        let p = &self.pit;
        if p.standing_from_laps.len() != p.standing_times.len() {
            return Err(Error::config(
                "pit.standing_times",
                "needs one entry per pit.standing_from_laps entry",
            ));
        }
        Ok(PitRegulation {
            travel_in: p.travel_in,
            travel_out: p.travel_out,
            standing_schedule: p
                .standing_from_laps
                .iter()
                .zip(&p.standing_times)
                .map(|(&from_lap, &mandatory_standing)| StandingWindow {
                    from_lap,
                    mandatory_standing,
                })
                .collect(),
            free_service_time: p.free_service_time,
            refuel_rate: p.refuel_rate,
        })
    }

    pub fn start_model(&self) -> Result<StartModel> {
        let s = &self.start;
        let slots = self.race.opponents + 1;
        let Some(mu) = &s.mu else {
            return Ok(StartModel::linear(slots, s.mu_first, s.mu_step, s.sigma));
        };
        let sigmas = s.sigmas.clone().unwrap_or_else(|| vec![s.sigma; mu.len()]);
        if sigmas.len() != mu.len() {
            return Err(Error::config("start.sigmas", "needs one entry per start.mu entry"));
        }
        Ok(StartModel {
            per_grid_slot: mu.iter().zip(&sigmas).map(|(&mu, &sigma)| Gaussian { mu, sigma }).collect(),
        })
    }

    fn per_sector<const K: usize>(&self, cols: [(&str, &Vec<f64>); K]) -> Result<usize> {
        let n = self.track.base_times.len();
        for (name, col) in cols {
            if col.len() != n {
                return Err(Error::config(name, format!("expected {n} entries (one per sector)")));
            }
        }
        Ok(n)
    }

    pub fn models(&self) -> Result<RaceModels> {
        let t = &self.traffic;
        let n = self.per_sector([("traffic.mean", &t.mean), ("traffic.stddev", &t.stddev), ("traffic.min", &t.min)])?;
        let traffic = TrafficModel {
            per_sector: (0..n)
                .map(|i| TrafficParams {
                    mean: t.mean[i],
                    stddev: t.stddev[i],
                    min: t.min[i],
                })
                .collect(),
        };
        self.per_sector([("c60.probability", &self.c60.probability)])?;
        let o = &self.overtake;
        self.per_sector([
            ("overtake.delta_threshold", &o.delta_threshold),
            ("overtake.success_prob", &o.success_prob),
            ("overtake.fail_penalty", &o.fail_penalty),
        ])?;
        Ok(RaceModels {
            start: self.start_model()?,
            traffic,
            c60: C60Model {
                per_sector_prob: self.c60.probability.clone(),
                min_duration_laps: self.c60.duration_laps,
                speed_limit_kmh: self.c60.speed_limit_kmh,
            },
            overtake: OvertakeModel {
                per_sector: (0..n)
                    .map(|i| OvertakeParams {
                        delta_threshold: o.delta_threshold[i],
                        success_prob: o.success_prob[i],
                        fail_penalty: o.fail_penalty[i],
                    })
                    .collect(),
            },
            toggles: self.toggles(),
        })
    }

    pub fn race_config(&self) -> Result<RaceConfig> {
        let cfg = RaceConfig {
            laps: self.race.laps,
            n_opponents: self.race.opponents,
            agent_grid_slot: self.race.agent_grid_slot,
            track: self.track()?,
            car: self.car(),
            starting_fuel: self.car.starting_fuel,
            opponent_pace: Gaussian {
                mu: self.opponents.pace_offset_mean,
                sigma: self.opponents.pace_offset_stddev,
            },
            regulation: self.regulation()?,
            models: self.models()?,
        };
        cfg.validate()?;
        if !(self.env.tire_obs_max > 0.0) {
            return Err(Error::config("env.tire_obs_max", "must be > 0"));
        }
        if !(self.fit.c60_ratio > self.fit.traffic_ratio && self.fit.traffic_ratio >= 1.0) {
            return Err(Error::config("fit.c60_ratio", "need c60_ratio > traffic_ratio >= 1"));
        }
        Ok(cfg)
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            race: self.race_config()?,
            reward: self.reward.clone(),
            observation: self.env.observation,
            tire_obs_max: self.env.tire_obs_max,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            class: (!self.fit.class.is_empty()).then(|| self.fit.class.clone()),
            c60_ratio: self.fit.c60_ratio,
            traffic_ratio: self.fit.traffic_ratio,
            pit_threshold: self.fit.pit_threshold,
            min_samples: self.fit.min_samples,
        }
    }

    /// Training settings: the preset named by `preset` (or the document's
    /// `train.preset`, or `desk`), with any `train.*` keys applied on top.
    pub fn train_config(&self, preset: Option<&str>) -> Result<TrainConfig> {
        let t = &self.train;
        let name = preset.or(t.preset.as_deref()).unwrap_or("desk");
        let mut c = TrainConfig::preset(name)
            .ok_or_else(|| Error::config("train.preset", format!("unknown preset `{name}`")))?;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = t.$f.clone() { c.$f = v; } )* };
        }
        set!(
            episodes,
            learning_rate,
            batch_size,
            buffer_capacity,
            gamma,
            epsilon_start,
            epsilon_end,
            epsilon_decay_fraction,
            target_sync_interval,
            eval_interval,
            hidden_layers,
            optimizer,
            momentum,
            alpha,
            q_bins,
            seed
        );
        c.validate()?;
        Ok(c)
    }
}
