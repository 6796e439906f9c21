//! Parameter estimation from sector timing data.
//!
//! The pipeline labels records against per-sector medians, finds Code60
//! cells (most cars slow in the same lap and sector) and pit stops (an
//! elevated in-lap sector followed by an elevated out-lap sector), then
//! estimates each model from the records it can see cleanly:
//!
//! * tire and fuel coefficients by least squares within stints,
//! * traffic by anchoring every car at its zero-traffic time and fitting a
//!   Gaussian clamped at zero to what lies above,
//! * the rolling start as a line over grid slots,
//! * Code60 probability as phase starts per roll,
//! * overtakes from order changes between sector boundaries.
//!
//! Any parameter with fewer than `min_samples` supporting samples keeps the
//! configured default and is flagged in the report.

mod classify;
mod dataset;
mod stats;

pub use classify::{classify_all, classify_c60, Label, MIN_SECTOR_RECORDS};
pub use dataset::{generate_synthetic, TimingDataset, TimingRecord, SYNTHETIC_CLASS, TIMING_HEADER};
pub use stats::{censored_normal_fit, linear_fit, mean_sd, median, quantile};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::stochastic::{Gaussian, OvertakeParams, TrafficParams};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Only rows of this class are read; `None` reads all.
    pub class: Option<String>,
    pub c60_ratio: f64,
    pub traffic_ratio: f64,
    /// Seconds above a car's usual sector time that mark a pit phase.
    pub pit_threshold: f64,
    pub min_samples: usize,
}

/// Two reconstructed times or gaps closer than this are the same value.
const EXACT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartFit {
    pub mu_first: f64,
    pub mu_step: f64,
    pub sigma: f64,
    pub per_grid_slot: Vec<Gaussian>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub start: StartFit,
    pub traffic: Vec<TrafficParams>,
    pub c60_probability: Vec<f64>,
    pub c60_duration_laps: u32,
    pub overtake: Vec<OvertakeParams>,
    pub tire_log_coeff: f64,
    pub fuel_sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub parameter: String,
    pub samples: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub records: usize,
    pub skipped_rows: usize,
    pub races: usize,
    pub cars: usize,
    pub pit_stops: usize,
    pub c60_cells: usize,
    pub lines: Vec<ReportLine>,
}

impl FitReport {
    fn add(&mut self, parameter: impl Into<String>, samples: usize, fallback: bool) {
        self.lines.push(ReportLine {
            parameter: parameter.into(),
            samples,
            fallback,
        });
    }

    pub fn fallbacks(&self) -> impl Iterator<Item = &ReportLine> {
        self.lines.iter().filter(|l| l.fallback)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "records used:     {}", self.records);
        let _ = writeln!(out, "rows skipped:     {} (class filter)", self.skipped_rows);
        let _ = writeln!(out, "races / cars:     {} / {}", self.races, self.cars);
        let _ = writeln!(out, "pit stops found:  {}", self.pit_stops);
        let _ = writeln!(out, "Code60 cells:     {}", self.c60_cells);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<28} {:>8}  status", "parameter", "samples");
        for l in &self.lines {
            let status = if l.fallback { "FALLBACK (config default)" } else { "fitted" };
            let _ = writeln!(out, "{:<28} {:>8}  {status}", l.parameter, l.samples);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: FittedParams,
    pub report: FitReport,
}

impl FittedParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the fitted values into a configuration. The start model is
    /// applied in its linear form so it covers any field size.
    pub fn apply_to(&self, cfg: &mut SimConfig) -> Result<()> {
        let n = cfg.track.base_times.len();
        for (name, len) in [
            ("traffic", self.traffic.len()),
            ("c60.probability", self.c60_probability.len()),
            ("overtake", self.overtake.len()),
        ] {
            if len != n {
                return Err(Error::config(name, format!("fitted parameters have {len} sectors, track has {n}")));
            }
        }
        cfg.start.mu_first = self.start.mu_first;
        cfg.start.mu_step = self.start.mu_step;
        cfg.start.sigma = self.start.sigma;
        cfg.start.mu = None;
        cfg.start.sigmas = None;
        cfg.traffic.mean = self.traffic.iter().map(|t| t.mean).collect();
        cfg.traffic.stddev = self.traffic.iter().map(|t| t.stddev).collect();
        cfg.traffic.min = self.traffic.iter().map(|t| t.min).collect();
        cfg.c60.probability = self.c60_probability.clone();
        cfg.c60.duration_laps = self.c60_duration_laps;
        cfg.overtake.delta_threshold = self.overtake.iter().map(|o| o.delta_threshold).collect();
        cfg.overtake.success_prob = self.overtake.iter().map(|o| o.success_prob).collect();
        cfg.overtake.fail_penalty = self.overtake.iter().map(|o| o.fail_penalty).collect();
        cfg.car.tire_log_coeff = self.tire_log_coeff;
        cfg.car.fuel_sensitivity = self.fuel_sensitivity;
        cfg.race_config()?;
        Ok(())
    }
}

/// One car in one race: sector times by lap, plus what the pipeline learns
/// about it.
struct CarSeries {
    race: usize,
    grid_slot: usize,
    /// `times[lap][sector - 1]`
    times: BTreeMap<u32, Vec<Option<f64>>>,
    c60_label: HashSet<(u32, usize)>,
    /// Laps at whose end the car stopped.
    pits: Vec<u32>,
}

impl CarSeries {
    fn time(&self, lap: u32, sector: usize) -> Option<f64> {
        self.times.get(&lap).and_then(|v| v.get(sector - 1).copied().flatten())
    }

    fn stint_and_age(&self, lap: u32) -> (usize, u32) {
        let stint = self.pits.iter().filter(|&&p| p < lap).count();
        let start = self.pits.iter().copied().filter(|&p| p < lap).max().unwrap_or(0);
        (stint, lap - start - 1)
    }

    fn in_pit_phase(&self, lap: u32, sector: usize, n_sectors: usize) -> bool {
        (sector == n_sectors && self.pits.contains(&lap)) || (sector == 1 && lap > 1 && self.pits.contains(&(lap - 1)))
    }
}

struct Index {
    race_laps: Vec<u32>,
    cars: Vec<CarSeries>,
    c60_cells: HashSet<(usize, u32, usize)>,
    /// (car, lap, sector) crossings spent stuck behind another car, with
    /// the time lost beyond the blocker's exit.
    held: HashMap<(usize, u32, usize), f64>,
    n_sectors: usize,
}

impl Index {
    fn build(ds: &TimingDataset, labels: &[Label], n_sectors: usize) -> Result<Self> {
        let mut race_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut car_ids: BTreeMap<(usize, &str), usize> = BTreeMap::new();
        let mut cars: Vec<CarSeries> = Vec::new();
        for r in &ds.records {
            let n = race_ids.len();
            race_ids.entry(r.race_id.as_str()).or_insert(n);
        }
        // ids in sorted order so results do not depend on row order
        for (i, (_, v)) in race_ids.iter_mut().enumerate() {
            *v = i;
        }
        let mut race_laps = vec![0u32; race_ids.len()];
        let mut cell_counts: HashMap<(usize, u32, usize), (usize, usize)> = HashMap::new();
        for (r, label) in ds.records.iter().zip(labels) {
            if r.sector > n_sectors {
                return Err(Error::Fit(format!(
                    "record for race `{}` car `{}` lap {} has sector {}, the track has {n_sectors}",
                    r.race_id, r.car_id, r.lap, r.sector
                )));
            }
            let race = race_ids[r.race_id.as_str()];
            let next = cars.len();
            let ci = *car_ids.entry((race, r.car_id.as_str())).or_insert(next);
            if ci == next {
                cars.push(CarSeries {
                    race,
                    grid_slot: r.grid_slot,
                    times: BTreeMap::new(),
                    c60_label: HashSet::new(),
                    pits: Vec::new(),
                });
            }
            let car = &mut cars[ci];
            car.times.entry(r.lap).or_insert_with(|| vec![None; n_sectors])[r.sector - 1] = Some(r.sector_time);
            if *label == Label::C60 {
                car.c60_label.insert((r.lap, r.sector));
            }
            race_laps[race] = race_laps[race].max(r.lap);
            let c = cell_counts.entry((race, r.lap, r.sector)).or_default();
            c.0 += 1;
            if *label == Label::C60 {
                c.1 += 1;
            }
        }
        let order: Vec<usize> = {
            let mut o: Vec<(usize, &str, usize)> = car_ids.iter().map(|(&(race, id), &ci)| (race, id, ci)).collect();
            o.sort();
            o.into_iter().map(|(_, _, ci)| ci).collect()
        };
        let mut slots: Vec<Option<CarSeries>> = cars.into_iter().map(Some).collect();
        let cars = order.into_iter().map(|ci| slots[ci].take().unwrap()).collect();
        let c60_cells = cell_counts
            .into_iter()
            .filter(|(_, (n, c))| 2 * c > *n)
            .map(|(k, _)| k)
            .collect();
        Ok(Index {
            race_laps,
            cars,
            c60_cells,
            held: HashMap::new(),
            n_sectors,
        })
    }

    fn is_c60(&self, race: usize, lap: u32, sector: usize) -> bool {
        self.c60_cells.contains(&(race, lap, sector))
    }

    fn detect_pits(&mut self, threshold: f64) -> usize {
        let n = self.n_sectors;
        let mut total = 0;
        for ci in 0..self.cars.len() {
            let car = &self.cars[ci];
            let mut baseline = vec![f64::NAN; n];
            for (s, b) in baseline.iter_mut().enumerate() {
                let xs: Vec<f64> = car
                    .times
                    .iter()
                    .filter(|(&lap, _)| !self.is_c60(car.race, lap, s + 1) && !(lap == 1 && s == 0))
                    .filter_map(|(_, v)| v[s])
                    .collect();
                if !xs.is_empty() {
                    *b = median(&xs);
                }
            }
            let mut pits = Vec::new();
            for &lap in car.times.keys() {
                let (Some(t_in), Some(t_out)) = (car.time(lap, n), car.time(lap + 1, 1)) else {
                    continue;
                };
                let c_in = self.is_c60(car.race, lap, n);
                let c_out = self.is_c60(car.race, lap + 1, 1);
                let in_ok = c_in || t_in - baseline[n - 1] > threshold;
                let out_ok = c_out || t_out - baseline[0] > threshold;
                if in_ok && out_ok && !(c_in && c_out) {
                    pits.push(lap);
                }
            }
            total += pits.len();
            self.cars[ci].pits = pits;
        }
        total
    }

    /// Stops hidden by Code60 on both the in-lap and the out-lap cell show
    /// up only through the tire reset. A candidate stop is accepted when
    /// resetting the age there makes more of the following records agree
    /// exactly with each other under the fitted pace model. Returns the
    /// number of stops added.
    fn resolve_masked_pits(&mut self, shape: &SectorShape, tire: f64, fuel: f64) -> usize {
        let n = self.n_sectors;
        let mut added = 0;
        for ci in 0..self.cars.len() {
            let laps: Vec<u32> = self.cars[ci].times.keys().copied().collect();
            for &lap in &laps {
                let car = &self.cars[ci];
                if car.pits.contains(&lap)
                    || car.time(lap + 1, 1).is_none()
                    || !(self.is_c60(car.race, lap, n) && self.is_c60(car.race, lap + 1, 1))
                {
                    continue;
                }
                let end = car.pits.iter().copied().find(|&p| p > lap).unwrap_or(u32::MAX);
                let ties = |reset: bool| -> usize {
                    let mut count = 0;
                    for s in 1..=n {
                        let mut z: Vec<f64> = laps
                            .iter()
                            .filter(|&&l| l > lap && l <= end)
                            .filter_map(|&l| {
                                let t = self.clean(ci, l, s)?;
                                let age = if reset { l - lap - 1 } else { car.stint_and_age(l).1 };
                                let (x1, x2) = shape.regressors(s, age);
                                Some(t - tire * x1 - fuel * x2)
                            })
                            .collect();
                        z.sort_by(f64::total_cmp);
                        count += z.windows(2).filter(|w| w[1] - w[0] < EXACT).count();
                    }
                    count
                };
                if ties(true) > ties(false) {
                    let pits = &mut self.cars[ci].pits;
                    let at = pits.partition_point(|&p| p < lap);
                    pits.insert(at, lap);
                    added += 1;
                }
            }
        }
        added
    }

    /// Record usable for pace and traffic estimation.
    fn clean(&self, ci: usize, lap: u32, sector: usize) -> Option<f64> {
        self.usable(ci, lap, sector).filter(|_| !self.held.contains_key(&(ci, lap, sector)))
    }

    /// Record outside Code60, the start and pit phases.
    fn usable(&self, ci: usize, lap: u32, sector: usize) -> Option<f64> {
        let car = &self.cars[ci];
        let t = car.time(lap, sector)?;
        let excluded = self.is_c60(car.race, lap, sector)
            || car.c60_label.contains(&(lap, sector))
            || (lap == 1 && sector == 1)
            || car.in_pit_phase(lap, sector, self.n_sectors);
        (!excluded).then_some(t)
    }
}

/// Per-sector constants of the pace model taken from the configured track.
struct SectorShape {
    tire: Vec<f64>,
    /// Fuel factor times length fraction.
    fuel: Vec<f64>,
    fuel_per_lap: f64,
}

impl SectorShape {
    fn regressors(&self, sector: usize, age: u32) -> (f64, f64) {
        let s = sector - 1;
        (self.tire[s] * (age as f64).ln_1p(), -self.fuel[s] * self.fuel_per_lap * age as f64)
    }
}

/// Clean records grouped by (car, stint, sector), each as (time, x1, x2).
type PaceGroups = BTreeMap<(usize, usize, usize), Vec<(f64, f64, f64)>>;

fn fit_pace(idx: &Index, shape: &SectorShape) -> (Option<(f64, f64)>, usize) {
    let mut groups = PaceGroups::new();
    for (ci, car) in idx.cars.iter().enumerate() {
        for &lap in car.times.keys() {
            let (stint, age) = car.stint_and_age(lap);
            for s in 1..=idx.n_sectors {
                if let Some(t) = idx.clean(ci, lap, s) {
                    let (x1, x2) = shape.regressors(s, age);
                    groups.entry((ci, stint, s)).or_default().push((x1, x2, t));
                }
            }
        }
    }
    let mut rows = Vec::new();
    for g in groups.values().filter(|g| g.len() >= 2) {
        let n = g.len() as f64;
        let m1 = g.iter().map(|r| r.0).sum::<f64>() / n;
        let m2 = g.iter().map(|r| r.1).sum::<f64>() / n;
        let my = g.iter().map(|r| r.2).sum::<f64>() / n;
        rows.extend(g.iter().map(|r| (r.0 - m1, r.1 - m2, r.2 - my)));
    }
    let Some(mut est) = stats::ols2(&rows) else {
        return (None, rows.len());
    };
    // Untrafficked records lie exactly on the model, so pairs that agree
    // under the current estimate pin the coefficients down much more tightly
    // than the noisy demeaned fit. Refine on them with a shrinking tolerance.
    for tol in [0.2, 0.1, 0.05, 0.02, 0.01, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6] {
        let mut pairs = Vec::new();
        for g in groups.values() {
            for (i, a) in g.iter().enumerate() {
                for b in &g[i + 1..] {
                    let d = (a.0 - b.0, a.1 - b.1, a.2 - b.2);
                    if (d.2 - est.0 * d.0 - est.1 * d.1).abs() < tol {
                        pairs.push(d);
                    }
                }
            }
        }
        if pairs.len() < 10 {
            break;
        }
        match stats::ols2(&pairs) {
            Some(next) => est = next,
            None => break,
        }
    }
    (Some(est), rows.len())
}

/// Mean fuel offset aligning the per-sector minima of `recs` with those of
/// `linked`, over sectors present in both.
fn minima_offset(recs: &[(usize, f64, Option<f64>)], linked: &[(usize, f64, Option<f64>)], gain: &[f64]) -> f64 {
    let min_of = |rs: &[(usize, f64, Option<f64>)], s: usize| {
        rs.iter().filter(|r| r.0 == s && r.2.is_none()).map(|r| r.1).min_by(f64::total_cmp)
    };
    let offsets: Vec<f64> = (1..=gain.len())
        .filter_map(|s| Some((min_of(recs, s)? - min_of(linked, s)?) / gain[s - 1]))
        .collect();
    if offsets.is_empty() {
        0.0
    } else {
        offsets.iter().sum::<f64>() / offsets.len() as f64
    }
}

/// Smallest value with another value within [`EXACT`] above it, else the
/// minimum.
fn clamp_anchor(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).find(|w| w[1] - w[0] < EXACT).map_or(v[0], |w| w[0])
}

/// Traffic residual of one record: the time left after removing the pace
/// model and the car's zero-traffic level. For a held-up record only an
/// upper bound is known.
#[derive(Debug, Clone, Copy)]
enum Residual {
    Exact(f64),
    Below(f64),
}

/// Residuals of one car, tagged with their sector. Stints are linked through
/// the unknown fuel load at their start, chosen so the stints' fastest
/// sector times line up.
fn car_residuals(idx: &Index, ci: usize, shape: &SectorShape, tire: f64, fuel: f64) -> Vec<(usize, Residual)> {
    let n = idx.n_sectors;
    let car = &idx.cars[ci];
    // z = time minus tire penalty minus the fuel burnt since the stint began;
    // entries carry the held-up loss when there is one
    let mut by_stint: BTreeMap<usize, Vec<(usize, f64, Option<f64>)>> = BTreeMap::new();
    for &lap in car.times.keys() {
        let (stint, age) = car.stint_and_age(lap);
        for s in 1..=n {
            if let Some(t) = idx.usable(ci, lap, s) {
                let (x1, x2) = shape.regressors(s, age);
                let held = idx.held.get(&(ci, lap, s)).copied();
                by_stint.entry(stint).or_default().push((s, t - tire * x1 - fuel * x2, held));
            }
        }
    }
    let gain: Vec<f64> = shape.fuel.iter().map(|f| fuel * f).collect();
    let linkable = gain.iter().all(|g| *g > 1e-9);
    // Each stint is linked to the ones before it by the fuel offset that
    // makes the most pairs of records agree exactly: untrafficked records of
    // one sector share a value once the refuel is accounted for.
    let mut out: Vec<(usize, f64, Option<f64>)> = Vec::new();
    for (_, recs) in by_stint {
        let offset = if linkable && !out.is_empty() {
            // (offset, new record, linked record). Ties within either side
            // repeat an offset, so a cluster scores by the smaller count of
            // distinct records it joins on each side.
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (i, &(s, z, held)) in recs.iter().enumerate() {
                if held.is_some() {
                    continue;
                }
                cands.extend(
                    out.iter()
                        .enumerate()
                        .filter(|(_, r)| r.0 == s && r.2.is_none())
                        .map(|(j, r)| ((z - r.1) / gain[s - 1], i, j)),
                );
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0));
            let tol = EXACT / gain.iter().copied().fold(f64::INFINITY, f64::min);
            let mut best: Option<(usize, f64)> = None;
            let mut i = 0;
            while i < cands.len() {
                let j = cands[i..].partition_point(|c| c.0 - cands[i].0 < tol) + i;
                let ours = cands[i..j].iter().map(|c| c.1).collect::<HashSet<_>>().len();
                let theirs = cands[i..j].iter().map(|c| c.2).collect::<HashSet<_>>().len();
                let score = ours.min(theirs);
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, cands[i].0));
                }
                i = j;
            }
            match best {
                Some((k, v)) if k >= 2 => v,
                _ => minima_offset(&recs, &out, &gain),
            }
        } else {
            0.0
        };
        out.extend(recs.into_iter().map(|(s, z, held)| (s, z - gain[s - 1] * offset, held)));
    }
    let mut res = Vec::with_capacity(out.len());
    for s in 1..=n {
        let clean: Vec<f64> = out.iter().filter(|r| r.0 == s && r.2.is_none()).map(|r| r.1).collect();
        if clean.is_empty() {
            continue;
        }
        let anchor = clamp_anchor(&clean);
        res.extend(out.iter().filter(|r| r.0 == s).map(|&(_, y, held)| {
            let r = y - anchor;
            match held {
                Some(lost) => (s, Residual::Below(r - lost)),
                None if r < EXACT => (s, Residual::Below(0.0)),
                None => (s, Residual::Exact(r)),
            }
        }));
    }
    res
}

fn fit_c60(idx: &Index, default_duration: u32) -> (Vec<(usize, usize)>, u32) {
    let n = idx.n_sectors;
    let mut runs: Vec<(usize, u32, bool)> = Vec::new(); // (sector, length, cut by race end)
    let mut cells = vec![0usize; n];
    for (race, &laps) in idx.race_laps.iter().enumerate() {
        for s in 1..=n {
            cells[s - 1] += laps as usize;
            let mut lap = 1;
            while lap <= laps {
                if idx.is_c60(race, lap, s) {
                    let start = lap;
                    while lap <= laps && idx.is_c60(race, lap, s) {
                        lap += 1;
                    }
                    runs.push((s, lap - start, lap > laps));
                } else {
                    lap += 1;
                }
            }
        }
    }
    let duration = runs.iter().filter(|r| !r.2).map(|r| r.1).min().unwrap_or(default_duration).max(1);
    let mut per_sector = vec![(0usize, 0usize); n]; // (starts, rolls)
    for s in 0..n {
        let (mut starts, mut covered) = (0, 0);
        for r in runs.iter().filter(|r| r.0 == s + 1) {
            starts += r.1.div_ceil(duration) as usize;
            covered += r.1 as usize;
        }
        per_sector[s] = (starts, cells[s] - covered + starts);
    }
    (per_sector, duration)
}

struct OvertakeObs {
    gap: f64,
    passed: bool,
    held_gap: f64,
}

/// Entry and exit times of every car crossing one sector, keyed by
/// (race, lap, sector). Cars in a pit phase and Code60 cells are left out.
type Crossings = Vec<((usize, u32, usize), Vec<(usize, f64, f64)>)>;

fn crossings(idx: &Index) -> Crossings {
    let n = idx.n_sectors;
    // cumulative time at every sector boundary, while the record is complete
    let cum: Vec<HashMap<(u32, usize), (f64, f64)>> = idx
        .cars
        .iter()
        .map(|car| {
            let mut m = HashMap::new();
            let mut t = 0.0;
            'laps: for (&lap, v) in &car.times {
                for (s, x) in v.iter().enumerate() {
                    let Some(x) = x else { break 'laps };
                    m.insert((lap, s + 1), (t, t + x));
                    t += x;
                }
            }
            m
        })
        .collect();
    let mut out = Vec::new();
    for (race, &laps) in idx.race_laps.iter().enumerate() {
        let field: Vec<usize> = (0..idx.cars.len()).filter(|&c| idx.cars[c].race == race).collect();
        for lap in 1..=laps {
            for s in 1..=n {
                if idx.is_c60(race, lap, s) || (lap == 1 && s == 1) {
                    continue;
                }
                let at: Vec<(usize, f64, f64)> = field
                    .iter()
                    .filter(|&&c| !idx.cars[c].in_pit_phase(lap, s, n))
                    .filter_map(|&c| cum[c].get(&(lap, s)).map(|&(a, b)| (c, a, b)))
                    .collect();
                out.push(((race, lap, s), at));
            }
        }
    }
    out
}

fn overtake_observations(crossings: &Crossings, n_sectors: usize) -> Vec<Vec<OvertakeObs>> {
    let mut out: Vec<Vec<OvertakeObs>> = (0..n_sectors).map(|_| Vec::new()).collect();
    for ((_, _, s), at) in crossings {
        let mut at = at.clone();
        at.sort_by(|a, b| a.1.total_cmp(&b.1));
        for w in at.windows(2) {
            let (lead, follow) = (w[0], w[1]);
            out[s - 1].push(OvertakeObs {
                gap: follow.1 - lead.1,
                passed: follow.2 < lead.2,
                held_gap: follow.2 - lead.2,
            });
        }
    }
    out
}

/// Crossings where a car left the sector exactly `penalty` or zero seconds
/// behind a car that entered ahead of it: it was held up, and its own pace
/// would have taken it out before that car. Maps to the time lost beyond the
/// blocker's exit.
fn held_up(crossings: &Crossings, penalty: Option<f64>) -> HashMap<(usize, u32, usize), f64> {
    let mut held = HashMap::new();
    for ((_, lap, s), at) in crossings {
        for &(c, entry, exit) in at {
            let lost = at.iter().find_map(|&(o, e_in, e_out)| {
                if o == c || e_in > entry {
                    return None;
                }
                let d = exit - e_out;
                if d.abs() < EXACT {
                    Some(0.0)
                } else {
                    penalty.filter(|p| (d - p).abs() < EXACT)
                }
            });
            if let Some(lost) = lost {
                held.insert((c, *lap, *s), lost);
            }
        }
    }
    held
}

/// Most repeated positive exit gap under five seconds, if it repeats at
/// least three times: the time lost behind a car after a failed pass.
fn held_penalty(obs: &[Vec<OvertakeObs>]) -> Option<f64> {
    let mut gaps: Vec<f64> = obs
        .iter()
        .flatten()
        .map(|o| o.held_gap)
        .filter(|&g| g > EXACT && g < 5.0)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let mut best: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < gaps.len() {
        let j = gaps[i..].partition_point(|&g| g - gaps[i] < EXACT) + i;
        if j - i >= 3 && best.is_none_or(|b| j - i > b.0) {
            best = Some((j - i, gaps[i]));
        }
        i = j;
    }
    best.map(|b| b.1)
}

/// Estimates every model parameter from `ds`. `cfg` supplies the track, the
/// fitting options and the defaults used for fallbacks.
pub fn fit_all(ds: &TimingDataset, cfg: &SimConfig) -> Result<FitOutcome> {
    let opts = cfg.fit_options();
    let track = cfg.track()?;
    let defaults = cfg.models()?;
    let n = track.n_sectors();
    if ds.is_empty() {
        return Err(Error::Fit("dataset has no records".into()));
    }
    let labels = classify_all(ds, &opts)?;
    let mut idx = Index::build(ds, &labels, n)?;
    let pit_stops = idx.detect_pits(opts.pit_threshold);
    let mut report = FitReport {
        records: ds.len(),
        skipped_rows: ds.skipped_rows,
        races: idx.race_laps.len(),
        cars: idx.cars.len(),
        pit_stops,
        c60_cells: idx.c60_cells.len(),
        lines: Vec::new(),
    };
    let enough = |k: usize| k >= opts.min_samples.max(1);

    // rolling start
    let start_pts: Vec<(f64, f64)> = idx
        .cars
        .iter()
        .filter(|c| !idx.is_c60(c.race, 1, 1))
        .filter_map(|c| Some(((c.grid_slot - 1) as f64, c.time(1, 1)?)))
        .collect();
    let slots = (cfg.race.opponents + 1).max(idx.cars.iter().map(|c| c.grid_slot).max().unwrap_or(1));
    let start = if enough(start_pts.len()) {
        let (a, b, sd) = linear_fit(&start_pts);
        report.add("start", start_pts.len(), false);
        (a, b, sd)
    } else {
        report.add("start", start_pts.len(), true);
        (cfg.start.mu_first, cfg.start.mu_step, cfg.start.sigma)
    };
    let start = StartFit {
        mu_first: start.0,
        mu_step: start.1,
        sigma: start.2,
        per_grid_slot: (0..slots)
            .map(|i| Gaussian {
                mu: start.0 + start.1 * i as f64,
                sigma: start.2,
            })
            .collect(),
    };

    let crossings = crossings(&idx);
    let obs = overtake_observations(&crossings, n);
    let penalty = held_penalty(&obs);
    idx.held = held_up(&crossings, penalty);

    // tire and fuel
    let shape = SectorShape {
        tire: track.sectors.iter().map(|s| s.tire_factor).collect(),
        fuel: track.sectors.iter().map(|s| s.fuel_factor * s.length_fraction).collect(),
        fuel_per_lap: cfg.car.fuel_per_lap,
    };
    let (mut pace, mut pace_n) = fit_pace(&idx, &shape);
    if let Some((tire, fuel)) = pace {
        let masked = idx.resolve_masked_pits(&shape, tire, fuel);
        if masked > 0 {
            report.pit_stops += masked;
            (pace, pace_n) = fit_pace(&idx, &shape);
        }
    }
    let (tire_log_coeff, fuel_sensitivity) = match pace {
        Some((t, f)) if enough(pace_n) && t >= 0.0 && f >= 0.0 => {
            report.add("tire_log_coeff", pace_n, false);
            report.add("fuel_sensitivity", pace_n, false);
            (t, f)
        }
        _ => {
            report.add("tire_log_coeff", pace_n, true);
            report.add("fuel_sensitivity", pace_n, true);
            (cfg.car.tire_log_coeff, cfg.car.fuel_sensitivity)
        }
    };

    // traffic
    let mut residuals: Vec<Vec<Residual>> = vec![Vec::new(); n];
    for ci in 0..idx.cars.len() {
        for (s, r) in car_residuals(&idx, ci, &shape, tire_log_coeff, fuel_sensitivity) {
            residuals[s - 1].push(r);
        }
    }
    let traffic = (0..n)
        .map(|s| {
            let rs = &residuals[s];
            let (mut exact, mut below) = (Vec::new(), Vec::new());
            for r in rs {
                match *r {
                    Residual::Exact(x) => exact.push(x),
                    Residual::Below(c) => below.push(c),
                }
            }
            let fitted = censored_normal_fit(&exact, &below);
            match fitted {
                Some((mean, sd)) if enough(rs.len()) => {
                    report.add(format!("traffic[{}]", s + 1), rs.len(), false);
                    TrafficParams {
                        mean: mean.max(0.0),
                        stddev: sd,
                        min: 0.0,
                    }
                }
                _ => {
                    report.add(format!("traffic[{}]", s + 1), rs.len(), true);
                    defaults.traffic.per_sector[s]
                }
            }
        })
        .collect();

    // Code60
    let (c60_counts, c60_duration_laps) = fit_c60(&idx, cfg.c60.duration_laps);
    let c60_probability = c60_counts
        .iter()
        .enumerate()
        .map(|(s, &(starts, rolls))| {
            let ok = enough(rolls);
            report.add(format!("c60[{}]", s + 1), rolls, !ok);
            if ok {
                starts as f64 / rolls as f64
            } else {
                cfg.c60.probability[s]
            }
        })
        .collect();

    // overtakes
    let overtake = (0..n)
        .map(|s| {
            let default = defaults.overtake.per_sector[s];
            let Some(p) = penalty else {
                report.add(format!("overtake[{}]", s + 1), 0, true);
                return default;
            };
            let fails: Vec<f64> = obs[s].iter().filter(|o| (o.held_gap - p).abs() < EXACT).map(|o| o.gap).collect();
            if !enough(fails.len()) {
                report.add(format!("overtake[{}]", s + 1), fails.len(), true);
                return default;
            }
            let threshold = fails.iter().copied().fold(0.0, f64::max);
            let passes = obs[s].iter().filter(|o| o.passed && o.gap <= threshold).count();
            report.add(format!("overtake[{}]", s + 1), fails.len() + passes, false);
            OvertakeParams {
                delta_threshold: threshold.max(EXACT),
                success_prob: passes as f64 / (passes + fails.len()) as f64,
                fail_penalty: p,
            }
        })
        .collect();

    Ok(FitOutcome {
        params: FittedParams {
            start,
            traffic,
            c60_probability,
            c60_duration_laps,
            overtake,
            tire_log_coeff,
            fuel_sensitivity,
        },
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(cfg: &SimConfig, races: usize, seed: u64) -> TimingDataset {
        generate_synthetic(&cfg.race_config().unwrap(), races, seed).unwrap()
    }

    #[test]
    fn no_slow_zones_means_zero_probability() {
        let mut cfg = SimConfig::default();
        cfg.stochastic.c60 = false;
        let fit = fit_all(&synthetic(&cfg, 2, 1), &cfg).unwrap();
        assert!(fit.params.c60_probability.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn pit_stops_found() {
        let mut cfg = SimConfig::default();
        cfg.stochastic.c60 = false;
        let fit = fit_all(&synthetic(&cfg, 1, 4), &cfg).unwrap();
        // four planned stops per car
        assert_eq!(fit.report.pit_stops, 16 * 4);
    }

    #[test]
    fn deterministic_pace_recovered_exactly() {
        let mut cfg = SimConfig::default();
        cfg.stochastic.c60 = false;
        cfg.stochastic.traffic = false;
        cfg.stochastic.overtakes = false;
        let fit = fit_all(&synthetic(&cfg, 2, 9), &cfg).unwrap();
        assert!((fit.params.tire_log_coeff - 0.4).abs() < 1e-6, "{}", fit.params.tire_log_coeff);
        assert!((fit.params.fuel_sensitivity - 0.03).abs() < 1e-6, "{}", fit.params.fuel_sensitivity);
    }

    #[test]
    fn small_dataset_falls_back_and_flags() {
        let cfg = SimConfig::default();
        let mut ds = synthetic(&cfg, 1, 2);
        ds.records.retain(|r| r.lap <= 2);
        let mut small = cfg.clone();
        small.fit.min_samples = 10_000;
        let fit = fit_all(&ds, &small).unwrap();
        assert!(fit.report.fallbacks().count() > 0);
        assert_eq!(fit.params.tire_log_coeff, cfg.car.tire_log_coeff);
        assert!(fit.report.to_text().contains("FALLBACK"));
    }

    #[test]
    fn params_apply_and_round_trip_json() {
        let mut cfg = SimConfig::default();
        let fit = fit_all(&synthetic(&cfg, 2, 5), &cfg).unwrap();
        let back = FittedParams::from_json(&fit.params.to_json().unwrap()).unwrap();
        assert_eq!(back, fit.params);
        back.apply_to(&mut cfg).unwrap();
        assert_eq!(cfg.car.tire_log_coeff, fit.params.tire_log_coeff);
    }
}
