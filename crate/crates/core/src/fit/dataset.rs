use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{init_race, scripted_decisions, simulate_start, step_lap, RaceConfig};
use crate::error::{Error, Result};

pub const TIMING_HEADER: [&str; 7] = ["race_id", "car_id", "class", "grid_slot", "lap", "sector", "sector_time_s"];

/// Class tag written by the synthetic generator.
pub const SYNTHETIC_CLASS: &str = "SP9";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub race_id: String,
    pub car_id: String,
    pub class: String,
    pub grid_slot: usize,
    pub lap: u32,
    pub sector: usize,
    pub sector_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingDataset {
    pub records: Vec<TimingRecord>,
    /// Rows dropped by the class filter.
    pub skipped_rows: usize,
}

fn parse_err(path: &str, line: usize, reason: String) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        reason,
    }
}

impl TimingDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parses timing CSV. Rows whose class differs from `class` are skipped
    /// and counted. `name` labels diagnostics.
    pub fn parse<R: Read>(reader: R, name: &str, class: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut rows = rdr.records();
        let header = match rows.next() {
            Some(h) => h.map_err(|e| parse_err(name, 1, e.to_string()))?,
            None => return Err(parse_err(name, 1, "empty file, expected a header".into())),
        };
        if header.iter().ne(TIMING_HEADER.iter().copied()) {
            return Err(parse_err(
                name,
                1,
                format!("header must be `{}`", TIMING_HEADER.join(",")),
            ));
        }

        let mut ds = TimingDataset::default();
        let mut seen: HashMap<(String, String, u32, usize), usize> = HashMap::new();
        for row in rows {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(name, line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            if row.len() != TIMING_HEADER.len() {
                return Err(parse_err(
                    name,
                    line,
                    format!("expected {} columns, found {}", TIMING_HEADER.len(), row.len()),
                ));
            }
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = |i: usize, what: &str| {
                parse_err(
                    name,
                    line,
                    format!("column {} `{}`: {what}, got `{}`", i + 1, TIMING_HEADER[i], field(i)),
                )
            };
            if let Some(c) = class {
                if field(2) != c {
                    ds.skipped_rows += 1;
                    continue;
                }
            }
            for i in [0, 1] {
                if field(i).is_empty() {
                    return Err(bad(i, "must not be empty"));
                }
            }
            let grid_slot: usize = field(3).parse().ok().filter(|&s| s >= 1).ok_or_else(|| bad(3, "expected an integer >= 1"))?;
            let lap: u32 = field(4).parse().ok().filter(|&l| l >= 1).ok_or_else(|| bad(4, "expected an integer >= 1"))?;
            let sector: usize = field(5).parse().ok().filter(|&s| s >= 1).ok_or_else(|| bad(5, "expected an integer >= 1"))?;
            let sector_time: f64 = field(6)
                .parse()
                .ok()
                .filter(|t: &f64| t.is_finite() && *t > 0.0)
                .ok_or_else(|| bad(6, "expected a positive number of seconds"))?;
            let key = (field(0).to_string(), field(1).to_string(), lap, sector);
            if let Some(first) = seen.insert(key, line) {
                return Err(parse_err(
                    name,
                    line,
                    format!(
                        "duplicate record for race `{}`, car `{}`, lap {lap}, sector {sector} (first seen on line {first})",
                        field(0),
                        field(1)
                    ),
                ));
            }
            ds.records.push(TimingRecord {
                race_id: field(0).to_string(),
                car_id: field(1).to_string(),
                class: field(2).to_string(),
                grid_slot,
                lap,
                sector,
                sector_time,
            });
        }
        Ok(ds)
    }

    pub fn load(path: &Path, class: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string(), class)
    }

    /// CSV text; times use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = TIMING_HEADER.join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.race_id, r.car_id, r.class, r.grid_slot, r.lap, r.sector, r.sector_time
            ));
        }
        out
    }
}

/// Timing data of `races` simulated races, every car on the scripted
/// strategy. Race `i` (0-based) uses seed `seed + i`.
pub fn generate_synthetic(cfg: &RaceConfig, races: usize, seed: u64) -> Result<TimingDataset> {
    let mut ds = TimingDataset::default();
    for i in 0..races {
        let mut state = init_race(cfg, seed.wrapping_add(i as u64))?;
        state.record_sectors();
        if cfg.models.toggles.start {
            simulate_start(&mut state, &cfg.models.start)?;
        }
        while !state.finished() {
            let decisions = scripted_decisions(cfg, &state, None);
            step_lap(cfg, &mut state, &decisions)?;
        }
        let mut log = state.sector_log.take().unwrap_or_default();
        log.sort_by_key(|r| (r.car, r.lap, r.sector));
        ds.records.extend(log.into_iter().map(|r| TimingRecord {
            race_id: format!("R{}", i + 1),
            car_id: format!("car{:02}", r.car),
            class: SYNTHETIC_CLASS.to_string(),
            grid_slot: state.cars[r.car].grid_slot,
            lap: r.lap,
            sector: r.sector,
            sector_time: r.time,
        }));
    }
    Ok(ds)
}
