//! Deterministic lap-time mathematics.
//!
//! A sector time is the sector's base time plus a sum of penalties that
//! depend on the car's condition:
//!
//! ```text
//! T(i,s) = base(s) + t_tire(c) + t_fuel(c) + t_traffic(c) + t_start(c)
//! T(i)   = sum over sectors of T(i,s)
//! T      = sum over laps of T(i)
//! ```
//!
//! The tire and fuel terms live here. Traffic and start terms are sampled by
//! [`crate::stochastic`] and enter [`sector_time`] as `extra_penalty`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of sector length fractions.
const FRACTION_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorProfile {
    /// 1-based sector number.
    pub index: usize,
    /// Best achievable time under ideal conditions, seconds.
    pub base_time: f64,
    /// Share of the lap distance, in (0, 1].
    pub length_fraction: f64,
    pub tire_factor: f64,
    pub fuel_factor: f64,
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub lap_length_km: f64,
    pub sectors: Vec<SectorProfile>,
}

impl TrackConfig {
    /// Builds a track from per-sector columns. Sector lengths are derived from
    /// the lap length and the length fractions, rounded to the millimetre.
    pub fn from_columns(
        lap_length_km: f64,
        base_times: &[f64],
        length_fractions: &[f64],
        tire_factors: &[f64],
        fuel_factors: &[f64],
    ) -> Result<Self> {
        let n = base_times.len();
        for (name, len) in [
            ("track.length_fractions", length_fractions.len()),
            ("track.tire_factors", tire_factors.len()),
            ("track.fuel_factors", fuel_factors.len()),
        ] {
            if len != n {
                return Err(Error::config(
                    name,
                    format!("expected {n} entries (one per sector), found {len}"),
                ));
            }
        }
        let sectors = (0..n)
            .map(|i| SectorProfile {
                index: i + 1,
                base_time: base_times[i],
                length_fraction: length_fractions[i],
                tire_factor: tire_factors[i],
                fuel_factor: fuel_factors[i],
                length_km: (lap_length_km * length_fractions[i] * 1e6).round() / 1e6,
            })
            .collect();
        let track = TrackConfig {
            lap_length_km,
            sectors,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn sector(&self, index: usize) -> &SectorProfile {
        &self.sectors[index - 1]
    }

    pub fn base_lap_time(&self) -> f64 {
        self.sectors.iter().map(|s| s.base_time).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sectors.is_empty() {
            return Err(Error::config("track.base_times", "track needs at least one sector"));
        }
        if !(self.lap_length_km > 0.0) {
            return Err(Error::config("track.lap_length_km", "must be > 0"));
        }
        for s in &self.sectors {
            if !(s.base_time > 0.0) {
                return Err(Error::config(
                    "track.base_times",
                    format!("sector {} base time must be > 0", s.index),
                ));
            }
            if !(s.length_fraction > 0.0 && s.length_fraction <= 1.0) {
                return Err(Error::config(
                    "track.length_fractions",
                    format!("sector {} fraction must lie in (0, 1]", s.index),
                ));
            }
            if !(s.tire_factor >= 0.0) {
                return Err(Error::config(
                    "track.tire_factors",
                    format!("sector {} factor must be >= 0", s.index),
                ));
            }
            if !(s.fuel_factor >= 0.0) {
                return Err(Error::config(
                    "track.fuel_factors",
                    format!("sector {} factor must be >= 0", s.index),
                ));
            }
        }
        let total: f64 = self.sectors.iter().map(|s| s.length_fraction).sum();
        if (total - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::config(
                "track.length_fractions",
                format!("fractions must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarModelParams {
    /// Seconds per kilogram per lap.
    pub fuel_sensitivity: f64,
    /// Kilograms burned per lap.
    pub fuel_per_lap: f64,
    pub tank_capacity: f64,
    /// Coefficient of the logarithmic degradation term, seconds.
    pub tire_log_coeff: f64,
    /// Degradation units accumulated per lap of tire age.
    pub tire_deg_per_lap: f64,
    /// Degradation at which the car retires.
    pub critical_tire_deg: f64,
    /// Per-lap pace offset, spread over sectors by length fraction.
    pub base_lap_offset: f64,
}

impl CarModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("car.fuel_sensitivity", self.fuel_sensitivity),
            ("car.fuel_per_lap", self.fuel_per_lap),
            ("car.tank_capacity", self.tank_capacity),
            ("car.tire_log_coeff", self.tire_log_coeff),
            ("car.tire_deg_per_lap", self.tire_deg_per_lap),
            ("car.critical_tire_deg", self.critical_tire_deg),
            ("car.base_lap_offset", self.base_lap_offset),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.tank_capacity < self.fuel_per_lap {
            return Err(Error::config(
                "car.tank_capacity",
                "must hold at least one lap of fuel",
            ));
        }
        if !(self.critical_tire_deg > 90.0) {
            return Err(Error::config("car.critical_tire_deg", "must be > 90"));
        }
        Ok(())
    }

    /// Number of full laps a tank of `fuel` kilograms covers.
    pub fn laps_of_fuel(&self, fuel: f64) -> u32 {
        if self.fuel_per_lap <= 0.0 {
            return u32::MAX;
        }
        ((fuel + 1e-9) / self.fuel_per_lap).floor() as u32
    }
}

/// Condition of a car at the start of a lap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarCondition {
    pub fuel_mass: f64,
    pub tire_age: u32,
    pub tire_deg: f64,
    pub position: usize,
    pub lap: u32,
    pub retired: bool,
}

impl CarCondition {
    pub fn fresh(fuel_mass: f64, position: usize) -> Self {
        CarCondition {
            fuel_mass,
            tire_age: 0,
            tire_deg: 0.0,
            position,
            lap: 1,
            retired: false,
        }
    }
}

/// Logarithmic tire degradation penalty: `coeff * factor * ln(1 + age)`.
pub fn tire_penalty(cond: &CarCondition, sector: &SectorProfile, params: &CarModelParams) -> f64 {
    params.tire_log_coeff * sector.tire_factor * (cond.tire_age as f64).ln_1p()
}

/// Fuel mass penalty, linear in the mass on board.
pub fn fuel_penalty(cond: &CarCondition, sector: &SectorProfile, params: &CarModelParams) -> f64 {
    params.fuel_sensitivity * cond.fuel_mass * sector.fuel_factor * sector.length_fraction
}

/// Time to traverse `sector`. `extra_penalty` carries traffic and start
/// contributions sampled elsewhere.
pub fn sector_time(
    cond: &CarCondition,
    sector: &SectorProfile,
    params: &CarModelParams,
    extra_penalty: f64,
) -> f64 {
    debug_assert!(extra_penalty >= 0.0);
    (sector.base_time + params.base_lap_offset * sector.length_fraction)
        + tire_penalty(cond, sector, params)
        + fuel_penalty(cond, sector, params)
        + extra_penalty
}

/// Sum of sector times of one lap.
///
/// # Panics
/// On an empty slice.
pub fn lap_time(sector_times: &[f64]) -> f64 {
    assert!(!sector_times.is_empty(), "lap_time needs at least one sector");
    sector_times.iter().sum()
}

/// Sum of lap times.
///
/// # Panics
/// On an empty slice.
pub fn race_time(lap_times: &[f64]) -> f64 {
    assert!(!lap_times.is_empty(), "race_time needs at least one lap");
    lap_times.iter().sum()
}

/// Condition after driving one more lap. A car that cannot finish the lap on
/// its remaining fuel, or whose tires reach the critical degradation, comes
/// back retired.
///
/// # Panics
/// When called on a retired car.
pub fn advance_condition(cond: &CarCondition, params: &CarModelParams) -> CarCondition {
    assert!(!cond.retired, "advance_condition called on a retired car");
    let mut next = cond.clone();
    let remaining = cond.fuel_mass - params.fuel_per_lap;
    // small slack so that an exactly-full tank of N laps covers N laps
    if remaining < -1e-9 {
        next.retired = true;
        next.fuel_mass = 0.0;
        return next;
    }
    next.fuel_mass = remaining.max(0.0);
    next.tire_age += 1;
    next.tire_deg = next.tire_age as f64 * params.tire_deg_per_lap;
    next.lap += 1;
    if next.tire_deg >= params.critical_tire_deg {
        next.retired = true;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CarModelParams {
        CarModelParams {
            fuel_sensitivity: 0.03,
            fuel_per_lap: 3.0,
            tank_capacity: 120.0,
            tire_log_coeff: 0.8,
            tire_deg_per_lap: 5.0,
            critical_tire_deg: 101.0,
            base_lap_offset: 0.0,
        }
    }

    fn sector(tire_factor: f64, fuel_factor: f64, fraction: f64) -> SectorProfile {
        SectorProfile {
            index: 1,
            base_time: 95.0,
            length_fraction: fraction,
            tire_factor,
            fuel_factor,
            length_km: 24.0 * fraction,
        }
    }

    fn cond(fuel: f64, age: u32) -> CarCondition {
        CarCondition {
            fuel_mass: fuel,
            tire_age: age,
            tire_deg: age as f64 * 5.0,
            position: 1,
            lap: 1,
            retired: false,
        }
    }

    #[test]
    fn tire_penalty_examples() {
        let p = params();
        assert_eq!(tire_penalty(&cond(0.0, 0), &sector(1.0, 1.0, 0.2), &p), 0.0);
        let v = tire_penalty(&cond(0.0, 7), &sector(1.0, 1.0, 0.2), &p);
        assert!((v - 0.8 * 8f64.ln()).abs() < 1e-12);
        assert!((v - 1.6636).abs() < 1e-4);
        assert_eq!(tire_penalty(&cond(0.0, 20), &sector(0.0, 1.0, 0.2), &p), 0.0);
    }

    #[test]
    fn fuel_penalty_examples() {
        let p = params();
        let s = sector(1.0, 1.0, 0.2);
        assert_eq!(fuel_penalty(&cond(0.0, 3), &s, &p), 0.0);
        assert!((fuel_penalty(&cond(60.0, 0), &s, &p) - 0.36).abs() < 1e-12);
        let a = fuel_penalty(&cond(40.0, 0), &s, &p);
        let b = fuel_penalty(&cond(80.0, 0), &s, &p);
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn sector_time_examples() {
        let mut p = params();
        p.fuel_sensitivity = 0.0;
        p.tire_log_coeff = 0.0;
        let s = sector(1.0, 1.0, 0.2);
        assert_eq!(sector_time(&cond(50.0, 4), &s, &p, 0.0), 95.0);
        assert!(sector_time(&cond(0.0, 0), &s, &p, 288.0) >= 288.0);

        // 95 + 1.5 + 0.36 + 0.14 with the tire and fuel terms tuned to hit 1.5 and 0.36
        let mut p = params();
        p.tire_log_coeff = 1.5 / 2f64.ln();
        let t = sector_time(&cond(60.0, 1), &s, &p, 0.14);
        assert!((t - 97.0).abs() < 1e-12);
    }

    #[test]
    fn lap_and_race_sums() {
        assert_eq!(lap_time(&[95.0, 102.0, 88.0, 110.0, 105.0]), 500.0);
        assert_eq!(lap_time(&[480.0]), 480.0);
        assert_eq!(lap_time(&[105.0, 88.0, 95.0, 110.0, 102.0]), 500.0);
        assert_eq!(race_time(&[500.0, 510.0, 505.0]), 1515.0);
        assert_eq!(race_time(&[500.0; 25]), 12500.0);
    }

    #[test]
    #[should_panic]
    fn empty_lap_panics() {
        lap_time(&[]);
    }

    #[test]
    fn advance_condition_examples() {
        let p = params();
        let next = advance_condition(&cond(10.0, 0), &p);
        assert_eq!(next.fuel_mass, 7.0);
        assert_eq!(next.tire_age, 1);
        assert_eq!(next.lap, 2);
        assert!(!next.retired);

        assert!(advance_condition(&cond(2.0, 0), &p).retired);

        let next = advance_condition(&cond(100.0, 20), &p);
        assert_eq!(next.tire_age, 21);
        assert_eq!(next.tire_deg, 105.0);
        assert!(next.retired);
    }

    #[test]
    fn fuel_after_k_laps_is_linear() {
        let p = params();
        let mut c = cond(30.0, 0);
        for k in 1..=10u32 {
            c = advance_condition(&c, &p);
            assert!((c.fuel_mass - (30.0 - 3.0 * k as f64)).abs() < 1e-12);
        }
        assert!(advance_condition(&c, &p).retired);
    }

    #[test]
    fn track_validation_names_field() {
        let err = TrackConfig::from_columns(24.0, &[95.0, 100.0], &[0.5, 0.6], &[1.0, 1.0], &[1.0, 1.0])
            .unwrap_err();
        assert!(err.to_string().contains("track.length_fractions"));
        let err = TrackConfig::from_columns(24.0, &[95.0, -1.0], &[0.5, 0.5], &[1.0, 1.0], &[1.0, 1.0])
            .unwrap_err();
        assert!(err.to_string().contains("track.base_times"));
    }
}
