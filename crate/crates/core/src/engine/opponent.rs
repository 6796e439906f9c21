//! Scripted opponent strategy: four stops, the last one a splash and dash
//! inside the window without mandatory standing time.

use super::pit::{PitRegulation, PitRequest, REFUEL_OPTIONS};
use crate::model::{CarCondition, CarModelParams};

pub const OPPONENT_STOPS: u32 = 4;

const EPS: f64 = 1e-9;

/// Laps at whose end an opponent plans to stop. The final stop sits at the
/// start of the free-standing window, or later if the window opens early,
/// and the earlier ones split the laps before it evenly.
pub fn planned_stops(total_laps: u32, regulation: &PitRegulation) -> Vec<u32> {
    if total_laps < 2 {
        return Vec::new();
    }
    let last = regulation
        .first_free_lap()
        .max(total_laps.saturating_sub(4))
        .min(total_laps - 1);
    let mut stops: Vec<u32> = (1..OPPONENT_STOPS)
        .map(|k| k * last / OPPONENT_STOPS)
        .filter(|&l| l >= 1)
        .collect();
    stops.push(last);
    stops.dedup();
    stops
}

/// Smallest refuel option covering `deficit_kg`, or the largest option.
fn minimal_cover(deficit_kg: f64, fuel_per_lap: f64) -> u32 {
    REFUEL_OPTIONS
        .iter()
        .copied()
        .find(|&laps| laps as f64 * fuel_per_lap + EPS >= deficit_kg)
        .unwrap_or(*REFUEL_OPTIONS.last().unwrap())
}

/// Decision taken before `lap` starts. A stop requested here happens at the
/// end of `lap`.
pub fn opponent_decide(
    cond: &CarCondition,
    params: &CarModelParams,
    lap: u32,
    total_laps: u32,
    regulation: &PitRegulation,
) -> Option<PitRequest> {
    if cond.retired || lap >= total_laps {
        return None;
    }
    let fpl = params.fuel_per_lap;
    let after = cond.fuel_mass - fpl;
    if after < -EPS {
        // cannot complete this lap, a stop at its end does not help
        return None;
    }
    let laps_left = total_laps - lap;
    if after + EPS >= laps_left as f64 * fpl {
        return None;
    }

    let plan = planned_stops(total_laps, regulation);
    let pit_now = match plan.iter().copied().find(|&p| p >= lap) {
        Some(p) if p == lap => true,
        Some(p) => after + EPS < (p - lap) as f64 * fpl,
        None => after + EPS < fpl,
    };
    if !pit_now {
        return None;
    }

    let target = plan.iter().copied().find(|&p| p > lap).unwrap_or(total_laps);
    let deficit = (target - lap) as f64 * fpl - after;
    PitRequest::new(minimal_cover(deficit, fpl)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::pit::StandingWindow;

    fn regulation() -> PitRegulation {
        PitRegulation {
            travel_in: 130.0,
            travel_out: 105.0,
            standing_schedule: vec![
                StandingWindow { from_lap: 1, mandatory_standing: 60.0 },
                StandingWindow { from_lap: 21, mandatory_standing: 0.0 },
            ],
            free_service_time: 10.0,
            refuel_rate: 2.5,
        }
    }

    fn params() -> CarModelParams {
        CarModelParams {
            fuel_sensitivity: 0.03,
            fuel_per_lap: 15.0,
            tank_capacity: 120.0,
            tire_log_coeff: 0.4,
            tire_deg_per_lap: 5.0,
            critical_tire_deg: 110.0,
            base_lap_offset: 0.0,
        }
    }

    fn cond(fuel: f64, lap: u32) -> CarCondition {
        CarCondition {
            fuel_mass: fuel,
            tire_age: 3,
            tire_deg: 15.0,
            position: 5,
            lap,
            retired: false,
        }
    }

    #[test]
    fn plan_has_four_stops_ending_in_free_window() {
        let plan = planned_stops(25, &regulation());
        assert_eq!(plan, vec![5, 10, 15, 21]);
        assert_eq!(plan.len(), OPPONENT_STOPS as usize);
    }

    #[test]
    fn one_lap_of_fuel_mid_race() {
        let d = opponent_decide(&cond(15.0, 10), &params(), 10, 25, &regulation());
        assert_eq!(d, Some(PitRequest::new(6).unwrap()));
    }

    #[test]
    fn splash_in_free_window_is_minimal() {
        // three laps of fuel at the start of lap 21, four laps to go after it
        let d = opponent_decide(&cond(45.0, 21), &params(), 21, 25, &regulation());
        assert_eq!(d, Some(PitRequest::new(4).unwrap()));
    }

    #[test]
    fn full_tank_early_does_not_pit() {
        assert_eq!(opponent_decide(&cond(120.0, 2), &params(), 2, 25, &regulation()), None);
    }

    #[test]
    fn forced_stop_before_plan() {
        // lap 7 with one lap of fuel; next planned stop is lap 10
        let d = opponent_decide(&cond(15.0, 7), &params(), 7, 25, &regulation());
        assert!(d.is_some());
    }

    #[test]
    fn fuel_to_the_flag_means_no_stop() {
        assert_eq!(opponent_decide(&cond(60.0, 22), &params(), 22, 25, &regulation()), None);
    }

    #[test]
    fn scripted_race_never_runs_dry() {
        let p = params();
        let reg = regulation();
        let mut c = cond(120.0, 1);
        c.tire_age = 0;
        let mut stops = 0;
        for lap in 1..=25u32 {
            let d = opponent_decide(&c, &p, lap, 25, &reg);
            c = crate::model::advance_condition(&c, &p);
            assert!(!c.retired, "ran dry on lap {lap}");
            if let Some(req) = d {
                stops += 1;
                c = super::super::pit::apply_pit(&c, &p, &req, &reg, lap).unwrap().condition;
            }
        }
        assert_eq!(stops, 4);
    }
}
