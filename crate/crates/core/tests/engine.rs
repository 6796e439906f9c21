use proptest::prelude::*;
use racesim::config::SimConfig;
use racesim::engine::{
    classify, init_race, scripted_decisions, simulate_start, step_lap, EventKind, RaceConfig, RaceState,
    StochasticToggles,
};
use racesim::model::{lap_time, sector_time};
use racesim::stochastic::{c60_sector_time, StartModel};

fn race() -> RaceConfig {
    SimConfig::default().race_config().unwrap()
}

fn finish(cfg: &RaceConfig, state: &mut RaceState) {
    while !state.finished() {
        let d = scripted_decisions(cfg, state, None);
        step_lap(cfg, state, &d).unwrap();
    }
}

fn run(cfg: &RaceConfig, seed: u64) -> RaceState {
    let mut state = init_race(cfg, seed).unwrap();
    state.record_sectors();
    if cfg.models.toggles.start {
        simulate_start(&mut state, &cfg.models.start).unwrap();
    }
    finish(cfg, &mut state);
    state
}

/// Cars in the order they left sector 1 of lap 1. The log lists each
/// sector's cars in exit order.
fn order_after_first_sector(state: &RaceState) -> Vec<usize> {
    let log = state.sector_log.as_ref().unwrap();
    log.iter().filter(|r| r.lap == 1 && r.sector == 1).map(|r| r.car).collect()
}

#[test]
fn full_field_has_sixteen_positions() {
    let state = init_race(&race(), 7).unwrap();
    assert_eq!(state.cars.len(), 16);
    let mut positions: Vec<usize> = state.cars.iter().map(|c| c.condition.position).collect();
    positions.sort();
    assert_eq!(positions, (1..=16).collect::<Vec<_>>());
}

#[test]
fn solo_race_is_always_led_by_the_agent() {
    let mut cfg = race();
    cfg.n_opponents = 0;
    cfg.agent_grid_slot = 1;
    let state = run(&cfg, 3);
    assert!(state.lap_positions.iter().all(|row| row == &[1]));
    assert_eq!(classify(&state)[0].car_id, 0);
}

#[test]
fn same_seed_same_initial_state() {
    let a = init_race(&race(), 11).unwrap();
    let b = init_race(&race(), 11).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn invalid_config_names_the_field() {
    let mut cfg = race();
    cfg.agent_grid_slot = 40;
    let msg = init_race(&cfg, 1).unwrap_err().to_string();
    assert!(msg.contains("race.agent_grid_slot"), "{msg}");
}

#[test]
fn deterministic_start_keeps_grid_order() {
    let mut cfg = race();
    cfg.models.toggles = StochasticToggles {
        start: true,
        ..StochasticToggles::all_off()
    };
    cfg.models.start = StartModel::linear(16, 100.0, 0.5, 0.0);
    let state = run(&cfg, 5);
    let grid: Vec<usize> = {
        let mut ids: Vec<usize> = (0..16).collect();
        ids.sort_by_key(|&id| state.cars[id].grid_slot);
        ids
    };
    assert_eq!(order_after_first_sector(&state), grid);
}

#[test]
fn tied_start_times_fall_back_to_grid_order() {
    let mut cfg = race();
    cfg.models.toggles = StochasticToggles::all_off();
    cfg.n_opponents = 3;
    cfg.agent_grid_slot = 1;
    let mut state = init_race(&cfg, 2).unwrap();
    state.record_sectors();
    // car 3 starts from slot 4, car 1 from slot 2
    for id in 0..4 {
        state.cars[id].start_delay = Some(if id == 1 || id == 3 { 100.0 } else { 90.0 + id as f64 });
    }
    let d = scripted_decisions(&cfg, &state, None);
    step_lap(&cfg, &mut state, &d).unwrap();
    let order = order_after_first_sector(&state);
    let pos = |c: usize| order.iter().position(|&x| x == c).unwrap();
    assert!(pos(1) < pos(3), "{order:?}");
}

#[test]
fn overlapping_start_draws_reorder_the_grid() {
    let mut cfg = race();
    cfg.models.toggles = StochasticToggles {
        start: true,
        ..StochasticToggles::all_off()
    };
    let state = run(&cfg, 9);
    let mut delays: Vec<(usize, f64)> = state.cars.iter().map(|c| (c.grid_slot, c.start_delay.unwrap())).collect();
    delays.sort_by_key(|d| d.0);
    assert!(delays.windows(2).any(|w| w[0].1 > w[1].1));
}

#[test]
fn without_randomness_laps_follow_the_pure_model() {
    let mut cfg = race().deterministic();
    cfg.laps = 5;
    let state = run(&cfg, 4);
    for car in &state.cars {
        let mut cond = racesim::model::CarCondition::fresh(cfg.starting_fuel, car.grid_slot);
        for (lap, &t) in car.lap_times.iter().enumerate() {
            let sectors: Vec<f64> = cfg.track.sectors.iter().map(|s| sector_time(&cond, s, &car.params, 0.0)).collect();
            assert_eq!(t, lap_time(&sectors), "car {} lap {}", car.id, lap + 1);
            cond = racesim::model::advance_condition(&cond, &car.params);
        }
        assert_eq!(car.stops, 0);
    }
}

#[test]
fn dry_car_retires_behind_the_runners() {
    let mut cfg = race().deterministic();
    cfg.starting_fuel = 2.0 * cfg.car.fuel_per_lap;
    let mut state = init_race(&cfg, 1).unwrap();
    while !state.finished() {
        // the agent never stops, opponents follow their plan
        let d = scripted_decisions(&cfg, &state, Some(None));
        step_lap(&cfg, &mut state, &d).unwrap();
    }
    assert!(state.cars[0].retired());
    assert_eq!(state.cars[0].laps_completed, 2);
    let standings = classify(&state);
    assert_eq!(standings.last().unwrap().car_id, 0);
    assert!(standings[..15].iter().all(|s| !s.retired));
    assert!(state.events.iter().any(|e| e.car == Some(0) && e.kind == EventKind::Retired && e.lap == 3));
}

#[test]
fn c60_in_one_sector_fixes_every_time_there() {
    let mut cfg = race();
    cfg.models.toggles.c60 = true;
    cfg.models.c60.per_sector_prob = vec![0.0, 0.0, 1.0, 0.0, 0.0];
    let state = run(&cfg, 21);
    let floor = c60_sector_time(cfg.track.sector(3).length_km, 60.0);
    let log = state.sector_log.as_ref().unwrap();
    let pitting = |lap: u32, car: usize| {
        state
            .events
            .iter()
            .any(|e| e.car == Some(car) && e.lap == lap && e.sector == 3 && e.kind == EventKind::PitIn)
    };
    let rows: Vec<_> = log.iter().filter(|r| r.sector == 3 && !pitting(r.lap, r.car)).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.time == floor));
    assert!(!state
        .events
        .iter()
        .any(|e| e.sector == 3 && matches!(e.kind, EventKind::Pass | EventKind::FailedPass)));
}

#[test]
fn classification_orders_finishers_then_retirements() {
    let mut cfg = race().deterministic();
    cfg.n_opponents = 3;
    cfg.agent_grid_slot = 1;
    let mut state = run(&cfg, 1);
    state.cars[0].cumulative_time = 12510.0;
    state.cars[1].cumulative_time = 12500.0;
    for (id, laps) in [(2, 10), (3, 20)] {
        state.cars[id].condition.retired = true;
        state.cars[id].laps_completed = laps;
    }
    let ids: Vec<usize> = classify(&state).iter().map(|s| s.car_id).collect();
    assert_eq!(ids, [1, 0, 3, 2]);
}

fn toggles() -> impl Strategy<Value = StochasticToggles> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(start, traffic, c60, overtakes)| {
        StochasticToggles {
            start,
            traffic,
            c60,
            overtakes,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn race_state_invariants(seed in any::<u64>(), t in toggles(), opponents in 0usize..20, c60 in 0.0..0.1f64) {
        let mut cfg = race();
        cfg.models.toggles = t;
        cfg.n_opponents = opponents;
        cfg.agent_grid_slot = 1 + (seed as usize % (opponents + 1));
        cfg.models.start = StartModel::linear(opponents + 1, 100.0, 0.5, 0.4);
        cfg.models.c60.per_sector_prob = vec![c60; 5];
        let mut state = init_race(&cfg, seed).unwrap();
        state.record_sectors();
        if t.start {
            simulate_start(&mut state, &cfg.models.start).unwrap();
        }
        let n = cfg.field_size();
        while !state.finished() {
            let events = state.events.clone();
            let before: Vec<f64> = state.cars.iter().map(|c| c.cumulative_time).collect();
            let d = scripted_decisions(&cfg, &state, None);
            step_lap(&cfg, &mut state, &d).unwrap();
            prop_assert_eq!(&state.events[..events.len()], &events[..]);
            for (car, b) in state.cars.iter().zip(&before) {
                prop_assert!(car.cumulative_time >= *b);
            }
            let mut positions = state.lap_positions.last().unwrap().clone();
            positions.sort();
            prop_assert_eq!(positions, (1..=n).collect::<Vec<_>>());
        }
        for r in state.sector_log.as_ref().unwrap() {
            prop_assert!(r.time.is_finite() && r.time > 0.0, "{:?}", r);
        }
        for car in &state.cars {
            prop_assert!(car.condition.fuel_mass <= car.params.tank_capacity + 1e-9);
        }
        let standings = classify(&state);
        let first_retired = standings.iter().position(|s| s.retired).unwrap_or(n);
        prop_assert!(standings[first_retired..].iter().all(|s| s.retired));
    }

    #[test]
    fn growing_the_field_keeps_existing_draws(seed in any::<u64>(), small in 1usize..8, extra in 1usize..8) {
        let draws = |opponents: usize| {
            let mut cfg = race();
            cfg.n_opponents = opponents;
            cfg.agent_grid_slot = 1;
            cfg.models.start = StartModel::linear(opponents + 1, 100.0, 0.5, 0.4);
            let mut state = init_race(&cfg, seed).unwrap();
            simulate_start(&mut state, &cfg.models.start).unwrap();
            state
                .cars
                .iter()
                .map(|c| (c.start_delay.unwrap(), c.params.base_lap_offset))
                .collect::<Vec<_>>()
        };
        let a = draws(small);
        let b = draws(small + extra);
        prop_assert_eq!(&a[..], &b[..a.len()]);
    }
}
