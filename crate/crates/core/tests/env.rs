use proptest::prelude::*;
use racesim::config::SimConfig;
use racesim::env::{ActionId, EnvConfig, ObservationKind, RaceEnv, N_ACTIONS};

fn env_config(observation: ObservationKind) -> EnvConfig {
    let mut sc = SimConfig::default();
    sc.env.observation = observation;
    sc.env_config().unwrap()
}

fn kind() -> impl Strategy<Value = ObservationKind> {
    prop_oneof![Just(ObservationKind::Dqn), Just(ObservationKind::Baseline)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_respect_the_contract(
        seed in any::<u64>(),
        obs in kind(),
        actions in proptest::collection::vec(0..N_ACTIONS, 25),
    ) {
        let cfg = env_config(obs);
        let laps = cfg.race.laps;
        let mut env = RaceEnv::new(cfg).unwrap();
        let first = env.reset_full(seed).unwrap();
        prop_assert!(env.normalize(&first).iter().all(|x| (0.0..=1.0).contains(x)));
        let mut steps = 0;
        for &a in &actions {
            let r = env.step_full(ActionId::new(a).unwrap()).unwrap();
            steps += 1;
            prop_assert!(r.normalized.iter().all(|x| (0.0..=1.0).contains(x)), "{:?}", r.normalized);
            if !r.done {
                prop_assert!((-1.0..=1.0).contains(&r.reward), "step reward {}", r.reward);
                continue;
            }
            let car = &env.state().unwrap().cars[0];
            if car.retired() {
                prop_assert_eq!(r.reward, -10.0);
            } else {
                prop_assert_eq!(r.info.lap, laps);
            }
            break;
        }
        prop_assert!(env.is_done());
        prop_assert_eq!(env.trajectory().len(), steps);
        prop_assert!(env.step_full(ActionId::NO_PIT).is_err());
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), actions in proptest::collection::vec(0..N_ACTIONS, 25)) {
        let play = || {
            let mut env = RaceEnv::new(env_config(ObservationKind::Dqn)).unwrap();
            env.reset_full(seed).unwrap();
            for &a in &actions {
                if env.step_full(ActionId::new(a).unwrap()).unwrap().done {
                    break;
                }
            }
            env.trajectory_csv()
        };
        prop_assert_eq!(play(), play());
    }
}

#[test]
fn trajectory_csv_has_one_row_per_step() {
    let mut env = RaceEnv::new(env_config(ObservationKind::Dqn)).unwrap();
    env.reset_full(3).unwrap();
    let plan = [(7, 3), (15, 2), (21, 1)];
    for lap in 1..=25 {
        let a = plan.iter().find(|p| p.0 == lap).map_or(0, |p| p.1);
        let r = env.step_full(ActionId::new(a).unwrap()).unwrap();
        assert_eq!(r.done, lap == 25);
    }
    let csv = env.trajectory_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,action,reward,fuel,tire_deg,position,lap"));
    assert_eq!(lines.count(), 25);
}
