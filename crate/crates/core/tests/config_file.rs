use std::io::Write;

use racesim::config::SimConfig;
use racesim::env::ObservationKind;
use tempfile::NamedTempFile;

fn document(text: &str) -> NamedTempFile {
    let mut f = NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn file_overrides_defaults() {
    let f = document("# short race\nrace.laps = 12\nenv.observation = \"baseline\"\nstochastic.c60 = false\n");
    let cfg = SimConfig::load(f.path()).unwrap();
    assert_eq!(cfg.race.laps, 12);
    assert_eq!(cfg.env.observation, ObservationKind::Baseline);
    let race = cfg.race_config().unwrap();
    assert!(!race.models.toggles.c60);
    // untouched keys keep their defaults
    assert_eq!(race.car.tank_capacity, 120.0);
    assert_eq!(race.track.n_sectors(), 5);
}

#[test]
fn syntax_error_reports_file_and_line() {
    let f = document("race.laps = 25\n\nrace.opponents = = 3\n");
    let msg = SimConfig::load(f.path()).unwrap_err().to_string();
    assert!(msg.contains(&f.path().display().to_string()), "{msg}");
    assert!(msg.contains(":3:"), "{msg}");
}

#[test]
fn invalid_value_names_the_key() {
    let f = document("car.tank_capacity = 10.0\n");
    let msg = SimConfig::load(f.path()).unwrap_err().to_string();
    assert!(msg.contains("car.tank_capacity"), "{msg}");
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.cfg");
    let msg = SimConfig::load(&path).unwrap_err().to_string();
    assert!(msg.contains("absent.cfg"), "{msg}");
}
