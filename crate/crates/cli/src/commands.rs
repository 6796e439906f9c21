use std::path::{Path, PathBuf};

use racesim::agents::{dqn_train, evaluate, metrics_csv, qlearn_train, run_episode, strategy_oracle, EvalStats, FixedSequence, OpponentPolicy, Policy, RaceRecord};
use racesim::config::SimConfig;
use racesim::engine::{event_log_csv, lap_chart_csv, standings_json};
use racesim::env::RaceEnv;
use racesim::fit::{fit_all, generate_synthetic, FittedParams, TimingDataset};
use serde::Serialize;

use crate::args::{AgentKind, Cli, Command, ConfigArgs};
use crate::manifest::{OutDir, RunManifest};
use crate::strategy::{parse_plan, Checkpoint, Strategy};
use crate::CliError;

/// Seed of the first race of the evaluation that follows training.
const TRAIN_EVAL_SEED: u64 = 1_000_000;

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { data, class, config, out } => fit(&data, class, &config, &out),
        Command::Race {
            config,
            seed,
            strategy,
            out,
        } => race(&config, seed, &strategy, &out),
        Command::Train {
            agent,
            config,
            preset,
            episodes,
            seed,
            eval_races,
            jobs,
            out,
        } => train(agent, &config, preset.as_deref(), episodes, seed, eval_races, jobs, &out),
        Command::Eval {
            ckpt,
            config,
            races,
            seed,
            jobs,
            out,
        } => eval(&ckpt, &config, races, seed, jobs, out.as_deref()),
        Command::Oracle { config, out } => oracle(&config, out.as_deref()),
        Command::Generate {
            config,
            races,
            seed,
            out,
        } => generate(&config, races, seed, &out),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_config(a: &ConfigArgs) -> Result<SimConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::load(p).map_err(CliError::input)?,
        None => SimConfig::default(),
    };
    if let Some(p) = &a.params {
        let params = FittedParams::from_json(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        params
            .apply_to(&mut cfg)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    }
    if a.deterministic {
        cfg.stochastic.start = false;
        cfg.stochastic.traffic = false;
        cfg.stochastic.c60 = false;
        cfg.stochastic.overtakes = false;
    }
    Ok(cfg)
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(CliError::runtime)
}

fn fit(data: &Path, class: Option<String>, config: &Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => SimConfig::load(p).map_err(CliError::input)?,
        None => SimConfig::default(),
    };
    if let Some(c) = class {
        cfg.fit.class = c;
    }
    let opts = cfg.fit_options();
    let ds = TimingDataset::load(data, opts.class.as_deref()).map_err(CliError::input)?;
    let outcome = fit_all(&ds, &cfg).map_err(|e| CliError::Input(format!("{}: {e}", data.display())))?;
    let report = outcome.report.to_text();

    let manifest = RunManifest::new("fit", out).configs([config, &Some(data.to_path_buf())]);
    let mut dir = OutDir::create(manifest)?;
    dir.write("params.json", outcome.params.to_json().map_err(CliError::runtime)? + "\n")?;
    dir.write("fit_report.txt", &report)?;
    dir.finish()?;
    print!("{report}");
    Ok(())
}

fn race(config: &ConfigArgs, seed: u64, strategy: &str, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let env_cfg = cfg.env_config().map_err(CliError::input)?;
    let mut policy = match strategy {
        "opponent" => Strategy::Opponent(OpponentPolicy),
        "oracle" => {
            let plan = strategy_oracle(&env_cfg.race.deterministic()).map_err(CliError::runtime)?;
            Strategy::Plan(FixedSequence::new(plan.actions))
        }
        path if path.ends_with(".json") => Strategy::Agent(Checkpoint::load(Path::new(path))?),
        path => {
            let text = read(Path::new(path))?;
            Strategy::Plan(FixedSequence::new(parse_plan(&text, path, env_cfg.race.laps)?))
        }
    };
    if let Some(kind) = policy.observation() {
        if kind != env_cfg.observation {
            return Err(CliError::Input(format!(
                "{strategy}: checkpoint was trained on {kind:?} observations but env.observation is {:?}",
                env_cfg.observation
            )));
        }
    }
    let mut env = RaceEnv::new(env_cfg).map_err(CliError::input)?;
    let record = run_episode(&mut policy, &mut env, seed).map_err(CliError::runtime)?;
    let state = env.state().expect("episode ran");

    let mut manifest = RunManifest::new("race", out).configs([&config.config, &config.params]).seed(seed);
    if Path::new(strategy).exists() {
        manifest.config_paths.push(PathBuf::from(strategy));
    }
    let mut dir = OutDir::create(manifest)?;
    dir.write("standings.json", standings_json(state).map_err(CliError::runtime)? + "\n")?;
    dir.write("events.csv", event_log_csv(state))?;
    dir.write("lap_chart.csv", lap_chart_csv(state))?;
    dir.write("agent.json", json(&record)?)?;
    dir.finish()?;
    println!("{}", agent_line(&record));
    Ok(())
}

fn agent_line(r: &RaceRecord) -> String {
    if r.retired {
        format!("agent retired after {} laps ({} stops)", r.laps_completed, r.stops)
    } else {
        format!("agent finished P{} in {:.3} s ({} stops)", r.final_position, r.race_time, r.stops)
    }
}

/// Evaluation figures without the per-race records.
#[derive(Debug, Serialize)]
struct EvalSummary {
    races: usize,
    first_seed: u64,
    win_rate: f64,
    mean_final_position: f64,
    retirement_rate: f64,
    mean_race_time: Option<f64>,
}

impl EvalSummary {
    fn of(stats: &EvalStats, first_seed: u64) -> Self {
        EvalSummary {
            races: stats.n_races,
            first_seed,
            win_rate: stats.win_rate,
            mean_final_position: stats.mean_final_position,
            retirement_rate: stats.retirement_rate,
            mean_race_time: stats.mean_race_time,
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    agent: &'static str,
    episodes: usize,
    seed: u64,
    mean_reward_last_100: f64,
    eval: EvalSummary,
}

fn races_csv(stats: &EvalStats) -> String {
    let mut out = String::from("seed,final_position,retired,laps_completed,race_time_s,stops\n");
    for r in &stats.records {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.seed, r.final_position, r.retired, r.laps_completed, r.race_time, r.stops
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train(
    agent: AgentKind,
    config: &ConfigArgs,
    preset: Option<&str>,
    episodes: Option<usize>,
    seed: Option<u64>,
    eval_races: usize,
    jobs: usize,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let mut tc = cfg.train_config(preset).map_err(|e| match preset {
        Some(_) => CliError::Usage(e.to_string()),
        None => CliError::Input(e.to_string()),
    })?;
    if let Some(n) = episodes {
        tc.episodes = n;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let env_cfg = cfg.env_config().map_err(CliError::input)?;
    let kind = env_cfg.observation;
    let mut env = RaceEnv::new(env_cfg.clone()).map_err(CliError::input)?;
    let (ckpt, metrics) = match agent {
        AgentKind::Q => {
            let (mut table, m) = qlearn_train(&mut env, &tc).map_err(CliError::runtime)?;
            table.observation = Some(kind);
            (Checkpoint::Q(table), m)
        }
        AgentKind::Dqn => {
            let (mut net, m) = dqn_train(&mut env, &tc).map_err(CliError::runtime)?;
            net.observation = Some(kind);
            (Checkpoint::Dqn(net), m)
        }
    };
    let stats = evaluate(&Strategy::Agent(ckpt.clone()), &env_cfg, eval_races, TRAIN_EVAL_SEED, jobs)
        .map_err(CliError::runtime)?;
    let tail = &metrics[metrics.len().saturating_sub(100)..];
    let summary = TrainSummary {
        agent: match agent {
            AgentKind::Q => "q",
            AgentKind::Dqn => "dqn",
        },
        episodes: tc.episodes,
        seed: tc.seed,
        mean_reward_last_100: tail.iter().map(|m| m.total_reward).sum::<f64>() / tail.len().max(1) as f64,
        eval: EvalSummary::of(&stats, TRAIN_EVAL_SEED),
    };

    let manifest = RunManifest::new("train", out).configs([&config.config, &config.params]).seed(tc.seed);
    let mut dir = OutDir::create(manifest)?;
    dir.write("checkpoint.json", ckpt.to_json()?)?;
    dir.write("train_config.json", json(&tc)?)?;
    dir.write("metrics.csv", metrics_csv(&metrics))?;
    dir.write("summary.json", json(&summary)?)?;
    dir.finish()?;
    println!(
        "trained {} episodes: eval win rate {:.2}, mean finish {:.2}, retirements {:.2}",
        tc.episodes, stats.win_rate, stats.mean_final_position, stats.retirement_rate
    );
    Ok(())
}

fn eval(ckpt: &Path, config: &ConfigArgs, races: usize, seed: u64, jobs: usize, out: Option<&Path>) -> Result<(), CliError> {
    if races == 0 {
        return Err(CliError::Usage("--races must be at least 1".into()));
    }
    let cfg = load_config(config)?;
    let env_cfg = cfg.env_config().map_err(CliError::input)?;
    let policy = Strategy::Agent(Checkpoint::load(ckpt)?);
    // a checkpoint trained on the other observation variant is an input error
    let stats = evaluate(&policy, &env_cfg, races, seed, jobs).map_err(|e| match e {
        racesim::Error::Config { .. } => CliError::Input(format!("{}: {e}", ckpt.display())),
        e => CliError::runtime(e),
    })?;
    let summary = json(&EvalSummary::of(&stats, seed))?;
    if let Some(out) = out {
        let manifest = RunManifest::new("eval", out)
            .configs([&Some(ckpt.to_path_buf()), &config.config, &config.params])
            .seed(seed);
        let mut dir = OutDir::create(manifest)?;
        dir.write("summary.json", &summary)?;
        dir.write("races.csv", races_csv(&stats))?;
        dir.finish()?;
    }
    print!("{summary}");
    Ok(())
}

fn oracle(config: &ConfigArgs, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let race = cfg.race_config().map_err(CliError::input)?.deterministic();
    let result = strategy_oracle(&race).map_err(CliError::runtime)?;
    let plan: String = result
        .stop_laps
        .iter()
        .zip(&result.refuel_laps)
        .map(|(lap, refuel)| format!("{lap} {refuel}\n"))
        .collect();
    if let Some(out) = out {
        let manifest = RunManifest::new("oracle", out).configs([&config.config, &config.params]);
        let mut dir = OutDir::create(manifest)?;
        dir.write("oracle.json", json(&result)?)?;
        dir.write("plan.txt", format!("# lap refuel_laps\n{plan}"))?;
        dir.finish()?;
    }
    println!("race time {:.3} s", result.race_time);
    print!("{plan}");
    Ok(())
}

fn generate(config: &ConfigArgs, races: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    if races == 0 {
        return Err(CliError::Usage("--races must be at least 1".into()));
    }
    let cfg = load_config(config)?;
    let race = cfg.race_config().map_err(CliError::input)?;
    let ds = generate_synthetic(&race, races, seed).map_err(CliError::runtime)?;
    let manifest = RunManifest::new("generate", out).configs([&config.config, &config.params]).seed(seed);
    let mut dir = OutDir::create(manifest)?;
    dir.write("timing.csv", ds.to_csv())?;
    dir.finish()?;
    println!("{} records from {races} races", ds.len());
    Ok(())
}
