use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Endurance race simulator: parameter fitting, races, agent training and
/// evaluation, and the strategy oracle.
#[derive(Debug, Parser)]
#[command(name = "racesim", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration document (`section.key = value`); absent keys take the
    /// built-in defaults.
    #[arg(long, visible_alias = "track", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Fitted parameters (params.json from `racesim fit`) applied on top of
    /// the configuration.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,

    /// Switch every random model off.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate model parameters from a timing CSV.
    Fit {
        /// Timing data with header race_id,car_id,class,grid_slot,lap,sector,sector_time_s.
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        /// Keep only rows of this class (default: the configured class).
        #[arg(long)]
        class: Option<String>,
        /// Configuration supplying the track and the fallback values.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory for params.json, fit_report.txt and the manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Simulate one race and write standings, the event log and a lap chart.
    Race {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `opponent`, `oracle`, a checkpoint (.json) or a stop-plan file
        /// with one `<lap> <refuel_laps>` line per stop.
        #[arg(long, default_value = "opponent")]
        strategy: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train an agent and write its checkpoint, metrics and a summary.
    Train {
        #[arg(long, value_enum)]
        agent: AgentKind,
        #[command(flatten)]
        config: ConfigArgs,
        /// Training preset: paper-v1, paper-v2, paper-v3, desk or smoke.
        #[arg(long)]
        preset: Option<String>,
        /// Override the preset's episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the preset's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Greedy evaluation races for the summary.
        #[arg(long, default_value_t = 20)]
        eval_races: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run a checkpoint's greedy policy over seeded races.
    Eval {
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        races: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for summary.json and the manifest; stdout only if absent.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Optimal stop plan for the agent car on the deterministic race.
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Write synthetic timing data in the fitting schema.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        races: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    /// Tabular Q-learning.
    Q,
    /// Deep Q-network.
    Dqn,
}
