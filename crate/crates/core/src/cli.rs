//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::experiment::{parse_config, run, ConfigOverrides, ExperimentConfig, ExperimentKind, FamilyName, RunReport};
use crate::model::Units;

#[derive(Debug, Parser)]
#[command(name = "meter-privacy", version, about = "Privacy and wasted-energy trade-offs of smart meters with storage and harvesting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Leakage and wasted energy of one policy.
    Leakage(Flags),
    /// Exhaustive grid search and Pareto front of one family.
    Pareto(Flags),
    /// Harvest-rate sweep of the two-state harvesting system.
    SweepPz(Flags),
    /// Minimum leakage per battery capacity (symmetric family).
    SweepK(Flags),
    /// Trade-off when grid energy may be wasted with a full battery.
    Waste(Flags),
    /// Scaled recursion against exact enumeration on short blocks.
    OracleCheck(Flags),
}

/// Flags shared by every experiment; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config, or the manifest of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pr{X = 1} [default: 0.5]
    #[arg(long)]
    pub px: Option<f64>,
    /// Pr{Z = 1} [default: 0]
    #[arg(long)]
    pub pz: Option<f64>,
    /// Battery capacity [default: 1]
    #[arg(long = "K")]
    pub k: Option<Units>,
    /// Trajectory length [default: 1000000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid step [default: 0.1]
    #[arg(long)]
    pub step: Option<f64>,
    /// Master seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trajectories per policy [default: 1]
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Allow wasting grid energy when the battery is full.
    #[arg(long)]
    pub waste: bool,
    /// Waste probability of the complementary-waste family.
    #[arg(long)]
    pub pw: Option<f64>,
    /// Waste probabilities of the waste sweep [default: 0,0.1,..,1]
    #[arg(long, value_delimiter = ',')]
    pub pw_grid: Option<Vec<f64>>,
    /// Harvest rates of the harvest sweep [default: 0,0.2,..,1]
    #[arg(long, value_delimiter = ',')]
    pub pz_values: Option<Vec<f64>>,
    /// Capacities of the battery sweeps [default: 1,..,6]
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<Units>>,
    /// Output directory [default: results]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Policy family; inferred from K, p_z and --waste when absent.
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    /// Free parameters of the family, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub params: Option<Vec<f64>>,
    /// Block length of oracle-check [default: 10]
    #[arg(long)]
    pub block: Option<usize>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Command {
    fn parts(&self) -> (ExperimentKind, &Flags) {
        match self {
            Command::Leakage(f) => (ExperimentKind::Leakage, f),
            Command::Pareto(f) => (ExperimentKind::Pareto, f),
            Command::SweepPz(f) => (ExperimentKind::SweepPz, f),
            Command::SweepK(f) => (ExperimentKind::SweepK, f),
            Command::Waste(f) => (ExperimentKind::Waste, f),
            Command::OracleCheck(f) => (ExperimentKind::OracleCheck, f),
        }
    }
}

impl Flags {
    pub fn overrides(&self, kind: ExperimentKind) -> ConfigOverrides {
        ConfigOverrides {
            kind: Some(kind),
            p_x: self.px,
            p_z: self.pz,
            k: self.k,
            waste_mode: (self.waste || kind == ExperimentKind::Waste).then_some(true),
            step: self.step,
            n: self.n,
            seed: self.seed,
            replicates: self.replicates,
            out: self.out.clone(),
            family: self.family,
            params: self.params.clone(),
            p_w: self.pw,
            pz_values: self.pz_values.clone(),
            k_values: self.k_values.clone(),
            pw_grid: self.pw_grid.clone(),
            block: self.block,
            workers: self.workers,
        }
    }
}

impl Cli {
    pub fn config(&self) -> Result<ExperimentConfig> {
        let (kind, flags) = self.command.parts();
        parse_config(flags.config.as_deref(), &flags.overrides(kind))
    }
}

/// Parses, runs and reports; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.config().and_then(|c| run(&c)) {
        Ok(report) => {
            print_report(&report);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_report(report: &RunReport) {
    for line in &report.oracle {
        println!(
            "{:<18} n={:<3} sequences={:<8} max |delta| = {:.3e}  {}",
            line.check,
            line.n,
            line.sequences,
            line.max_abs_delta,
            if line.passed() { "ok" } else { "FAIL" }
        );
    }
    if !report.rows.is_empty() {
        println!("{} policies evaluated", report.rows.len());
    }
    println!("wrote {} files to {}", report.files.len(), report.out.display());
}
