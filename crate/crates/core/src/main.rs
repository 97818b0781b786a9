use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kfl::allocation::{allocate_bandwidth, Candidate};
use kfl::harness::{build_population, load_config, run_experiment, scheduler_config, ExperimentConfig};
use kfl::system::draw_channel;
use kfl::verify::{quick_suites, slow_suites};
use kfl::Error;

#[derive(Parser)]
#[command(name = "kfl", version, about = "Knowledge-sharing federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment and write per-round metrics as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output path in the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the bandwidth/power allocation for one round of a configured population.
    Allocate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Round whose channel draw is used.
        #[arg(long, default_value_t = 0)]
        round: usize,
        /// Virtual queue backlog given to every device.
        #[arg(long, default_value_t = 1.0)]
        queue: f64,
        /// Comma-separated device ids; all devices when omitted.
        #[arg(long, value_delimiter = ',')]
        devices: Option<Vec<usize>>,
    },
    /// Run the oracle suites.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also run the multi-seed learning comparisons (minutes).
        #[arg(long)]
        full: bool,
    },
}

fn load(config: &Path, seed: Option<u64>) -> kfl::Result<ExperimentConfig> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(config: PathBuf, seed: Option<u64>, csv: Option<PathBuf>) -> kfl::Result<bool> {
    let mut out = io::stdout().lock();
    let mut cfg = load(&config, seed)?;
    if csv.is_some() {
        cfg.output = csv;
    }
    let outcome = run_experiment(&cfg)?;
    let last = outcome.records.last();
    writeln!(
        out,
        "{} rounds, final accuracy {:.4}, total energy {:.6} J",
        outcome.records.len(),
        outcome.final_accuracy(),
        last.map_or(0.0, |r| r.cumulative_energy.iter().sum::<f64>())
    )?;
    match &cfg.output {
        Some(path) => writeln!(out, "metrics written to {}", path.display())?,
        None => write!(out, "{}", kfl::harness::metrics::metrics_csv(&outcome.records))?,
    }
    Ok(true)
}

fn allocate(
    config: PathBuf,
    seed: Option<u64>,
    round: usize,
    queue: f64,
    devices: Option<Vec<usize>>,
) -> kfl::Result<bool> {
    let mut out = io::stdout().lock();
    let cfg = load(&config, seed)?;
    let population = build_population(&cfg)?;
    let sched = scheduler_config(&cfg, population.payload);
    let channel = draw_channel(&cfg.channel_model(), &population.profiles, round, cfg.seed);
    let ids = devices.unwrap_or_else(|| (0..population.profiles.len()).collect());
    let mut candidates = Vec::with_capacity(ids.len());
    for id in ids {
        let profile = population
            .profiles
            .get(id)
            .ok_or_else(|| Error::InvalidConfig { field: "--devices".into(), reason: format!("no device {id}") })?;
        candidates.push(Candidate { profile, gain: channel.gains[id], queue });
    }
    let result = allocate_bandwidth(&candidates, &sched.setup, sched.tol)?;
    writeln!(out, "device,theta,power_w,compute_energy_j,upload_energy_j,energy_j,at_min_share")?;
    for d in &result.devices {
        writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            d.device, d.share, d.power, d.compute_energy, d.upload_energy, d.energy, d.at_min_share
        )?;
    }
    writeln!(out, "# multiplier {:.9e}, share sum {:.12}", result.multiplier, result.share_sum())?;
    Ok(true)
}

fn verify(seed: u64, full: bool) -> kfl::Result<bool> {
    let mut out = io::stdout().lock();
    let mut reports = quick_suites(seed);
    if full {
        reports.extend(slow_suites(seed)?);
    }
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::Allocate { config, seed, round, queue, devices } => allocate(config, seed, round, queue, devices),
        Command::Verify { seed, full } => verify(seed, full),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[verification]: at least one suite failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(2)
        }
    }
}
