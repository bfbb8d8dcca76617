use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use edge_offload::harness::{
    compare, debug_match, emit_plot_script, execute, rerun, run_all, sweep_users, user_counts, ExperimentPreset,
    RunOptions,
};
use edge_offload::trainer::Policy;

// glibc malloc fragments badly under the training loop's allocation pattern.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "edge-offload", version, about = "Edge offloading simulator and multi-agent trainer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file with preset overrides; may name its base preset under "preset".
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: paper, smoke or stress.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed of a single run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of seeds (0..n) for multi-seed commands.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Output directory; defaults to the preset's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Policy: UCMS, RD_UCMS, PLAIN_MADDPG, OFFLOADCOST or DEADLINE.
    #[arg(long, global = true)]
    policy: Option<Policy>,
    /// Debug logging and per-slot decision traces.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Also write a plotting helper script into the output directory.
    #[arg(long, global = true)]
    emit_plot_script: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy with one seed; writes CSV, manifest and checkpoint.
    Train,
    /// Train every policy over every seed and aggregate.
    Compare,
    /// Total cost as the number of users grows.
    SweepUsers {
        #[arg(long, default_value_t = 12)]
        from: usize,
        #[arg(long, default_value_t = 57)]
        to: usize,
        #[arg(long, default_value_t = 3)]
        step: usize,
    },
    /// Compare under the energy-tight preset.
    Stress,
    /// Print the co-selection event log of one slot as JSON.
    Match,
    /// Run the oracle and invariant suites; exits nonzero on any failure.
    Check,
    /// Reproduce a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn load_preset(common: &Common, default: &str) -> Result<ExperimentPreset> {
    let name = common.preset.as_deref().unwrap_or(default);
    let mut preset = match &common.config {
        Some(path) => ExperimentPreset::from_file(path, name)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentPreset::named(name)?,
    };
    preset = preset.with_env_overrides(std::env::vars())?;
    if let Some(n) = common.seeds {
        preset = preset.with_seed_count(n);
    }
    if let Some(p) = common.policy {
        preset.policies = vec![p];
    }
    if let Some(out) = &common.out {
        preset.out_dir = out.clone();
    }
    preset.validate()?;
    Ok(preset)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    let opts = RunOptions { checkpoint: false, trace: c.verbose };
    let out_dir = match &cli.command {
        Command::Train => {
            let preset = load_preset(c, "smoke")?;
            let policy = c.policy.unwrap_or(Policy::Ucms);
            let spec = preset.run_spec(policy, c.seed.unwrap_or(0));
            let out = execute(&spec, "train", &preset.out_dir, RunOptions { checkpoint: true, ..opts })?;
            println!("{}", out.csv_path.display());
            println!("{}", out.manifest_path.display());
            preset.out_dir
        }
        Command::Compare | Command::Stress => {
            let (default, name) =
                if matches!(cli.command, Command::Stress) { ("stress", "stress") } else { ("smoke", "compare") };
            let preset = load_preset(c, default)?;
            let summary = compare(&preset, name, &preset.out_dir, opts)?;
            for w in &summary.win_rates {
                println!("UCMS >= {}: {}/{} seeds", w.baseline, w.wins, w.seeds);
            }
            preset.out_dir
        }
        Command::SweepUsers { from, to, step } => {
            let preset = load_preset(c, "smoke")?;
            let policy = c.policy.unwrap_or(Policy::Ucms);
            let counts = user_counts(*from, *to, *step);
            if counts.is_empty() {
                bail!("empty user range {from}..={to}");
            }
            for r in sweep_users(&preset, &counts, policy, &preset.out_dir, opts)? {
                println!("{},{},{}", r.num_users, r.mean_total_cost, r.std_total_cost);
            }
            preset.out_dir
        }
        Command::Match => {
            let preset = load_preset(c, "paper")?;
            let m = debug_match(&preset, c.seed.unwrap_or(0))?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Check => {
            let results = run_all(c.seed.unwrap_or(0));
            let mut ok = true;
            for r in &results {
                println!("{} {:<24} {:>7.2}s  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
                ok &= r.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Rerun { manifest } => {
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("rerun"));
            let r = rerun(manifest, &out)?;
            println!("{}", r.csv_path.display());
            out
        }
    };
    if c.emit_plot_script {
        let path = emit_plot_script(&out_dir)?;
        info!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
