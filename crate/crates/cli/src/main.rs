//! `iab-sim`: experiment runner for the IAB mmWave system-level simulator.
//!
//! Subcommands execute Monte Carlo batches and write the five CSVs
//! (`per_ue.csv`, `latency.csv`, `dash.csv`, `http.csv`, `summary.csv`) into
//! the output directory. Exit codes: 0 success, 2 configuration error,
//! 3 no valid runs.

mod config_file;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config_file::{
    parse_f64_list, parse_policy, parse_policy_list, parse_scenario, parse_traffic, FileConfig,
};
use iab_sim_core::deployment;
use iab_sim_core::experiment::{self, CellPlan, CsvBundle, ExperimentConfig, ExperimentError};
use iab_sim_core::topology::dump_tree;
use iab_sim_core::world::{prepare, run_one, RunOutcome};

#[derive(Parser)]
#[command(name = "iab-sim", about = "System-level simulator for 5G mmWave IAB networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute independent runs of one (scenario, policy, p) configuration.
    Run(CommonArgs),
    /// Cartesian sweep over donor fractions and policies.
    Sweep(SweepArgs),
    /// Paired all-wired / IAB / only-donors comparison at one p.
    Compare(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key-value config file; flags override file values.
    #[arg(long)]
    config: PathBuf,
    /// gNB density per km^2.
    #[arg(long)]
    density: Option<f64>,
    /// Donor fraction p in (0, 1].
    #[arg(long)]
    p: Option<f64>,
    /// Backhaul path selection policy.
    #[arg(long, value_parser = ["hqf", "wf", "biased"])]
    policy: Option<String>,
    /// Bias slope in dB per hop (biased policy).
    #[arg(long)]
    beta: Option<f64>,
    /// Traffic model.
    #[arg(long, value_parser = ["cbr", "dash", "http"])]
    traffic: Option<String>,
    /// Deployment scenario.
    #[arg(long, value_parser = ["all-wired", "iab", "only-donors"])]
    scenario: Option<String>,
    /// Independent Monte Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses the i-th valid seed from here.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated duration per run in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory for the CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each run's scenario as a plain-text record.
    #[arg(long)]
    dump_scenarios: bool,
    /// Write each run's backhaul tree as a plain-text edge list.
    #[arg(long)]
    dump_trees: bool,
    /// Re-run the first run with a slot-by-slot frame trace.
    #[arg(long)]
    trace_frames: bool,
    /// Re-run the first run with a per-packet delivery trace.
    #[arg(long)]
    trace_packets: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated donor fractions (falls back to sweep_p_values).
    #[arg(long)]
    p_values: Option<String>,
    /// Comma-separated policies (falls back to sweep_policies).
    #[arg(long)]
    policies: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => run_cmd(args, Mode::Run),
        Cmd::Compare(args) => run_cmd(args, Mode::Compare),
        Cmd::Sweep(args) => sweep_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e
                .downcast_ref::<ExperimentError>()
                .is_some_and(|x| matches!(x, ExperimentError::NoValidRuns(_)))
            {
                3
            } else {
                2
            };
            ExitCode::from(code)
        }
    }
}

enum Mode {
    Run,
    Compare,
}

fn load(args: &CommonArgs) -> Result<FileConfig> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config file {}", args.config.display()))?;
    let mut fc = config_file::parse(&text)?;
    let cfg = &mut fc.cfg;
    if let Some(d) = args.density {
        cfg.density_gnb_km2 = d;
    }
    if let Some(p) = args.p {
        cfg.donor_fraction = p;
    }
    if let Some(pol) = &args.policy {
        cfg.policy.kind = parse_policy(pol)?;
    }
    if let Some(beta) = args.beta {
        cfg.policy.beta_db_per_hop = beta;
    }
    if let Some(t) = &args.traffic {
        cfg.traffic = parse_traffic(t)?;
    }
    if let Some(s) = &args.scenario {
        cfg.scenario = parse_scenario(s)?;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(d) = args.duration {
        cfg.sim_duration_s = d;
    }
    if let Some(out) = &args.out {
        fc.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(fc)
}

fn run_cmd(args: CommonArgs, mode: Mode) -> Result<()> {
    let fc = load(&args)?;
    let cells = match mode {
        Mode::Run => experiment::plan_run(&fc.cfg)?,
        Mode::Compare => experiment::plan_compare(&fc.cfg, fc.cfg.donor_fraction)?,
    };
    execute_and_write(&args, &fc, cells)
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let fc = load(&args.common)?;
    let p_values = match &args.p_values {
        Some(s) => parse_f64_list(s)?,
        None => fc.sweep_p_values.clone(),
    };
    let policies = match &args.policies {
        Some(s) => parse_policy_list(s)?,
        None => fc.sweep_policies.clone(),
    };
    let cells = experiment::plan_sweep(&fc.cfg, &p_values, &policies)?;
    execute_and_write(&args.common, &fc, cells)
}

fn execute_and_write(args: &CommonArgs, fc: &FileConfig, cells: Vec<CellPlan>) -> Result<()> {
    let results = experiment::execute(&fc.cfg, &cells)?;
    let csvs = experiment::to_csvs(&fc.cfg, &results);
    write_outputs(&fc.out_dir, &csvs)?;
    if args.dump_scenarios || args.dump_trees {
        write_dumps(args, &fc.cfg, &cells, &fc.out_dir)?;
    }
    if args.trace_frames || args.trace_packets {
        write_traces(args, &fc.cfg, &cells, &fc.out_dir)?;
    }
    print!("{}", csvs.summary);
    eprintln!("wrote CSVs to {}", fc.out_dir.display());
    Ok(())
}

fn write_outputs(out_dir: &Path, csvs: &CsvBundle) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output dir {}", out_dir.display()))?;
    fs::write(out_dir.join("per_ue.csv"), &csvs.per_ue)?;
    fs::write(out_dir.join("latency.csv"), &csvs.latency)?;
    fs::write(out_dir.join("dash.csv"), &csvs.dash)?;
    fs::write(out_dir.join("http.csv"), &csvs.http)?;
    fs::write(out_dir.join("summary.csv"), &csvs.summary)?;
    Ok(())
}

/// Scenario and tree dumps are derived from the planned seeds without
/// re-simulating.
fn write_dumps(
    args: &CommonArgs,
    cfg: &ExperimentConfig,
    cells: &[CellPlan],
    out_dir: &Path,
) -> Result<()> {
    for cell in cells {
        for (ri, &seed) in cell.seeds.iter().enumerate() {
            let spec = cfg.run_spec(cell.kind, cell.policy, cell.p, seed)?;
            let tag = format!("{}_p{}_{}_run{ri}", cell.kind.label(), cell.p, cell.policy.kind.label());
            if args.dump_scenarios {
                fs::write(
                    out_dir.join(format!("scenario_{tag}.txt")),
                    deployment::dump(&spec.scenario),
                )?;
            }
            if args.dump_trees {
                let prepared = prepare(&spec)
                    .map_err(|r| anyhow::anyhow!("planned seed became invalid: {r:?}"))?;
                fs::write(
                    out_dir.join(format!("tree_{tag}.txt")),
                    dump_tree(&prepared.tree, &prepared.links),
                )?;
            }
        }
    }
    Ok(())
}

/// Traces re-run the first planned run with tracing enabled; the batch
/// results above stay untouched.
fn write_traces(
    args: &CommonArgs,
    cfg: &ExperimentConfig,
    cells: &[CellPlan],
    out_dir: &Path,
) -> Result<()> {
    let cell = cells.first().context("no cells planned")?;
    let seed = *cell.seeds.first().context("no seeds planned")?;
    let mut spec = cfg.run_spec(cell.kind, cell.policy, cell.p, seed)?;
    spec.frame_trace = args.trace_frames;
    spec.packet_trace = args.trace_packets;
    match run_one(&spec) {
        RunOutcome::Valid(out) => {
            if let Some(trace) = out.frame_trace {
                fs::write(out_dir.join("frame_trace.txt"), trace)?;
            }
            if let Some(trace) = out.packet_trace {
                fs::write(out_dir.join("packet_trace.csv"), trace)?;
            }
            Ok(())
        }
        RunOutcome::Invalid(r) => anyhow::bail!("trace run invalid: {r:?}"),
    }
}
