use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use steap::bench::{aggregate, fmt_sig, plot_run, problem_for_seed, run_sweep, write_outputs, BenchConfig};
use steap::runtime::{compute_metrics, run, Mode, RunRecord, SimConfig};

#[derive(Parser)]
#[command(name = "steap", version, about = "Simultaneous trajectory estimation and planning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode.
    Run {
        #[arg(long, default_value = "STEAP")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        n_dyn: f64,
        #[arg(long, default_value_t = 0.0)]
        n_cam: f64,
        /// TOML configuration; defaults to the built-in benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write an SVG of the run.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Write the full run record as JSON.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run a sweep over modes, noise levels and seeds.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides the configuration).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render a saved run record as SVG.
    Plot {
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plan snapshot to draw (0 = initial plan).
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn load_config(path: Option<&PathBuf>) -> Result<BenchConfig> {
    match path {
        Some(p) => BenchConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(BenchConfig::default()),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            mode,
            seed,
            n_dyn,
            n_cam,
            config,
            plot,
            record,
        } => {
            let cfg = load_config(config.as_ref())?;
            let problem = problem_for_seed(&cfg, seed)?;
            let sim = SimConfig {
                n_dyn,
                n_cam,
                seed,
                exec_substeps: cfg.sweep.exec_substeps,
            };
            let rec = run(mode, &problem, &sim)?;
            let m = compute_metrics(&rec)?;
            println!("mode: {mode}");
            println!("success: {}", m.success);
            if let Some(f) = &rec.failure {
                println!("failure: {f}");
            }
            println!("goal_err_trans: {}", fmt_sig(m.goal_err_trans));
            println!("goal_err_rot: {}", fmt_sig(m.goal_err_rot));
            if let (Some(t), Some(r)) = (m.est_err_trans, m.est_err_rot) {
                println!("est_err_trans: {}", fmt_sig(t));
                println!("est_err_rot: {}", fmt_sig(r));
            }
            if let Some(t) = m.meas_err_trans {
                println!("meas_err_trans: {}", fmt_sig(t));
            }
            println!("mean_step_time_s: {}", fmt_sig(m.mean_step_time));
            if let Some(p) = plot {
                plot_run(&rec, 0, &p)?;
            }
            if let Some(p) = record {
                std::fs::write(&p, rec.to_json()?).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Bench { config, out, jobs } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(o) = out {
                cfg.sweep.out_dir = o;
            }
            if let Some(j) = jobs {
                cfg.sweep.jobs = j;
            }
            let results = run_sweep(&cfg)?;
            let rows = aggregate(&results);
            write_outputs(&cfg.sweep.out_dir, &results, &rows)?;
            println!("mode  n_dyn  n_cam  success  goal_trans  est_trans  meas_trans");
            for r in &rows {
                let f = |x: Option<f64>| x.map(fmt_sig).unwrap_or_else(|| "-".into());
                println!(
                    "{:<5} {:<6} {:<6} {:<8} {:<11} {:<10} {}",
                    r.mode.as_str(),
                    fmt_sig(r.n_dyn),
                    fmt_sig(r.n_cam),
                    fmt_sig(r.success_rate),
                    f(r.goal_err_trans),
                    f(r.est_err_trans),
                    f(r.meas_err_trans)
                );
            }
            println!("wrote {}", cfg.sweep.out_dir.display());
        }
        Command::Plot { record, out, step } => {
            let text = std::fs::read_to_string(&record).with_context(|| format!("reading {}", record.display()))?;
            let rec = RunRecord::from_json(&text)?;
            plot_run(&rec, step, &out)?;
        }
        Command::DefaultConfig => print!("{}", BenchConfig::default().to_toml()?),
    }
    Ok(())
}
