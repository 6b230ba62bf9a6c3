use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::BenchConfig;
use super::worldgen::generate_world;
use crate::error::{Result, SteapError};
use crate::runtime::{compute_metrics, run, Metrics, Mode, Problem, ProblemSpec, RunRecord, SimConfig};

/// One `(mode, n_dyn, n_cam, seed)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub mode: Mode,
    pub n_dyn: f64,
    pub n_cam: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: RunKey,
    /// Absent when the run could not be set up or crashed.
    pub metrics: Option<Metrics>,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn success(&self) -> bool {
        self.metrics.is_some_and(|m| m.success)
    }
}

/// Per-group summary; errors are averaged over successful runs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub n_dyn: f64,
    pub n_cam: f64,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub goal_err_trans: Option<f64>,
    pub goal_err_rot: Option<f64>,
    pub est_err_trans: Option<f64>,
    pub est_err_rot: Option<f64>,
    pub meas_err_trans: Option<f64>,
    pub mean_step_time: Option<f64>,
}

/// The problem for one seed: template with the seed's generated world.
pub fn problem_for_seed(cfg: &BenchConfig, seed: u64) -> Result<Problem> {
    let mut spec: ProblemSpec = cfg.problem.clone();
    spec.world = generate_world(seed, &cfg.world, &spec.body, &[&spec.start, &spec.goal])?;
    Problem::new(spec)
}

/// Runs a single cell and returns the full record.
pub fn run_cell(cfg: &BenchConfig, key: &RunKey) -> Result<RunRecord> {
    let problem = problem_for_seed(cfg, key.seed)?;
    let sim = SimConfig {
        n_dyn: key.n_dyn,
        n_cam: key.n_cam,
        seed: key.seed,
        exec_substeps: cfg.sweep.exec_substeps,
    };
    run(key.mode, &problem, &sim)
}

pub fn run_keys(cfg: &BenchConfig) -> Vec<RunKey> {
    let s = &cfg.sweep;
    let mut keys = Vec::new();
    for &mode in &s.modes {
        for &n_dyn in &s.n_dyn {
            for &n_cam in &s.n_cam {
                for k in 0..s.seeds as u64 {
                    keys.push(RunKey {
                        mode,
                        n_dyn,
                        n_cam,
                        seed: s.base_seed + k,
                    });
                }
            }
        }
    }
    keys
}

fn evaluate(cfg: &BenchConfig, key: RunKey) -> RunResult {
    let outcome = run_cell(cfg, &key).and_then(|r| Ok((compute_metrics(&r)?, r.failure)));
    match outcome {
        Ok((m, failure)) => RunResult {
            key,
            metrics: Some(m),
            failure,
        },
        Err(e) => RunResult {
            key,
            metrics: None,
            failure: Some(format!("run error: {e}")),
        },
    }
}

/// Executes every cell on a pool of `cfg.sweep.jobs` threads; results follow `run_keys` order.
pub fn run_sweep(cfg: &BenchConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.jobs)
        .build()
        .map_err(|e| SteapError::InvalidConfig(e.to_string()))?;
    let keys = run_keys(cfg);
    Ok(pool.install(|| keys.into_par_iter().map(|k| evaluate(cfg, k)).collect()))
}

/// Order-independent mean: values are sorted before summation.
fn mean(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Mode, u64, u64), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.key.mode, r.key.n_dyn.to_bits(), r.key.n_cam.to_bits()))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((mode, nd, nc), rs)| {
            let ok: Vec<Metrics> = rs.iter().filter(|r| r.success()).filter_map(|r| r.metrics).collect();
            let pick = |f: fn(&Metrics) -> Option<f64>| mean(ok.iter().filter_map(f).collect());
            AggregateRow {
                mode,
                n_dyn: f64::from_bits(nd),
                n_cam: f64::from_bits(nc),
                runs: rs.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / rs.len() as f64,
                goal_err_trans: pick(|m| Some(m.goal_err_trans)),
                goal_err_rot: pick(|m| Some(m.goal_err_rot)),
                est_err_trans: pick(|m| m.est_err_trans),
                est_err_rot: pick(|m| m.est_err_rot),
                meas_err_trans: pick(|m| m.meas_err_trans),
                mean_step_time: pick(|m| Some(m.mean_step_time)),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.mode, a.n_dyn, a.n_cam)
            .partial_cmp(&(b.mode, b.n_dyn, b.n_cam))
            .expect("noise levels are finite")
    });
    rows
}

/// Six significant digits, plain notation for moderate magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        sci
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn write_csv<F>(path: &Path, header: &[&str], rows: usize, mut row: F) -> Result<()>
where
    F: FnMut(usize) -> Vec<String>,
{
    let io = |e: csv::Error| SteapError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for i in 0..rows {
        w.write_record(row(i)).map_err(io)?;
    }
    w.flush().map_err(|e| SteapError::Io(format!("{}: {e}", path.display())))
}

pub const AGGREGATE_HEADER: [&str; 11] = [
    "mode",
    "n_dyn",
    "n_cam",
    "runs",
    "success_rate",
    "goal_err_trans",
    "goal_err_rot",
    "est_err_trans",
    "est_err_rot",
    "meas_err_trans",
    "successes",
];

pub const RUNS_HEADER: [&str; 11] = [
    "mode",
    "n_dyn",
    "n_cam",
    "seed",
    "success",
    "goal_err_trans",
    "goal_err_rot",
    "est_err_trans",
    "est_err_rot",
    "meas_err_trans",
    "failure",
];

/// Writes `aggregate.csv`, `runs.csv` (both deterministic) and `timing.csv` into `dir`.
pub fn write_outputs(dir: &Path, results: &[RunResult], rows: &[AggregateRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SteapError::Io(format!("{}: {e}", dir.display())))?;
    write_csv(&dir.join("aggregate.csv"), &AGGREGATE_HEADER, rows.len(), |i| {
        let r = &rows[i];
        vec![
            r.mode.to_string(),
            fmt_sig(r.n_dyn),
            fmt_sig(r.n_cam),
            r.runs.to_string(),
            fmt_sig(r.success_rate),
            opt(r.goal_err_trans),
            opt(r.goal_err_rot),
            opt(r.est_err_trans),
            opt(r.est_err_rot),
            opt(r.meas_err_trans),
            r.successes.to_string(),
        ]
    })?;
    write_csv(&dir.join("runs.csv"), &RUNS_HEADER, results.len(), |i| {
        let r = &results[i];
        let m = r.metrics;
        vec![
            r.key.mode.to_string(),
            fmt_sig(r.key.n_dyn),
            fmt_sig(r.key.n_cam),
            r.key.seed.to_string(),
            r.success().to_string(),
            opt(m.map(|m| m.goal_err_trans)),
            opt(m.map(|m| m.goal_err_rot)),
            opt(m.and_then(|m| m.est_err_trans)),
            opt(m.and_then(|m| m.est_err_rot)),
            opt(m.and_then(|m| m.meas_err_trans)),
            r.failure.clone().unwrap_or_default(),
        ]
    })?;
    write_csv(&dir.join("timing.csv"), &["mode", "n_dyn", "n_cam", "mean_step_time_s"], rows.len(), |i| {
        let r = &rows[i];
        vec![r.mode.to_string(), fmt_sig(r.n_dyn), fmt_sig(r.n_cam), opt(r.mean_step_time)]
    })
}
