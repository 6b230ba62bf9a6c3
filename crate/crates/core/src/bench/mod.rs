//! Benchmark harness: configuration, random worlds, sweeps and plots.

mod config;
mod plot;
mod sweep;
mod worldgen;

pub use config::{BenchConfig, SweepConfig, WorldTemplate};
pub use plot::{plot_run, render_svg, ESTIMATE_COLOR, GROUND_TRUTH_COLOR, PLAN_COLOR};
pub use sweep::{
    aggregate, fmt_sig, problem_for_seed, run_cell, run_keys, run_sweep, write_outputs, AggregateRow,
    RunKey, RunResult, AGGREGATE_HEADER, RUNS_HEADER,
};
pub use worldgen::{generate_world, MAX_REJECTIONS};
