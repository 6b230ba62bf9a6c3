//! Closed-loop runners.

mod problem;
mod record;
mod runs;
mod simulate;

pub use problem::{
    build_steap_graph, initialize_trajectory, trajectory_from_values, values_from_trajectory, Problem,
    ProblemSpec,
};
pub use record::{compute_metrics, plan_hash, rms_errors, Metrics, Mode, RunRecord, StepLog};
pub use runs::{initial_plan, ol_run, run, slap_run, steap_run};
pub use simulate::{
    simulate_execute, simulate_measurement, Execution, Measurement, Segment, SimConfig, SimRng,
    ROTATION_NOISE_SCALE,
};
