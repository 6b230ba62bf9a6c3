//! Simultaneous trajectory estimation and planning on factor graphs.
//!
//! The crate is layered bottom-up:
//!
//! * [`lie`], [`state`]: SE(2) arithmetic, `SE(2) x R^n` configurations, Markov states.
//! * [`gp`]: constant-velocity Gaussian-process prior, factor errors and interpolation.
//! * [`factor`], [`optimize`]: factors, linearization and batch Levenberg-Marquardt.
//! * [`ordering`], [`elimination`], [`bayes_tree`], [`isam`]: variable elimination,
//!   Bayes-tree construction and incremental smoothing with fluid relinearization.
//! * [`env`]: worlds, signed distance fields, sphere body model and obstacle costs.
//! * [`runtime`]: the closed-loop simulator and the OL / SLAP / STEAP runners.
//! * [`bench`]: world generation, Monte-Carlo sweeps, CSV tables and SVG plots.

pub mod bayes_tree;
pub mod bench;
pub mod elimination;
pub mod env;
pub mod error;
pub mod factor;
pub mod gp;
pub mod isam;
pub mod lie;
pub mod optimize;
pub mod ordering;
pub mod runtime;
mod serde_util;
pub mod state;

pub use error::{Result, SteapError};
pub use factor::{Factor, FactorGraph, FactorKind, NoiseModel, Values, VarId};
pub use lie::Se2Pose;
pub use state::{local_coordinates, retract, MarkovState, MobileConfig, Trajectory};
