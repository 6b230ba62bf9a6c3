use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};
use crate::runtime::{Mode, ProblemSpec};

/// Parameters of the random obstacle worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldTemplate {
    pub extent: [f64; 2],
    pub cell_size: f64,
    pub obstacle_count: usize,
    pub obstacle_size: [f64; 2],
    /// Added to the robot's reach to form the keep-out disc around start and goal.
    pub clearance_margin: f64,
}

impl Default for WorldTemplate {
    fn default() -> Self {
        Self {
            extent: [30.0, 20.0],
            cell_size: 0.1,
            obstacle_count: 20,
            obstacle_size: [1.0, 1.0],
            clearance_margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<Mode>,
    pub n_dyn: Vec<f64>,
    pub n_cam: Vec<f64>,
    /// Seeds `base_seed .. base_seed + seeds`; each seed also selects the world.
    pub seeds: usize,
    pub base_seed: u64,
    pub exec_substeps: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            n_dyn: vec![0.1, 0.2],
            n_cam: vec![0.02, 0.1],
            seeds: 40,
            base_seed: 0,
            exec_substeps: 10,
            jobs: 0,
            out_dir: PathBuf::from("bench-out"),
        }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Problem template; its `world` is replaced by a generated one per seed.
    pub problem: ProblemSpec,
    pub world: WorldTemplate,
    pub sweep: SweepConfig,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SteapError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SteapError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SteapError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.modes.is_empty() || s.n_dyn.is_empty() || s.n_cam.is_empty() {
            return Err(SteapError::InvalidConfig("modes and noise grids must be non-empty".into()));
        }
        if s.seeds == 0 {
            return Err(SteapError::InvalidConfig("need at least one seed".into()));
        }
        if s.n_dyn.iter().chain(&s.n_cam).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SteapError::InvalidConfig("noise levels must be finite and >= 0".into()));
        }
        if s.exec_substeps == 0 {
            return Err(SteapError::InvalidConfig("exec_substeps must be >= 1".into()));
        }
        let w = &self.world;
        if w.obstacle_size.iter().any(|v| !(*v > 0.0)) || w.clearance_margin < 0.0 {
            return Err(SteapError::InvalidConfig("invalid world template".into()));
        }
        Ok(())
    }
}
