use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub center: [f64; 2],
    pub size: [f64; 2],
}

impl BoxObstacle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= 0.5 * self.size[0]
            && (y - self.center[1]).abs() <= 0.5 * self.size[1]
    }
}

/// A rectangular world centred on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    /// `(width, height)` in meters.
    pub extent: [f64; 2],
    #[serde(default)]
    pub obstacles: Vec<BoxObstacle>,
    pub cell_size: f64,
}

impl WorldSpec {
    pub fn empty(width: f64, height: f64, cell_size: f64) -> Self {
        Self {
            extent: [width, height],
            obstacles: Vec::new(),
            cell_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.extent;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(SteapError::InvalidWorld(format!("zero-area world {w} x {h}")));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(SteapError::InvalidWorld(format!("cell size {}", self.cell_size)));
        }
        if self.cell_size > w || self.cell_size > h {
            return Err(SteapError::InvalidWorld("cell size exceeds world extent".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let inside = (0..2).all(|k| {
                o.size[k] > 0.0
                    && o.center[k] - 0.5 * o.size[k] >= -0.5 * self.extent[k] - 1e-9
                    && o.center[k] + 0.5 * o.size[k] <= 0.5 * self.extent[k] + 1e-9
            });
            if !inside {
                return Err(SteapError::InvalidWorld(format!(
                    "obstacle {i} is empty or outside the world"
                )));
            }
        }
        Ok(())
    }

    /// Number of grid cells along x and y.
    pub fn grid_shape(&self) -> (usize, usize) {
        let n = |len: f64| ((len / self.cell_size).round() as usize).max(1);
        (n(self.extent[0]), n(self.extent[1]))
    }

    pub fn is_occupied(&self, x: f64, y: f64) -> bool {
        self.obstacles.iter().any(|o| o.contains(x, y))
    }
}
