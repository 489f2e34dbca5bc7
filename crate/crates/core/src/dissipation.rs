//! Relative-velocity damping between node pairs `(j, j + k)`.
//!
//! Each pair acts like a dashpot: `f_j = -nu (v_j - v_{j+k})` and the
//! opposite force on `j + k`. Forces cancel pairwise, so rigid motion and
//! total momentum are untouched while vibration is removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rod::{RodState, Vec3};

/// Calibrated so a free bending oscillation of the band robot halves its
/// amplitude in roughly 0.3 s.
pub const DEFAULT_COEFFICIENT: f64 = 3.2e-4;
pub const DEFAULT_NODE_SKIP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingConfig {
    /// Damping coefficient, N·s/m.
    #[serde(default = "default_coefficient")]
    pub coefficient: f64,
    /// Index distance between the nodes of a pair.
    #[serde(default = "default_node_skip")]
    pub node_skip: usize,
}

fn default_coefficient() -> f64 {
    DEFAULT_COEFFICIENT
}

fn default_node_skip() -> usize {
    DEFAULT_NODE_SKIP
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self { coefficient: DEFAULT_COEFFICIENT, node_skip: DEFAULT_NODE_SKIP }
    }
}

impl DampingConfig {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if !(self.coefficient >= 0.0 && self.coefficient.is_finite()) {
            return Err(Error::Config(format!("damping coefficient must be >= 0, got {}", self.coefficient)));
        }
        if self.node_skip < 1 || self.node_skip >= node_count {
            return Err(Error::Config(format!("node skip {} outside [1, {})", self.node_skip, node_count)));
        }
        Ok(())
    }
}

/// Damping force on every node.
pub fn damping_forces(rod: &RodState, cfg: &DampingConfig) -> Vec<Vec3> {
    let mut forces = vec![Vec3::zeros(); rod.node_count()];
    add_damping_forces(rod, cfg, &mut forces);
    forces
}

/// Accumulates damping forces onto `forces`.
pub fn add_damping_forces(rod: &RodState, cfg: &DampingConfig, forces: &mut [Vec3]) {
    let k = cfg.node_skip;
    let nodes = rod.node_count();
    if cfg.coefficient == 0.0 || k >= nodes {
        return;
    }
    for j in 0..nodes - k {
        let f = (rod.velocities[j] - rod.velocities[j + k]) * -cfg.coefficient;
        forces[j] += f;
        forces[j + k] -= f;
    }
}
