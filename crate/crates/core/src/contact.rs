//! Flat ground: penalty normal force, regularized Coulomb friction and
//! gravity, plus the per-node contact indicator used in observations.
//!
//! The ground is the plane `y = height`; a node touches it when its
//! centerline is less than half the section thickness above the plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rod::{RodState, Vec3};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundPlane {
    /// Plane height, m.
    pub height: f64,
    /// Penalty stiffness per node, N/m.
    pub stiffness: f64,
    /// Penalty damping per node, N·s/m. Only resists approach.
    pub damping: f64,
    pub static_friction: f64,
    pub kinetic_friction: f64,
    /// Tangential speed below which a node may stick, m/s.
    pub slip_speed: f64,
    /// Penetration at which the contact indicator reaches 2, m.
    pub indicator_depth: f64,
}

impl Default for GroundPlane {
    /// Sized for the band robot: resting penetration of an interior node is
    /// about 1.5% of the section height.
    fn default() -> Self {
        Self {
            height: 0.0,
            stiffness: 10.0,
            damping: 0.02,
            static_friction: 0.8,
            kinetic_friction: 0.6,
            slip_speed: 1e-4,
            indicator_depth: 1.17e-5,
        }
    }
}

impl GroundPlane {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) {
            return Err(Error::Config(format!("ground stiffness must be positive, got {}", self.stiffness)));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config("ground damping must be non-negative".into()));
        }
        if !(0.0 <= self.kinetic_friction && self.kinetic_friction <= self.static_friction) {
            return Err(Error::Config(format!(
                "need 0 <= kinetic ({}) <= static ({}) friction",
                self.kinetic_friction, self.static_friction
            )));
        }
        if !(self.slip_speed > 0.0) || !(self.indicator_depth > 0.0) {
            return Err(Error::Config("slip speed and indicator depth must be positive".into()));
        }
        Ok(())
    }

    /// Penetration depth of a node; negative when airborne.
    pub fn penetration(&self, rod: &RodState, node: usize) -> f64 {
        self.height + 0.5 * rod.thickness - rod.positions[node].y
    }

    /// Penalty normal force on a node, never pulling.
    pub fn normal_force(&self, rod: &RodState, node: usize) -> f64 {
        let depth = self.penetration(rod, node);
        if depth <= 0.0 {
            return 0.0;
        }
        let approach = (-rod.velocities[node].y).max(0.0);
        (self.stiffness * depth + self.damping * approach).max(0.0)
    }
}

/// Gravity, normal and friction forces on every node, given the other
/// forces already acting on the nodes.
pub fn ground_response(rod: &RodState, ground: &GroundPlane, gravity: f64, other: &[Vec3], dt: f64) -> Vec<Vec3> {
    let mut forces = vec![Vec3::zeros(); rod.node_count()];
    let zeros = vec![Vec3::zeros(); rod.node_count()];
    let mut with_other = other.to_vec();
    add_ground_response(rod, ground, gravity, &zeros, &mut with_other, dt);
    for ((f, total), o) in forces.iter_mut().zip(&with_other).zip(other) {
        *f = total - o;
    }
    forces
}

/// Adds gravity and ground reaction to `forces`. The stick test needs the
/// full load on each node, which is `internal + forces` on entry.
///
/// A sticking node receives exactly the tangential force that cancels its
/// load and brings its tangential velocity to rest within `dt`, provided that
/// stays within `static_friction * N`; otherwise it slides against kinetic
/// friction.
pub fn add_ground_response(
    rod: &RodState,
    ground: &GroundPlane,
    gravity: f64,
    internal: &[Vec3],
    forces: &mut [Vec3],
    dt: f64,
) {
    for i in 0..rod.node_count() {
        let mass = rod.masses[i];
        let weight = Vec3::new(0.0, -mass * gravity, 0.0);
        let normal = ground.normal_force(rod, i);
        if normal > 0.0 {
            let v = rod.velocities[i];
            let v_t = Vec3::new(v.x, 0.0, v.z);
            let load = internal[i] + forces[i] + weight;
            let load_t = Vec3::new(load.x, 0.0, load.z);
            let holding = -load_t - v_t * (mass / dt);
            let speed = v_t.norm();
            let friction = if speed < ground.slip_speed && holding.norm() <= ground.static_friction * normal {
                holding
            } else if speed >= ground.slip_speed {
                v_t * (-ground.kinetic_friction * normal / speed)
            } else {
                holding * (ground.kinetic_friction * normal / holding.norm())
            };
            forces[i] += Vec3::new(0.0, normal, 0.0) + friction;
        }
        forces[i] += weight;
    }
}

/// 0 for airborne nodes, `1 + depth / indicator_depth` for touching ones.
pub fn contact_indicators(rod: &RodState, ground: &GroundPlane) -> Vec<f64> {
    (0..rod.node_count())
        .map(|i| {
            let depth = ground.penetration(rod, i);
            if depth >= 0.0 {
                1.0 + depth / ground.indicator_depth
            } else {
                0.0
            }
        })
        .collect()
}
