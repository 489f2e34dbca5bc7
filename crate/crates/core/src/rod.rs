//! Discrete planar Cosserat rod.
//!
//! The rod is carried in full 3D: `N + 1` nodes hold the centerline and `N`
//! elements hold orthonormal director frames. Directors are stored as
//! rotations mapping material coordinates to lab coordinates, so the columns
//! of each matrix are `d1`, `d2`, `d3`. A freshly built rod lies along `+x`
//! with `d3 = x` (cross-section normal), `d1 = y` and `d2 = z`, so in-plane
//! bending is a rotation about `d2` and in-plane shear is along `d1`.
//!
//! Elastic loads are the exact gradients of the discrete energy
//!
//! ```text
//! E = sum_j  1/2 l_j (s_j - s0_j) . S (s_j - s0_j)
//!   + sum_k  1/2 D_k (k_k - k0_k) . B (k_k - k0_k)
//! ```
//!
//! with `s_j = Q_j^T (x_{j+1} - x_j) / l_j - e3` and
//! `k_k = log(Q_{k-1}^T Q_k) / D_k`, which keeps linear momentum exactly
//! balanced and lets the symplectic integrator hold energy drift bounded.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetics::equivalent_radius;

pub type Vec3 = Vector3<f64>;

/// Speed above which a step is reported as unstable.
pub const BLOWUP_SPEED: f64 = 1e3;

/// Shear correction factor for the rectangular-equivalent rod.
pub const ALPHA_C: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Young's modulus, Pa.
    pub youngs_modulus: f64,
    /// Shear modulus, Pa. Defaults to `E / 3` (incompressible elastomer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_modulus: Option<f64>,
    /// kg/m³
    pub density: f64,
    pub width: f64,
    pub height: f64,
    pub length: f64,
}

impl MaterialParams {
    /// The 20 mm x 8 mm x 0.8 mm band robot used for locomotion learning.
    pub fn band_robot() -> Self {
        Self {
            youngs_modulus: 84.5e3,
            shear_modulus: None,
            density: 1860.0,
            width: 8e-3,
            height: 0.8e-3,
            length: 20e-3,
        }
    }

    /// The 3.7 mm x 1.5 mm x 0.185 mm sinusoidally magnetized validation robot.
    pub fn validation_robot() -> Self {
        Self {
            youngs_modulus: 84.5e3,
            shear_modulus: None,
            density: 1860.0,
            width: 1.5e-3,
            height: 0.185e-3,
            length: 3.7e-3,
        }
    }

    pub fn shear_modulus(&self) -> f64 {
        self.shear_modulus.unwrap_or(self.youngs_modulus / 3.0)
    }

    /// Rectangular cross-section area `w * h`.
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn mass(&self) -> f64 {
        self.density * self.area() * self.length
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("youngs_modulus", self.youngs_modulus),
            ("shear_modulus", self.shear_modulus()),
            ("density", self.density),
            ("width", self.width),
            ("height", self.height),
            ("length", self.length),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("material {name} must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidityTable {
    /// `B_t = E I_t`, N·m².
    pub bending: f64,
    /// `S_t = alpha_c G A`, N.
    pub shear: f64,
    /// `S_n = E A`, N.
    pub stretch: f64,
    /// Torsional rigidity of the out-of-plane mode, N·m². Never excited by
    /// planar loading.
    pub twist: f64,
    pub alpha_c: f64,
}

impl RigidityTable {
    /// Rigidities of the rectangular bar, obtained from the equivalent
    /// circular section's per-area values scaled by the true section area.
    pub fn for_material(params: &MaterialParams) -> Result<Self> {
        params.validate()?;
        let radius = equivalent_radius(params.height)?;
        let area = params.area();
        // second moment per unit area of a disc: pi r^4 / 4 / (pi r^2)
        let gyration_sq = radius * radius / 4.0;
        Ok(Self {
            bending: params.youngs_modulus * area * gyration_sq,
            shear: ALPHA_C * params.shear_modulus() * area,
            stretch: params.youngs_modulus * area,
            twist: params.shear_modulus() * 2.0 * area * gyration_sq,
            alpha_c: ALPHA_C,
        })
    }

    /// All-zero rigidities: the rod carries no elastic loads at all.
    pub fn inert() -> Self {
        Self { bending: 0.0, shear: 0.0, stretch: 0.0, twist: 0.0, alpha_c: ALPHA_C }
    }

    /// Diagonal of the shear/stretch stiffness in the material frame `(d1, d2, d3)`.
    pub fn shear_stretch_diag(&self) -> Vec3 {
        Vec3::new(self.shear, self.shear, self.stretch)
    }

    /// Diagonal of the bend/twist stiffness in the material frame.
    pub fn bend_twist_diag(&self) -> Vec3 {
        Vec3::new(self.bending, self.bending, self.twist)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Boundary {
    Free,
    /// Node 0 and element 0 held at their current pose.
    Clamped {
        position: Vec3,
        director: Rotation3<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub directors: Vec<Rotation3<f64>>,
    /// Angular velocities in each element's material frame.
    pub angular_velocities: Vec<Vec3>,
    pub rest_lengths: Vec<f64>,
    /// Rest lengths of the Voronoi regions around interior nodes.
    pub rest_voronoi: Vec<f64>,
    pub masses: Vec<f64>,
    /// Principal rotational inertias per element, material frame; index 1 is
    /// the in-plane bending axis.
    pub inertias: Vec<Vec3>,
    pub volumes: Vec<f64>,
    pub rest_curvature: Vec<Vec3>,
    pub rest_shear_stretch: Vec<Vec3>,
    /// Section thickness; the centerline sits `thickness / 2` above a
    /// surface it rests on.
    pub thickness: f64,
    pub boundary: Boundary,
    pub step_count: u64,
}

/// Strains of the current configuration and their intrinsic counterparts.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainSet {
    /// Curvature vectors at interior nodes, material frame of the preceding element.
    pub curvature: Vec<Vec3>,
    /// Shear/stretch vectors per element, material frame.
    pub shear_stretch: Vec<Vec3>,
    pub rest_curvature: Vec<Vec3>,
    pub rest_shear_stretch: Vec<Vec3>,
}

impl StrainSet {
    /// In-plane bending curvature `kappa_t` at interior node `k + 1`.
    pub fn bending(&self, k: usize) -> f64 {
        self.curvature[k].y
    }

    /// In-plane shear strain `sigma_t` of element `j`.
    pub fn shear(&self, j: usize) -> f64 {
        self.shear_stretch[j].x
    }

    /// Axial stretch strain `sigma_n` of element `j`.
    pub fn stretch(&self, j: usize) -> f64 {
        self.shear_stretch[j].z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InternalLoads {
    /// Element force resultants `n`, material frame.
    pub stresses: Vec<Vec3>,
    /// Bending/twist couples `m` at interior nodes, material frame.
    pub couples: Vec<Vec3>,
    /// Net elastic force on every node, lab frame.
    pub node_forces: Vec<Vec3>,
    /// Net elastic torque on every element, lab frame.
    pub element_torques: Vec<Vec3>,
}

/// Externally applied loads for one force evaluation, lab frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalLoads {
    pub forces: Vec<Vec3>,
    pub torques: Vec<Vec3>,
}

impl ExternalLoads {
    pub fn zeros(elements: usize) -> Self {
        Self { forces: vec![Vec3::zeros(); elements + 1], torques: vec![Vec3::zeros(); elements] }
    }

    pub fn clear(&mut self) {
        self.forces.iter_mut().for_each(|f| *f = Vec3::zeros());
        self.torques.iter_mut().for_each(|t| *t = Vec3::zeros());
    }
}

/// Builds a straight, resting rod along `+x` starting at the origin.
pub fn build_rod(params: &MaterialParams, element_count: usize) -> Result<(RodState, RigidityTable)> {
    if element_count < 2 {
        return Err(Error::Config(format!("a rod needs at least 2 elements, got {element_count}")));
    }
    let rigidity = RigidityTable::for_material(params)?;
    let n = element_count;
    let rest = params.length / n as f64;
    let area = params.area();
    let element_mass = params.density * area * rest;
    let gyration_sq = equivalent_radius(params.height)?.powi(2) / 4.0;
    let bend_inertia = element_mass * gyration_sq;

    let mut masses = vec![element_mass; n + 1];
    masses[0] = 0.5 * element_mass;
    masses[n] = 0.5 * element_mass;

    let frame = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[Vec3::y(), Vec3::z(), Vec3::x()]));

    let rod = RodState {
        positions: (0..=n).map(|i| Vec3::new(i as f64 * rest, 0.0, 0.0)).collect(),
        velocities: vec![Vec3::zeros(); n + 1],
        directors: vec![frame; n],
        angular_velocities: vec![Vec3::zeros(); n],
        rest_lengths: vec![rest; n],
        rest_voronoi: vec![rest; n - 1],
        masses,
        inertias: vec![Vec3::new(bend_inertia, bend_inertia, 2.0 * bend_inertia); n],
        volumes: vec![area * rest; n],
        rest_curvature: vec![Vec3::zeros(); n - 1],
        rest_shear_stretch: vec![Vec3::zeros(); n],
        thickness: params.height,
        boundary: Boundary::Free,
        step_count: 0,
    };
    Ok((rod, rigidity))
}

/// Largest stable time step for the stretch wave of this discretization,
/// with a 0.5 safety factor.
pub fn stable_dt(params: &MaterialParams, element_count: usize) -> f64 {
    let wave_speed = (params.youngs_modulus / params.density).sqrt();
    0.5 * (params.length / element_count as f64) / wave_speed
}

/// Inverse left Jacobian of SO(3), transposed, applied to `m`.
fn inv_left_jacobian_t(phi: &Vec3, m: &Vec3) -> Vec3 {
    let theta2 = phi.norm_squared();
    let c = if theta2 < 1e-8 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - 1.0 / (2.0 * theta * (0.5 * theta).tan())
    };
    let pm = phi.cross(m);
    m + 0.5 * pm + c * phi.cross(&pm)
}

/// Rotation vector of a rotation matrix. Robust near the identity, where
/// the trace can exceed 3 by rounding, and near a half turn.
pub fn rotation_log(r: &Rotation3<f64>) -> Vec3 {
    let m = r.matrix();
    let v = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * v.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let angle = sin.atan2(cos);
    if sin == 0.0 && cos > 0.0 {
        return Vec3::zeros();
    }
    if cos > 0.0 || sin > 1e-6 {
        return v * (angle / (2.0 * sin));
    }
    // near a half turn: the axis is the dominant column of (R + I) / 2
    let sym = (m + Matrix3::identity()) * 0.5;
    let k = (0..3).max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)])).unwrap();
    let mut axis = sym.column(k).normalize();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

fn orthonormalize(r: &Rotation3<f64>) -> Rotation3<f64> {
    let m = r.matrix();
    let d1 = m.column(0).normalize();
    let d2 = (m.column(1) - d1 * d1.dot(&m.column(1))).normalize();
    let d3 = d1.cross(&d2);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[d1, d2, d3]))
}

impl RodState {
    pub fn element_count(&self) -> usize {
        self.directors.len()
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn center_of_mass(&self) -> Vec3 {
        let weighted: Vec3 = self.positions.iter().zip(&self.masses).map(|(x, m)| x * *m).sum();
        weighted / self.total_mass()
    }

    pub fn translate(&mut self, offset: Vec3) {
        self.positions.iter_mut().for_each(|x| *x += offset);
        if let Boundary::Clamped { position, .. } = &mut self.boundary {
            *position += offset;
        }
    }

    /// Holds node 0 and element 0 at their current pose from now on.
    pub fn clamp_first_element(&mut self) {
        self.boundary = Boundary::Clamped { position: self.positions[0], director: self.directors[0] };
        self.enforce_boundary();
    }

    /// In-plane angle of each element's `d3` measured from `+x`.
    pub fn element_angles(&self) -> Vec<f64> {
        self.directors
            .iter()
            .map(|d| {
                let d3 = d.matrix().column(2);
                d3.y.atan2(d3.x)
            })
            .collect()
    }

    /// Angular velocities expressed in the lab frame.
    pub fn angular_velocities_lab(&self) -> Vec<Vec3> {
        self.directors.iter().zip(&self.angular_velocities).map(|(d, w)| d * w).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.element_count();
        if n < 2 {
            return Err(Error::Config("rod needs at least 2 elements".into()));
        }
        let sizes_ok = self.positions.len() == n + 1
            && self.velocities.len() == n + 1
            && self.masses.len() == n + 1
            && self.angular_velocities.len() == n
            && self.rest_lengths.len() == n
            && self.inertias.len() == n
            && self.volumes.len() == n
            && self.rest_shear_stretch.len() == n
            && self.rest_voronoi.len() == n - 1
            && self.rest_curvature.len() == n - 1;
        if !sizes_ok {
            return Err(Error::Shape("rod arrays disagree with element count".into()));
        }
        if self.rest_lengths.iter().chain(&self.masses).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("rest lengths and masses must be positive".into()));
        }
        Ok(())
    }

    fn enforce_boundary(&mut self) {
        if let Boundary::Clamped { position, director } = &self.boundary {
            self.positions[0] = *position;
            self.velocities[0] = Vec3::zeros();
            self.directors[0] = *director;
            self.angular_velocities[0] = Vec3::zeros();
        }
    }

    fn drift(&mut self, dt: f64) {
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            *x += v * dt;
        }
        for (d, w) in self.directors.iter_mut().zip(&self.angular_velocities) {
            *d *= Rotation3::new(w * dt);
        }
    }

    /// Total linear momentum `sum m_i v_i`.
    pub fn total_linear_momentum(&self) -> Vec3 {
        self.velocities.iter().zip(&self.masses).map(|(v, m)| v * *m).sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        let translational: f64 =
            self.velocities.iter().zip(&self.masses).map(|(v, m)| 0.5 * m * v.norm_squared()).sum();
        let rotational: f64 =
            self.angular_velocities.iter().zip(&self.inertias).map(|(w, j)| 0.5 * w.dot(&j.component_mul(w))).sum();
        translational + rotational
    }

    pub fn elastic_energy(&self, rig: &RigidityTable) -> Result<f64> {
        let strains = compute_strains(self)?;
        let s = rig.shear_stretch_diag();
        let b = rig.bend_twist_diag();
        let stretch: f64 = strains
            .shear_stretch
            .iter()
            .zip(&strains.rest_shear_stretch)
            .zip(&self.rest_lengths)
            .map(|((e, e0), l)| {
                let d = e - e0;
                0.5 * l * d.dot(&s.component_mul(&d))
            })
            .sum();
        let bend: f64 = strains
            .curvature
            .iter()
            .zip(&strains.rest_curvature)
            .zip(&self.rest_voronoi)
            .map(|((k, k0), d_len)| {
                let d = k - k0;
                0.5 * d_len * d.dot(&b.component_mul(&d))
            })
            .sum();
        Ok(stretch + bend)
    }

    /// Kinetic + elastic + gravitational energy; gravity acts along `-y`.
    pub fn total_energy(&self, rig: &RigidityTable, gravity: f64) -> Result<f64> {
        let potential: f64 = self.positions.iter().zip(&self.masses).map(|(x, m)| m * gravity * x.y).sum();
        Ok(self.kinetic_energy() + self.elastic_energy(rig)? + potential)
    }

    /// One step with constant external loads.
    pub fn step(&mut self, rig: &RigidityTable, external: &ExternalLoads, dt: f64) -> Result<()> {
        self.step_with(rig, dt, |_, _, loads| {
            loads.forces.copy_from_slice(&external.forces);
            loads.torques.copy_from_slice(&external.torques);
            Ok(())
        })
    }

    /// One position-Verlet step. `external` is called at the half-step
    /// configuration (velocities still at the start of the step) with the
    /// elastic loads already computed, and fills the external loads.
    pub fn step_with<F>(&mut self, rig: &RigidityTable, dt: f64, mut external: F) -> Result<()>
    where
        F: FnMut(&RodState, &InternalLoads, &mut ExternalLoads) -> Result<()>,
    {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let n = self.element_count();
        self.drift(0.5 * dt);
        self.enforce_boundary();

        let strains = compute_strains(self)?;
        let internal = internal_loads(self, &strains, rig);
        let mut loads = ExternalLoads::zeros(n);
        external(self, &internal, &mut loads)?;

        for i in 0..=n {
            let force = internal.node_forces[i] + loads.forces[i];
            self.velocities[i] += force * (dt / self.masses[i]);
        }
        for j in 0..n {
            let torque = self.directors[j].inverse() * (internal.element_torques[j] + loads.torques[j]);
            let w = self.angular_velocities[j];
            let inertia = self.inertias[j];
            let gyroscopic = w.cross(&inertia.component_mul(&w));
            self.angular_velocities[j] += (torque - gyroscopic).component_div(&inertia) * dt;
        }
        self.enforce_boundary();

        self.drift(0.5 * dt);
        for d in self.directors.iter_mut() {
            *d = orthonormalize(d);
        }
        self.enforce_boundary();
        self.step_count += 1;
        self.check_blowup()
    }

    fn check_blowup(&self) -> Result<()> {
        for (i, v) in self.velocities.iter().enumerate() {
            let speed = v.norm();
            if !speed.is_finite() || speed > BLOWUP_SPEED {
                return Err(Error::Instability {
                    step: self.step_count,
                    reason: format!("node {i} speed {speed:e} m/s"),
                });
            }
        }
        if let Some(j) = self.angular_velocities.iter().position(|w| !w.norm().is_finite()) {
            return Err(Error::Instability {
                step: self.step_count,
                reason: format!("element {j} angular velocity is not finite"),
            });
        }
        Ok(())
    }
}

pub fn compute_strains(rod: &RodState) -> Result<StrainSet> {
    let n = rod.element_count();
    let mut shear_stretch = Vec::with_capacity(n);
    for j in 0..n {
        let edge = rod.positions[j + 1] - rod.positions[j];
        let length = edge.norm();
        if !(length > 1e-12 * rod.rest_lengths[j]) {
            return Err(Error::Degenerate { element: j, length });
        }
        shear_stretch.push(rod.directors[j].inverse() * edge / rod.rest_lengths[j] - Vec3::z());
    }
    let curvature = (1..n)
        .map(|k| {
            let relative = rod.directors[k - 1].inverse() * rod.directors[k];
            rotation_log(&relative) / rod.rest_voronoi[k - 1]
        })
        .collect();
    Ok(StrainSet {
        curvature,
        shear_stretch,
        rest_curvature: rod.rest_curvature.clone(),
        rest_shear_stretch: rod.rest_shear_stretch.clone(),
    })
}

/// Linear constitutive loads and their nodal/elemental resultants.
pub fn internal_loads(rod: &RodState, strains: &StrainSet, rig: &RigidityTable) -> InternalLoads {
    let n = rod.element_count();
    let s = rig.shear_stretch_diag();
    let b = rig.bend_twist_diag();
    let mut node_forces = vec![Vec3::zeros(); n + 1];
    let mut element_torques = vec![Vec3::zeros(); n];

    let stresses: Vec<Vec3> = strains
        .shear_stretch
        .iter()
        .zip(&strains.rest_shear_stretch)
        .map(|(e, e0)| s.component_mul(&(e - e0)))
        .collect();
    for j in 0..n {
        let force = rod.directors[j] * stresses[j];
        node_forces[j] += force;
        node_forces[j + 1] -= force;
        let edge = rod.positions[j + 1] - rod.positions[j];
        element_torques[j] += edge.cross(&force);
    }

    let couples: Vec<Vec3> =
        strains.curvature.iter().zip(&strains.rest_curvature).map(|(k, k0)| b.component_mul(&(k - k0))).collect();
    for k in 1..n {
        let phi = strains.curvature[k - 1] * rod.rest_voronoi[k - 1];
        let torque = rod.directors[k - 1] * inv_left_jacobian_t(&phi, &couples[k - 1]);
        element_torques[k - 1] += torque;
        element_torques[k] -= torque;
    }

    InternalLoads { stresses, couples, node_forces, element_torques }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn band(n: usize) -> (RodState, RigidityTable) {
        build_rod(&MaterialParams::band_robot(), n).unwrap()
    }

    /// Places nodes on an arc of radius `radius` with chords of the rest length.
    fn bend_into_arc(rod: &mut RodState, radius: f64) {
        let n = rod.element_count();
        let l = rod.rest_lengths[0];
        let dtheta = 2.0 * (l / (2.0 * radius)).asin();
        for i in 0..=n {
            let a = i as f64 * dtheta;
            rod.positions[i] = Vec3::new(radius * a.sin(), radius * (1.0 - a.cos()), 0.0);
        }
        for j in 0..n {
            let angle = (j as f64 + 0.5) * dtheta;
            rod.directors[j] = Rotation3::new(Vec3::z() * angle) * rod.directors[j];
        }
    }

    #[test]
    fn log_map_round_trip() {
        for v in [
            Vec3::new(0.0, 0.0, 1e-9),
            Vec3::new(0.3, -0.2, 0.1),
            Vec3::new(0.0, 3.1, 0.0),
            Vec3::new(0.0, 0.0, -(std::f64::consts::PI - 1e-5)),
            Vec3::new(1.0, 1.0, 1.0).normalize() * 2.5,
        ] {
            let got = rotation_log(&Rotation3::new(v));
            assert!((got - v).norm() < 1e-9 * v.norm().max(1.0), "{v:?} -> {got:?}");
        }
        assert_eq!(rotation_log(&Rotation3::identity()), Vec3::zeros());
    }

    #[test]
    fn band_robot_mass() {
        let (rod, _) = band(20);
        assert_relative_eq!(rod.total_mass(), 1860.0 * 0.02 * 0.008 * 0.0008, max_relative = 1e-12);
        assert_relative_eq!(rod.total_mass(), 2.381e-4, max_relative = 1e-3);
    }

    #[test]
    fn minimal_rod_and_bad_inputs() {
        let (rod, _) = band(2);
        assert_eq!(rod.element_count(), 2);
        assert_eq!(rod.node_count(), 3);
        assert!(matches!(build_rod(&MaterialParams::band_robot(), 1), Err(Error::Config(_))));
        let mut p = MaterialParams::band_robot();
        p.height = 0.0;
        assert!(build_rod(&p, 10).is_err());
        p = MaterialParams::band_robot();
        p.density = -1.0;
        assert!(build_rod(&p, 10).is_err());
    }

    #[test]
    fn rectangular_rigidities() {
        let p = MaterialParams::band_robot();
        let rig = RigidityTable::for_material(&p).unwrap();
        let i_rect = p.width * p.height.powi(3) / 12.0;
        assert_relative_eq!(rig.bending, p.youngs_modulus * i_rect, max_relative = 1e-12);
        assert_relative_eq!(rig.stretch, p.youngs_modulus * p.area(), max_relative = 1e-12);
        assert_relative_eq!(rig.shear, p.youngs_modulus / 3.0 * p.area(), max_relative = 1e-12);
        assert_eq!(rig.alpha_c, 1.0);
    }

    #[test]
    fn straight_rod_has_zero_strain_and_load() {
        let (rod, rig) = band(20);
        let strains = compute_strains(&rod).unwrap();
        assert!(strains.curvature.iter().chain(&strains.shear_stretch).all(|v| v.norm() < 1e-14));
        // exactly zero strain gives exactly zero load
        let zero = StrainSet { curvature: vec![Vec3::zeros(); 19], shear_stretch: vec![Vec3::zeros(); 20], ..strains };
        let loads = internal_loads(&rod, &zero, &rig);
        assert!(loads.node_forces.iter().chain(&loads.element_torques).all(|v| *v == Vec3::zeros()));
        assert!(loads.stresses.iter().chain(&loads.couples).all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn arc_curvature() {
        let (mut rod, _) = band(50);
        let radius = 0.01;
        bend_into_arc(&mut rod, radius);
        let strains = compute_strains(&rod).unwrap();
        for k in 0..49 {
            assert_relative_eq!(strains.bending(k), 1.0 / radius, max_relative = 0.01);
        }
        for j in 0..50 {
            assert!(strains.stretch(j).abs() < 1e-12);
            assert!(strains.shear(j).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_stretch() {
        let (mut rod, _) = band(20);
        rod.positions.iter_mut().for_each(|x| *x *= 1.1);
        let strains = compute_strains(&rod).unwrap();
        for j in 0..20 {
            assert_relative_eq!(strains.stretch(j), 0.1, epsilon = 1e-12);
        }
        assert!(strains.curvature.iter().all(|k| k.norm() < 1e-12));
    }

    #[test]
    fn degenerate_element_is_reported() {
        let (mut rod, _) = band(4);
        rod.positions[2] = rod.positions[1];
        assert!(matches!(compute_strains(&rod), Err(Error::Degenerate { element: 1, .. })));
    }

    #[test]
    fn linear_bending_law() {
        let (mut rod, mut rig) = band(4);
        rig.bending = 1e-6;
        // kink of 2.0 /m at node 1
        let angle = 2.0 * rod.rest_voronoi[0];
        for j in 1..4 {
            rod.directors[j] = Rotation3::new(Vec3::z() * angle) * rod.directors[j];
        }
        let strains = compute_strains(&rod).unwrap();
        assert_relative_eq!(strains.bending(0), 2.0, max_relative = 1e-12);
        let loads = internal_loads(&rod, &strains, &rig);
        assert_relative_eq!(loads.couples[0].y, 2e-6, max_relative = 1e-12);
    }

    /// Elastic loads must be the negative gradient of the elastic energy.
    #[test]
    fn loads_match_energy_gradient() {
        let (mut rod, rig) = band(6);
        for (i, x) in rod.positions.iter_mut().enumerate() {
            let t = i as f64;
            *x += Vec3::new(1e-5 * (t * 1.3).sin(), 8e-5 * (t * 0.7).cos(), 3e-5 * (t * 2.1).sin());
        }
        for (j, d) in rod.directors.iter_mut().enumerate() {
            let t = j as f64;
            *d = Rotation3::new(Vec3::new(0.05 * t.sin(), 0.03 * t.cos(), 0.2 * (t * 0.9).sin())) * *d;
        }
        let strains = compute_strains(&rod).unwrap();
        let loads = internal_loads(&rod, &strains, &rig);
        let h_x = 1e-9;
        let h_r = 1e-7;
        for i in 0..rod.node_count() {
            for axis in 0..3 {
                let mut plus = rod.clone();
                let mut minus = rod.clone();
                plus.positions[i][axis] += h_x;
                minus.positions[i][axis] -= h_x;
                let grad = (plus.elastic_energy(&rig).unwrap() - minus.elastic_energy(&rig).unwrap()) / (2.0 * h_x);
                let scale = loads.node_forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
                assert!((loads.node_forces[i][axis] + grad).abs() < 1e-5 * scale, "node {i} axis {axis}");
            }
        }
        for j in 0..rod.element_count() {
            for axis in 0..3 {
                let mut delta = Vec3::zeros();
                delta[axis] = h_r;
                let mut plus = rod.clone();
                let mut minus = rod.clone();
                plus.directors[j] = Rotation3::new(delta) * plus.directors[j];
                minus.directors[j] = Rotation3::new(-delta) * minus.directors[j];
                let grad = (plus.elastic_energy(&rig).unwrap() - minus.elastic_energy(&rig).unwrap()) / (2.0 * h_r);
                let scale = loads.element_torques.iter().map(|f| f.norm()).fold(0.0, f64::max);
                assert!((loads.element_torques[j][axis] + grad).abs() < 1e-5 * scale, "element {j} axis {axis}");
            }
        }
    }

    #[test]
    fn resting_rod_is_a_fixed_point() {
        let (mut rod, rig) = band(20);
        let before = rod.clone();
        let loads = ExternalLoads::zeros(20);
        for _ in 0..100 {
            rod.step(&rig, &loads, 1e-5).unwrap();
        }
        for (a, b) in rod.positions.iter().zip(&before.positions) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(rod.velocities.iter().all(|v| v.norm() < 1e-12));
        assert!(rod.angular_velocities.iter().all(|w| w.norm() < 1e-12));
    }

    #[test]
    fn uniform_force_accelerates_center_of_mass() {
        let (mut rod, rig) = band(20);
        let total = rod.total_mass();
        let mut loads = ExternalLoads::zeros(20);
        // force proportional to nodal mass keeps the rod undeformed
        let accel = Vec3::new(0.3, -0.2, 0.0);
        for (f, m) in loads.forces.iter_mut().zip(&rod.masses) {
            *f = accel * *m;
        }
        let f_total: Vec3 = loads.forces.iter().sum();
        let dt = 1e-5;
        let steps = 200;
        for _ in 0..steps {
            rod.step(&rig, &loads, dt).unwrap();
        }
        let t = dt * steps as f64;
        let expected = f_total / total * t;
        let v_com = rod.total_linear_momentum() / total;
        assert!((v_com - expected).norm() < 1e-10);
    }

    #[test]
    fn rigid_translation_momentum() {
        let (mut rod, _) = band(10);
        let v = Vec3::new(0.2, -0.1, 0.0);
        rod.velocities.iter_mut().for_each(|x| *x = v);
        let p = rod.total_linear_momentum();
        assert_relative_eq!(p, v * rod.total_mass(), epsilon = 1e-18);
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let (mut rod, rig) = band(10);
        rod.velocities[3] = Vec3::new(2e3, 0.0, 0.0);
        let err = rod.step(&rig, &ExternalLoads::zeros(10), 1e-6).unwrap_err();
        assert!(matches!(err, Error::Instability { step: 1, .. }));
    }

    #[test]
    fn clamped_element_stays_put() {
        let (mut rod, rig) = band(10);
        rod.clamp_first_element();
        let mut loads = ExternalLoads::zeros(10);
        loads.torques.iter_mut().for_each(|t| *t = Vec3::z() * 1e-9);
        let d0 = rod.directors[0];
        for _ in 0..500 {
            rod.step(&rig, &loads, 1e-5).unwrap();
        }
        assert_eq!(rod.positions[0], Vec3::zeros());
        assert_eq!(rod.directors[0], d0);
        assert!(rod.positions[10].y > 0.0);
    }
}
