//! Gait analysis of logged rollouts and static deflection scenarios.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::contact::{add_ground_response, GroundPlane, STANDARD_GRAVITY};
use crate::dissipation::{add_damping_forces, DampingConfig};
use crate::error::{Error, Result};
use crate::io::Trajectory;
use crate::magnetics::{add_magnetic_torques, field_polar, FieldState, ProfileSpec, ROBOT_MAGNETIZATION};
use crate::rod::{build_rod, stable_dt, MaterialParams, RodState, Vec3};

/// Angle of the vector from the middle node to the midpoint of the two
/// ends, measured clockwise from `+x`, in `(-π, π]`. An upward arch gives
/// `π/2`; a zero-length vector gives 0.
pub fn opening_angle(positions: &[[f64; 2]], middle: usize) -> f64 {
    let (first, last) = (positions[0], positions[positions.len() - 1]);
    let mid = positions[middle];
    let vx = 0.5 * (first[0] + last[0]) - mid[0];
    let vy = 0.5 * (first[1] + last[1]) - mid[1];
    if vx == 0.0 && vy == 0.0 {
        return 0.0;
    }
    let beta = (-vy).atan2(vx);
    if beta == -PI {
        PI
    } else {
        beta
    }
}

/// Min-max normalization to `[0, 1]`; a constant series maps to zeros.
pub fn regularize(series: &[f64]) -> Vec<f64> {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    series.iter().map(|v| if range > 0.0 { (v - lo) / range } else { 0.0 }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaitRow {
    pub t: f64,
    pub beta: f64,
    /// Vertical extent of the body, m.
    pub height: f64,
    /// Horizontal extent of the body, m.
    pub span: f64,
    pub height_reg: f64,
    pub span_reg: f64,
    /// Contact indicator of the leading (`+x`) end.
    pub front_contact: f64,
    pub back_contact: f64,
    pub mid_x: f64,
    pub mid_y: f64,
    /// Forward-difference velocity of the middle node; the last row repeats
    /// the backward difference.
    pub mid_vx: f64,
    pub mid_vy: f64,
    /// Counterclockwise from `+x`.
    pub field_angle: f64,
    pub field_amplitude_mt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaitAnalysis {
    pub rows: Vec<GaitRow>,
    /// Forward-difference velocity of every node at every sample.
    pub node_velocities: Vec<Vec<[f64; 2]>>,
}

fn differences(traj: &Trajectory) -> Vec<Vec<[f64; 2]>> {
    let s = &traj.samples;
    let n = s.len();
    (0..n)
        .map(|k| {
            let (a, b) = if k + 1 < n { (k, k + 1) } else { (k.saturating_sub(1), k) };
            s[a].positions
                .iter()
                .zip(&s[b].positions)
                .map(
                    |(p, q)| {
                        if a == b {
                            [0.0, 0.0]
                        } else {
                            [(q[0] - p[0]) / traj.period, (q[1] - p[1]) / traj.period]
                        }
                    },
                )
                .collect()
        })
        .collect()
}

pub fn analyze_gait(traj: &Trajectory) -> Result<GaitAnalysis> {
    if traj.samples.is_empty() {
        return Err(Error::Config("trajectory log is empty".into()));
    }
    let nodes = traj.samples[0].positions.len();
    if nodes < 3
        || traj.middle_node >= nodes
        || traj.samples.iter().any(|s| s.positions.len() != nodes || s.contact.len() != nodes)
    {
        return Err(Error::Shape("trajectory samples disagree on node count".into()));
    }
    let velocities = differences(traj);
    let extent = |s: &crate::io::TrajectorySample, axis: usize| {
        let lo = s.positions.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = s.positions.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let heights: Vec<f64> = traj.samples.iter().map(|s| extent(s, 1)).collect();
    let spans: Vec<f64> = traj.samples.iter().map(|s| extent(s, 0)).collect();
    let (hr, sr) = (regularize(&heights), regularize(&spans));
    let mid = traj.middle_node;
    let rows = traj
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (head, tail) =
                if s.positions[nodes - 1][0] >= s.positions[0][0] { (nodes - 1, 0) } else { (0, nodes - 1) };
            let field = FieldState::from_millitesla(s.field_mt[0], s.field_mt[1], traj.max_field_mt);
            let (field_angle, amp) = field_polar(&field);
            GaitRow {
                t: s.t,
                beta: opening_angle(&s.positions, mid),
                height: heights[k],
                span: spans[k],
                height_reg: hr[k],
                span_reg: sr[k],
                front_contact: s.contact[head],
                back_contact: s.contact[tail],
                mid_x: s.positions[mid][0],
                mid_y: s.positions[mid][1],
                mid_vx: velocities[k][mid][0],
                mid_vy: velocities[k][mid][1],
                field_angle,
                field_amplitude_mt: amp * 1e3,
            }
        })
        .collect();
    Ok(GaitAnalysis { rows, node_velocities: velocities })
}

impl GaitAnalysis {
    /// Plain whitespace-separated columns with a header row.
    pub fn gait_table(&self) -> String {
        let mut out = String::from(
            "t beta height span height_reg span_reg front_contact back_contact mid_x mid_y mid_vx mid_vy field_angle field_mt\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:.4} {:.6} {:.6e} {:.6e} {:.6} {:.6} {:.6} {:.6} {:.6e} {:.6e} {:.6e} {:.6e} {:.6} {:.6}",
                r.t,
                r.beta,
                r.height,
                r.span,
                r.height_reg,
                r.span_reg,
                r.front_contact,
                r.back_contact,
                r.mid_x,
                r.mid_y,
                r.mid_vx,
                r.mid_vy,
                r.field_angle,
                r.field_amplitude_mt
            )
            .unwrap();
        }
        out
    }

    /// Node positions and velocities: `t x0 y0 .. vx0 vy0 ..` per row.
    pub fn node_table(&self, traj: &Trajectory) -> String {
        let n = traj.samples.first().map_or(0, |s| s.positions.len());
        let mut out = String::from("t");
        for i in 0..n {
            write!(out, " x{i} y{i}").unwrap();
        }
        for i in 0..n {
            write!(out, " vx{i} vy{i}").unwrap();
        }
        out.push('\n');
        for (s, v) in traj.samples.iter().zip(&self.node_velocities) {
            write!(out, "{:.4}", s.t).unwrap();
            for p in s.positions.iter().chain(v) {
                write!(out, " {:.6e} {:.6e}", p[0], p[1]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// First element held fixed, rod in free space.
    Clamped,
    /// Free rod lying on the ground plane.
    Ground,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticScenario {
    pub material: MaterialParams,
    pub elements: usize,
    pub magnetization: ProfileSpec,
    /// Field direction, clockwise from `+x`.
    pub field_angle_deg: f64,
    pub field_mt: f64,
    pub support: Support,
    /// m/s², 0 for none.
    pub gravity: f64,
    /// Pair damping terms, applied together. If empty, skip-4 and
    /// nearest-neighbour pairs sized from the first bending mode; the
    /// neighbour term removes modes of period 4 that skip-4 pairs miss.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub damping: Vec<DampingConfig>,
    pub ground: GroundPlane,
    /// Time step; a quarter of the stretch-wave limit if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Simulated time budget, s.
    pub max_time: f64,
    /// Equilibrium is declared once every node stays slower than this
    /// fraction of `length * ω1` for a quarter of the first-mode period.
    pub speed_tolerance: f64,
}

impl Default for StaticScenario {
    fn default() -> Self {
        Self {
            material: MaterialParams::validation_robot(),
            elements: 20,
            magnetization: ProfileSpec::Sinusoidal { magnitude: ROBOT_MAGNETIZATION, wavelength: 1.0, phase_deg: 0.0 },
            field_angle_deg: 0.0,
            field_mt: 0.0,
            support: Support::Ground,
            gravity: STANDARD_GRAVITY,
            damping: Vec::new(),
            ground: GroundPlane::default(),
            dt: None,
            max_time: 10.0,
            speed_tolerance: 1e-8,
        }
    }
}

impl StaticScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| Error::Parse { what: "static scenario", detail: crate::io::one_line(&e.to_string()) })
    }

    /// First clamped-free bending frequency, rad/s.
    pub fn first_mode(&self) -> f64 {
        let m = &self.material;
        let ei_per_rho_a = m.youngs_modulus * m.height * m.height / (12.0 * m.density);
        3.516 / (m.length * m.length) * ei_per_rho_a.sqrt()
    }

    pub fn damping(&self) -> Vec<DampingConfig> {
        if !self.damping.is_empty() {
            return self.damping.clone();
        }
        let m = &self.material;
        let node_mass = m.mass() / self.elements as f64;
        let scale = (self.elements as f64 / 20.0).powi(2);
        let coefficient = 6.0 * node_mass * self.first_mode() * scale;
        vec![DampingConfig { coefficient, node_skip: 4 }, DampingConfig { coefficient, node_skip: 1 }]
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| 0.5 * stable_dt(&self.material, self.elements))
    }

    /// Field vector for the clockwise angle convention.
    pub fn field(&self) -> FieldState {
        let a = self.field_angle_deg.to_radians();
        let mut f = FieldState::from_millitesla(
            self.field_mt * a.cos(),
            -self.field_mt * a.sin(),
            self.field_mt.abs().max(1e-300),
        );
        f.b.z = 0.0;
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticReport {
    pub positions: Vec<[f64; 2]>,
    pub initial: Vec<[f64; 2]>,
    /// Largest vertical node displacement from the straight start, m.
    pub max_deflection: f64,
    /// Vertical displacement of the last node, m.
    pub tip_deflection: f64,
    pub converged: bool,
    /// Simulated time, s.
    pub time: f64,
    pub max_speed: f64,
}

impl StaticReport {
    pub fn relative_deflection(&self, length: f64) -> f64 {
        self.max_deflection / length
    }
}

/// Relaxes the scenario dynamically until the rod is at rest.
pub fn validate_static(sc: &StaticScenario) -> Result<StaticReport> {
    let (mut rod, rig) = build_rod(&sc.material, sc.elements)?;
    let damping = sc.damping();
    for d in &damping {
        d.validate(rod.node_count())?;
    }
    let profile = sc.magnetization.build(&rod)?;
    let field = sc.field();
    let ground = sc.ground;
    match sc.support {
        Support::Clamped => rod.clamp_first_element(),
        Support::Ground => {
            ground.validate()?;
            rod.translate(Vec3::new(0.0, ground.height + 0.5 * sc.material.height, 0.0));
        }
    }
    let initial: Vec<[f64; 2]> = rod.positions.iter().map(|p| [p.x, p.y]).collect();
    let dt = sc.dt();
    let omega = sc.first_mode();
    let speed_limit = sc.speed_tolerance * sc.material.length * omega;
    let hold = ((0.5 * PI / omega) / dt).ceil() as u64;
    let max_steps = (sc.max_time / dt).ceil() as u64;
    let gravity = sc.gravity;
    // Rotational drag only exists during relaxation; it removes the fast
    // shear-rotation modes that node damping does not reach.
    let spin_damping = 0.3 / dt;
    let mut quiet = 0u64;
    let mut converged = false;
    let mut steps = 0u64;
    while steps < max_steps {
        rod.step_with(&rig, dt, |r, internal, loads| {
            for d in &damping {
                add_damping_forces(r, d, &mut loads.forces);
            }
            add_magnetic_torques(r, &profile, &field, &mut loads.torques)?;
            for ((t, d), (w, i)) in
                loads.torques.iter_mut().zip(&r.directors).zip(r.angular_velocities.iter().zip(&r.inertias))
            {
                *t -= d * (i.component_mul(w) * spin_damping);
            }
            match sc.support {
                Support::Ground => {
                    add_ground_response(r, &ground, gravity, &internal.node_forces, &mut loads.forces, dt)
                }
                Support::Clamped => {
                    for (f, m) in loads.forces.iter_mut().zip(&r.masses) {
                        f.y -= m * gravity;
                    }
                }
            }
            Ok(())
        })?;
        steps += 1;
        if max_speed(&rod) < speed_limit {
            quiet += 1;
            if quiet >= hold {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    let positions: Vec<[f64; 2]> = rod.positions.iter().map(|p| [p.x, p.y]).collect();
    let max_deflection = positions.iter().zip(&initial).map(|(p, q)| (p[1] - q[1]).abs()).fold(0.0, f64::max);
    let n = positions.len() - 1;
    Ok(StaticReport {
        tip_deflection: positions[n][1] - initial[n][1],
        max_deflection,
        converged,
        time: steps as f64 * dt,
        max_speed: max_speed(&rod),
        positions,
        initial,
    })
}

fn max_speed(rod: &RodState) -> f64 {
    rod.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::TrajectorySample;
    use approx::assert_relative_eq;

    fn straight(n: usize) -> Vec<[f64; 2]> {
        (0..=n).map(|i| [i as f64 * 1e-3, 0.0]).collect()
    }

    fn arch(n: usize, up: bool) -> Vec<[f64; 2]> {
        // half-circle arc through the ends, apex at the middle node
        (0..=n)
            .map(|i| {
                let th = PI * i as f64 / n as f64;
                let y = th.sin() * 5e-3;
                [5e-3 * (1.0 - th.cos()), if up { y } else { -y }]
            })
            .collect()
    }

    #[test]
    fn opening_angle_conventions() {
        assert_eq!(opening_angle(&straight(20), 10), 0.0);
        assert_relative_eq!(opening_angle(&arch(20, true), 10), PI / 2.0, max_relative = 1e-12);
        assert_relative_eq!(opening_angle(&arch(20, false), 10), -PI / 2.0, max_relative = 1e-12);
        // opening vector pointing to -x lands on +π, never -π
        let mut p = straight(2);
        p[1] = [2e-3, 0.0];
        p[2] = [-1e-3, 0.0];
        assert_eq!(opening_angle(&p, 1), PI);
    }

    #[test]
    fn regularization() {
        assert_eq!(regularize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(regularize(&[1.0, 1.0]), vec![0.0, 0.0]);
    }

    fn log(frames: Vec<Vec<[f64; 2]>>) -> Trajectory {
        Trajectory {
            period: 0.01,
            max_field_mt: 4.0,
            middle_node: frames[0].len() / 2,
            config_hash: String::new(),
            samples: frames
                .into_iter()
                .enumerate()
                .map(|(k, positions)| TrajectorySample {
                    t: k as f64 * 0.01,
                    field_mt: [0.0, 1.0, 0.0],
                    contact: vec![1.0; positions.len()],
                    positions,
                })
                .collect(),
        }
    }

    #[test]
    fn straight_rod_gait_table() {
        let g = analyze_gait(&log(vec![straight(20); 3])).unwrap();
        for r in &g.rows {
            assert_eq!(r.beta, 0.0);
            assert_relative_eq!(r.span, 20e-3, max_relative = 1e-12);
            assert_eq!(r.height_reg, 0.0);
            assert_relative_eq!(r.field_angle, PI / 2.0);
            assert_relative_eq!(r.field_amplitude_mt, 1.0, max_relative = 1e-12);
        }
        assert_eq!(g.gait_table().lines().count(), 4);
        assert!(analyze_gait(&Trajectory { samples: vec![], ..log(vec![straight(4)]) }).is_err());
    }

    #[test]
    fn velocities_integrate_to_displacement() {
        let frames: Vec<Vec<[f64; 2]>> = (0..50)
            .map(|k| {
                let shift = 1e-4 * (k as f64 * 0.37).sin() + 2e-5 * k as f64;
                straight(20).into_iter().map(|p| [p[0] + shift, p[1]]).collect()
            })
            .collect();
        let traj = log(frames);
        let g = analyze_gait(&traj).unwrap();
        let integrated: f64 = g.rows[..g.rows.len() - 1].iter().map(|r| r.mid_vx * traj.period).sum();
        let net = g.rows.last().unwrap().mid_x - g.rows[0].mid_x;
        assert_relative_eq!(integrated, net, max_relative = 1e-6);
    }

    #[test]
    fn field_direction_is_clockwise() {
        let sc = StaticScenario { field_angle_deg: 90.0, field_mt: 2.0, ..Default::default() };
        let f = sc.field();
        assert!(f.b.x.abs() < 1e-18);
        assert_relative_eq!(f.b.y, -2e-3, max_relative = 1e-12);
    }

    #[test]
    fn zero_field_on_ground_stays_flat() {
        let r = validate_static(&StaticScenario::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.relative_deflection(3.7e-3) < 0.01);
    }
}
