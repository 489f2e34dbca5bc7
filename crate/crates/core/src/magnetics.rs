//! Remanent magnetization carried by the rod and the torque a uniform field
//! exerts on it.
//!
//! Magnetization lives in each element's material frame and is rotated by
//! the element's directors whenever torques are evaluated, so it follows the
//! body as it deforms. In-plane magnetization directions are given as an
//! angle measured from the axial director `d3` toward the transverse
//! director `d1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rod::{RodState, Vec3};

/// Remanent magnetization of the band robots, A/m.
pub const ROBOT_MAGNETIZATION: f64 = 61.3e3;

/// Radius of the circular section whose bending rigidity per unit area
/// equals that of a rectangular section of height `height`.
pub fn equivalent_radius(height: f64) -> Result<f64> {
    if !(height > 0.0 && height.is_finite()) {
        return Err(Error::Config(format!("section height must be positive, got {height}")));
    }
    Ok(3f64.sqrt() / 3.0 * height)
}

/// Unit vector in the material frame for an in-plane angle from `d3` toward `d1`.
pub fn in_plane_direction(angle: f64) -> Vec3 {
    Vec3::new(angle.sin(), 0.0, angle.cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MagnetizationProfile {
    /// Per-element magnetization, material frame, A/m.
    pub vectors: Vec<Vec3>,
    /// Nominal magnitude `M`, A/m.
    pub magnitude: f64,
}

impl MagnetizationProfile {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn uniform(magnitude: f64, angle: f64, elements: usize) -> Self {
        Self { vectors: vec![in_plane_direction(angle) * magnitude; elements], magnitude }
    }
}

/// One piece of a piecewise-constant profile over normalized arc length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// In-plane direction, degrees from `d3` toward `d1`.
    pub angle_deg: f64,
}

/// Builds a profile where each element takes the direction of the segment
/// containing its midpoint. Segments must partition `[0, 1]`.
pub fn piecewise_profile(magnitude: f64, segments: &[Segment], elements: usize) -> Result<MagnetizationProfile> {
    if segments.is_empty() {
        return Err(Error::Config("magnetization needs at least one segment".into()));
    }
    let mut sorted = segments.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    const TOL: f64 = 1e-12;
    if sorted[0].start.abs() > TOL {
        return Err(Error::Config(format!("segments must start at 0, first starts at {}", sorted[0].start)));
    }
    for pair in sorted.windows(2) {
        if (pair[0].end - pair[1].start).abs() > TOL {
            return Err(Error::Config(format!(
                "segments overlap or leave a gap between {} and {}",
                pair[0].end, pair[1].start
            )));
        }
    }
    if let Some(bad) = sorted.iter().find(|s| !(s.end > s.start)) {
        return Err(Error::Config(format!("empty segment [{}, {})", bad.start, bad.end)));
    }
    if (sorted[sorted.len() - 1].end - 1.0).abs() > TOL {
        return Err(Error::Config("segments must end at 1".into()));
    }

    let vectors = (0..elements)
        .map(|j| {
            let mid = (j as f64 + 0.5) / elements as f64;
            let seg = sorted.iter().find(|s| mid >= s.start && mid < s.end).unwrap_or(&sorted[sorted.len() - 1]);
            in_plane_direction(seg.angle_deg.to_radians()) * magnitude
        })
        .collect();
    Ok(MagnetizationProfile { vectors, magnitude })
}

/// Direction of a sinusoidal profile at arc length `s`.
pub fn sinusoidal_direction(s: f64, wavelength: f64, phase: f64) -> Vec3 {
    in_plane_direction(2.0 * PI * s / wavelength + phase)
}

/// Magnetization rotating once per `wavelength` along the body, sampled at
/// element midpoints.
pub fn sinusoidal_profile(
    magnitude: f64,
    wavelength: f64,
    phase: f64,
    rest_lengths: &[f64],
) -> Result<MagnetizationProfile> {
    if !(wavelength > 0.0) {
        return Err(Error::Config(format!("wavelength must be positive, got {wavelength}")));
    }
    let mut s = 0.0;
    let vectors = rest_lengths
        .iter()
        .map(|l| {
            let mid = s + 0.5 * l;
            s += l;
            sinusoidal_direction(mid, wavelength, phase) * magnitude
        })
        .collect();
    Ok(MagnetizationProfile { vectors, magnitude })
}

/// Profile description as it appears in experiment configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Two halves magnetized at +90° and -90° to the body axis.
    Pattern1 {
        magnitude: f64,
    },
    /// Two halves with opposite axial polarity.
    Pattern2 {
        magnitude: f64,
    },
    UniformAxial {
        magnitude: f64,
    },
    Sinusoidal {
        magnitude: f64,
        /// Wavelength as a fraction of body length.
        wavelength: f64,
        #[serde(default)]
        phase_deg: f64,
    },
    Piecewise {
        magnitude: f64,
        segments: Vec<Segment>,
    },
}

impl ProfileSpec {
    pub fn build(&self, rod: &RodState) -> Result<MagnetizationProfile> {
        let n = rod.element_count();
        let half = |a: f64, b: f64| {
            vec![Segment { start: 0.0, end: 0.5, angle_deg: a }, Segment { start: 0.5, end: 1.0, angle_deg: b }]
        };
        match self {
            ProfileSpec::Pattern1 { magnitude } => piecewise_profile(*magnitude, &half(90.0, -90.0), n),
            ProfileSpec::Pattern2 { magnitude } => piecewise_profile(*magnitude, &half(0.0, 180.0), n),
            ProfileSpec::UniformAxial { magnitude } => Ok(MagnetizationProfile::uniform(*magnitude, 0.0, n)),
            ProfileSpec::Sinusoidal { magnitude, wavelength, phase_deg } => {
                let length: f64 = rod.rest_lengths.iter().sum();
                sinusoidal_profile(*magnitude, wavelength * length, phase_deg.to_radians(), &rod.rest_lengths)
            }
            ProfileSpec::Piecewise { magnitude, segments } => piecewise_profile(*magnitude, segments, n),
        }
    }
}

/// Uniform external field with an amplitude cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldState {
    /// Field, tesla.
    pub b: Vec3,
    /// Amplitude cap, tesla.
    pub max_amplitude: f64,
}

impl FieldState {
    pub fn zero(max_amplitude: f64) -> Self {
        Self { b: Vec3::zeros(), max_amplitude }
    }

    /// Field from in-plane millitesla components.
    pub fn from_millitesla(bx: f64, by: f64, max_amplitude_mt: f64) -> Self {
        Self { b: Vec3::new(bx, by, 0.0) * 1e-3, max_amplitude: max_amplitude_mt * 1e-3 }
    }

    pub fn millitesla(&self) -> [f64; 3] {
        [self.b.x * 1e3, self.b.y * 1e3, self.b.z * 1e3]
    }

    /// Rescales the field radially onto the amplitude cap if it lies outside.
    pub fn clamp(&mut self) {
        let amplitude = self.b.norm();
        if amplitude > self.max_amplitude {
            self.b *= self.max_amplitude / amplitude;
        }
    }
}

/// In-plane polar view of the field: angle from `+x` (0 for zero field)
/// and amplitude in tesla.
pub fn field_polar(field: &FieldState) -> (f64, f64) {
    let (x, y) = (field.b.x, field.b.y);
    let amplitude = x.hypot(y);
    let angle = if amplitude == 0.0 { 0.0 } else { y.atan2(x) };
    (angle, amplitude)
}

/// Torque `V (R M) x B` on every element, lab frame.
pub fn magnetic_torques(rod: &RodState, profile: &MagnetizationProfile, field: &FieldState) -> Result<Vec<Vec3>> {
    let mut torques = vec![Vec3::zeros(); rod.element_count()];
    add_magnetic_torques(rod, profile, field, &mut torques)?;
    Ok(torques)
}

/// Accumulates magnetic torques onto `torques`.
pub fn add_magnetic_torques(
    rod: &RodState,
    profile: &MagnetizationProfile,
    field: &FieldState,
    torques: &mut [Vec3],
) -> Result<()> {
    let n = rod.element_count();
    if profile.len() != n || torques.len() != n {
        return Err(Error::Config(format!(
            "magnetization profile has {} entries for a rod of {n} elements",
            profile.len()
        )));
    }
    for (((t, d), m), v) in torques.iter_mut().zip(&rod.directors).zip(&profile.vectors).zip(&rod.volumes) {
        *t += (d * m * *v).cross(&field.b);
    }
    Ok(())
}
