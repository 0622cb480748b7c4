//! Contact mechanics: a Gaussian displacement kernel that moves and tilts the
//! particles, plus contact trajectories and their simulated sensor sequences.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{read_sensors, Dipole, FieldError, MagnetometerGrid, SensorReading, Vec3, SENSOR_COUNT};
use crate::seed;
use crate::skin::SkinInstance;

/// Scale between surface slope and particle moment tilt.
pub const DEFAULT_TILT_COUPLING: f64 = 1.0;

/// Default magnetometer noise, µT.
pub const DEFAULT_NOISE_SIGMA_UT: f64 = 2.0;

/// Default tactile sampling rate, Hz.
pub const DEFAULT_RATE_HZ: f64 = 100.0;

pub const MIN_KERNEL_WIDTH_MM: f64 = 0.5;
pub const MAX_KERNEL_WIDTH_MM: f64 = 20.0;

#[derive(Debug, Error)]
pub enum MechanicsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn invalid(msg: impl Into<String>) -> MechanicsError {
    MechanicsError::InvalidParams(msg.into())
}

/// A single parametric contact. All lengths in mm, in skin coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub center: (f64, f64),
    pub depth: f64,
    pub shear: (f64, f64),
    pub kernel_width: f64,
}

impl ContactState {
    /// A contact with no deformation.
    pub fn untouched(kernel_width: f64) -> Self {
        Self { center: (0.0, 0.0), depth: 0.0, shear: (0.0, 0.0), kernel_width }
    }

    pub fn press(center: (f64, f64), depth: f64, kernel_width: f64) -> Self {
        Self { center, depth, shear: (0.0, 0.0), kernel_width }
    }

    pub fn validate(&self, skin_thickness_mm: f64) -> Result<(), MechanicsError> {
        let finite = [self.center.0, self.center.1, self.depth, self.shear.0, self.shear.1, self.kernel_width];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite contact parameter"));
        }
        if self.depth < 0.0 || self.depth > skin_thickness_mm {
            return Err(invalid(format!("depth {} outside [0, {skin_thickness_mm}] mm", self.depth)));
        }
        if !(MIN_KERNEL_WIDTH_MM..=MAX_KERNEL_WIDTH_MM).contains(&self.kernel_width) {
            return Err(invalid(format!("kernel width {} outside [0.5, 20] mm", self.kernel_width)));
        }
        Ok(())
    }

    fn is_rest(&self) -> bool {
        self.depth == 0.0 && self.shear == (0.0, 0.0)
    }
}

/// Rotates `v` about the axis of `omega` by `|omega|` radians.
fn rotate(v: Vec3, omega: Vec3) -> Vec3 {
    let angle = omega.norm();
    if angle == 0.0 {
        return v;
    }
    let k = omega * (1.0 / angle);
    let (s, c) = angle.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

/// Deformed copy of `dipoles` under contact `c`.
///
/// A particle at in-plane position p moves by `g(p)·(sx, sy, −depth)` with
/// `g(p) = exp(−|p − center|² / 2w²)`, and its moment is rotated by
/// `coupling · (∇u_z × ẑ)`, the tilt of the displaced surface.
pub fn deform_dipoles(dipoles: &[Dipole], c: &ContactState, tilt_coupling: f64) -> Vec<Dipole> {
    if c.is_rest() {
        return dipoles.to_vec();
    }
    let inv_two_w2 = 1.0 / (2.0 * c.kernel_width * c.kernel_width);
    let inv_w2 = 1.0 / (c.kernel_width * c.kernel_width);
    dipoles
        .iter()
        .map(|d| {
            let px = d.position.x * 1e3;
            let py = d.position.y * 1e3;
            let dx = px - c.center.0;
            let dy = py - c.center.1;
            let g = (-(dx * dx + dy * dy) * inv_two_w2).exp();
            let shift = Vec3::new(g * c.shear.0, g * c.shear.1, -g * c.depth) * 1e-3;
            // u_z = -depth·g, so ∇u_z = depth·g·(p - center)/w².
            let grad_x = c.depth * g * dx * inv_w2;
            let grad_y = c.depth * g * dy * inv_w2;
            let omega = Vec3::new(grad_y, -grad_x, 0.0) * tilt_coupling;
            Dipole::new(d.position + shift, rotate(d.moment, omega))
        })
        .collect()
}

/// [`deform_dipoles`] on an instance with the default tilt coupling.
pub fn deform(instance: &SkinInstance, c: &ContactState) -> Vec<Dipole> {
    deform_dipoles(&instance.dipoles, c, DEFAULT_TILT_COUPLING)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Press,
    Hold,
    Slip,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = MechanicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "press" => Ok(Self::Press),
            "hold" => Ok(Self::Hold),
            "slip" => Ok(Self::Slip),
            other => Err(invalid(format!("unknown trajectory kind `{other}`"))),
        }
    }
}

/// Shape parameters shared by all trajectory kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// Initial contact centre, mm.
    pub center: (f64, f64),
    /// Final (press) or held (hold, slip) depth, mm.
    pub depth_max: f64,
    pub kernel_width: f64,
    /// Fraction of the duration spent ramping depth before holding or slipping.
    pub ramp_fraction: f64,
    /// Tangential drift speed during slip, mm/s.
    pub slip_velocity: f64,
    /// Drift heading, radians from +x.
    pub slip_direction: f64,
    /// Surface shear accumulated per mm of drift.
    pub shear_fraction: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            center: (10.0, 10.0),
            depth_max: 0.8,
            kernel_width: 3.0,
            ramp_fraction: 0.3,
            slip_velocity: 5.0,
            slip_direction: 0.0,
            shear_fraction: 0.2,
        }
    }
}

/// Uniformly sampled sequence of contact states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTrajectory {
    pub rate_hz: f64,
    pub states: Vec<ContactState>,
}

impl ContactTrajectory {
    /// A trajectory whose every state is `state`.
    pub fn constant(state: ContactState, rate_hz: f64, len: usize) -> Self {
        Self { rate_hz, states: vec![state; len] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Timestamp of frame `i`: the end of its sampling interval.
    pub fn timestamp_us(&self, i: usize) -> u64 {
        frame_timestamp_us(i, self.rate_hz)
    }
}

pub(crate) fn frame_timestamp_us(i: usize, rate_hz: f64) -> u64 {
    ((i as f64 + 1.0) * 1e6 / rate_hz).round() as u64
}

pub fn make_trajectory(
    kind: TrajectoryKind,
    params: &TrajectoryParams,
    rate_hz: f64,
    duration_s: f64,
) -> Result<ContactTrajectory, MechanicsError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(invalid("rate must be positive"));
    }
    if !(params.slip_velocity.is_finite() && params.slip_velocity >= 0.0) {
        return Err(invalid("slip velocity must be non-negative"));
    }
    if !(params.depth_max.is_finite() && params.depth_max >= 0.0) {
        return Err(invalid("depth must be non-negative"));
    }
    if !(0.0..=1.0).contains(&params.ramp_fraction) {
        return Err(invalid("ramp fraction must lie in [0, 1]"));
    }
    if kind == TrajectoryKind::Hold && params.ramp_fraction > 0.5 {
        return Err(invalid("hold trajectories ramp within the first half"));
    }
    if !(MIN_KERNEL_WIDTH_MM..=MAX_KERNEL_WIDTH_MM).contains(&params.kernel_width) {
        return Err(invalid("kernel width outside [0.5, 20] mm"));
    }
    let n = (rate_hz * duration_s).round() as usize;
    if n == 0 {
        return Err(invalid("trajectory would have no samples"));
    }
    let ramp_s = params.ramp_fraction * duration_s;
    let (dir_y, dir_x) = params.slip_direction.sin_cos();
    let states = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let mut s = ContactState::press(params.center, params.depth_max, params.kernel_width);
            match kind {
                TrajectoryKind::Press => {
                    let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
                    s.depth = params.depth_max * frac;
                }
                TrajectoryKind::Hold | TrajectoryKind::Slip => {
                    if t < ramp_s {
                        s.depth = params.depth_max * t / ramp_s;
                    }
                    if kind == TrajectoryKind::Slip && t >= ramp_s {
                        let travel = params.slip_velocity * (t - ramp_s);
                        s.center = (params.center.0 + travel * dir_x, params.center.1 + travel * dir_y);
                        let shear = params.shear_fraction * travel;
                        s.shear = (shear * dir_x, shear * dir_y);
                    }
                }
            }
            s
        })
        .collect();
    Ok(ContactTrajectory { rate_hz, states })
}

/// Deforms, samples and adds i.i.d. Gaussian noise per channel.
pub fn simulate_sequence(
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    traj: &ContactTrajectory,
    noise_sigma_ut: f64,
    seed: u64,
) -> Result<Vec<SensorReading>, MechanicsError> {
    if !(noise_sigma_ut.is_finite() && noise_sigma_ut >= 0.0) {
        return Err(invalid("noise sigma must be non-negative"));
    }
    for s in &traj.states {
        s.validate(instance.config.skin_thickness_mm)?;
    }
    let noise = if noise_sigma_ut > 0.0 {
        let normal = Normal::new(0.0, noise_sigma_ut).expect("valid sigma");
        let mut rng = seed::rng(seed);
        (0..traj.len() * 15).map(|_| normal.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    traj.states
        .par_iter()
        .enumerate()
        .map(|(i, state)| {
            let dipoles = deform(instance, state);
            let mut r = read_sensors(&dipoles, grid, (0.0, 0.0), traj.timestamp_us(i))?;
            if !noise.is_empty() {
                for (v, n) in r.values.iter_mut().zip(&noise[i * 15..(i + 1) * 15]) {
                    *v += n;
                }
            }
            Ok(r)
        })
        .collect()
}

/// Adds a common-mode field ramp, `drift · t` with t the frame timestamp in
/// seconds, to every magnetometer.
pub fn inject_interference(readings: &[SensorReading], drift_ut_per_s: Vec3) -> Vec<SensorReading> {
    readings
        .iter()
        .map(|r| {
            let t = r.timestamp_us as f64 * 1e-6;
            let offset = drift_ut_per_s * t;
            let mut out = *r;
            for s in 0..SENSOR_COUNT {
                out.values[3 * s] += offset.x;
                out.values[3 * s + 1] += offset.y;
                out.values[3 * s + 2] += offset.z;
            }
            out
        })
        .collect()
}
