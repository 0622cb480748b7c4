//! Magnetostatic forward model: point-dipole fields, superposition and
//! sampling by a five-magnetometer grid.
//!
//! Internally everything is SI (m, A·m², T). Readings leave this module in
//! microtesla, and skin placement offsets are given in millimetres.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// µ0 / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Minimum dipole-to-probe distance, in metres.
pub const SINGULAR_DISTANCE_M: f64 = 1e-6;

/// Number of magnetometers on the board.
pub const SENSOR_COUNT: usize = 5;

/// Channels per reading (five sensors, three axes each).
pub const CHANNELS: usize = SENSOR_COUNT * 3;

/// Largest in-plane skin placement offset accepted by [`read_sensors`], in mm.
pub const MAX_SKIN_OFFSET_MM: f64 = 5.0;

/// Default centre-to-outer-sensor spacing of the board layout, in mm.
pub const DEFAULT_SENSOR_SPACING_MM: f64 = 6.0;

/// Default depth of the sensing element below the board surface, in mm.
pub const DEFAULT_DIE_DEPTH_MM: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field evaluated {distance_m:e} m from a dipole (minimum {SINGULAR_DISTANCE_M:e} m)")]
    SingularEvaluation { distance_m: f64 },
    #[error("invalid magnetometer grid: {0}")]
    InvalidGrid(&'static str),
    #[error("skin offset of {0} mm exceeds the {MAX_SKIN_OFFSET_MM} mm limit")]
    OffsetTooLarge(f64),
}

/// A plain 3-vector. Its unit depends on what it holds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A magnetized particle modelled as a point dipole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    /// Position in metres.
    pub position: Vec3,
    /// Moment in A·m².
    pub moment: Vec3,
}

impl Dipole {
    pub fn new(position: Vec3, moment: Vec3) -> Self {
        Self { position, moment }
    }
}

/// Exact point-dipole field at `p`, in tesla.
pub fn dipole_field(d: &Dipole, p: Vec3) -> Result<Vec3, FieldError> {
    let r = p - d.position;
    let r2 = r.norm_sq();
    if r2 < SINGULAR_DISTANCE_M * SINGULAR_DISTANCE_M {
        return Err(FieldError::SingularEvaluation { distance_m: r2.sqrt() });
    }
    Ok(dipole_field_unchecked(d.moment, r, r2))
}

#[inline]
fn dipole_field_unchecked(m: Vec3, r: Vec3, r2: f64) -> Vec3 {
    let inv_r = 1.0 / r2.sqrt();
    let inv_r3 = inv_r * inv_r * inv_r;
    let inv_r5 = inv_r3 * inv_r * inv_r;
    let mr = m.dot(r);
    (r * (3.0 * mr * inv_r5) - m * inv_r3) * MU0_OVER_4PI
}

/// Superposition of [`dipole_field`] over `dipoles`.
pub fn field_at(dipoles: &[Dipole], p: Vec3) -> Result<Vec3, FieldError> {
    let min_sq = SINGULAR_DISTANCE_M * SINGULAR_DISTANCE_M;
    let mut b = Vec3::ZERO;
    for d in dipoles {
        let r = p - d.position;
        let r2 = r.norm_sq();
        if r2 < min_sq {
            return Err(FieldError::SingularEvaluation { distance_m: r2.sqrt() });
        }
        b += dipole_field_unchecked(d.moment, r, r2);
    }
    Ok(b)
}

/// Five coplanar magnetometers sharing the world axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerGrid {
    sensors: [Vec3; SENSOR_COUNT],
}

impl MagnetometerGrid {
    /// Validates and builds a grid from sensor positions in metres.
    pub fn new(sensors: [Vec3; SENSOR_COUNT]) -> Result<Self, FieldError> {
        if sensors.iter().any(|s| !s.is_finite()) {
            return Err(FieldError::InvalidGrid("non-finite sensor position"));
        }
        let z0 = sensors[0].z;
        if sensors.iter().any(|s| s.z != z0) {
            return Err(FieldError::InvalidGrid("sensors are not coplanar"));
        }
        for i in 0..SENSOR_COUNT {
            for j in i + 1..SENSOR_COUNT {
                if sensors[i] == sensors[j] {
                    return Err(FieldError::InvalidGrid("duplicate sensor position"));
                }
            }
        }
        Ok(Self { sensors })
    }

    /// Centre sensor plus four at ±`spacing_mm` along x and y, with the
    /// sensing plane `die_depth_mm` below the board surface (z = 0).
    pub fn cross_layout(center_mm: (f64, f64), spacing_mm: f64, die_depth_mm: f64) -> Result<Self, FieldError> {
        let (cx, cy) = center_mm;
        let z = -die_depth_mm;
        let s = spacing_mm;
        let mm = |x: f64, y: f64| Vec3::new(x * 1e-3, y * 1e-3, z * 1e-3);
        Self::new([
            mm(cx, cy),
            mm(cx + s, cy),
            mm(cx - s, cy),
            mm(cx, cy + s),
            mm(cx, cy - s),
        ])
    }

    /// Default board layout centred under a `length_mm` × `width_mm` skin.
    pub fn centered_under(length_mm: f64, width_mm: f64) -> Self {
        Self::cross_layout(
            (length_mm / 2.0, width_mm / 2.0),
            DEFAULT_SENSOR_SPACING_MM,
            DEFAULT_DIE_DEPTH_MM,
        )
        .expect("default layout is valid")
    }

    pub fn sensors(&self) -> &[Vec3; SENSOR_COUNT] {
        &self.sensors
    }

    /// The same grid rigidly translated by `t` metres.
    pub fn translated(&self, t: Vec3) -> Self {
        Self { sensors: self.sensors.map(|s| s + t) }
    }
}

/// One 15-channel magnetometer sample in µT, ordered sensor-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub timestamp_us: u64,
    pub values: [f64; CHANNELS],
}

impl SensorReading {
    pub fn new(timestamp_us: u64, values: [f64; CHANNELS]) -> Self {
        Self { timestamp_us, values }
    }

    pub fn zeros(timestamp_us: u64) -> Self {
        Self { timestamp_us, values: [0.0; CHANNELS] }
    }

    /// Field of sensor `i` in µT.
    pub fn sensor(&self, i: usize) -> Vec3 {
        Vec3::new(self.values[3 * i], self.values[3 * i + 1], self.values[3 * i + 2])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute channel difference to `other`.
    pub fn max_abs_diff(&self, other: &SensorReading) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Samples the grid after translating every dipole in-plane by `skin_offset_mm`.
pub fn read_sensors(
    dipoles: &[Dipole],
    grid: &MagnetometerGrid,
    skin_offset_mm: (f64, f64),
    timestamp_us: u64,
) -> Result<SensorReading, FieldError> {
    let (ox, oy) = skin_offset_mm;
    let mag = ox.hypot(oy);
    if !(mag <= MAX_SKIN_OFFSET_MM) {
        return Err(FieldError::OffsetTooLarge(mag));
    }
    // Shifting the skin by +o is the same as shifting every sensor by -o.
    let shift = Vec3::new(-ox * 1e-3, -oy * 1e-3, 0.0);
    let mut values = [0.0; CHANNELS];
    for (i, s) in grid.sensors.iter().enumerate() {
        let p = if ox == 0.0 && oy == 0.0 { *s } else { *s + shift };
        let b = field_at(dipoles, p)? * 1e6;
        values[3 * i] = b.x;
        values[3 * i + 1] = b.y;
        values[3 * i + 2] = b.z;
    }
    Ok(SensorReading { timestamp_us, values })
}
