//! Skin instances: fabrication presets, stochastic particle generation and
//! moment-scale calibration.
//!
//! A skin occupies the box `[0, L] × [0, W] × [gap, gap + thickness]` (mm)
//! above the board surface. Each simulated dipole stands in for a cluster of
//! real particles; `moment_scale` absorbs the count.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{read_sensors, Dipole, FieldError, MagnetometerGrid, Vec3};
use crate::seed;

/// Side of the grid-cure magnet checkerboard, in mm.
pub const CHECKER_CELL_MM: f64 = 5.0;
/// Offset of the cure-magnet lattice from the skin corner.
pub const CHECKER_PHASE_MM: f64 = 0.75;

/// Mean |Bz| of the AnySkin row, µT.
pub const ANYSKIN_TARGET_BZ_UT: f64 = 1265.0;

const INSTANCE_FILE_TAG: &str = "anyskin-instance";
const INSTANCE_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SkinError {
    #[error("unknown preset `{0}` (expected reskin, reskin_pm, reskin_pm_fp or anyskin)")]
    UnknownPreset(String),
    #[error("invalid fabrication config: {0}")]
    InvalidConfig(String),
    #[error("baseline signal is zero; cannot calibrate")]
    DegenerateSkin,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("malformed instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleClass {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnetization {
    GridCure,
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Manual,
    SelfAligning,
}

/// The four fabrication regimes, in order of the design progression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Reskin,
    ReskinPm,
    ReskinPmFp,
    Anyskin,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Reskin, Preset::ReskinPm, Preset::ReskinPmFp, Preset::Anyskin];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Reskin => "reskin",
            Preset::ReskinPm => "reskin_pm",
            Preset::ReskinPmFp => "reskin_pm_fp",
            Preset::Anyskin => "anyskin",
        }
    }

    pub fn config(self) -> FabricationConfig {
        // Pulse magnetization gives every particle the same strong, nearly
        // vertical moment. Grid curing is four times weaker, the polarity
        // alternates per magnet cell and directions scatter widely.
        const PULSE_MOMENT: f64 = 3.259e-7;
        const GRID_CURE_MOMENT: f64 = PULSE_MOMENT / 4.0;
        let base = FabricationConfig {
            id: self.name().to_string(),
            particle_class: ParticleClass::Fine,
            magnetization: Magnetization::Pulse,
            alignment: Alignment::Manual,
            skin_length_mm: 20.0,
            skin_width_mm: 20.0,
            skin_thickness_mm: 2.0,
            separation_gap_mm: 0.0,
            particle_count: 30_000,
            moment_scale: PULSE_MOMENT,
            dir_jitter_sigma: 0.05,
            pos_jitter_sigma_mm: 0.0,
            settle_bias: 0.0,
        };
        match self {
            Preset::Reskin => FabricationConfig {
                particle_class: ParticleClass::Coarse,
                magnetization: Magnetization::GridCure,
                moment_scale: GRID_CURE_MOMENT,
                dir_jitter_sigma: 0.5,
                pos_jitter_sigma_mm: 0.25,
                settle_bias: 0.4,
                ..base
            },
            Preset::ReskinPm => FabricationConfig {
                particle_class: ParticleClass::Coarse,
                settle_bias: 0.8,
                ..base
            },
            Preset::ReskinPmFp => base,
            Preset::Anyskin => FabricationConfig {
                alignment: Alignment::SelfAligning,
                separation_gap_mm: 1.5,
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = SkinError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SkinError::UnknownPreset(s.to_string()))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Looks a preset up by name.
pub fn preset(name: &str) -> Result<FabricationConfig, SkinError> {
    Ok(name.parse::<Preset>()?.config())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricationConfig {
    pub id: String,
    pub particle_class: ParticleClass,
    pub magnetization: Magnetization,
    pub alignment: Alignment,
    pub skin_length_mm: f64,
    pub skin_width_mm: f64,
    pub skin_thickness_mm: f64,
    /// Height of the skin's bottom face above the board surface.
    pub separation_gap_mm: f64,
    pub particle_count: usize,
    /// Moment per simulated dipole, A·m².
    pub moment_scale: f64,
    /// Standard deviation of the moment tilt away from its nominal axis, rad.
    pub dir_jitter_sigma: f64,
    /// Per-instance misregistration of the curing magnet grid, mm.
    pub pos_jitter_sigma_mm: f64,
    /// Fraction of particles drawn from the bottom-settled height law.
    pub settle_bias: f64,
}

impl FabricationConfig {
    pub fn validate(&self) -> Result<(), SkinError> {
        let bad = |m: &str| Err(SkinError::InvalidConfig(m.to_string()));
        let positive = [
            self.skin_length_mm,
            self.skin_width_mm,
            self.skin_thickness_mm,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("skin dimensions must be positive");
        }
        if !(self.separation_gap_mm.is_finite() && self.separation_gap_mm >= 0.0) {
            return bad("separation gap must be non-negative");
        }
        if self.particle_count == 0 {
            return bad("particle_count must be at least 1");
        }
        if !(self.moment_scale.is_finite() && self.moment_scale > 0.0) {
            return bad("moment_scale must be positive");
        }
        if !(self.dir_jitter_sigma.is_finite() && self.dir_jitter_sigma >= 0.0)
            || !(self.pos_jitter_sigma_mm.is_finite() && self.pos_jitter_sigma_mm >= 0.0)
        {
            return bad("jitter sigmas must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.settle_bias) {
            return bad("settle_bias must lie in [0, 1]");
        }
        match self.particle_class {
            ParticleClass::Fine if self.settle_bias != 0.0 => bad("fine particles do not settle"),
            ParticleClass::Coarse if self.settle_bias == 0.0 => bad("coarse particles need settle_bias > 0"),
            _ => Ok(()),
        }
    }

    /// Board layout centred under this skin.
    pub fn default_grid(&self) -> MagnetometerGrid {
        MagnetometerGrid::centered_under(self.skin_length_mm, self.skin_width_mm)
    }

    pub fn with_moment_scale(&self, moment_scale: f64) -> Self {
        Self { moment_scale, ..self.clone() }
    }

    /// `(min, max)` corners of the skin volume in metres.
    pub fn bounds_m(&self) -> (Vec3, Vec3) {
        (
            Vec3::new(0.0, 0.0, self.separation_gap_mm * 1e-3),
            Vec3::new(
                self.skin_length_mm * 1e-3,
                self.skin_width_mm * 1e-3,
                (self.separation_gap_mm + self.skin_thickness_mm) * 1e-3,
            ),
        )
    }
}

/// A concrete fabricated skin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinInstance {
    pub config: FabricationConfig,
    pub seed: u64,
    pub dipoles: Vec<Dipole>,
}

impl SkinInstance {
    pub fn config_id(&self) -> &str {
        &self.config.id
    }

    /// Whether every dipole lies inside the configured skin volume.
    pub fn within_bounds(&self) -> bool {
        let (lo, hi) = self.config.bounds_m();
        self.dipoles.iter().all(|d| {
            let p = d.position;
            p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
        })
    }

    /// Writes the versioned text format: a tag line, the config as JSON,
    /// the seed, the dipole count and one `x y z mx my mz` line per dipole
    /// (SI units, shortest round-trip decimal).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SkinError> {
        writeln!(w, "{INSTANCE_FILE_TAG} {INSTANCE_FILE_VERSION}")?;
        let cfg = serde_json::to_string(&self.config).map_err(|e| SkinError::Format(e.to_string()))?;
        writeln!(w, "config {cfg}")?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "dipoles {}", self.dipoles.len())?;
        for d in &self.dipoles {
            let (p, m) = (d.position, d.moment);
            writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, m.x, m.y, m.z)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, SkinError> {
        let fmt_err = |m: &str| SkinError::Format(m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String, SkinError> {
            lines.next().ok_or_else(|| fmt_err("unexpected end of file"))?.map_err(SkinError::from)
        };
        let header = next()?;
        if header != format!("{INSTANCE_FILE_TAG} {INSTANCE_FILE_VERSION}") {
            return Err(fmt_err("bad header"));
        }
        let cfg_line = next()?;
        let cfg = cfg_line.strip_prefix("config ").ok_or_else(|| fmt_err("missing config"))?;
        let config: FabricationConfig = serde_json::from_str(cfg).map_err(|e| SkinError::Format(e.to_string()))?;
        let seed_line = next()?;
        let seed = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err("missing seed"))?;
        let count_line = next()?;
        let count: usize = count_line
            .strip_prefix("dipoles ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err("missing dipole count"))?;
        let mut dipoles = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| fmt_err("bad dipole line"))?;
            if v.len() != 6 {
                return Err(fmt_err("dipole line needs six numbers"));
            }
            dipoles.push(Dipole::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
        }
        Ok(Self { config, seed, dipoles })
    }
}

/// Draws a skin instance. Deterministic in `(config, seed)`.
pub fn generate_instance(config: &FabricationConfig, seed: u64) -> Result<SkinInstance, SkinError> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let length = config.skin_length_mm;
    let width = config.skin_width_mm;
    let thickness = config.skin_thickness_mm;
    let settled = Beta::new(1.0, 4.0).expect("valid beta");
    let jitter = Normal::new(0.0, config.dir_jitter_sigma).expect("valid sigma");
    let grid_shift = Normal::new(0.0, config.pos_jitter_sigma_mm).expect("valid sigma");

    // Where the curing magnets happened to sit relative to this skin.
    let (cell_dx, cell_dy) = match config.magnetization {
        Magnetization::GridCure => (grid_shift.sample(&mut rng), grid_shift.sample(&mut rng)),
        Magnetization::Pulse => (0.0, 0.0),
    };

    let mut dipoles = Vec::with_capacity(config.particle_count);
    for _ in 0..config.particle_count {
        let x = rng.gen::<f64>() * length;
        let y = rng.gen::<f64>() * width;
        let depth_frac = match config.particle_class {
            ParticleClass::Fine => rng.gen::<f64>(),
            ParticleClass::Coarse => {
                if rng.gen::<f64>() < config.settle_bias {
                    settled.sample(&mut rng)
                } else {
                    rng.gen::<f64>()
                }
            }
        };
        let z = config.separation_gap_mm + depth_frac * thickness;

        let tilt: f64 = jitter.sample(&mut rng);
        let azimuth = rng.gen::<f64>() * std::f64::consts::TAU;
        let dir = Vec3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos());
        let polarity = match config.magnetization {
            Magnetization::Pulse => 1.0,
            Magnetization::GridCure => {
                let cx = ((x - cell_dx - CHECKER_PHASE_MM) / CHECKER_CELL_MM).floor() as i64;
                let cy = ((y - cell_dy - CHECKER_PHASE_MM) / CHECKER_CELL_MM).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        dipoles.push(Dipole::new(
            Vec3::new(x * 1e-3, y * 1e-3, z * 1e-3),
            dir * (polarity * config.moment_scale),
        ));
    }
    Ok(SkinInstance { config: config.clone(), seed, dipoles })
}

/// Mean |Bz| over the z-channels of baseline readings of `n` instances
/// seeded `seed_base, seed_base + 1, …`.
pub fn mean_baseline_bz(
    config: &FabricationConfig,
    grid: &MagnetometerGrid,
    n_instances: usize,
    seed_base: u64,
) -> Result<f64, SkinError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n_instances as u64 {
        let inst = generate_instance(config, seed_base.wrapping_add(i))?;
        let r = read_sensors(&inst.dipoles, grid, (0.0, 0.0), 0)?;
        for s in 0..crate::magnetics::SENSOR_COUNT {
            sum += r.values[3 * s + 2].abs();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

/// Moment scale at which the mean baseline |Bz| over `n_instances`
/// instances (seeds `seed_base..`) equals `target_bz_ut`.
///
/// The field is linear in the moment, so one measurement fixes the ratio.
pub fn calibrate_moment_scale(
    config: &FabricationConfig,
    grid: &MagnetometerGrid,
    target_bz_ut: f64,
    n_instances: usize,
    seed_base: u64,
) -> Result<f64, SkinError> {
    if !(target_bz_ut.is_finite() && target_bz_ut > 0.0) {
        return Err(SkinError::InvalidConfig("calibration target must be positive".into()));
    }
    if config.particle_count == 0 || n_instances == 0 {
        return Err(SkinError::DegenerateSkin);
    }
    let measured = mean_baseline_bz(config, grid, n_instances, seed_base)?;
    if !(measured > 0.0) {
        return Err(SkinError::DegenerateSkin);
    }
    Ok(config.moment_scale * target_bz_ut / measured)
}
