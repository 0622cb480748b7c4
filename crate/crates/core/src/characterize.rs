//! Signal strength and consistency statistics for skin presets.
//!
//! Channels split into an in-plane group (the ten x and y channels) and a
//! normal group (the five z channels). A group's normalized standard
//! deviation is the mean over its channels of the per-channel sample std
//! across readings, divided by the mean absolute value of the group.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{read_sensors, FieldError, MagnetometerGrid, SensorReading, CHANNELS};
use crate::seed;
use crate::skin::{generate_instance, Alignment, Preset, SkinError, SkinInstance};

/// Placement offset of the misalignment study, mm.
pub const DEFAULT_MISALIGNMENT_MM: f64 = 1.0;

/// Marker written in place of misalignment statistics for self-aligning skins.
pub const SELF_ALIGNING: &str = "self-aligning";

pub const CSV_HEADER: &str = "preset,mean_bxy_ut,mean_bz_ut,norm_std_xy,norm_std_z,misalign_std_xy,misalign_std_z";

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("no readings")]
    EmptyInput,
    #[error("need at least 2 instances, got {0}")]
    InsufficientInstances(usize),
    #[error("instances come from different configs ({0} and {1})")]
    MixedConfigs(String, String),
    #[error("skin `{0}` is self-aligning; misalignment does not apply")]
    SelfAligningSkin(String),
    #[error("misalignment offset must be positive, got {0}")]
    InvalidOffset(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Skin(#[from] SkinError),
    #[error("malformed report CSV: {0}")]
    Parse(String),
}

fn is_z(channel: usize) -> bool {
    channel % 3 == 2
}

/// Mean absolute value over the x/y channels and over the z channels.
pub fn signal_strength(readings: &[SensorReading]) -> Result<(f64, f64), CharacterizeError> {
    if readings.is_empty() {
        return Err(CharacterizeError::EmptyInput);
    }
    let (mut xy, mut z) = (0.0, 0.0);
    for r in readings {
        for (ch, v) in r.values.iter().enumerate() {
            if is_z(ch) {
                z += v.abs();
            } else {
                xy += v.abs();
            }
        }
    }
    let n = readings.len() as f64;
    Ok((xy / (10.0 * n), z / (5.0 * n)))
}

/// Normalized standard deviation `(xy, z)` across `readings`.
pub fn normalized_std(readings: &[SensorReading]) -> Result<(f64, f64), CharacterizeError> {
    if readings.len() < 2 {
        return Err(CharacterizeError::InsufficientInstances(readings.len()));
    }
    let n = readings.len() as f64;
    let mut std_sum = (0.0, 0.0);
    for ch in 0..CHANNELS {
        let mean = readings.iter().map(|r| r.values[ch]).sum::<f64>() / n;
        let var = readings.iter().map(|r| (r.values[ch] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if is_z(ch) {
            std_sum.1 += var.sqrt();
        } else {
            std_sum.0 += var.sqrt();
        }
    }
    let (mean_xy, mean_z) = signal_strength(readings)?;
    let ratio = |s: f64, m: f64| if s == 0.0 { 0.0 } else { s / m };
    Ok((ratio(std_sum.0 / 10.0, mean_xy), ratio(std_sum.1 / 5.0, mean_z)))
}

fn baseline(instance: &SkinInstance, grid: &MagnetometerGrid) -> Result<SensorReading, FieldError> {
    read_sensors(&instance.dipoles, grid, (0.0, 0.0), 0)
}

/// Normalized std of baseline readings across instances of one config.
pub fn cross_instance_std(
    instances: &[SkinInstance],
    grid: &MagnetometerGrid,
) -> Result<(f64, f64), CharacterizeError> {
    if instances.len() < 2 {
        return Err(CharacterizeError::InsufficientInstances(instances.len()));
    }
    let id = instances[0].config_id();
    if let Some(other) = instances.iter().find(|i| i.config_id() != id) {
        return Err(CharacterizeError::MixedConfigs(id.to_string(), other.config_id().to_string()));
    }
    let readings = instances
        .par_iter()
        .map(|i| baseline(i, grid))
        .collect::<Result<Vec<_>, _>>()?;
    normalized_std(&readings)
}

/// Skin placements of the misalignment study: aligned, then shifted by
/// `offset_mm` toward each of the four sides.
pub fn misalignment_placements(offset_mm: f64) -> [(f64, f64); 5] {
    let o = offset_mm;
    [(0.0, 0.0), (o, 0.0), (-o, 0.0), (0.0, o), (0.0, -o)]
}

/// Normalized std of one skin's readings across the misalignment placements.
pub fn misalignment_std(
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    offset_mm: f64,
) -> Result<(f64, f64), CharacterizeError> {
    if instance.config.alignment == Alignment::SelfAligning {
        return Err(CharacterizeError::SelfAligningSkin(instance.config_id().to_string()));
    }
    if !(offset_mm.is_finite() && offset_mm > 0.0) {
        return Err(CharacterizeError::InvalidOffset(offset_mm));
    }
    let readings = misalignment_placements(offset_mm)
        .iter()
        .map(|&o| read_sensors(&instance.dipoles, grid, o, 0))
        .collect::<Result<Vec<_>, _>>()?;
    normalized_std(&readings)
}

/// One row of the consistency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub preset: String,
    pub mean_bxy_ut: f64,
    pub mean_bz_ut: f64,
    pub norm_std_xy: f64,
    pub norm_std_z: f64,
    /// `None` for self-aligning skins.
    pub misalignment: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
}

/// Seed of instance `index` of `preset` in a report seeded with `seed`.
pub fn report_instance_seed(seed: u64, preset: Preset, index: usize) -> u64 {
    let p = Preset::ALL.iter().position(|q| *q == preset).unwrap_or(0) as u64;
    seed::derive(seed, &[p, index as u64])
}

fn report_row(preset: Preset, n_instances: usize, seed: u64) -> Result<ConsistencyRow, CharacterizeError> {
    let config = preset.config();
    let grid = config.default_grid();
    let instances = (0..n_instances)
        .into_par_iter()
        .map(|i| generate_instance(&config, report_instance_seed(seed, preset, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let readings = instances
        .iter()
        .map(|i| baseline(i, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean_bxy_ut, mean_bz_ut) = signal_strength(&readings)?;
    let (norm_std_xy, norm_std_z) = cross_instance_std(&instances, &grid)?;
    let misalignment = match misalignment_std(&instances[0], &grid, DEFAULT_MISALIGNMENT_MM) {
        Ok(m) => Some(m),
        Err(CharacterizeError::SelfAligningSkin(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ConsistencyRow {
        preset: preset.name().to_string(),
        mean_bxy_ut,
        mean_bz_ut,
        norm_std_xy,
        norm_std_z,
        misalignment,
    })
}

/// Builds the consistency table, one row per preset. Deterministic in `seed`.
pub fn table_report(presets: &[Preset], n_instances: usize, seed: u64) -> Result<ConsistencyReport, CharacterizeError> {
    if n_instances < 2 {
        return Err(CharacterizeError::InsufficientInstances(n_instances));
    }
    let rows = presets
        .par_iter()
        .map(|&p| report_row(p, n_instances, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConsistencyReport { rows })
}

impl ConsistencyReport {
    /// CSV with [`CSV_HEADER`] columns. Numbers use the shortest decimal
    /// that round-trips; self-aligning rows carry [`SELF_ALIGNING`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (mx, mz) = match r.misalignment {
                Some((x, z)) => (x.to_string(), z.to_string()),
                None => (SELF_ALIGNING.to_string(), SELF_ALIGNING.to_string()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.preset, r.mean_bxy_ut, r.mean_bz_ut, r.norm_std_xy, r.norm_std_z, mx, mz
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CharacterizeError> {
        let perr = |m: String| CharacterizeError::Parse(m);
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(perr("missing header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(perr(format!("line {}: expected 7 fields", i + 2)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("line {}: bad number `{s}`", i + 2)));
            let misalignment = if f[5] == SELF_ALIGNING && f[6] == SELF_ALIGNING {
                None
            } else {
                Some((num(f[5])?, num(f[6])?))
            };
            rows.push(ConsistencyRow {
                preset: f[0].to_string(),
                mean_bxy_ut: num(f[1])?,
                mean_bz_ut: num(f[2])?,
                norm_std_xy: num(f[3])?,
                norm_std_z: num(f[4])?,
                misalignment,
            });
        }
        Ok(Self { rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| preset | mean Bxy (µT) | mean Bz (µT) | std across instances xy | z | std across 1 mm misalignments xy | z |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let mis = match r.misalignment {
                Some((x, z)) => format!("{x:.2} | {z:.2}"),
                None => format!("{SELF_ALIGNING} | {SELF_ALIGNING}"),
            };
            let _ = writeln!(
                out,
                "| {} | {:.0} | {:.0} | {:.2} | {:.2} | {} |",
                r.preset, r.mean_bxy_ut, r.mean_bz_ut, r.norm_std_xy, r.norm_std_z, mis
            );
        }
        out
    }

    pub fn row(&self, preset: &str) -> Option<&ConsistencyRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::{Dipole, Vec3};

    fn constant(v: f64) -> SensorReading {
        SensorReading::new(0, [v; CHANNELS])
    }

    #[test]
    fn signal_strength_examples() {
        assert_eq!(signal_strength(&[constant(10.0)]).unwrap(), (10.0, 10.0));
        let mut vals = [0.0; CHANNELS];
        for (ch, v) in vals.iter_mut().enumerate() {
            let sign = if ch % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * if is_z(ch) { 5.0 } else { 20.0 };
        }
        assert_eq!(signal_strength(&[SensorReading::new(0, vals)]).unwrap(), (20.0, 5.0));
        assert!(matches!(signal_strength(&[]), Err(CharacterizeError::EmptyInput)));
    }

    #[test]
    fn signal_strength_is_permutation_invariant() {
        let mut a = [0.0; CHANNELS];
        for (i, v) in a.iter_mut().enumerate() {
            *v = (i as f64 * 1.7).sin() * 100.0;
        }
        let mut b = a;
        // Swap sensors 1 and 3.
        for ax in 0..3 {
            b.swap(3 + ax, 9 + ax);
        }
        let ra = [SensorReading::new(0, a), constant(3.0)];
        let rb = [constant(3.0), SensorReading::new(0, b)];
        let (x1, z1) = signal_strength(&ra).unwrap();
        let (x2, z2) = signal_strength(&rb).unwrap();
        assert!((x1 - x2).abs() < 1e-12 && (z1 - z2).abs() < 1e-12);
    }

    #[test]
    fn identical_instances_have_zero_spread() {
        let inst = generate_instance(&Preset::ReskinPm.config(), 1).unwrap();
        let grid = inst.config.default_grid();
        let five = vec![inst.clone(); 5];
        let (xy, z) = cross_instance_std(&five, &grid).unwrap();
        assert!(xy < 1e-12 && z < 1e-12);
        assert!(matches!(
            cross_instance_std(&five[..1], &grid),
            Err(CharacterizeError::InsufficientInstances(1))
        ));
    }

    #[test]
    fn mixed_configs_are_rejected() {
        let a = generate_instance(&Preset::ReskinPm.config(), 1).unwrap();
        let b = generate_instance(&Preset::Reskin.config(), 1).unwrap();
        let grid = a.config.default_grid();
        assert!(matches!(cross_instance_std(&[a, b], &grid), Err(CharacterizeError::MixedConfigs(..))));
    }

    #[test]
    fn reskin_is_less_consistent_than_anyskin() {
        let grid = Preset::Anyskin.config().default_grid();
        let make = |p: Preset| -> Vec<SkinInstance> {
            (0..5).map(|i| generate_instance(&p.config(), report_instance_seed(0, p, i)).unwrap()).collect()
        };
        let (_, re_z) = cross_instance_std(&make(Preset::Reskin), &grid).unwrap();
        let (_, any_z) = cross_instance_std(&make(Preset::Anyskin), &grid).unwrap();
        assert!(re_z > any_z, "{re_z} vs {any_z}");
    }

    #[test]
    fn distant_dipole_is_insensitive_to_misalignment() {
        let mut inst = generate_instance(&Preset::Reskin.config(), 0).unwrap();
        inst.dipoles = vec![Dipole::new(Vec3::new(0.01, 0.01, 50.0), Vec3::new(0.0, 0.0, 1.0))];
        let grid = inst.config.default_grid();
        // Horizontal channels scale with the lateral offset, so only z is flat.
        let (_, z) = misalignment_std(&inst, &grid, 1.0).unwrap();
        assert!(z < 1e-3, "{z}");
    }

    #[test]
    fn uniform_field_has_zero_misalignment_spread() {
        let uniform = constant(42.0);
        assert_eq!(normalized_std(&[uniform; 5]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn misalignment_rejects_self_aligning_skins_and_bad_offsets() {
        let any = generate_instance(&Preset::Anyskin.config(), 0).unwrap();
        let grid = any.config.default_grid();
        assert!(matches!(misalignment_std(&any, &grid, 1.0), Err(CharacterizeError::SelfAligningSkin(_))));
        let re = generate_instance(&Preset::Reskin.config(), 0).unwrap();
        assert!(matches!(misalignment_std(&re, &grid, 0.0), Err(CharacterizeError::InvalidOffset(_))));
    }

    #[test]
    fn reskin_misalignment_exceeds_cross_instance_spread() {
        let p = Preset::Reskin;
        let grid = p.config().default_grid();
        let inst: Vec<_> = (0..5).map(|i| generate_instance(&p.config(), report_instance_seed(0, p, i)).unwrap()).collect();
        let (cx, cz) = cross_instance_std(&inst, &grid).unwrap();
        let (mx, mz) = misalignment_std(&inst[0], &grid, 1.0).unwrap();
        assert!(mx >= cx && mz >= cz, "mis ({mx}, {mz}) cross ({cx}, {cz})");
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let p = Preset::ReskinPmFp;
        let grid = p.config().default_grid();
        let base: Vec<_> = (0..4).map(|i| generate_instance(&p.config(), i).unwrap()).collect();
        let scaled_cfg = p.config().with_moment_scale(p.config().moment_scale * 3.0);
        let scaled: Vec<_> = (0..4).map(|i| generate_instance(&scaled_cfg, i).unwrap()).collect();
        let (a_xy, a_z) = cross_instance_std(&base, &grid).unwrap();
        let (b_xy, b_z) = cross_instance_std(&scaled, &grid).unwrap();
        assert!(((a_xy - b_xy) / a_xy).abs() < 1e-9);
        assert!(((a_z - b_z) / a_z).abs() < 1e-9);
        let rb: Vec<_> = base.iter().map(|i| baseline(i, &grid).unwrap()).collect();
        let rs: Vec<_> = scaled.iter().map(|i| baseline(i, &grid).unwrap()).collect();
        let (sb, ss) = (signal_strength(&rb).unwrap(), signal_strength(&rs).unwrap());
        assert!((ss.0 / sb.0 - 3.0).abs() < 1e-9 && (ss.1 / sb.1 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn report_rows_and_csv_round_trip() {
        let report = table_report(&Preset::ALL, 3, 7).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.row("anyskin").unwrap().misalignment.is_none());
        assert!(report.row("reskin").unwrap().misalignment.is_some());
        let csv = report.to_csv();
        assert_eq!(ConsistencyReport::from_csv(&csv).unwrap(), report);
        assert_eq!(table_report(&Preset::ALL, 3, 7).unwrap(), report);
        assert!(report.to_markdown().contains(SELF_ALIGNING));
        assert!(table_report(&Preset::ALL, 1, 7).is_err());
    }
}
