//! Single-reading contact localization: damped Gauss-Newton over the forward
//! model, and an exhaustive grid search used as its oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{read_sensors, FieldError, MagnetometerGrid, SensorReading, CHANNELS};
use crate::mechanics::{deform, ContactState, MechanicsError};
use crate::skin::SkinInstance;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL_UT: f64 = 1e-6;
/// Forward-difference step for the Jacobian, mm.
pub const JACOBIAN_STEP_MM: f64 = 1e-3;
pub const DEFAULT_ORACLE_XY_STEP_MM: f64 = 0.5;
pub const DEFAULT_ORACLE_DEPTH_STEP_MM: f64 = 0.1;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e12;
/// Accepted steps shorter than this (mm) end the iteration.
const STEP_TOL_MM: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("initial guess outside the skin: {0}")]
    InitOutOfBounds(String),
    #[error("grid steps must be positive")]
    InvalidStep,
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeResult {
    pub estimate: ContactState,
    pub residual_norm_ut: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after every accepted step, starting at the initial guess.
    #[serde(skip)]
    pub accepted_norms: Vec<f64>,
}

impl LocalizeResult {
    pub fn center_error(&self, truth: &ContactState) -> (f64, f64, f64) {
        (
            (self.estimate.center.0 - truth.center.0).abs(),
            (self.estimate.center.1 - truth.center.1).abs(),
            (self.estimate.depth - truth.depth).abs(),
        )
    }
}

/// Simulated minus measured reading for contact `c`, µT.
pub fn residual(
    reading: &SensorReading,
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    c: &ContactState,
) -> Result<[f64; CHANNELS], InverseError> {
    c.validate(instance.config.skin_thickness_mm)?;
    let predicted = read_sensors(&deform(instance, c), grid, (0.0, 0.0), reading.timestamp_us)?;
    let mut r = [0.0; CHANNELS];
    for (k, v) in r.iter_mut().enumerate() {
        *v = predicted.values[k] - reading.values[k];
    }
    Ok(r)
}

fn norm(r: &[f64; CHANNELS]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Bounds {
    hi: [f64; 3],
}

impl Bounds {
    fn of(instance: &SkinInstance) -> Self {
        let c = &instance.config;
        Self { hi: [c.skin_length_mm, c.skin_width_mm, c.skin_thickness_mm] }
    }

    fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(&self.hi).all(|(v, hi)| (0.0..=*hi).contains(v))
    }

    /// `from + delta`, except that a coordinate which would leave the box
    /// only goes halfway to the bound it crosses. Landing exactly on zero
    /// depth would flatten the x/y Jacobian and strand the iteration.
    fn step(&self, from: [f64; 3], delta: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let to = from[a] + delta[a];
            out[a] = if to < 0.0 {
                from[a] / 2.0
            } else if to > self.hi[a] {
                (from[a] + self.hi[a]) / 2.0
            } else {
                to
            };
        }
        out
    }
}

fn state(p: &[f64; 3], kernel_width: f64) -> ContactState {
    ContactState::press((p[0], p[1]), p[2], kernel_width)
}

/// Solves the 3×3 system `a·x = b` by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Forward-difference Jacobian of the residual at `p`, columns (x, y, depth).
///
/// Steps that would leave the skin are taken backwards instead.
pub fn jacobian(
    reading: &SensorReading,
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    c: &ContactState,
    r0: &[f64; CHANNELS],
) -> Result<[[f64; 3]; CHANNELS], InverseError> {
    let bounds = Bounds::of(instance);
    let p = [c.center.0, c.center.1, c.depth];
    let mut jac = [[0.0; 3]; CHANNELS];
    for axis in 0..3 {
        let mut q = p;
        let h = if p[axis] + JACOBIAN_STEP_MM <= bounds.hi[axis] { JACOBIAN_STEP_MM } else { -JACOBIAN_STEP_MM };
        q[axis] += h;
        let r1 = residual(reading, instance, grid, &state(&q, c.kernel_width))?;
        for k in 0..CHANNELS {
            jac[k][axis] = (r1[k] - r0[k]) / h;
        }
    }
    Ok(jac)
}

/// Levenberg-damped Gauss-Newton over (x, y, depth) with the kernel width of
/// `init` held fixed. Iterates never leave the skin.
///
/// Running out of iterations is not an error: the best iterate comes back
/// with `converged = false`.
pub fn localize_gauss_newton(
    reading: &SensorReading,
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    init: &ContactState,
    max_iters: usize,
    tol_ut: f64,
) -> Result<LocalizeResult, InverseError> {
    let bounds = Bounds::of(instance);
    let mut p = [init.center.0, init.center.1, init.depth];
    if !p.iter().all(|v| v.is_finite()) || !bounds.contains(&p) {
        return Err(InverseError::InitOutOfBounds(format!("{p:?}")));
    }
    let w = init.kernel_width;
    let mut r = residual(reading, instance, grid, &state(&p, w))?;
    let mut cost = norm(&r);
    let mut accepted_norms = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = cost <= tol_ut;
    let mut jac = jacobian(reading, instance, grid, &state(&p, w), &r)?;

    while !converged && iterations < max_iters {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for k in 0..CHANNELS {
            for a in 0..3 {
                jtr[a] -= jac[k][a] * r[k];
                for b in 0..3 {
                    jtj[a][b] += jac[k][a] * jac[k][b];
                }
            }
        }
        for (a, row) in jtj.iter_mut().enumerate() {
            row[a] += lambda;
        }
        let Some(delta) = solve3(jtj, jtr) else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                converged = true;
            }
            continue;
        };
        let candidate = bounds.step(p, delta);
        let r_new = residual(reading, instance, grid, &state(&candidate, w))?;
        let cost_new = norm(&r_new);
        if cost_new < cost {
            let step = ((candidate[0] - p[0]).powi(2) + (candidate[1] - p[1]).powi(2) + (candidate[2] - p[2]).powi(2)).sqrt();
            let stagnant = cost - cost_new <= 1e-12 * cost;
            p = candidate;
            r = r_new;
            cost = cost_new;
            accepted_norms.push(cost);
            lambda = (lambda / 10.0).max(1e-12);
            if cost <= tol_ut || step < STEP_TOL_MM || stagnant {
                converged = true;
            } else {
                jac = jacobian(reading, instance, grid, &state(&p, w), &r)?;
            }
        } else {
            lambda *= 10.0;
            // No descent left at any damping: a stationary point.
            if lambda > LAMBDA_MAX {
                converged = true;
            }
        }
    }
    Ok(LocalizeResult { estimate: state(&p, w), residual_norm_ut: cost, iterations, converged, accepted_norms })
}

fn axis_points(hi: f64, step: f64) -> Vec<f64> {
    let n = (hi / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Exhaustive argmin of the residual norm over a regular (x, y, depth) grid
/// covering the whole skin. Ties go to the lowest flat index, ordered
/// x-major, then y, then depth.
pub fn localize_grid_oracle(
    reading: &SensorReading,
    instance: &SkinInstance,
    grid: &MagnetometerGrid,
    kernel_width: f64,
    xy_step_mm: f64,
    depth_step_mm: f64,
) -> Result<ContactState, InverseError> {
    if !(xy_step_mm > 0.0 && depth_step_mm > 0.0) {
        return Err(InverseError::InvalidStep);
    }
    let cfg = &instance.config;
    let xs = axis_points(cfg.skin_length_mm, xy_step_mm);
    let ys = axis_points(cfg.skin_width_mm, xy_step_mm);
    let ds = axis_points(cfg.skin_thickness_mm, depth_step_mm);
    // Zero depth leaves the skin at rest wherever the contact is.
    let rest = norm(&residual(reading, instance, grid, &ContactState::untouched(kernel_width))?);

    let costs: Vec<f64> = (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|xy| -> Result<Vec<f64>, InverseError> {
            let (x, y) = (xs[xy / ys.len()], ys[xy % ys.len()]);
            ds.iter()
                .map(|&d| {
                    if d == 0.0 {
                        Ok(rest)
                    } else {
                        Ok(norm(&residual(reading, instance, grid, &ContactState::press((x, y), d, kernel_width))?))
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let per_xy = ds.len();
    let xy = best / per_xy;
    Ok(ContactState::press((xs[xy / ys.len()], ys[xy % ys.len()]), ds[best % per_xy], kernel_width))
}
