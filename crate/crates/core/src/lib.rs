//! Desk-scale software twin of a magnetic tactile skin.
//!
//! The crate is layered bottom-up:
//!
//! * [`magnetics`]: point-dipole forward model and the five-magnetometer grid.
//! * [`skin`]: fabrication presets and stochastic skin instances.
//! * [`mechanics`]: contact deformation, trajectories and sequence simulation.
//! * [`characterize`]: signal strength and consistency statistics.
//! * [`inverse`]: contact localization by damped Gauss-Newton, with a grid oracle.
//! * [`slip`]: slip-detection preprocessing, datasets and a recurrent classifier.
//! * [`daq`]: wire-frame codec, log files, replay and baseline subtraction.
//! * [`moldgen`]: contour parsing and two-part mold mesh generation.

pub mod characterize;
pub mod daq;
pub mod inverse;
pub mod magnetics;
pub mod mechanics;
pub mod moldgen;
pub mod seed;
pub mod skin;
pub mod slip;

pub use magnetics::{Dipole, MagnetometerGrid, SensorReading, Vec3};
pub use skin::{FabricationConfig, Preset, SkinInstance};
