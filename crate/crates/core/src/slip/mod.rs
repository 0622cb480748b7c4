//! Slip detection: frame preprocessing, synthetic grasp datasets, a small
//! LSTM classifier trained by backpropagation through time, and the
//! cross-instance evaluation harness.

mod io;
mod model;

pub use io::{export_dataset, import_dataset, MODEL_FORMAT_TAG};
pub use model::{evaluate, grad_check, loss_and_grad, mean_loss, train, Confusion, SlipModel, TrainConfig};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{SensorReading, CHANNELS};
use crate::mechanics::{make_trajectory, simulate_sequence, MechanicsError, TrajectoryKind, TrajectoryParams, DEFAULT_RATE_HZ};
use crate::seed;
use crate::skin::{generate_instance, Preset, SkinError, SkinInstance};

pub const SUBSAMPLE: usize = 15;
/// Shortest sequence that still yields one feature step.
pub const MIN_FRAMES: usize = 2 * SUBSAMPLE + 1;
pub const SEQUENCE_SECONDS: f64 = 1.0;
pub const DEFAULT_OBJECTS: usize = 40;
pub const DEFAULT_TRAIN_OBJECTS: usize = 30;
pub const DEFAULT_TRAJS_PER_OBJECT: usize = 6;

/// One preprocessed time step.
pub type Feature = [f64; CHANNELS];

#[derive(Debug, Error)]
pub enum SlipError {
    #[error("sequence has {0} frames, need at least 31")]
    TooShort(usize),
    #[error("invalid dataset request: {0}")]
    InvalidRequest(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("dataset file: {0}")]
    DatasetFormat(String),
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error(transparent)]
    Skin(#[from] SkinError),
    #[error(transparent)]
    Daq(#[from] crate::daq::DaqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every 15th frame starting at the first, then consecutive differences.
pub fn preprocess(frames: &[SensorReading]) -> Result<Vec<Feature>, SlipError> {
    if frames.len() < MIN_FRAMES {
        return Err(SlipError::TooShort(frames.len()));
    }
    let picked: Vec<&SensorReading> = frames.iter().step_by(SUBSAMPLE).collect();
    Ok(picked
        .windows(2)
        .map(|w| {
            let mut d = [0.0; CHANNELS];
            for (k, v) in d.iter_mut().enumerate() {
                *v = w[1].values[k] - w[0].values[k];
            }
            d
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Slip,
    NoSlip,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Slip => 1.0,
            Label::NoSlip => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Slip => "slip",
            Label::NoSlip => "no_slip",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = SlipError;

    fn from_str(s: &str) -> Result<Self, SlipError> {
        match s {
            "slip" => Ok(Label::Slip),
            "no_slip" => Ok(Label::NoSlip),
            other => Err(SlipError::DatasetFormat(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub frames: Vec<SensorReading>,
    pub label: Label,
    pub object_id: u32,
    /// Seed of the skin instance that produced the frames.
    pub instance_id: u64,
}

/// A grasped object: the parameter bundle shared by its trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectParams {
    pub kernel_width: f64,
    /// Deepest press; trajectories use 60 to 100 % of it.
    pub depth: f64,
    pub slip_velocity: f64,
    pub noise_sigma: f64,
}

/// Everything needed to simulate one sequence on any skin instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedSequence {
    pub object_id: u32,
    pub train: bool,
    pub kind: TrajectoryKind,
    pub params: TrajectoryParams,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

/// Skin-independent description of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub objects: Vec<ObjectParams>,
    pub sequences: Vec<PlannedSequence>,
}

const STREAM_OBJECTS: u64 = 1;
const STREAM_TRAJECTORIES: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_INSTANCE: u64 = 4;

/// Samples objects and their trajectories. Half of every object's
/// trajectories slip; the rest are presses or holds.
pub fn plan_dataset(
    n_objects: usize,
    train_objects: usize,
    trajs_per_object: usize,
    skin_center: (f64, f64),
    seed: u64,
) -> Result<DatasetPlan, SlipError> {
    if train_objects >= n_objects {
        return Err(SlipError::InvalidRequest(format!("{train_objects} training objects of {n_objects}")));
    }
    if trajs_per_object < 2 {
        return Err(SlipError::InvalidRequest("need at least two trajectories per object".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &[STREAM_OBJECTS]));
    let objects: Vec<ObjectParams> = (0..n_objects)
        .map(|_| ObjectParams {
            kernel_width: rng.gen_range(2.0..5.0),
            depth: rng.gen_range(0.3..1.0),
            slip_velocity: rng.gen_range(2.0..8.0),
            noise_sigma: rng.gen_range(1.0..3.0),
        })
        .collect();

    let mut rng = seed::rng(seed::derive(seed, &[STREAM_TRAJECTORIES]));
    let mut sequences = Vec::with_capacity(n_objects * trajs_per_object);
    for (oi, obj) in objects.iter().enumerate() {
        let n_slip = trajs_per_object / 2;
        let mut kinds = vec![TrajectoryKind::Slip; n_slip];
        kinds.extend((n_slip..trajs_per_object).map(|_| {
            *[TrajectoryKind::Press, TrajectoryKind::Hold].choose(&mut rng).expect("nonempty")
        }));
        for kind in kinds {
            let params = TrajectoryParams {
                center: (skin_center.0 + rng.gen_range(-4.0..4.0), skin_center.1 + rng.gen_range(-4.0..4.0)),
                depth_max: obj.depth * rng.gen_range(0.6..1.0),
                kernel_width: obj.kernel_width * rng.gen_range(0.8..1.2),
                ramp_fraction: rng.gen_range(0.2..0.5),
                slip_direction: rng.gen_range(0.0..std::f64::consts::TAU),
                slip_velocity: obj.slip_velocity * rng.gen_range(0.8..1.2),
                shear_fraction: 0.2,
            };
            let idx = sequences.len() as u64;
            sequences.push(PlannedSequence {
                object_id: oi as u32,
                train: oi < train_objects,
                kind,
                params,
                noise_sigma: obj.noise_sigma,
                noise_seed: seed::derive(seed, &[STREAM_NOISE, idx]),
            });
        }
    }
    Ok(DatasetPlan { objects, sequences })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

/// Simulates every planned sequence on `instance`.
pub fn render_dataset(plan: &DatasetPlan, instance: &SkinInstance) -> Result<Dataset, SlipError> {
    let grid = instance.config.default_grid();
    let rendered: Vec<(bool, LabeledSequence)> = plan
        .sequences
        .par_iter()
        .map(|p| {
            let traj = make_trajectory(p.kind, &p.params, DEFAULT_RATE_HZ, SEQUENCE_SECONDS)?;
            let frames = simulate_sequence(instance, &grid, &traj, p.noise_sigma, p.noise_seed)?;
            let label = if p.kind == TrajectoryKind::Slip { Label::Slip } else { Label::NoSlip };
            Ok((p.train, LabeledSequence { frames, label, object_id: p.object_id, instance_id: instance.seed }))
        })
        .collect::<Result<_, SlipError>>()?;
    let mut out = Dataset::default();
    for (train, s) in rendered {
        if train {
            out.train.push(s);
        } else {
            out.test.push(s);
        }
    }
    Ok(out)
}

pub fn instance_seed(seed: u64) -> u64 {
    seed::derive(seed, &[STREAM_INSTANCE])
}

/// Dataset for `preset` with the skin instance derived from `seed`.
pub fn synth_dataset(
    preset: Preset,
    n_objects: usize,
    train_objects: usize,
    trajs_per_object: usize,
    seed: u64,
) -> Result<Dataset, SlipError> {
    let config = preset.config();
    let center = (config.skin_length_mm / 2.0, config.skin_width_mm / 2.0);
    let plan = plan_dataset(n_objects, train_objects, trajs_per_object, center, seed)?;
    let instance = generate_instance(&config, instance_seed(seed))?;
    render_dataset(&plan, &instance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossInstanceResult {
    pub train_seed: u64,
    pub acc_same_instance: f64,
    pub acc_swapped_instance: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossInstanceReport {
    pub preset: String,
    pub instance_a: u64,
    pub instance_b: u64,
    pub runs: Vec<CrossInstanceResult>,
    pub mean_same: f64,
    pub mean_swapped: f64,
    pub mean_drop: f64,
}

/// Plan with the default object and trajectory counts, centred on the skin.
pub fn default_plan(preset: Preset, seed: u64) -> Result<DatasetPlan, SlipError> {
    let skin = preset.config();
    plan_dataset(
        DEFAULT_OBJECTS,
        DEFAULT_TRAIN_OBJECTS,
        DEFAULT_TRAJS_PER_OBJECT,
        (skin.skin_length_mm / 2.0, skin.skin_width_mm / 2.0),
        seed,
    )
}

/// Trains on sequences from skin A and tests the held-out objects on skin A
/// and on skin B, once per training seed. Both skins see identical
/// trajectories and noise.
pub fn cross_instance_eval(
    preset: Preset,
    plan: &DatasetPlan,
    instance_a: u64,
    instance_b: u64,
    train_seeds: &[u64],
    config: &TrainConfig,
) -> Result<CrossInstanceReport, SlipError> {
    if train_seeds.is_empty() {
        return Err(SlipError::InvalidRequest("no training seeds".into()));
    }
    let skin = preset.config();
    let a = render_dataset(plan, &generate_instance(&skin, instance_a)?)?;
    let b = if instance_b == instance_a { a.clone() } else { render_dataset(plan, &generate_instance(&skin, instance_b)?)? };
    let mut runs = Vec::with_capacity(train_seeds.len());
    for &s in train_seeds {
        let model = train(&a.train, &TrainConfig { seed: s, ..*config })?;
        let same = evaluate(&model, &a.test)?.accuracy();
        let swapped = evaluate(&model, &b.test)?.accuracy();
        runs.push(CrossInstanceResult { train_seed: s, acc_same_instance: same, acc_swapped_instance: swapped, drop: same - swapped });
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&CrossInstanceResult) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Ok(CrossInstanceReport {
        preset: preset.name().to_string(),
        instance_a,
        instance_b,
        mean_same: mean(|r| r.acc_same_instance),
        mean_swapped: mean(|r| r.acc_swapped_instance),
        mean_drop: mean(|r| r.drop),
        runs,
    })
}
