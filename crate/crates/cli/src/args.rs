use std::path::PathBuf;

use anyskin::inverse::{DEFAULT_MAX_ITERS, DEFAULT_ORACLE_DEPTH_STEP_MM, DEFAULT_ORACLE_XY_STEP_MM, DEFAULT_TOL_UT};
use anyskin::mechanics::{TrajectoryKind, DEFAULT_NOISE_SIGMA_UT, DEFAULT_RATE_HZ};
use anyskin::moldgen::MoldParams;
use anyskin::slip::{TrainConfig, DEFAULT_OBJECTS, DEFAULT_TRAIN_OBJECTS, DEFAULT_TRAJS_PER_OBJECT};
use anyskin::Preset;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Software twin of a magnetic tactile skin: fabrication, sensing,
/// localization, slip detection, logging and mold generation.
#[derive(Debug, Parser)]
#[command(name = "anyskin", version)]
pub struct Cli {
    /// Base seed; every random draw of the run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Caps worker threads used by parallel stages.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, env = "ANYSKIN_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Cross-instance consistency report over fabrication presets.
    Characterize(CharacterizeArgs),
    /// Simulates a contact trajectory and writes the readings.
    Simulate(SimulateArgs),
    /// Estimates the contact from one reading.
    Localize(LocalizeArgs),
    /// Slip dataset synthesis, training and evaluation.
    #[command(subcommand)]
    Slip(SlipCommand),
    /// Frame codec and log utilities.
    #[command(subcommand)]
    Daq(DaqCommand),
    /// Two-part mold for a skin outline.
    Moldgen(MoldgenArgs),
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Characterize(_) => "characterize".into(),
            Command::Simulate(_) => "simulate".into(),
            Command::Localize(_) => "localize".into(),
            Command::Slip(c) => format!("slip {}", c.name()),
            Command::Daq(c) => format!("daq {}", c.name()),
            Command::Moldgen(_) => "moldgen".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct PresetList(pub Vec<Preset>);

fn parse_presets(s: &str) -> Result<PresetList, String> {
    if s == "all" {
        return Ok(PresetList(Preset::ALL.to_vec()));
    }
    let list = s
        .split(',')
        .map(|p| p.trim().parse::<Preset>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PresetList(list))
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

#[derive(Debug, Args, Serialize)]
pub struct CharacterizeArgs {
    /// `all` or a comma-separated list of presets.
    #[arg(long, default_value = "all", value_parser = parse_presets)]
    pub presets: PresetList,
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    /// Report path; `.md` writes markdown, `.json` JSON, anything else CSV.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SkinSource {
    #[arg(long, default_value = "anyskin")]
    pub preset: Preset,
    /// Skin instance file; generated from the preset and seed when absent.
    #[arg(long)]
    pub instance: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub skin: SkinSource,
    /// Also write the generated skin instance here.
    #[arg(long)]
    pub save_instance: Option<PathBuf>,
    #[arg(long, default_value = "press")]
    pub kind: TrajectoryKind,
    /// Seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Hz.
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    pub rate: f64,
    /// Contact centre `x,y` in mm; defaults to the skin centre.
    #[arg(long, value_parser = parse_pair)]
    pub center: Option<[f64; 2]>,
    /// Peak indentation, mm.
    #[arg(long, default_value_t = 0.8)]
    pub depth: f64,
    /// Contact kernel width, mm.
    #[arg(long, default_value_t = 3.0)]
    pub width: f64,
    #[arg(long, default_value_t = 0.3)]
    pub ramp: f64,
    /// Slip speed, mm/s.
    #[arg(long, default_value_t = 5.0)]
    pub velocity: f64,
    /// Slip heading, radians from +x.
    #[arg(long, default_value_t = 0.0)]
    pub direction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub shear: f64,
    /// Per-channel noise, µT.
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA_UT)]
    pub noise: f64,
    /// Common-mode interference ramp `x,y,z` in µT/s.
    #[arg(long, value_parser = parse_triple, default_value = "0,0,0")]
    pub drift: [f64; 3],
    /// `.csv` writes CSV, anything else a binary log.
    #[arg(long, default_value = "sequence.alog")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    /// Binary log or CSV of readings.
    #[arg(long)]
    pub input: PathBuf,
    /// Frame index; the last frame when absent.
    #[arg(long)]
    pub frame: Option<usize>,
    #[command(flatten)]
    pub skin: SkinSource,
    /// Known contact kernel width, mm.
    #[arg(long, default_value_t = 3.0)]
    pub width: f64,
    /// Initial guess `x,y,depth` in mm; defaults to the skin centre at 0.5 mm.
    #[arg(long, value_parser = parse_triple)]
    pub init: Option<[f64; 3]>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Residual norm that counts as converged, µT.
    #[arg(long, default_value_t = DEFAULT_TOL_UT)]
    pub tol: f64,
    /// Exhaustive grid search instead of Gauss-Newton.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = DEFAULT_ORACLE_XY_STEP_MM)]
    pub xy_step: f64,
    #[arg(long, default_value_t = DEFAULT_ORACLE_DEPTH_STEP_MM)]
    pub depth_step: f64,
    #[arg(long, default_value = "localize.json")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipCommand {
    /// Renders a labelled dataset to a directory of logs.
    Synth(SynthArgs),
    /// Trains a classifier on a dataset's training split.
    Train(TrainArgs),
    /// Scores a model on a dataset split.
    Eval(EvalArgs),
    /// Accuracy drop when the model moves to another skin instance.
    Xeval(XevalArgs),
}

impl SlipCommand {
    fn name(&self) -> &'static str {
        match self {
            SlipCommand::Synth(_) => "synth",
            SlipCommand::Train(_) => "train",
            SlipCommand::Eval(_) => "eval",
            SlipCommand::Xeval(_) => "xeval",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long, default_value = "anyskin")]
    pub preset: Preset,
    #[arg(long, default_value_t = DEFAULT_OBJECTS)]
    pub objects: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_OBJECTS)]
    pub train_objects: usize,
    #[arg(long, default_value_t = DEFAULT_TRAJS_PER_OBJECT)]
    pub trajs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long, default_value = "slip_data")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().clip_norm)]
    pub clip: f64,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    pub hidden: usize,
}

impl TrainFlags {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            clip_norm: self.clip,
            hidden: self.hidden,
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `slip synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value = "slip_model.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value = "slip_eval.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct XevalArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Seed of skin A; derived from `--seed` when absent.
    #[arg(long)]
    pub instance_a: Option<u64>,
    /// Seed of skin B; derived from `--seed` when absent.
    #[arg(long)]
    pub instance_b: Option<u64>,
    /// Number of training seeds to average over.
    #[arg(long, default_value_t = 3)]
    pub train_seeds: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value = "slip_xeval.json")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DaqCommand {
    /// CSV readings to a binary log.
    Encode(ConvertArgs),
    /// Binary log to JSON lines, one frame per line with its sequence number.
    Decode(ConvertArgs),
    /// Streams a log through the bounded queue and writes what arrives as CSV.
    Replay(ReplayArgs),
    /// Binary log to CSV.
    Csv(CsvArgs),
}

impl DaqCommand {
    fn name(&self) -> &'static str {
        match self {
            DaqCommand::Encode(_) => "encode",
            DaqCommand::Decode(_) => "decode",
            DaqCommand::Replay(_) => "replay",
            DaqCommand::Csv(_) => "csv",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CsvArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Subtract the mean of the first N frames and drop them; 0 keeps raw values.
    #[arg(long, default_value_t = 0)]
    pub baseline: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Pace frames by their timestamps.
    #[arg(long)]
    pub realtime: bool,
    /// Queue capacity in frames; 0 sizes the queue to hold the whole log.
    #[arg(long, default_value_t = 0)]
    pub capacity: usize,
    /// Subtract the mean of the first N frames and drop them; 0 keeps raw values.
    #[arg(long, default_value_t = 0)]
    pub baseline: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MoldgenArgs {
    /// Skin outline: point list, JSON array or DXF polyline.
    #[arg(long)]
    pub contour: PathBuf,
    #[arg(long, default_value = "mold")]
    pub out: PathBuf,
    #[arg(long, default_value_t = MoldParams::default().skin_thickness_mm)]
    pub thickness: f64,
    #[arg(long, default_value_t = MoldParams::default().wall_mm)]
    pub wall: f64,
    #[arg(long, default_value_t = MoldParams::default().clearance_mm)]
    pub clearance: f64,
}
