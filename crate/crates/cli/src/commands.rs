use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use anyskin::characterize::table_report;
use anyskin::daq::{self, LogFile, ReplayStream, LOG_TAG};
use anyskin::inverse::{localize_gauss_newton, localize_grid_oracle, LocalizeResult};
use anyskin::mechanics::{inject_interference, make_trajectory, simulate_sequence, ContactState, TrajectoryParams};
use anyskin::moldgen::{generate_mold, load_contour, write_stl, MoldParams};
use anyskin::skin::generate_instance;
use anyskin::slip::{self, Dataset, LabeledSequence, SlipModel};
use anyskin::{seed, SensorReading, SkinInstance, Vec3};
use log::info;
use serde_json::{json, Value};

use crate::args::*;

// Stream labels under the base seed.
const STREAM_SKIN: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_XEVAL_B: u64 = 3;

/// What a subcommand produced: files for the manifest, the file or
/// directory the manifest belongs to, and a results summary.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub primary: PathBuf,
    pub primary_is_dir: bool,
    pub summary: Value,
}

impl Outcome {
    fn file(path: PathBuf, summary: Value) -> Self {
        Outcome { outputs: vec![path.clone()], primary: path, primary_is_dir: false, summary }
    }
}

pub struct Ctx {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Ctx {
    /// Resolves an output path against the output directory and makes sure
    /// its parent exists.
    fn output(&self, p: &Path) -> Result<PathBuf> {
        let path = self.out_dir.join(p);
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    fn skin(&self, src: &SkinSource) -> Result<SkinInstance> {
        match &src.instance {
            Some(path) => {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Ok(SkinInstance::read_from(BufReader::new(f))?)
            }
            None => Ok(generate_instance(&src.preset.config(), seed::derive(self.seed, &[STREAM_SKIN]))?),
        }
    }
}

pub fn run(cmd: &Command, ctx: &Ctx) -> Result<Outcome> {
    match cmd {
        Command::Characterize(a) => characterize(a, ctx),
        Command::Simulate(a) => simulate(a, ctx),
        Command::Localize(a) => localize(a, ctx),
        Command::Slip(SlipCommand::Synth(a)) => slip_synth(a, ctx),
        Command::Slip(SlipCommand::Train(a)) => slip_train(a, ctx),
        Command::Slip(SlipCommand::Eval(a)) => slip_eval(a, ctx),
        Command::Slip(SlipCommand::Xeval(a)) => slip_xeval(a, ctx),
        Command::Daq(DaqCommand::Encode(a)) => daq_encode(a, ctx),
        Command::Daq(DaqCommand::Decode(a)) => daq_decode(a, ctx),
        Command::Daq(DaqCommand::Replay(a)) => daq_replay(a, ctx),
        Command::Daq(DaqCommand::Csv(a)) => daq_csv(a, ctx),
        Command::Moldgen(a) => moldgen(a, ctx),
    }
}

fn extension(p: &Path) -> Option<String> {
    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

fn characterize(a: &CharacterizeArgs, ctx: &Ctx) -> Result<Outcome> {
    let report = table_report(&a.presets.0, a.instances, ctx.seed)?;
    let text = match extension(&a.out).as_deref() {
        Some("md") => report.to_markdown(),
        Some("json") => serde_json::to_string_pretty(&report)? + "\n",
        _ => report.to_csv(),
    };
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, text)?;
    info!("wrote {} rows to {}", report.rows.len(), out.display());
    Ok(Outcome::file(out, json!({ "rows": report.rows.len() })))
}

fn simulate(a: &SimulateArgs, ctx: &Ctx) -> Result<Outcome> {
    let instance = ctx.skin(&a.skin)?;
    let cfg = &instance.config;
    let [cx, cy] = a.center.unwrap_or([cfg.skin_length_mm / 2.0, cfg.skin_width_mm / 2.0]);
    let params = TrajectoryParams {
        center: (cx, cy),
        depth_max: a.depth,
        kernel_width: a.width,
        ramp_fraction: a.ramp,
        slip_velocity: a.velocity,
        slip_direction: a.direction,
        shear_fraction: a.shear,
    };
    let traj = make_trajectory(a.kind, &params, a.rate, a.duration)?;
    let grid = cfg.default_grid();
    let readings = simulate_sequence(&instance, &grid, &traj, a.noise, seed::derive(ctx.seed, &[STREAM_NOISE]))?;
    let drift = Vec3::new(a.drift[0], a.drift[1], a.drift[2]);
    let readings = if a.drift == [0.0; 3] { readings } else { inject_interference(&readings, drift) };

    let out = ctx.output(&a.out)?;
    write_readings(&readings, &out)?;
    let mut outcome = Outcome::file(
        out,
        json!({ "frames": readings.len(), "instance_seed": instance.seed, "final_contact": traj.states.last() }),
    );
    if let Some(p) = &a.save_instance {
        let path = ctx.output(p)?;
        let mut w = BufWriter::new(File::create(&path)?);
        instance.write_to(&mut w)?;
        w.flush()?;
        outcome.outputs.push(path);
    }
    Ok(outcome)
}

fn write_readings(readings: &[SensorReading], path: &Path) -> Result<()> {
    if extension(path).as_deref() == Some("csv") {
        std::fs::write(path, daq::to_csv(readings))?;
    } else {
        LogFile::from_readings(readings)?.save(path)?;
    }
    Ok(())
}

/// Reads a binary log or, failing the log tag, CSV.
fn read_readings(path: &Path) -> Result<Vec<SensorReading>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(LOG_TAG) {
        return Ok(LogFile::from_bytes(&bytes)?.readings());
    }
    let text = String::from_utf8(bytes).context("input is neither a log nor UTF-8 CSV")?;
    Ok(daq::from_csv(&text)?)
}

fn localize(a: &LocalizeArgs, ctx: &Ctx) -> Result<Outcome> {
    let readings = read_readings(&a.input)?;
    let index = a.frame.unwrap_or(readings.len().saturating_sub(1));
    let Some(reading) = readings.get(index) else {
        bail!("frame {index} out of range: input has {} frames", readings.len());
    };
    let instance = ctx.skin(&a.skin)?;
    let grid = instance.config.default_grid();
    let result = if a.oracle {
        let estimate = localize_grid_oracle(reading, &instance, &grid, a.width, a.xy_step, a.depth_step)?;
        let r = anyskin::inverse::residual(reading, &instance, &grid, &estimate)?;
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        LocalizeResult { estimate, residual_norm_ut: norm, iterations: 0, converged: true, accepted_norms: Vec::new() }
    } else {
        let cfg = &instance.config;
        let [x, y, d] = a.init.unwrap_or([cfg.skin_length_mm / 2.0, cfg.skin_width_mm / 2.0, 0.5]);
        let init = ContactState::press((x, y), d, a.width);
        localize_gauss_newton(reading, &instance, &grid, &init, a.max_iters, a.tol)?
    };
    let value = json!({
        "method": if a.oracle { "grid_oracle" } else { "gauss_newton" },
        "frame": index,
        "timestamp_us": reading.timestamp_us,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&value)? + "\n";
    print!("{text}");
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, text)?;
    Ok(Outcome::file(out, value))
}

fn slip_synth(a: &SynthArgs, ctx: &Ctx) -> Result<Outcome> {
    let p = &a.plan;
    let data = slip::synth_dataset(p.preset, p.objects, p.train_objects, p.trajs, ctx.seed)?;
    let dir = ctx.output(&a.out)?;
    slip::export_dataset(&data, &dir)?;
    info!("wrote {} train and {} test sequences to {}", data.train.len(), data.test.len(), dir.display());
    let summary = json!({
        "train_sequences": data.train.len(),
        "test_sequences": data.test.len(),
        "instance_seed": slip::instance_seed(ctx.seed),
    });
    Ok(Outcome { outputs: vec![dir.clone()], primary: dir, primary_is_dir: true, summary })
}

fn slip_train(a: &TrainArgs, ctx: &Ctx) -> Result<Outcome> {
    let data = slip::import_dataset(&a.data)?;
    let model = slip::train(&data.train, &a.train.config(ctx.seed))?;
    let out = ctx.output(&a.out)?;
    model.save(&out)?;
    let train_acc = slip::evaluate(&model, &data.train)?.accuracy();
    Ok(Outcome::file(out, json!({ "final_loss": model.final_loss, "train_accuracy": train_acc })))
}

fn split(data: Dataset, s: Split) -> Vec<LabeledSequence> {
    match s {
        Split::Train => data.train,
        Split::Test => data.test,
        Split::All => data.train.into_iter().chain(data.test).collect(),
    }
}

fn slip_eval(a: &EvalArgs, ctx: &Ctx) -> Result<Outcome> {
    let model = SlipModel::load(&a.model)?;
    let seqs = split(slip::import_dataset(&a.data)?, a.split);
    let confusion = slip::evaluate(&model, &seqs)?;
    let value = json!({ "accuracy": confusion.accuracy(), "sequences": confusion.total(), "confusion": confusion });
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(Outcome::file(out, value))
}

fn slip_xeval(a: &XevalArgs, ctx: &Ctx) -> Result<Outcome> {
    if a.train_seeds == 0 {
        bail!("--train-seeds must be at least 1");
    }
    let p = &a.plan;
    let skin = p.preset.config();
    let center = (skin.skin_length_mm / 2.0, skin.skin_width_mm / 2.0);
    let plan = slip::plan_dataset(p.objects, p.train_objects, p.trajs, center, ctx.seed)?;
    let inst_a = a.instance_a.unwrap_or(slip::instance_seed(ctx.seed));
    let inst_b = a.instance_b.unwrap_or(seed::derive(ctx.seed, &[STREAM_XEVAL_B]));
    let seeds: Vec<u64> = (0..a.train_seeds as u64).map(|i| ctx.seed.wrapping_add(i)).collect();
    let report = slip::cross_instance_eval(p.preset, &plan, inst_a, inst_b, &seeds, &a.train.config(ctx.seed))?;
    let value = serde_json::to_value(&report)?;
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(Outcome::file(out, json!({ "mean_same": report.mean_same, "mean_swapped": report.mean_swapped, "mean_drop": report.mean_drop })))
}

fn daq_encode(a: &ConvertArgs, ctx: &Ctx) -> Result<Outcome> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let log = LogFile::from_readings(&daq::from_csv(&text)?)?;
    let out = ctx.output(&a.out)?;
    log.save(&out)?;
    Ok(Outcome::file(out, json!({ "frames": log.len() })))
}

fn daq_decode(a: &ConvertArgs, ctx: &Ctx) -> Result<Outcome> {
    let log = LogFile::load(&a.input)?;
    let mut text = String::new();
    for frame in log.frames() {
        let (r, seq) = daq::decode_frame(frame)?;
        let line = json!({ "seq": seq, "timestamp_us": r.timestamp_us, "values": r.values.to_vec() });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, text)?;
    Ok(Outcome::file(out, json!({ "frames": log.len() })))
}

/// Drops the first `window` frames and subtracts their mean from the rest.
fn apply_baseline(readings: &[SensorReading], window: usize) -> Vec<SensorReading> {
    if window == 0 {
        return readings.to_vec();
    }
    daq::baseline_subtract(readings, window).into_iter().filter(|o| o.armed).map(|o| o.reading).collect()
}

fn daq_csv(a: &CsvArgs, ctx: &Ctx) -> Result<Outcome> {
    let readings = apply_baseline(&LogFile::load(&a.input)?.readings(), a.baseline);
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, daq::to_csv(&readings))?;
    Ok(Outcome::file(out, json!({ "rows": readings.len() })))
}

fn daq_replay(a: &ReplayArgs, ctx: &Ctx) -> Result<Outcome> {
    let log = LogFile::load(&a.input)?;
    let total = log.len();
    let capacity = if a.capacity == 0 { total.max(1) } else { a.capacity };
    let mut stream = ReplayStream::spawn(log, a.realtime, capacity);
    let received: Vec<SensorReading> = stream.by_ref().collect();
    stream.join();
    let dropped = stream.dropped();
    let readings = apply_baseline(&received, a.baseline);
    let out = ctx.output(&a.out)?;
    std::fs::write(&out, daq::to_csv(&readings))?;
    if dropped > 0 {
        log::warn!("queue overflow dropped {dropped} of {total} frames");
    }
    Ok(Outcome::file(out, json!({ "frames": total, "received": received.len(), "dropped": dropped, "rows": readings.len() })))
}

fn moldgen(a: &MoldgenArgs, ctx: &Ctx) -> Result<Outcome> {
    let contour = load_contour(&a.contour)?;
    let params = MoldParams {
        skin_thickness_mm: a.thickness,
        wall_mm: a.wall,
        clearance_mm: a.clearance,
        ..MoldParams::default()
    };
    let design = generate_mold(&contour, &params)?;
    let dir = ctx.output(&a.out)?;
    std::fs::create_dir_all(&dir)?;
    let solids = [("skin.stl", &design.skin_solid), ("mold_top.stl", &design.mold_top), ("mold_bottom.stl", &design.mold_bottom)];
    let mut outputs = Vec::new();
    let mut triangles = serde_json::Map::new();
    for (name, mesh) in solids {
        let path = dir.join(name);
        write_stl(mesh, &path)?;
        triangles.insert(name.into(), json!(mesh.triangles.len()));
        outputs.push(path);
    }
    let summary = json!({
        "mold_params": design.params,
        "inlet": design.inlet,
        "outlet": design.outlet,
        "peg_centers": design.peg_centers,
        "contour_area_mm2": contour.area(),
        "triangles": triangles,
    });
    Ok(Outcome { outputs, primary: dir, primary_is_dir: true, summary })
}
