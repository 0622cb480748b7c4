//! Acceptance suite. Runs every criterion in turn and prints one PASS/FAIL
//! line each; exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance -- 3 5` runs only criteria 3 and 5.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyskin::characterize::{self, misalignment_std, table_report, CharacterizeError};
use anyskin::daq::{decode_frame, encode_frame, FRAME_LEN};
use anyskin::inverse::{localize_gauss_newton, localize_grid_oracle};
use anyskin::magnetics::{dipole_field, field_at, read_sensors, CHANNELS, MU0_OVER_4PI};
use anyskin::mechanics::{deform, ContactState};
use anyskin::moldgen::{box_mesh, extrude, generate_mold, stl_bytes, Contour2D, MoldParams};
use anyskin::skin::{calibrate_moment_scale, generate_instance, ANYSKIN_TARGET_BZ_UT};
use anyskin::slip::{self, grad_check, SlipModel, TrainConfig};
use anyskin::{seed, Dipole, Preset, SensorReading, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rand_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

// ---- 1: dipole physics ---------------------------------------------------

/// Random orthogonal matrix: a rotation from a unit quaternion, reflected
/// through z half the time.
fn rand_orthogonal(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let mut m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    if rng.gen_bool(0.5) {
        for row in &mut m {
            row[2] = -row[2];
        }
    }
    m
}

fn apply(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    let a = v.to_array();
    let r = |i: usize| m[i][0] * a[0] + m[i][1] * a[1] + m[i][2] * a[2];
    Vec3::new(r(0), r(1), r(2))
}

fn vec_err(a: Vec3, b: Vec3, scale: f64) -> f64 {
    (a - b).norm() / scale
}

fn criterion_1() -> Outcome {
    // Closed forms: on the moment axis B = 2km/r³ along m; in the equatorial
    // plane B = -km/r³.
    let mut worst_closed: f64 = 0.0;
    let mut rng = seed::rng(1);
    for _ in 0..100 {
        let m_mag = 10f64.powf(rng.gen_range(-9.0..-5.0));
        let r = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let axis = rand_vec(&mut rng, 1.0);
        let axis = axis * (1.0 / axis.norm());
        let mut perp = axis.cross(Vec3::new(0.3, -0.7, 0.2));
        perp = perp * (1.0 / perp.norm());
        let origin = rand_vec(&mut rng, 0.01);
        let d = Dipole::new(origin, axis * m_mag);
        let k = MU0_OVER_4PI * m_mag / (r * r * r);
        let axial = dipole_field(&d, origin + axis * r).map_err(|e| e.to_string())?;
        let equatorial = dipole_field(&d, origin + perp * r).map_err(|e| e.to_string())?;
        worst_closed = worst_closed.max(vec_err(axial, axis * (2.0 * k), 2.0 * k));
        worst_closed = worst_closed.max(vec_err(equatorial, axis * -k, k));
    }

    let (mut sup, mut decay, mut equi) = (0f64, 0f64, 0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let dipoles: Vec<Dipole> =
            (0..n).map(|_| Dipole::new(rand_vec(&mut rng, 0.01), rand_vec(&mut rng, 1e-7))).collect();
        let p = rand_vec(&mut rng, 0.01) + Vec3::new(0.0, 0.0, 0.012);
        let parts: Vec<Vec3> = dipoles.iter().map(|d| dipole_field(d, p).unwrap()).collect();
        let scale: f64 = parts.iter().map(|b| b.norm()).sum();
        let total = field_at(&dipoles, p).unwrap();
        let sum = parts.iter().fold(Vec3::new(0.0, 0.0, 0.0), |a, &b| a + b);
        sup = sup.max(vec_err(total, sum, scale));
        let split = dipoles.len() / 2;
        let halves = field_at(&dipoles[..split], p).unwrap() + field_at(&dipoles[split..], p).unwrap();
        sup = sup.max(vec_err(total, halves, scale));

        let d = dipoles[0];
        let dir = p - d.position;
        let lambda = rng.gen_range(2.0..50.0);
        let near = dipole_field(&d, d.position + dir).unwrap();
        let far = dipole_field(&d, d.position + dir * lambda).unwrap();
        decay = decay.max(vec_err(far * lambda.powi(3), near, near.norm()));

        let m = rand_orthogonal(&mut rng);
        let t = rand_vec(&mut rng, 0.02);
        let moved: Vec<Dipole> =
            dipoles.iter().map(|d| Dipole::new(apply(&m, d.position) + t, apply(&m, d.moment))).collect();
        let b = field_at(&moved, apply(&m, p) + t).unwrap();
        equi = equi.max(vec_err(b, apply(&m, total), scale));
    }
    check(
        worst_closed <= 1e-12 && sup <= 1e-12 && decay <= 1e-12 && equi <= 1e-10,
        format!(
            "closed-form rel err {worst_closed:.1e}; 1000 configs: superposition {sup:.1e}, decay {decay:.1e}, equivariance {equi:.1e}"
        ),
    )
}

// ---- 2: calibration anchor -----------------------------------------------

fn baseline(config: &anyskin::FabricationConfig, seed: u64) -> SensorReading {
    let inst = generate_instance(config, seed).unwrap();
    read_sensors(&inst.dipoles, &config.default_grid(), (0.0, 0.0), 0).unwrap()
}

fn criterion_2() -> Outcome {
    let config = Preset::Anyskin.config();
    let grid = config.default_grid();
    let scale = calibrate_moment_scale(&config, &grid, ANYSKIN_TARGET_BZ_UT, 8, 1000).map_err(|e| e.to_string())?;
    let calibrated = config.with_moment_scale(scale);
    let readings: Vec<SensorReading> = (0..5).map(|i| baseline(&calibrated, 5000 + i)).collect();
    let (bxy, bz) = characterize::signal_strength(&readings).map_err(|e| e.to_string())?;
    check(
        rel(bz, ANYSKIN_TARGET_BZ_UT) <= 0.25 && bz > bxy,
        format!("mean |Bz| {bz:.0} µT (target 1265 ± 25%), mean |Bxy| {bxy:.0} µT"),
    )
}

// ---- 3 and 4: consistency and misalignment -------------------------------

const REPORT_SEEDS: [u64; 3] = [0, 1, 2];

fn criterion_3() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for s in REPORT_SEEDS {
        let r = table_report(&Preset::ALL, 5, s).map_err(|e| e.to_string())?;
        let z = |p: Preset| r.row(p.name()).unwrap().norm_std_z;
        let (reskin, any) = (z(Preset::Reskin), z(Preset::Anyskin));
        ok &= reskin > 2.0 * any;
        for p in [Preset::ReskinPm, Preset::ReskinPmFp] {
            let v = z(p);
            ok &= (any < v && v < reskin) || v * 2.0 <= reskin;
        }
        lines.push(format!(
            "seed {s}: reskin {reskin:.3} pm {:.3} pm_fp {:.3} anyskin {any:.3}",
            z(Preset::ReskinPm),
            z(Preset::ReskinPmFp)
        ));
    }
    check(ok, format!("norm_std_z {}", lines.join("; ")))
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for s in REPORT_SEEDS {
        let r = table_report(&[Preset::Reskin], 5, s).map_err(|e| e.to_string())?;
        let row = r.row("reskin").unwrap();
        let (mx, mz) = row.misalignment.ok_or("reskin reported as self-aligning")?;
        ok &= mx >= row.norm_std_xy && mz >= row.norm_std_z;
        lines.push(format!(
            "seed {s}: misalign {mx:.2}/{mz:.2} vs instances {:.2}/{:.2}",
            row.norm_std_xy, row.norm_std_z
        ));
    }
    let any = Preset::Anyskin.config();
    let inst = generate_instance(&any, 0).unwrap();
    let refused = matches!(misalignment_std(&inst, &any.default_grid(), 1.0), Err(CharacterizeError::SelfAligningSkin(_)));
    ok &= refused;
    check(ok, format!("xy/z {}; anyskin refused: {refused}", lines.join("; ")))
}

// ---- 5: inverse localization ---------------------------------------------

fn criterion_5() -> Outcome {
    // Coarse benchmark skin: anyskin geometry with fewer, stronger particles
    // so 50 exhaustive oracle sweeps stay affordable.
    let full = Preset::Anyskin.config();
    let mut config = full.with_moment_scale(full.moment_scale * full.particle_count as f64 / 400.0);
    config.particle_count = 400;
    let instance = generate_instance(&config, 11).unwrap();
    let grid = config.default_grid();
    let width = 4.0;
    let mut rng = seed::rng(5);
    let mut gn_err = Vec::new();
    let mut fast = 0;
    let mut worst_xy: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for _ in 0..50 {
        let truth = ContactState::press((rng.gen_range(5.0..15.0), rng.gen_range(5.0..15.0)), rng.gen_range(0.5..1.5), width);
        let reading = read_sensors(&deform(&instance, &truth), &grid, (0.0, 0.0), 0).unwrap();
        let init = ContactState::press((10.0, 10.0), 0.5, width);
        let gn = localize_gauss_newton(&reading, &instance, &grid, &init, 100, 1e-6).map_err(|e| e.to_string())?;
        let oracle = localize_grid_oracle(&reading, &instance, &grid, width, 0.5, 0.1).map_err(|e| e.to_string())?;
        let (ex, ey, ed) = gn.center_error(&oracle);
        worst_xy = worst_xy.max(ex).max(ey);
        worst_d = worst_d.max(ed);
        let (tx, ty, td) = gn.center_error(&truth);
        gn_err.push((tx * tx + ty * ty + td * td).sqrt());
        if gn.iterations < 50 {
            fast += 1;
        }
    }
    gn_err.sort_by(f64::total_cmp);
    let median = (gn_err[24] + gn_err[25]) / 2.0;
    check(
        worst_xy <= 0.5 && worst_d <= 0.2 && fast >= 45 && median <= 0.1,
        format!(
            "max |GN - oracle| xy {worst_xy:.2} mm depth {worst_d:.2} mm; {fast}/50 under 50 iterations; median error {median:.1e} mm"
        ),
    )
}

// ---- 6 and 8: slip --------------------------------------------------------

fn criterion_6() -> Outcome {
    let data = slip::synth_dataset(Preset::Anyskin, 40, 30, 6, 0).map_err(|e| e.to_string())?;
    let mut accs = Vec::new();
    for s in 0..3 {
        let model = slip::train(&data.train, &TrainConfig { seed: s, ..TrainConfig::default() }).map_err(|e| e.to_string())?;
        accs.push(slip::evaluate(&model, &data.test).map_err(|e| e.to_string())?.accuracy());
    }
    let ok = data.train.len() == 180 && data.test.len() == 60 && accs.iter().all(|&a| a >= 0.90);
    check(ok, format!("{}/{} sequences; held-out accuracy {accs:.3?}", data.train.len(), data.test.len()))
}

fn criterion_8() -> Outcome {
    let run = |p: Preset| {
        let plan = slip::default_plan(p, 1).map_err(|e| e.to_string())?;
        slip::cross_instance_eval(p, &plan, 101, 202, &[0, 1, 2], &TrainConfig::default()).map_err(|e| e.to_string())
    };
    let any = run(Preset::Anyskin)?;
    let reskin = run(Preset::Reskin)?;
    check(
        any.mean_drop < reskin.mean_drop && any.mean_swapped >= 0.75,
        format!(
            "anyskin same {:.3} swapped {:.3} drop {:.3}; reskin same {:.3} swapped {:.3} drop {:.3}",
            any.mean_same, any.mean_swapped, any.mean_drop, reskin.mean_same, reskin.mean_swapped, reskin.mean_drop
        ),
    )
}

// ---- 7: gradient check ----------------------------------------------------

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let mut rng = seed::rng(seed::derive(s, &[7]));
        let model = SlipModel::init(TrainConfig::default().hidden, 1.0, s);
        let features: Vec<[f64; CHANNELS]> =
            (0..6).map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng))).collect();
        worst = worst.max(grad_check(&model, &features, (s % 2) as f64));
    }
    check(worst <= 1e-4, format!("max relative gradient error {worst:.2e} over 5 seeds"))
}

// ---- 9: codec -------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut rng = seed::rng(9);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let values = std::array::from_fn(|_| loop {
            let v = f32::from_bits(rng.gen());
            if v.is_finite() {
                break v as f64;
            }
        });
        let r = SensorReading::new(rng.gen::<u32>() as u64, values);
        let seq = rng.gen::<u32>();
        let frame = encode_frame(&r, seq);
        match decode_frame(&frame) {
            Ok((back, s)) if s == seq && encode_frame(&back, s) == frame && back == r => {}
            _ => mismatches += 1,
        }
    }
    let frame = encode_frame(&SensorReading::new(123_456, [1.5; CHANNELS]), 42);
    let mut accepted = 0;
    for bit in 0..FRAME_LEN * 8 {
        let mut f = frame;
        f[bit / 8] ^= 1 << (bit % 8);
        if decode_frame(&f).is_ok() {
            accepted += 1;
        }
    }
    check(
        mismatches == 0 && accepted == 0 && frame.len() == 73,
        format!("{mismatches} round-trip mismatches in 1e5; {accepted} of {} bit flips accepted; frame {} bytes", FRAME_LEN * 8, frame.len()),
    )
}

// ---- 10: moldgen ----------------------------------------------------------

/// Star-shaped polygon with sorted random angles and radii.
fn random_polygon(rng: &mut impl Rng) -> Contour2D {
    let n = rng.gen_range(3..=24);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let pts = angles.iter().map(|a| {
        let r = rng.gen_range(5.0..20.0);
        [r * a.cos(), r * a.sin()]
    });
    Contour2D::new(pts.collect()).unwrap_or_else(|_| random_polygon(rng))
}

fn shoelace(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n).map(|i| v[i][0] * v[(i + 1) % n][1] - v[(i + 1) % n][0] * v[i][1]).sum::<f64>() / 2.0
}

fn criterion_10() -> Outcome {
    let cube = box_mesh([0.0; 3], [10.0; 3]).map_err(|e| e.to_string())?;
    let square = Contour2D::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]).unwrap();
    let prism = extrude(&square, 10.0).map_err(|e| e.to_string())?;
    let cube_bytes = (stl_bytes(&cube).len(), stl_bytes(&prism).len());

    let mut rng = seed::rng(10);
    let (mut count_bad, mut vol_err, mut leaky, mut molds) = (0, 0f64, 0, 0);
    for i in 0..200 {
        let c = random_polygon(&mut rng);
        let h = rng.gen_range(0.5..5.0);
        let mesh = extrude(&c, h).map_err(|e| e.to_string())?;
        if mesh.triangles.len() != 4 * c.len() - 4 {
            count_bad += 1;
        }
        vol_err = vol_err.max(rel(mesh.volume(), shoelace(c.vertices()).abs() * h));
        let mut solids = vec![mesh];
        if i % 10 == 0 {
            if let Ok(d) = generate_mold(&c, &MoldParams::default()) {
                molds += 1;
                solids.extend([d.skin_solid, d.mold_top, d.mold_bottom]);
            }
        }
        leaky += solids.iter().filter(|m| !m.is_watertight()).count();
    }
    let d = generate_mold(&square, &MoldParams::default()).map_err(|e| e.to_string())?;
    leaky += [&cube, &prism, &d.skin_solid, &d.mold_top, &d.mold_bottom].iter().filter(|m| !m.is_watertight()).count();
    check(
        cube_bytes == (684, 684) && count_bad == 0 && vol_err <= 1e-9 && leaky == 0,
        format!(
            "cube STL {} bytes; 200 polygons: {count_bad} count violations, max volume rel err {vol_err:.1e}; {molds} molds; {leaky} leaky solids",
            cube_bytes.0
        ),
    )
}

// ---- 11: CLI determinism --------------------------------------------------

const CLI_STEPS: &[&[&str]] = &[
    &["characterize", "--presets", "all", "--instances", "5", "--out", "report.csv"],
    &["characterize", "--presets", "reskin,anyskin", "--instances", "3", "--out", "report.md"],
    &["simulate", "--kind", "slip", "--center", "9,11", "--depth", "0.7", "--save-instance", "skin.txt", "--out", "seq.alog"],
    &["simulate", "--kind", "hold", "--drift", "1,0,-2", "--out", "seq.csv"],
    &["localize", "--input", "seq.alog", "--instance", "skin.txt", "--out", "loc.json"],
    &["localize", "--input", "seq.csv", "--frame", "50", "--out", "loc_csv.json"],
    &["localize", "--input", "seq.alog", "--instance", "skin.txt", "--oracle", "--xy-step", "2", "--depth-step", "0.5", "--out", "oracle.json"],
    &["slip", "synth", "--objects", "4", "--train-objects", "3", "--trajs", "2", "--out", "data"],
    &["slip", "train", "--data", "data", "--epochs", "20", "--out", "model.txt"],
    &["slip", "eval", "--model", "model.txt", "--data", "data", "--split", "all", "--out", "eval.json"],
    &["slip", "xeval", "--preset", "reskin", "--objects", "3", "--train-objects", "2", "--trajs", "2", "--epochs", "5", "--train-seeds", "2", "--out", "xeval.json"],
    &["daq", "encode", "--input", "seq.csv", "--out", "enc.alog"],
    &["daq", "decode", "--input", "seq.alog", "--out", "frames.jsonl"],
    &["daq", "replay", "--input", "seq.alog", "--baseline", "10", "--out", "replay.csv"],
    &["daq", "csv", "--input", "seq.alog", "--out", "seq_export.csv"],
    &["moldgen", "--contour", "outline.txt", "--out", "mold", "--thickness", "2", "--wall", "4", "--clearance", "0.2"],
];

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let mut bytes = std::fs::read(&path).unwrap();
            if path.to_string_lossy().ends_with("manifest.json") {
                // Wall-clock duration is the one field allowed to differ.
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("duration_s");
                bytes = v.to_string().into_bytes();
            }
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
}

fn run_cli_chain(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    std::fs::write(dir.join("outline.txt"), "0 0\n30 0\n34 12\n18 26\n-2 14\n").unwrap();
    for step in CLI_STEPS {
        let out = Command::new(env!("CARGO_BIN_EXE_anyskin"))
            .args(*step)
            .args(["--seed", "7"])
            .current_dir(dir)
            .env_remove("ANYSKIN_OUT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", step.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
    }
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files);
    Ok(files)
}

fn criterion_11() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_cli_chain(a.path())?;
    let second = run_cli_chain(b.path())?;
    let differing: Vec<_> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let manifests = first.keys().filter(|k| k.to_string_lossy().ends_with("manifest.json")).count();
    check(
        differing.is_empty() && manifests == CLI_STEPS.len(),
        format!(
            "{} subcommand runs, {} files compared, {manifests} manifests; differing: {differing:?}",
            CLI_STEPS.len(),
            first.len()
        ),
    )
}

// ---- driver ---------------------------------------------------------------

type Criterion = (u32, &'static str, u64, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "dipole physics", 5, criterion_1),
    (2, "calibration anchor", 10, criterion_2),
    (3, "consistency ordering", 30, criterion_3),
    (4, "misalignment dominance", 10, criterion_4),
    (5, "inverse localization", 120, criterion_5),
    (6, "slip pipeline", 300, criterion_6),
    (7, "gradient correctness", 30, criterion_7),
    (8, "cross-instance ordering", 900, criterion_8),
    (9, "codec", 10, criterion_9),
    (10, "moldgen", 10, criterion_10),
    (11, "CLI determinism", 600, criterion_11),
];

fn main() {
    // libtest-style flags such as `--nocapture` are accepted and ignored;
    // bare numbers select criteria.
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    let mut stdout = std::io::stdout();
    for &(id, name, limit_s, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit_s);
        let (pass, detail) = match result {
            Ok(d) if in_time => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit_s} s budget")),
            Err(d) => (false, d),
        };
        failures += usize::from(!pass);
        writeln!(
            stdout,
            "{} criterion {id:>2} ({name}): {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        )
        .unwrap();
        stdout.flush().unwrap();
    }
    if failures > 0 {
        writeln!(stdout, "{failures} criteria failed").unwrap();
        std::process::exit(1);
    }
}
