//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigcal::experiment::{
    grasp_study, trajectory_study, ExperimentConfig, GraspConfig, NoiseSpec, RansacSpec, TrajectoryConfig,
};
use rigcal::frame::build_common_frame;
use rigcal::metrics::{decompose_error, error_stats};
use rigcal::par::Execution;
use rigcal::registration::{fit_plane_least_squares, ransac_plane, Plane};
use rigcal::sim::{make_scene, simulate_measurements, NoiseModel};
use rigcal::{calibrate, MeasurementSet, Point3, RansacParams, RigidTransform, UnitQuaternion};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if v.iter().map(|c| c * c).sum::<f64>() > 1e-3 {
            return UnitQuaternion::new(v[0], v[1], v[2], v[3]).unwrap();
        }
    }
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    let t = Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    RigidTransform::new(random_rotation(rng), t)
}

fn decomposition() -> Outcome {
    let a = decompose_error(1.94, 1.02).unwrap();
    let b = decompose_error(1.71, 1.02).unwrap();
    outcome(
        (a - 1.65).abs() <= 0.01 && (b - 1.38).abs() <= 0.01,
        format!("decompose(1.94, 1.02) = {a:.4}, decompose(1.71, 1.02) = {b:.4}"),
    )
}

fn grasp_table_statistics() -> Outcome {
    let errors = [
        1.890, 1.221, 0.986, 1.970, 1.905, 2.058, 1.550, 0.902, 4.727, // PSM1
        1.125, 0.704, 1.267, 3.356, 1.760, 4.745, 0.621, 2.141, 2.058, // PSM2
    ];
    let s = error_stats(&errors).unwrap();
    outcome(
        (s.mean - 1.94).abs() <= 0.02 && (s.std - 1.21).abs() <= 0.02 && s.max == 4.745,
        format!("mean {:.4}, std {:.4}, max {}", s.mean, s.std, s.max),
    )
}

fn noiseless_oracle() -> Outcome {
    let (mut worst_t, mut worst_r) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let scene = make_scene(seed, 3).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::none()).unwrap();
        let calib = calibrate(&sets, &RansacParams::default()).unwrap();
        for a in scene.tools() {
            for b in scene.tools() {
                let (dt, dr) = calib
                    .tool_to_tool(a, b)
                    .unwrap()
                    .difference(&scene.relative_pose(a, b).unwrap());
                worst_t = worst_t.max(dt);
                worst_r = worst_r.max(dr);
            }
        }
    }
    outcome(
        worst_t <= 1e-9 && worst_r <= 1e-9,
        format!("100 seeds, worst {worst_t:.2e} m / {worst_r:.2e} rad"),
    )
}

fn cross_consistency() -> Outcome {
    let mut worst_clean = 0.0f64;
    for seed in 0..100 {
        let scene = make_scene(seed, 3).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::none()).unwrap();
        let calib = calibrate(&sets, &RansacParams::default()).unwrap();
        for c in calib.cross_check.values() {
            worst_clean = worst_clean.max(c.translation).max(c.rotation);
        }
    }
    let params = RansacSpec::default().params(0);
    let seeds = 500;
    let mut agree = 0;
    for seed in 0..seeds {
        let scene = make_scene(seed, 3).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::isotropic(0.5e-3, seed)).unwrap();
        let calib = calibrate(&sets, &RansacParams { seed, ..params }).unwrap();
        if calib.cross_check.values().all(|c| c.translation < 2e-3) {
            agree += 1;
        }
    }
    let share = agree as f64 / seeds as f64;
    outcome(
        worst_clean <= 1e-9 && share >= 0.95,
        format!("noiseless worst {worst_clean:.2e}; sigma 0.5 mm: {agree}/{seeds} seeds below 2 mm ({:.1}%)", share * 100.0),
    )
}

fn ransac_robustness() -> Outcome {
    let mut exact = 0;
    let mut worst_angle = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_transform(&mut rng);
        let truth = Plane::new(Point3::new(0.0, 0.0, 1.0), 0.0).unwrap().transformed(&pose);
        let mut pts: Vec<Point3> = (0..20)
            .map(|_| pose.apply(&Point3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0)))
            .collect();
        for _ in 0..8 {
            let off = rng.random_range(0.05..0.15) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let local = Point3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), off);
            pts.push(pose.apply(&local));
        }
        let fit = ransac_plane(&pts, &RansacParams { seed, ..RansacParams::default() }).unwrap();
        if fit.inliers == (0..20).collect::<Vec<_>>() {
            exact += 1;
        }
        worst_angle = worst_angle.max(fit.plane.angle_to(&truth).to_degrees());
    }
    outcome(
        exact == 100 && worst_angle <= 0.1,
        format!("{exact}/100 exact inlier sets, worst normal error {worst_angle:.2e} deg"),
    )
}

fn grasp_band() -> Outcome {
    let noisy = ExperimentConfig {
        grasp: Some(GraspConfig {
            repetitions: 60,
            ..GraspConfig::default()
        }),
        trajectory: None,
        consistency: None,
        ..ExperimentConfig::default()
    };
    let g = grasp_study(&noisy, Execution::default()).unwrap();
    let trials = g.errors_mm.len();

    let clean = ExperimentConfig {
        calibration_noise: NoiseSpec::new(0.0, 0.0),
        grasp: Some(GraspConfig {
            repetitions: 60,
            camera_noise: NoiseSpec::new(0.0, 0.0),
            ..GraspConfig::default()
        }),
        ..noisy.clone()
    };
    let c = grasp_study(&clean, Execution::default()).unwrap();
    let oracle = 1.02 * (8.0 / std::f64::consts::PI).sqrt();
    let rel = (c.total.mean - oracle).abs() / oracle;
    outcome(
        trials >= 500 && (1.0..=3.0).contains(&g.total.mean) && rel <= 0.10,
        format!(
            "{trials} grasps, mean {:.3} mm; without calibration noise {:.3} mm vs {oracle:.3} mm ({:.1}% off)",
            g.total.mean,
            c.total.mean,
            rel * 100.0
        ),
    )
}

fn trajectory_trend() -> Outcome {
    let cfg = ExperimentConfig {
        grasp: None,
        consistency: None,
        trajectory: Some(TrajectoryConfig::default()),
        ..ExperimentConfig::default()
    };
    let t = trajectory_study(&cfg, Execution::default()).unwrap();
    let stds: Vec<String> = t.table.iter().map(|r| format!("{:.3}", r.std_dev_mm)).collect();
    outcome(
        t.repetitions.len() == 100 && t.nondecreasing_fraction >= 0.9,
        format!(
            "{} repetitions, {:.0}% nondecreasing; mean std by radius [{}] mm",
            t.repetitions.len(),
            t.nondecreasing_fraction * 100.0,
            stds.join(", ")
        ),
    )
}

fn invariant_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // rigidity and group laws
    for _ in 0..1000 {
        let (a, b, c) = (random_transform(&mut rng), random_transform(&mut rng), random_transform(&mut rng));
        let p = Point3::new(rng.random(), rng.random(), rng.random());
        let q = Point3::new(rng.random(), rng.random(), rng.random());
        let rigid = (a.apply(&p).distance(&a.apply(&q)) - p.distance(&q)).abs() < 1e-9;
        let assoc = a.compose(&b).compose(&c).apply(&p).distance(&a.compose(&b.compose(&c)).apply(&p)) < 1e-9;
        let inv = a.compose(&a.inverse()).apply(&p).distance(&p) < 1e-9;
        if !(rigid && assoc && inv) {
            failures.push("geom");
            break;
        }
    }

    // plane equivariance
    for _ in 0..200 {
        let t = random_transform(&mut rng);
        let pts: Vec<Point3> = (0..12)
            .map(|_| Point3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-1e-3..1e-3)))
            .collect();
        let moved = fit_plane_least_squares(&t.apply_all(&pts)).unwrap();
        let expected = fit_plane_least_squares(&pts).unwrap().transformed(&t);
        let expected = if expected.normal().dot(&moved.normal()) < 0.0 { expected.flipped() } else { expected };
        if moved.normal().distance(&expected.normal()) > 1e-9 || (moved.offset() - expected.offset()).abs() > 1e-9 {
            failures.push("plane equivariance");
            break;
        }
    }

    // frame handedness, normal orientation and input permutation
    let params = RansacSpec::default().params(0);
    for seed in 0..100 {
        let scene = make_scene(seed, 3).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::isotropic(0.3e-3, seed)).unwrap();
        let ok = sets.iter().all(|m: &MeasurementSet| {
            let f = build_common_frame(m, &params).unwrap();
            let r = f.common_to_tool().rotation.to_rotation_matrix();
            (r.determinant() - 1.0).abs() < 1e-9 && f.tool_to_common.apply(&m.above_point()).z > 0.0
        });
        if !ok {
            failures.push("frame");
            break;
        }
        let mut reversed = sets.clone();
        reversed.reverse();
        if calibrate(&sets, &params).unwrap() != calibrate(&reversed, &params).unwrap() {
            failures.push("permutation");
            break;
        }
    }
    let errors: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut shuffled = errors.clone();
    shuffled.reverse();
    let (a, b) = (error_stats(&errors).unwrap(), error_stats(&shuffled).unwrap());
    if (a.mean - b.mean).abs() > 1e-12 || (a.std - b.std).abs() > 1e-12 || a.max != b.max {
        failures.push("stats permutation");
    }

    if let Err(e) = cli_round_trip() {
        failures.push(e);
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "geom, plane, frame, permutation and CLI suites hold".to_string()
        } else {
            format!("failing: {}", failures.join(", "))
        },
    )
}

fn rigcal(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rigcal")).args(args).output().unwrap()
}

fn cli_round_trip() -> Result<(), &'static str> {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_scene(21, 3).unwrap();
    let sets = simulate_measurements(&scene, &NoiseModel::none()).unwrap();
    let mut refs = Vec::new();
    for m in &sets {
        let name = format!("{}.csv", m.tool());
        rigcal::io::write_measurement_csv(&dir.path().join(&name), m, rigcal::io::Units::Meters).unwrap();
        refs.push(serde_json::json!({ "tool": m.tool().as_str(), "path": name }));
    }
    let session = dir.path().join("session.json");
    std::fs::write(&session, serde_json::json!({ "units": "m", "measurements": refs }).to_string()).unwrap();
    let calib = dir.path().join("calibration.json");
    let run_calibrate = || {
        let o = rigcal(&["calibrate", session.to_str().unwrap()]);
        (o.status.code(), std::fs::read(&calib).unwrap())
    };
    let (code, first) = run_calibrate();
    let (_, second) = run_calibrate();
    if code != Some(0) || first != second {
        return Err("CLI calibrate determinism");
    }

    let c = calib.to_str().unwrap();
    let parse = |o: std::process::Output| -> Point3 {
        let v: Vec<f64> = String::from_utf8(o.stdout).unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
        Point3::new(v[0], v[1], v[2])
    };
    let p = Point3::new(0.02, -0.01, 0.04);
    let q = parse(rigcal(&["transform", c, "PSM2", "CAM", &p.x.to_string(), &p.y.to_string(), &p.z.to_string()]));
    let back = parse(rigcal(&["transform", c, "CAM", "PSM2", &q.x.to_string(), &q.y.to_string(), &q.z.to_string()]));
    if back.distance(&p) > 1e-9 {
        return Err("CLI transform round trip");
    }

    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"grasp": {"repetitions": 3}, "trajectory": {"repetitions": 3, "waypoints": 36}, "consistency": {"repetitions": 3}}"#).unwrap();
    let files = ["summary.json", "table1.csv", "table2.csv", "trajectories.csv"];
    let run_simulate = |out: &str| {
        let d = dir.path().join(out);
        let o = rigcal(&["simulate", cfg.to_str().unwrap(), "--output-dir", d.to_str().unwrap()]);
        (o.status.code(), files.map(|f| std::fs::read(d.join(f)).unwrap_or_default()))
    };
    let (code, a) = run_simulate("a");
    let (_, b) = run_simulate("b");
    if code != Some(0) || a != b {
        return Err("CLI simulate determinism");
    }
    Ok(())
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("error decomposition", Duration::from_secs(1), decomposition),
        ("grasp table statistics", Duration::from_secs(1), grasp_table_statistics),
        ("noiseless oracle equivalence", Duration::from_secs(10), noiseless_oracle),
        ("frame vs correspondence cross-consistency", Duration::from_secs(30), cross_consistency),
        ("RANSAC robustness", Duration::from_secs(5), ransac_robustness),
        ("grasp error band", Duration::from_secs(60), grasp_band),
        ("trajectory deviation trend", Duration::from_secs(60), trajectory_trend),
        ("invariant suites", Duration::from_secs(30), invariant_suites),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let on_time = elapsed <= *budget;
        let pass = o.pass && on_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {} [{:.2}s, budget {}s{}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if on_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
