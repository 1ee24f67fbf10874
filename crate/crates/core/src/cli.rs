//! Command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable or invalid input, 3 degenerate
//! geometry, 4 unknown tool. Warnings go to stderr and never change the code.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, ErrorClass, Result};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use crate::frame::{calibrate, ToolId};
use crate::geom::Point3;
use crate::io::{self, CalibrationFile, GraspRow, Units};
use crate::metrics::{error_stats, plane_consistency_check, DeviationRow, ErrorStats};
use crate::par::Execution;
use crate::sim::{PSM1, PSM2};

#[derive(Debug, Parser)]
#[command(name = "rigcal", version, about = "Rigid multi-tool calibration from touched board points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate every tool of a session into the common frame.
    Calibrate {
        session: PathBuf,
        /// Defaults to `calibration.json` next to the session file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the simulated grasping and trajectory experiments.
    Simulate {
        config: PathBuf,
        /// Defaults to `report/` next to the config file.
        #[arg(short = 'd', long)]
        output_dir: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run trials on the current thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Map one point from one tool frame to another (`common` names the common frame).
    #[command(allow_negative_numbers = true)]
    Transform {
        calibration: PathBuf,
        from: String,
        to: String,
        x: f64,
        y: f64,
        z: f64,
        #[arg(long, value_enum, default_value = "m")]
        units: Units,
    },
    /// Map fresh touches into the common frame and compare the tools.
    Evaluate {
        calibration: PathBuf,
        /// `TOOL=PATH` measurement files (same layout as for `calibrate`).
        #[arg(required = true, num_args = 2..)]
        measurements: Vec<String>,
        /// Units of CSV measurement files.
        #[arg(long, value_enum, default_value = "m")]
        units: Units,
        /// Largest acceptable dot-to-dot distance between two tools, mm.
        #[arg(long, default_value_t = 0.8)]
        threshold_mm: f64,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Input => 2,
        ErrorClass::Geometry => 3,
        ErrorClass::Lookup => 4,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match dispatch(cli.command, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Calibrate { session, output } => {
            let output = output.unwrap_or_else(|| sibling(&session, "calibration.json"));
            cmd_calibrate(&session, &output, out, err).map(drop)
        }
        Command::Simulate {
            config,
            output_dir,
            seed,
            sequential,
        } => {
            let dir = output_dir.unwrap_or_else(|| sibling(&config, "report"));
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::default()
            };
            cmd_simulate(&config, &dir, seed, exec, out).map(drop)
        }
        Command::Transform {
            calibration,
            from,
            to,
            x,
            y,
            z,
            units,
        } => {
            let p = cmd_transform(&calibration, &from, &to, Point3::new(x, y, z), units)?;
            writeln!(out, "{} {} {}", p.x, p.y, p.z).map_err(stdout_error)
        }
        Command::Evaluate {
            calibration,
            measurements,
            units,
            threshold_mm,
        } => {
            let report = cmd_evaluate(&calibration, &measurements, units, threshold_mm)?;
            if !report.within_threshold {
                let _ = writeln!(err, "warning: tools disagree by more than {threshold_mm} mm");
            }
            writeln!(out, "{}", io::to_json(&report)).map_err(stdout_error)
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

pub fn cmd_calibrate(session: &Path, output: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<CalibrationFile> {
    let s = io::load_session(session)?;
    let result = calibrate(&s.measurements, &s.ransac)?;
    let file = CalibrationFile::from_result(&result, s.warn_threshold);
    io::write_text(output, &file.to_json())?;
    for c in file.cross_check.iter().filter(|c| c.warning) {
        let _ = writeln!(
            err,
            "warning: {} / {} cross-check disagrees by {:.3} mm ({:.3} deg); check the touch order",
            c.a,
            c.b,
            c.translation_m * 1e3,
            c.rotation_rad.to_degrees()
        );
    }
    let _ = writeln!(out, "wrote {}", output.display());
    for (tool, t) in &file.tools {
        let _ = writeln!(
            out,
            "{tool}: {} inliers, plane rms {:.4} mm",
            t.inliers.len(),
            t.residual_rms_m * 1e3
        );
    }
    Ok(file)
}

/// Headline numbers written to `summary.json`.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub grasp: Option<GraspSummary>,
    pub trajectory: Option<TrajectorySummary>,
    pub consistency: Option<ConsistencySummary>,
}

#[derive(Debug, Serialize)]
pub struct GraspSummary {
    pub trials: usize,
    pub error_mm: ErrorStats,
    pub intrinsic_mm: ErrorStats,
    /// Total error with the kinematic part removed in quadrature.
    pub calibration_error_mm: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrajectorySummary {
    pub repetitions: usize,
    pub table: Vec<DeviationRow>,
    pub nondecreasing_fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct ConsistencySummary {
    pub distance_mm: ErrorStats,
    pub threshold_mm: f64,
    pub within_threshold_fraction: f64,
}

pub fn summarize(seed: u64, r: &ExperimentReport) -> Summary {
    Summary {
        seed,
        grasp: r.grasp.as_ref().map(|g| GraspSummary {
            trials: g.errors_mm.len(),
            error_mm: g.total,
            intrinsic_mm: g.intrinsic,
            calibration_error_mm: g.calibration_error_mm,
        }),
        trajectory: r.trajectory.as_ref().map(|t| TrajectorySummary {
            repetitions: t.repetitions.len(),
            table: t.table.clone(),
            nondecreasing_fraction: t.nondecreasing_fraction,
        }),
        consistency: r.consistency.as_ref().map(|c| ConsistencySummary {
            distance_mm: c.stats,
            threshold_mm: c.threshold_mm,
            within_threshold_fraction: c.within_threshold_fraction,
        }),
    }
}

/// Writes `summary.json`, `table1.csv` (grasp), `table2.csv` and
/// `trajectories.csv` (trajectory) into `dir`.
pub fn cmd_simulate(config: &Path, dir: &Path, seed: Option<u64>, exec: Execution, out: &mut dyn Write) -> Result<Summary> {
    let mut cfg: ExperimentConfig = io::read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()
        .map_err(|e| Error::parse(config.display().to_string(), e))?;
    let report = run_experiment(&cfg, exec)?;

    if let Some(g) = &report.grasp {
        let rows = g.records.iter().flat_map(|r| {
            let t = &r.trial;
            [
                GraspRow {
                    tool: PSM1,
                    reached: t.reached_psm1,
                    error: t.error_psm1(),
                },
                GraspRow {
                    tool: PSM2,
                    reached: t.reached_psm2,
                    error: t.error_psm2(),
                },
            ]
        });
        io::write_text(&dir.join("table1.csv"), &io::table1_csv(rows))?;
    }
    if let Some(t) = &report.trajectory {
        io::write_text(&dir.join("table2.csv"), &io::table2_csv(&t.table))?;
        io::write_text(&dir.join("trajectories.csv"), &io::trajectories_csv(&t.example))?;
    }
    let summary = summarize(cfg.seed, &report);
    io::write_json(&dir.join("summary.json"), &summary)?;

    if let Some(g) = &summary.grasp {
        let _ = writeln!(
            out,
            "grasp: {} trials, error {:.3} mm (std {:.3}, max {:.3})",
            g.trials, g.error_mm.mean, g.error_mm.std, g.error_mm.max
        );
        if let Some(c) = g.calibration_error_mm {
            let _ = writeln!(out, "grasp: calibration share {c:.3} mm");
        }
    }
    if let Some(t) = &summary.trajectory {
        for row in &t.table {
            let _ = writeln!(
                out,
                "trajectory r={} mm: std {:.4} mm, max dev {:.4} mm",
                row.radius_mm, row.std_dev_mm, row.max_dev_mm
            );
        }
    }
    if let Some(c) = &summary.consistency {
        let _ = writeln!(
            out,
            "consistency: mean {:.3} mm, max {:.3} mm",
            c.distance_mm.mean, c.distance_mm.max
        );
    }
    let _ = writeln!(out, "wrote {}", dir.display());
    Ok(summary)
}

pub fn cmd_transform(calibration: &Path, from: &str, to: &str, p: Point3, units: Units) -> Result<Point3> {
    let calib = CalibrationFile::read(calibration)?;
    let t = calib.tool_to_tool(from, to)?;
    Ok(units.from_meters(t.apply(&units.to_meters(p))))
}

#[derive(Debug, Serialize)]
pub struct ToolEvaluation {
    pub dots: usize,
    /// Largest |z| of a dot in the common frame, mm.
    pub max_height_mm: f64,
    /// Distance of the dot centroid from the common origin, mm.
    pub centroid_offset_mm: f64,
}

#[derive(Debug, Serialize)]
pub struct PairEvaluation {
    pub a: String,
    pub b: String,
    /// Distances between matching dots in the common frame, mm.
    pub distance_mm: ErrorStats,
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub tools: BTreeMap<String, ToolEvaluation>,
    pub pairs: Vec<PairEvaluation>,
    pub threshold_mm: f64,
    pub within_threshold: bool,
}

fn parse_assignment(arg: &str) -> Result<(ToolId, PathBuf)> {
    let (tool, path) = arg
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("expected TOOL=PATH, got `{arg}`")))?;
    Ok((ToolId::new(tool)?, PathBuf::from(path)))
}

pub fn cmd_evaluate(calibration: &Path, measurements: &[String], units: Units, threshold_mm: f64) -> Result<Evaluation> {
    let calib = CalibrationFile::read(calibration)?;
    let mut mapped: BTreeMap<String, Vec<Point3>> = BTreeMap::new();
    for arg in measurements {
        let (tool, path) = parse_assignment(arg)?;
        let t = calib.tool_to_common(tool.as_str())?;
        let m = io::read_measurement(&path, tool.clone(), Some(units))?;
        if m.dot_points().len() != calib.dot_count {
            return Err(Error::for_tool(
                tool.as_str(),
                Error::OrderMismatch(format!(
                    "{} dots touched, calibration has {}",
                    m.dot_points().len(),
                    calib.dot_count
                )),
            ));
        }
        if mapped
            .insert(tool.to_string(), t.apply_all(m.dot_points()))
            .is_some()
        {
            return Err(Error::InvalidInput(format!("tool `{tool}` given twice")));
        }
    }
    let tools = mapped
        .iter()
        .map(|(name, pts)| {
            let heights: Vec<f64> = pts.iter().map(|p| p.z.abs() * 1e3).collect();
            let centroid = pts.iter().fold(Point3::ORIGIN, |a, p| a + *p) / pts.len() as f64;
            let eval = ToolEvaluation {
                dots: pts.len(),
                max_height_mm: error_stats(&heights)?.max,
                centroid_offset_mm: centroid.norm() * 1e3,
            };
            Ok((name.clone(), eval))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let names: Vec<&String> = mapped.keys().collect();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let mm = |v: &Vec<Point3>| v.iter().map(|p| *p * 1e3).collect::<Vec<_>>();
            pairs.push(PairEvaluation {
                a: a.to_string(),
                b: b.to_string(),
                distance_mm: plane_consistency_check(&mm(&mapped[*a]), &mm(&mapped[*b]))?,
            });
        }
    }
    let within_threshold = pairs.iter().all(|p| p.distance_mm.max <= threshold_mm);
    Ok(Evaluation {
        tools,
        pairs,
        threshold_mm,
        within_threshold,
    })
}
