//! Repeated simulated experiments: every repetition draws a fresh scene,
//! calibrates it from noisy touches and runs the grasping, dual-arm
//! trajectory and two-arm consistency tests against ground truth.
//!
//! Configuration values are millimeters; everything is converted to meters
//! before it reaches [`crate::sim`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{calibrate_with, CalibrationResult, ToolId};
use crate::geom::Point3;
use crate::io::BoardFile;
use crate::metrics::{decompose_error, error_stats, plane_consistency_check, trajectory_deviation, DeviationRow, ErrorStats};
use crate::par::{self, Execution};
use crate::registration::RansacParams;
use crate::sim::{
    default_ring_centers, derive_seed, make_scene_with_board, run_grasp_experiment_with,
    run_trajectory_experiment_with, rng_for, simulate_measurements, GraspNoise, GraspTrial, GroundTruthScene, NoiseModel,
    TrajectorySetup, TrajectoryTrial, PSM1, PSM2,
};

const GRASP_STREAM: u64 = 0x6752_4153;
const TRAJECTORY_STREAM: u64 = 0x5452_414a;
const CONSISTENCY_STREAM: u64 = 0x434f_4e53;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma0_mm: f64,
    #[serde(default)]
    pub k: f64,
}

impl NoiseSpec {
    pub const fn new(sigma0_mm: f64, k: f64) -> Self {
        Self { sigma0_mm, k }
    }

    pub fn model(&self, seed: u64) -> Result<NoiseModel> {
        NoiseModel::new(self.sigma0_mm * 1e-3, self.k, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSpec {
    pub inlier_threshold_mm: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
}

impl Default for RansacSpec {
    fn default() -> Self {
        let d = RansacParams::default();
        Self {
            inlier_threshold_mm: d.inlier_threshold * 1e3,
            max_iterations: d.max_iterations,
            min_inliers: d.min_inliers,
        }
    }
}

impl RansacSpec {
    pub fn params(&self, seed: u64) -> RansacParams {
        RansacParams {
            inlier_threshold: self.inlier_threshold_mm * 1e-3,
            max_iterations: self.max_iterations,
            min_inliers: self.min_inliers,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    pub repetitions: usize,
    pub ring_diameter_mm: f64,
    pub ring_centers_mm: Vec<[f64; 3]>,
    pub camera_noise: NoiseSpec,
    pub kinematic_noise: NoiseSpec,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            ring_diameter_mm: 15.0,
            ring_centers_mm: default_ring_centers()
                .iter()
                .map(|p| (*p * 1e3).to_array())
                .collect(),
            camera_noise: NoiseSpec::new(0.5, 0.0),
            kinematic_noise: NoiseSpec::new(1.02, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub repetitions: usize,
    pub radii_mm: Vec<f64>,
    pub waypoints: usize,
    pub start_mm: [f64; 3],
    /// Std grows with the commanded distance from the shared start.
    pub kinematic_noise: NoiseSpec,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            repetitions: 100,
            radii_mm: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            waypoints: 360,
            start_mm: [0.0, 0.0, 30.0],
            kinematic_noise: NoiseSpec::new(0.1, 0.02),
        }
    }
}

/// Both arms sent to the same common-frame points above the board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub repetitions: usize,
    pub height_mm: f64,
    pub reach_mm: f64,
    pub kinematic_noise: NoiseSpec,
    pub threshold_mm: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            height_mm: 50.0,
            reach_mm: 50.0,
            kinematic_noise: NoiseSpec::new(0.0, 0.0),
            threshold_mm: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_tools: usize,
    pub board: BoardFile,
    /// Noise on every calibration touch, tool frame.
    pub calibration_noise: NoiseSpec,
    pub ransac: RansacSpec,
    pub grasp: Option<GraspConfig>,
    pub trajectory: Option<TrajectoryConfig>,
    pub consistency: Option<ConsistencyConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tools: 3,
            board: BoardFile::default(),
            calibration_noise: NoiseSpec::new(0.5, 0.0),
            ransac: RansacSpec::default(),
            grasp: Some(GraspConfig::default()),
            trajectory: Some(TrajectoryConfig::default()),
            consistency: Some(ConsistencyConfig::default()),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.board.to_model()?;
        self.calibration_noise.model(0)?;
        self.ransac.params(0).validate()?;
        if let Some(g) = &self.grasp {
            if self.n_tools < 3 {
                return Err(Error::InvalidInput("the grasp experiment needs 3 tools (PSM1, PSM2, CAM)".into()));
            }
            if g.repetitions == 0 || g.ring_centers_mm.is_empty() {
                return Err(Error::InvalidInput("grasp: repetitions and ring_centers_mm must be nonempty".into()));
            }
            if !(g.ring_diameter_mm > 0.0) {
                return Err(Error::InvalidInput("grasp: ring_diameter_mm must be positive".into()));
            }
            g.camera_noise.model(0)?;
            g.kinematic_noise.model(0)?;
        }
        if let Some(t) = &self.trajectory {
            if t.repetitions == 0 || t.radii_mm.is_empty() || t.waypoints < 2 {
                return Err(Error::InvalidInput(
                    "trajectory: repetitions, radii_mm and waypoints (>= 2) are required".into(),
                ));
            }
            if t.radii_mm.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::InvalidInput("trajectory: radii must be positive".into()));
            }
            t.kinematic_noise.model(0)?;
        }
        if let Some(c) = &self.consistency {
            if c.repetitions == 0 {
                return Err(Error::InvalidInput("consistency: repetitions must be positive".into()));
            }
            c.kinematic_noise.model(0)?;
        }
        if self.n_tools < 2 {
            return Err(Error::InvalidInput("n_tools must be at least 2".into()));
        }
        Ok(())
    }
}

fn mm(p: [f64; 3]) -> Point3 {
    Point3::from_array(p) * 1e-3
}

/// Scene and its calibration from noisy touches for one repetition seed.
pub fn calibrated_scene(cfg: &ExperimentConfig, seed: u64) -> Result<(GroundTruthScene, CalibrationResult)> {
    let scene = make_scene_with_board(derive_seed(seed, 0), cfg.n_tools, cfg.board.to_model()?)?;
    let noise = cfg.calibration_noise.model(derive_seed(seed, 1))?;
    let sets = simulate_measurements(&scene, &noise)?;
    let calib = calibrate_with(&sets, &cfg.ransac.params(derive_seed(seed, 2)), Execution::Sequential)?;
    Ok((scene, calib))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub repetition: usize,
    pub trial: GraspTrial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspStudy {
    pub records: Vec<GraspRecord>,
    /// All per-arm errors, mm, in record order (PSM1 then PSM2 per trial).
    pub errors_mm: Vec<f64>,
    pub total: ErrorStats,
    /// Magnitudes of the kinematic error alone, mm.
    pub intrinsic: ErrorStats,
    /// `decompose_error(total.mean, intrinsic.mean)`, if defined.
    pub calibration_error_mm: Option<f64>,
}

pub fn grasp_study(cfg: &ExperimentConfig, exec: Execution) -> Result<GraspStudy> {
    cfg.validate()?;
    let g = cfg
        .grasp
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("grasp experiment disabled".into()))?;
    let centers: Vec<Point3> = g.ring_centers_mm.iter().map(|c| mm(*c)).collect();
    let master = derive_seed(cfg.seed, GRASP_STREAM);

    let per_rep = par::map_indexed(g.repetitions, exec, |r| -> Result<Vec<GraspTrial>> {
        let seed = derive_seed(master, r as u64);
        let (scene, calib) = calibrated_scene(cfg, seed)?;
        let noise = GraspNoise {
            camera: g.camera_noise.model(derive_seed(seed, 3))?,
            kinematic: g.kinematic_noise.model(derive_seed(seed, 4))?,
        };
        run_grasp_experiment_with(&scene, &calib, &centers, g.ring_diameter_mm * 1e-3, &noise, Execution::Sequential)
    });

    let mut records = Vec::new();
    let mut errors_mm = Vec::new();
    let mut intrinsic_mm = Vec::new();
    for (repetition, trials) in per_rep.into_iter().enumerate() {
        for trial in trials? {
            errors_mm.extend([trial.error_psm1() * 1e3, trial.error_psm2() * 1e3]);
            intrinsic_mm.extend([trial.intrinsic_psm1 * 1e3, trial.intrinsic_psm2 * 1e3]);
            records.push(GraspRecord { repetition, trial });
        }
    }
    let total = error_stats(&errors_mm)?;
    let intrinsic = error_stats(&intrinsic_mm)?;
    Ok(GraspStudy {
        records,
        errors_mm,
        calibration_error_mm: decompose_error(total.mean, intrinsic.mean).ok(),
        total,
        intrinsic,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStudy {
    /// One table per repetition, rows in radius order.
    pub repetitions: Vec<Vec<DeviationRow>>,
    /// Per-radius mean over repetitions.
    pub table: Vec<DeviationRow>,
    /// Share of repetitions whose std column never decreases.
    pub nondecreasing_fraction: f64,
    /// Trials of the first repetition, for plotting.
    pub example: Vec<TrajectoryTrial>,
}

pub fn is_nondecreasing(rows: &[DeviationRow]) -> bool {
    rows.windows(2).all(|w| w[1].std_dev_mm >= w[0].std_dev_mm)
}

pub fn trajectory_study(cfg: &ExperimentConfig, exec: Execution) -> Result<TrajectoryStudy> {
    cfg.validate()?;
    let t = cfg
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trajectory experiment disabled".into()))?;
    let radii: Vec<f64> = t.radii_mm.iter().map(|r| r * 1e-3).collect();
    let setup = TrajectorySetup {
        start: mm(t.start_mm),
        waypoints: t.waypoints,
    };
    let master = derive_seed(cfg.seed, TRAJECTORY_STREAM);
    let (a, b) = (ToolId::new(PSM1)?, ToolId::new(PSM2)?);

    let per_rep = par::map_indexed(t.repetitions, exec, |r| -> Result<(Vec<DeviationRow>, Vec<TrajectoryTrial>)> {
        let seed = derive_seed(master, r as u64);
        let (scene, calib) = calibrated_scene(cfg, seed)?;
        let noise = t.kinematic_noise.model(derive_seed(seed, 3))?;
        let trials = run_trajectory_experiment_with(&scene, &calib, &radii, &setup, &noise, Execution::Sequential)?;
        let rows = trials
            .iter()
            .map(|tr| {
                let d = trajectory_deviation(&tr.executed[&a], &tr.executed[&b])?;
                Ok(DeviationRow {
                    radius_mm: tr.radius * 1e3,
                    std_dev_mm: d.std_dev * 1e3,
                    max_dev_mm: d.max_dev * 1e3,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((rows, if r == 0 { trials } else { Vec::new() }))
    });

    let mut repetitions = Vec::with_capacity(t.repetitions);
    let mut example = Vec::new();
    for (r, res) in per_rep.into_iter().enumerate() {
        let (rows, trials) = res?;
        if r == 0 {
            example = trials;
        }
        repetitions.push(rows);
    }
    let n = repetitions.len() as f64;
    let table = (0..radii.len())
        .map(|i| DeviationRow {
            radius_mm: t.radii_mm[i],
            std_dev_mm: repetitions.iter().map(|rows| rows[i].std_dev_mm).sum::<f64>() / n,
            max_dev_mm: repetitions.iter().map(|rows| rows[i].max_dev_mm).sum::<f64>() / n,
        })
        .collect();
    let nondecreasing_fraction = repetitions.iter().filter(|rows| is_nondecreasing(rows)).count() as f64 / n;
    Ok(TrajectoryStudy {
        repetitions,
        table,
        nondecreasing_fraction,
        example,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStudy {
    /// Distances between the two arms over all repetitions, mm.
    pub stats: ErrorStats,
    pub threshold_mm: f64,
    /// Share of repetitions whose largest distance stays below the threshold.
    pub within_threshold_fraction: f64,
}

/// Common-frame targets: the point above the origin and eight around it.
pub fn consistency_targets(height: f64, reach: f64) -> Vec<Point3> {
    let mut pts = vec![Point3::new(0.0, 0.0, height)];
    pts.extend((0..8).map(|i| {
        let a = i as f64 * std::f64::consts::FRAC_PI_4;
        Point3::new(reach * a.cos(), reach * a.sin(), height)
    }));
    pts
}

pub fn consistency_study(cfg: &ExperimentConfig, exec: Execution) -> Result<ConsistencyStudy> {
    cfg.validate()?;
    let c = cfg
        .consistency
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("consistency experiment disabled".into()))?;
    let targets = consistency_targets(c.height_mm * 1e-3, c.reach_mm * 1e-3);
    let master = derive_seed(cfg.seed, CONSISTENCY_STREAM);
    let arms = [ToolId::new(PSM1)?, ToolId::new(PSM2)?];

    let per_rep = par::map_indexed(c.repetitions, exec, |r| -> Result<ErrorStats> {
        let seed = derive_seed(master, r as u64);
        let (scene, calib) = calibrated_scene(cfg, seed)?;
        let mut reached: Vec<Vec<Point3>> = Vec::with_capacity(2);
        for (i, arm) in arms.iter().enumerate() {
            let noise = c.kinematic_noise.model(0)?;
            let mut rng = rng_for(seed, 3 + i as u64);
            let common_to_arm = calib.tool_to_common(arm)?.inverse();
            let truth = scene.tool_to_common(arm)?;
            reached.push(
                targets
                    .iter()
                    .map(|p| {
                        let cmd = common_to_arm.apply(p);
                        truth.apply(&noise.perturb(&cmd, &mut rng)) * 1e3
                    })
                    .collect(),
            );
        }
        plane_consistency_check(&reached[0], &reached[1])
    });
    let mut distances_max = Vec::with_capacity(per_rep.len());
    let mut all = Vec::new();
    for s in per_rep {
        let s = s?;
        distances_max.push(s.max);
        all.push(s);
    }
    // pooled statistics from the per-repetition summaries
    let n: usize = all.iter().map(|s| s.n).sum();
    let mean = all.iter().map(|s| s.mean * s.n as f64).sum::<f64>() / n as f64;
    let ss: f64 = all
        .iter()
        .map(|s| (s.n as f64 - 1.0) * s.std * s.std + s.n as f64 * (s.mean - mean).powi(2))
        .sum();
    let stats = ErrorStats {
        mean,
        std: if n > 1 { (ss / (n as f64 - 1.0)).sqrt() } else { 0.0 },
        max: distances_max.iter().copied().fold(0.0, f64::max),
        n,
    };
    let within = distances_max.iter().filter(|m| **m < c.threshold_mm).count() as f64 / distances_max.len() as f64;
    Ok(ConsistencyStudy {
        stats,
        threshold_mm: c.threshold_mm,
        within_threshold_fraction: within,
    })
}

/// Everything `simulate` reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub grasp: Option<GraspStudy>,
    pub trajectory: Option<TrajectoryStudy>,
    pub consistency: Option<ConsistencyStudy>,
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    Ok(ExperimentReport {
        grasp: cfg.grasp.as_ref().map(|_| grasp_study(cfg, exec)).transpose()?,
        trajectory: cfg.trajectory.as_ref().map(|_| trajectory_study(cfg, exec)).transpose()?,
        consistency: cfg.consistency.as_ref().map(|_| consistency_study(cfg, exec)).transpose()?,
    })
}
