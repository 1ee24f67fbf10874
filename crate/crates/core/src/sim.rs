//! Synthetic scenes with known ground truth, and simulated versions of the
//! grasping and dual-arm trajectory experiments.
//!
//! World frame is arbitrary; every tool pose and the board pose map their
//! local frame into it. All randomness comes from seeded ChaCha streams, and
//! per-trial streams are derived from a master seed with [`derive_seed`] so
//! results do not depend on evaluation order.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::board::{board_points_marker_frame, BoardModel};
use crate::error::{Error, Result};
use crate::frame::{CalibrationResult, MeasurementSet, ToolId};
use crate::geom::{Point3, RigidTransform, UnitQuaternion};
use crate::par::{self, Execution};

pub const PSM1: &str = "PSM1";
pub const PSM2: &str = "PSM2";
pub const CAMERA: &str = "CAM";

/// Kinematic precision of the arms used by default, meters.
pub const DEFAULT_KINEMATIC_SIGMA: f64 = 1.02e-3;
pub const DEFAULT_RING_DIAMETER: f64 = 0.015;

/// SplitMix64 finalizer over `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// Isotropic Gaussian noise with std `sigma0 + k·‖p‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Baseline std, meters.
    pub sigma0: f64,
    /// Growth of the std per meter of `‖p‖`.
    pub k: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma0: f64, k: f64, seed: u64) -> Result<Self> {
        let m = Self { sigma0, k, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn none() -> Self {
        Self {
            sigma0: 0.0,
            k: 0.0,
            seed: 0,
        }
    }

    pub fn isotropic(sigma0: f64, seed: u64) -> Self {
        Self { sigma0, k: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0 && self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise parameters must be finite and nonnegative (sigma0={}, k={})",
                self.sigma0, self.k
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0 == 0.0 && self.k == 0.0
    }

    pub fn sigma_at(&self, p: &Point3) -> f64 {
        self.sigma0 + self.k * p.norm()
    }

    /// A noise vector with std `sigma_at(at)` per axis.
    pub fn sample<R: Rng>(&self, at: &Point3, rng: &mut R) -> Point3 {
        let s = self.sigma_at(at);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        Point3::new(x, y, z) * s
    }

    pub fn perturb<R: Rng>(&self, p: &Point3, rng: &mut R) -> Point3 {
        *p + self.sample(p, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthScene {
    /// Tool frame -> world.
    pub true_poses: BTreeMap<ToolId, RigidTransform>,
    /// Board (marker) frame -> world.
    pub board_pose: RigidTransform,
    pub board: BoardModel,
}

impl GroundTruthScene {
    pub fn tools(&self) -> impl Iterator<Item = &ToolId> {
        self.true_poses.keys()
    }

    pub fn pose(&self, tool: &ToolId) -> Result<RigidTransform> {
        self.true_poses
            .get(tool)
            .copied()
            .ok_or_else(|| Error::UnknownTool(tool.to_string()))
    }

    /// True pose of the common frame in the world.
    ///
    /// The common frame coincides with the marker frame rotated so that x
    /// points at the first dot; dots are symmetric so the origin is the
    /// marker center.
    pub fn common_pose(&self) -> RigidTransform {
        let first = self.board.dot_angles()[0];
        self.board_pose
            .compose(&RigidTransform::from_rotation(UnitQuaternion::rot_z(first)))
    }

    /// Ground-truth map from tool-`a` to tool-`b` coordinates.
    pub fn relative_pose(&self, a: &ToolId, b: &ToolId) -> Result<RigidTransform> {
        Ok(self.pose(b)?.inverse().compose(&self.pose(a)?))
    }

    /// Ground-truth map from tool coordinates to common-frame coordinates.
    pub fn tool_to_common(&self, tool: &ToolId) -> Result<RigidTransform> {
        Ok(self.common_pose().inverse().compose(&self.pose(tool)?))
    }

    /// Dots in touch order, then the above-point, in the tool frame.
    pub fn board_points_in_tool(&self, tool: &ToolId) -> Result<Vec<Point3>> {
        let to_tool = self.pose(tool)?.inverse().compose(&self.board_pose);
        Ok(to_tool.apply_all(&board_points_marker_frame(&self.board)))
    }
}

/// `PSM1`, `PSM2`, `CAM`, then `PSM3`, `PSM4`, …
pub fn default_tool_names(n_tools: usize) -> Vec<ToolId> {
    (0..n_tools)
        .map(|i| match i {
            0 => PSM1.to_string(),
            1 => PSM2.to_string(),
            2 => CAMERA.to_string(),
            i => format!("PSM{i}"),
        })
        .map(|s| ToolId::new(s).expect("static names are nonempty"))
        .collect()
}

fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if let Ok(q) = UnitQuaternion::from_wxyz(q) {
            return q;
        }
    }
}

fn uniform_cube<R: Rng>(rng: &mut R, half: f64) -> Point3 {
    Point3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

pub fn make_scene(seed: u64, n_tools: usize) -> Result<GroundTruthScene> {
    make_scene_with_board(seed, n_tools, BoardModel::default())
}

/// Tools get uniform random orientations and positions in a 0.3 m cube
/// around the world origin; the board sits within 5 cm of the origin,
/// tilted by at most ~30°.
pub fn make_scene_with_board(seed: u64, n_tools: usize, board: BoardModel) -> Result<GroundTruthScene> {
    if n_tools < 2 {
        return Err(Error::InvalidInput(format!("a scene needs at least 2 tools, got {n_tools}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tilt_dir = rng.random_range(0.0..TAU);
    let tilt = UnitQuaternion::from_axis_angle(
        Point3::new(tilt_dir.cos(), tilt_dir.sin(), 0.0),
        rng.random_range(0.0..0.5),
    )?;
    let yaw = UnitQuaternion::rot_z(rng.random_range(0.0..TAU));
    let board_pose = RigidTransform::new(tilt.mul(&yaw), uniform_cube(&mut rng, 0.05));

    let true_poses = default_tool_names(n_tools)
        .into_iter()
        .map(|t| {
            let pose = RigidTransform::new(random_rotation(&mut rng), uniform_cube(&mut rng, 0.15));
            (t, pose)
        })
        .collect();
    Ok(GroundTruthScene {
        true_poses,
        board_pose,
        board,
    })
}

/// Each tool touches the dots in order and then the above-point; every
/// touch is perturbed by `noise` evaluated at the tool-frame position.
pub fn simulate_measurements(scene: &GroundTruthScene, noise: &NoiseModel) -> Result<Vec<MeasurementSet>> {
    noise.validate()?;
    scene
        .tools()
        .enumerate()
        .map(|(i, tool)| {
            let mut rng = rng_for(noise.seed, i as u64);
            let pts = scene
                .board_points_in_tool(tool)?
                .iter()
                .map(|p| noise.perturb(p, &mut rng))
                .collect();
            MeasurementSet::from_ordered(tool.clone(), pts)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspNoise {
    /// Camera observation of the ring, camera frame.
    pub camera: NoiseModel,
    /// End-effector positioning, arm frame.
    pub kinematic: NoiseModel,
}

impl GraspNoise {
    pub fn none() -> Self {
        Self {
            camera: NoiseModel::none(),
            kinematic: NoiseModel::none(),
        }
    }
}

/// One ring placement. Points are true positions in the common frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspTrial {
    pub ring_center: Point3,
    pub ring_diameter: f64,
    pub target_psm1: Point3,
    pub target_psm2: Point3,
    pub reached_psm1: Point3,
    pub reached_psm2: Point3,
    /// Magnitude of the kinematic error alone, per arm.
    pub intrinsic_psm1: f64,
    pub intrinsic_psm2: f64,
}

impl GraspTrial {
    pub fn error_psm1(&self) -> f64 {
        self.reached_psm1.distance(&self.target_psm1)
    }

    pub fn error_psm2(&self) -> f64 {
        self.reached_psm2.distance(&self.target_psm2)
    }
}

/// Center, two positions on each side, four corners (common frame, meters).
pub fn default_ring_centers() -> Vec<Point3> {
    let s = 0.03;
    vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(0.0, s, 0.0),
        Point3::new(0.0, -s, 0.0),
        Point3::new(s, 0.0, 0.0),
        Point3::new(-s, 0.0, 0.0),
        Point3::new(s, s, 0.0),
        Point3::new(s, -s, 0.0),
        Point3::new(-s, s, 0.0),
        Point3::new(-s, -s, 0.0),
    ]
}

fn tool_id(name: &str) -> ToolId {
    ToolId::new(name).expect("static names are nonempty")
}

/// The camera locates the grasp points on the ring (rightmost for PSM1,
/// leftmost for PSM2, along the common-frame y axis); each arm is sent to
/// its point through the calibration and lands with kinematic error.
pub fn run_grasp_experiment(
    scene: &GroundTruthScene,
    calib: &CalibrationResult,
    ring_centers: &[Point3],
    ring_diameter: f64,
    noise: &GraspNoise,
) -> Result<Vec<GraspTrial>> {
    run_grasp_experiment_with(scene, calib, ring_centers, ring_diameter, noise, Execution::default())
}

pub fn run_grasp_experiment_with(
    scene: &GroundTruthScene,
    calib: &CalibrationResult,
    ring_centers: &[Point3],
    ring_diameter: f64,
    noise: &GraspNoise,
    exec: Execution,
) -> Result<Vec<GraspTrial>> {
    if !(ring_diameter.is_finite() && ring_diameter > 0.0) {
        return Err(Error::InvalidInput(format!("ring diameter must be positive, got {ring_diameter}")));
    }
    noise.camera.validate()?;
    noise.kinematic.validate()?;
    let (cam, psm1, psm2) = (tool_id(CAMERA), tool_id(PSM1), tool_id(PSM2));
    let cam_to = [calib.tool_to_tool(&cam, &psm1)?, calib.tool_to_tool(&cam, &psm2)?];
    let arm_pose = [scene.pose(&psm1)?, scene.pose(&psm2)?];
    let cam_pose = scene.pose(&cam)?;
    let common = scene.common_pose();
    let world_to_common = common.inverse();
    let world_to_cam = cam_pose.inverse();

    let trials = par::map_indexed(ring_centers.len(), exec, |i| {
        let mut cam_rng = rng_for(noise.camera.seed, i as u64);
        let mut kin_rng = rng_for(noise.kinematic.seed, i as u64);
        let center = ring_centers[i];
        let half = Point3::new(0.0, ring_diameter / 2.0, 0.0);
        let targets = [center - half, center + half];
        let mut reached = [Point3::ORIGIN; 2];
        let mut intrinsic = [0.0; 2];
        for arm in 0..2 {
            let seen = world_to_cam.apply(&common.apply(&targets[arm]));
            let observed = noise.camera.perturb(&seen, &mut cam_rng);
            let commanded = cam_to[arm].apply(&observed);
            let err = noise.kinematic.sample(&commanded, &mut kin_rng);
            intrinsic[arm] = err.norm();
            reached[arm] = world_to_common.apply(&arm_pose[arm].apply(&(commanded + err)));
        }
        GraspTrial {
            ring_center: center,
            ring_diameter,
            target_psm1: targets[0],
            target_psm2: targets[1],
            reached_psm1: reached[0],
            reached_psm2: reached[1],
            intrinsic_psm1: intrinsic[0],
            intrinsic_psm2: intrinsic[1],
        }
    });
    Ok(trials)
}

/// Circle geometry shared by every radius of a trajectory experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySetup {
    /// Shared first waypoint, common frame.
    pub start: Point3,
    pub waypoints: usize,
}

impl Default for TrajectorySetup {
    fn default() -> Self {
        Self {
            start: Point3::new(0.0, 0.0, 0.03),
            waypoints: 360,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrial {
    pub radius: f64,
    /// Commanded circle, common frame.
    pub waypoints: Vec<Point3>,
    /// Where each arm actually went, true common frame.
    pub executed: BTreeMap<ToolId, Vec<Point3>>,
}

/// Circle in the common x–z plane through `start`, starting there.
pub fn circle_waypoints(start: Point3, radius: f64, n: usize) -> Vec<Point3> {
    let center = start + Point3::new(radius, 0.0, 0.0);
    (0..n)
        .map(|j| {
            let phi = TAU * j as f64 / n as f64;
            center + Point3::new(-radius * phi.cos(), 0.0, radius * phi.sin())
        })
        .collect()
}

/// Both arms follow the same circle, commanded through their calibrated
/// frames. Kinematic noise std grows with the commanded displacement from
/// the shared start position (the arm's distance from its initial
/// configuration), evaluated in the arm frame.
pub fn run_trajectory_experiment(
    scene: &GroundTruthScene,
    calib: &CalibrationResult,
    radii: &[f64],
    setup: &TrajectorySetup,
    noise: &NoiseModel,
) -> Result<Vec<TrajectoryTrial>> {
    run_trajectory_experiment_with(scene, calib, radii, setup, noise, Execution::default())
}

pub fn run_trajectory_experiment_with(
    scene: &GroundTruthScene,
    calib: &CalibrationResult,
    radii: &[f64],
    setup: &TrajectorySetup,
    noise: &NoiseModel,
    exec: Execution,
) -> Result<Vec<TrajectoryTrial>> {
    noise.validate()?;
    if setup.waypoints < 2 {
        return Err(Error::InvalidInput("a trajectory needs at least 2 waypoints".into()));
    }
    if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
    }
    let arms = [tool_id(PSM1), tool_id(PSM2)];
    let mut plan = Vec::with_capacity(2);
    for arm in &arms {
        let common_to_arm = calib.tool_to_common(arm)?.inverse();
        plan.push((arm.clone(), common_to_arm, scene.tool_to_common(arm)?));
    }

    let trials = par::map_indexed(radii.len(), exec, |ri| {
        let radius = radii[ri];
        let waypoints = circle_waypoints(setup.start, radius, setup.waypoints);
        let mut executed = BTreeMap::new();
        for (ai, (arm, common_to_arm, truth_to_common)) in plan.iter().enumerate() {
            let mut rng = rng_for(noise.seed, (ri * arms.len() + ai) as u64);
            let home = common_to_arm.apply(&setup.start);
            let path = waypoints
                .iter()
                .map(|w| {
                    let commanded = common_to_arm.apply(w);
                    let err = noise.sample(&(commanded - home), &mut rng);
                    truth_to_common.apply(&(commanded + err))
                })
                .collect();
            executed.insert(arm.clone(), path);
        }
        TrajectoryTrial {
            radius,
            waypoints,
            executed,
        }
    });
    Ok(trials)
}
