//! Common reference frame construction shared by every tool that touched the
//! board, and the pairwise tool transforms derived from it.
//!
//! Per tool: RANSAC plane through the touched dots, origin at the centroid of
//! the inlier dots, z along the plane normal oriented toward the above-point,
//! x toward the first touched dot projected onto the plane, y = z × x.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, RigidTransform, UnitQuaternion};
use crate::par::{self, Execution};
use crate::registration::{centroid, kabsch_register, ransac_plane_with, PlaneFit, RansacParams};

/// Projections shorter than this leave the x axis undefined.
const AXIS_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ToolId(String);

impl ToolId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidInput("tool id must be nonempty".into()));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ToolId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ToolId::new(s)
    }
}

impl From<ToolId> for String {
    fn from(t: ToolId) -> String {
        t.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One tool's observations of the board, in that tool's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    tool: ToolId,
    dot_points: Vec<Point3>,
    above_point: Point3,
}

impl MeasurementSet {
    pub fn new(tool: ToolId, dot_points: Vec<Point3>, above_point: Point3) -> Result<Self> {
        let tag = |e| Error::for_tool(tool.as_str(), e);
        if dot_points.len() < 3 {
            return Err(tag(Error::DegenerateInput(format!(
                "need at least 3 dot points, got {}",
                dot_points.len()
            ))));
        }
        if dot_points.iter().chain([&above_point]).any(|p| !p.is_finite()) {
            return Err(tag(Error::InvalidInput("non-finite coordinate".into())));
        }
        Ok(Self {
            tool,
            dot_points,
            above_point,
        })
    }

    /// Splits an ordered list whose final element is the above-point.
    pub fn from_ordered(tool: ToolId, mut points: Vec<Point3>) -> Result<Self> {
        let above = points.pop().ok_or(Error::EmptyInput)?;
        Self::new(tool, points, above)
    }

    pub fn tool(&self) -> &ToolId {
        &self.tool
    }

    pub fn dot_points(&self) -> &[Point3] {
        &self.dot_points
    }

    pub fn above_point(&self) -> Point3 {
        self.above_point
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommonFrame {
    pub tool: ToolId,
    /// Maps tool-frame coordinates to common-frame coordinates.
    pub tool_to_common: RigidTransform,
    /// Plane fit in the tool frame, normal oriented toward the above-point.
    pub plane_fit: PlaneFit,
    /// Common-frame origin, tool frame.
    pub origin: Point3,
}

impl CommonFrame {
    /// Pose of the common frame in the tool frame.
    pub fn common_to_tool(&self) -> RigidTransform {
        self.tool_to_common.inverse()
    }
}

pub fn build_common_frame(m: &MeasurementSet, params: &RansacParams) -> Result<CommonFrame> {
    build_common_frame_with(m, params, Execution::default())
}

pub fn build_common_frame_with(
    m: &MeasurementSet,
    params: &RansacParams,
    exec: Execution,
) -> Result<CommonFrame> {
    let dots = m.dot_points();
    let mut fit = ransac_plane_with(dots, params, exec)?;

    let inlier_dots: Vec<Point3> = fit.inliers.iter().map(|&i| dots[i]).collect();
    let origin = centroid(&inlier_dots)?;

    let height = fit.plane.normal().dot(&(m.above_point() - origin));
    if height.abs() <= params.inlier_threshold {
        return Err(Error::DegenerateInput(
            "above-point lies on the board plane; normal direction undefined".into(),
        ));
    }
    if height < 0.0 {
        fit.plane = fit.plane.flipped();
    }
    let z = fit.plane.normal();

    let to_first = dots[0] - origin;
    let in_plane = to_first - z * to_first.dot(&z);
    if in_plane.norm() <= AXIS_EPSILON {
        return Err(Error::AmbiguousAxis);
    }
    let x = in_plane / in_plane.norm();
    let y = z.cross(&x);

    let r = Matrix3::from_columns(&[x.to_vector(), y.to_vector(), z.to_vector()]);
    let common_to_tool = RigidTransform::new(UnitQuaternion::from_rotation_matrix(&r), origin);
    Ok(CommonFrame {
        tool: m.tool().clone(),
        tool_to_common: common_to_tool.inverse(),
        plane_fit: fit,
        origin,
    })
}

/// Disagreement between the frame-based and the correspondence-based
/// transform of a tool pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// Largest displacement between the two mappings over the first tool's
    /// dot points, meters.
    pub translation: f64,
    /// Geodesic angle between the two rotations, radians.
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub frames: BTreeMap<ToolId, CommonFrame>,
    /// RMS distance of all dot points (inliers or not) from the fitted plane.
    pub residuals: BTreeMap<ToolId, f64>,
    /// Keyed by `(a, b)` with `a < b`.
    pub cross_check: BTreeMap<(ToolId, ToolId), CrossCheck>,
    pub dot_count: usize,
}

impl CalibrationResult {
    pub fn tools(&self) -> impl Iterator<Item = &ToolId> {
        self.frames.keys()
    }

    pub fn frame(&self, tool: &ToolId) -> Result<&CommonFrame> {
        self.frames
            .get(tool)
            .ok_or_else(|| Error::UnknownTool(tool.to_string()))
    }

    pub fn tool_to_common(&self, tool: &ToolId) -> Result<RigidTransform> {
        Ok(self.frame(tool)?.tool_to_common)
    }

    pub fn tool_to_tool(&self, a: &ToolId, b: &ToolId) -> Result<RigidTransform> {
        tool_to_tool(self, a, b)
    }

    /// Pairs whose cross-check translation exceeds `threshold` meters.
    pub fn warnings(&self, threshold: f64) -> Vec<(&ToolId, &ToolId, CrossCheck)> {
        self.cross_check
            .iter()
            .filter(|(_, c)| c.translation > threshold)
            .map(|((a, b), c)| (a, b, *c))
            .collect()
    }
}

/// Maps tool-`a` coordinates to tool-`b` coordinates.
pub fn tool_to_tool(r: &CalibrationResult, a: &ToolId, b: &ToolId) -> Result<RigidTransform> {
    let ta = r.tool_to_common(a)?;
    let tb = r.tool_to_common(b)?;
    Ok(relative(&ta, &tb))
}

/// `invert(b_to_common) ∘ a_to_common`.
pub fn relative(a_to_common: &RigidTransform, b_to_common: &RigidTransform) -> RigidTransform {
    b_to_common.inverse().compose(a_to_common)
}

pub fn calibrate(measurements: &[MeasurementSet], params: &RansacParams) -> Result<CalibrationResult> {
    calibrate_with(measurements, params, Execution::default())
}

pub fn calibrate_with(
    measurements: &[MeasurementSet],
    params: &RansacParams,
    exec: Execution,
) -> Result<CalibrationResult> {
    params.validate()?;
    if measurements.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least 2 tools, got {}",
            measurements.len()
        )));
    }
    let mut sorted: Vec<&MeasurementSet> = measurements.iter().collect();
    sorted.sort_by(|a, b| a.tool().cmp(b.tool()));
    for w in sorted.windows(2) {
        if w[0].tool() == w[1].tool() {
            return Err(Error::InvalidInput(format!("duplicate tool `{}`", w[0].tool())));
        }
    }
    let dot_count = sorted[0].dot_points().len();
    if let Some(m) = sorted.iter().find(|m| m.dot_points().len() != dot_count) {
        return Err(Error::OrderMismatch(format!(
            "tool `{}` has {} dots, tool `{}` has {}",
            m.tool(),
            m.dot_points().len(),
            sorted[0].tool(),
            dot_count
        )));
    }

    // Tools run sequentially inside; parallelism is across tools.
    let built = par::map_slice(&sorted, exec, |m| {
        build_common_frame_with(m, params, Execution::Sequential)
            .map_err(|e| match e {
                tagged @ Error::Tool { .. } => tagged,
                e => Error::for_tool(m.tool().as_str(), e),
            })
    });

    let mut frames = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    for (m, frame) in sorted.iter().zip(built) {
        let frame = frame?;
        let plane = frame.plane_fit.plane;
        let sq: f64 = m.dot_points().iter().map(|p| plane.distance(p).powi(2)).sum();
        residuals.insert(m.tool().clone(), (sq / dot_count as f64).sqrt());
        frames.insert(m.tool().clone(), frame);
    }

    let mut result = CalibrationResult {
        frames,
        residuals,
        cross_check: BTreeMap::new(),
        dot_count,
    };

    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            let frame_based = tool_to_tool(&result, a.tool(), b.tool())?;
            let registered = kabsch_register(a.dot_points(), b.dot_points())
                .map_err(|e| Error::for_tool(a.tool().as_str(), e))?;
            let translation = a
                .dot_points()
                .iter()
                .map(|p| frame_based.apply(p).distance(&registered.apply(p)))
                .fold(0.0, f64::max);
            let rotation = frame_based.rotation.angle_to(&registered.rotation);
            result.cross_check.insert(
                (a.tool().clone(), b.tool().clone()),
                CrossCheck {
                    translation,
                    rotation,
                },
            );
        }
    }
    Ok(result)
}
