//! Calibration board: a marker at the center of a circle of reference dots.
//!
//! Marker frame convention: origin at the marker center, board surface on
//! `z = 0`, dots at `(r cos θ, r sin θ, 0)`. The above-point sits on the
//! +z axis and is always the last element of an ordered point list.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, RigidTransform};

/// Angles closer than this (radians, after wrapping) are the same dot.
const ANGLE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct BoardModel {
    radius: f64,
    dot_angles: Vec<f64>,
    above_height: f64,
}

impl Default for BoardModel {
    /// 5 cm circle, four dots at 0°/90°/180°/270°, above-point at 5 cm.
    fn default() -> Self {
        Self {
            radius: 0.05,
            dot_angles: vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0],
            above_height: 0.05,
        }
    }
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

impl BoardModel {
    pub fn new(radius: f64, dot_angles: Vec<f64>, above_height: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidBoard(format!("radius must be positive, got {radius}")));
        }
        if !(above_height.is_finite() && above_height > 0.0) {
            return Err(Error::InvalidBoard(format!(
                "above height must be positive, got {above_height}"
            )));
        }
        if dot_angles.len() < 3 {
            return Err(Error::InvalidBoard(format!(
                "need at least 3 dots, got {}",
                dot_angles.len()
            )));
        }
        if let Some(a) = dot_angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidBoard(format!("dot angle {a} is not finite")));
        }
        for (i, a) in dot_angles.iter().enumerate() {
            for b in &dot_angles[i + 1..] {
                if angular_gap(*a, *b) < ANGLE_TOLERANCE {
                    return Err(Error::InvalidBoard(format!(
                        "duplicate dot angle {:.6} deg",
                        a.to_degrees()
                    )));
                }
            }
            if !dot_angles
                .iter()
                .any(|b| angular_gap(*a + PI, *b) < ANGLE_TOLERANCE)
            {
                return Err(Error::InvalidBoard(format!(
                    "dot at {:.6} deg has no antipodal partner",
                    a.to_degrees()
                )));
            }
        }
        Ok(Self {
            radius,
            dot_angles,
            above_height,
        })
    }

    pub fn from_degrees(radius: f64, dot_angles_deg: &[f64], above_height: f64) -> Result<Self> {
        Self::new(
            radius,
            dot_angles_deg.iter().map(|d| d.to_radians()).collect(),
            above_height,
        )
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Dot angles in radians, touch order.
    pub fn dot_angles(&self) -> &[f64] {
        &self.dot_angles
    }

    pub fn above_height(&self) -> f64 {
        self.above_height
    }

    pub fn dot_count(&self) -> usize {
        self.dot_angles.len()
    }

    /// Dots only, marker frame.
    pub fn dots(&self) -> Vec<Point3> {
        self.dot_angles
            .iter()
            .map(|a| {
                let (s, c) = a.sin_cos();
                Point3::new(self.radius * c, self.radius * s, 0.0)
            })
            .collect()
    }

    pub fn above_point(&self) -> Point3 {
        Point3::new(0.0, 0.0, self.above_height)
    }
}

/// Pose of the marker (marker frame -> camera frame).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPose {
    pub pose: RigidTransform,
}

/// Dots in touch order followed by the above-point, marker frame.
pub fn board_points_marker_frame(board: &BoardModel) -> Vec<Point3> {
    let mut pts = board.dots();
    pts.push(board.above_point());
    pts
}

/// [`board_points_marker_frame`] mapped through the marker pose.
pub fn board_points_camera_frame(marker: &MarkerPose, board: &BoardModel) -> Vec<Point3> {
    marker.pose.apply_all(&board_points_marker_frame(board))
}
