//! Rigid calibration of several robot arms and a depth camera into one
//! common reference frame built from points touched on a calibration board.
//!
//! Pipeline: each tool reports the board dots (in a shared touch order) and
//! one point above the board in its own frame ([`frame::MeasurementSet`]).
//! [`frame::calibrate`] fits a plane per tool, anchors a frame on it and
//! returns every tool's map into that frame, from which any tool-to-tool
//! transform follows. [`sim`] and [`experiment`] provide synthetic scenes
//! with ground truth and the grasping / dual-arm validation experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod board;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod frame;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod par;
pub mod registration;
pub mod sim;

pub use error::{Error, Result};
pub use frame::{calibrate, tool_to_tool, CalibrationResult, CommonFrame, MeasurementSet, ToolId};
pub use geom::{Point3, RigidTransform, UnitQuaternion};
pub use registration::{Plane, PlaneFit, RansacParams};
