//! Error statistics for the validation experiments.
//!
//! The statistics are unit-agnostic; the experiment drivers and report
//! writers pass millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Mean, sample standard deviation and maximum of a set of errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub std: f64,
    pub max: f64,
    pub n: usize,
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ErrorStats { mean, std, max, n })
}

/// Removes an independent error source in quadrature: `√(total² − intrinsic²)`.
pub fn decompose_error(total: f64, intrinsic: f64) -> Result<f64> {
    if !(total.is_finite() && intrinsic.is_finite()) || intrinsic < 0.0 || total < intrinsic {
        return Err(Error::InvalidDecomposition { total, intrinsic });
    }
    Ok(((total - intrinsic) * (total + intrinsic)).sqrt())
}

/// Statistics of the per-waypoint distance between two trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDeviation {
    pub mean: f64,
    pub std_dev: f64,
    /// Largest `|d_i − mean(d)|`.
    pub max_dev: f64,
}

/// One row of the trajectory similarity table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub radius_mm: f64,
    pub std_dev_mm: f64,
    pub max_dev_mm: f64,
}

pub fn trajectory_deviation(a: &[Point3], b: &[Point3]) -> Result<TrajectoryDeviation> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trajectory deviation needs at least 2 waypoints, got {}",
            a.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p.distance(q)).collect();
    let stats = error_stats(&d)?;
    let max_dev = d
        .iter()
        .map(|x| (x - stats.mean).abs())
        .fold(0.0, f64::max);
    Ok(TrajectoryDeviation {
        mean: stats.mean,
        std_dev: stats.std,
        max_dev,
    })
}

/// Distances between matched points reached by two tools.
pub fn plane_consistency_check(a: &[Point3], b: &[Point3]) -> Result<ErrorStats> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p.distance(q)).collect();
    error_stats(&d)
}
