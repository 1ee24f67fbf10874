//! Closed-form rigid registration and robust plane estimation.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, RigidTransform, UnitQuaternion};
use crate::par::{self, Execution};

/// Ratio `λ_mid / λ_max` of the covariance spectrum below which a point set
/// is treated as collinear.
pub const COLLINEAR_RATIO: f64 = 1e-12;

/// Plane `normal · p + offset = 0` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    normal: Point3,
    offset: f64,
}

impl Plane {
    /// Normalizes `normal`, scaling `offset` accordingly.
    pub fn new(normal: Point3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0 && offset.is_finite()) {
            return Err(Error::DegenerateInput("plane normal has zero length".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    /// Plane through `point` with the given normal direction.
    pub fn through(point: &Point3, normal: Point3) -> Result<Self> {
        let unit = normal
            .normalized()
            .ok_or_else(|| Error::DegenerateInput("plane normal has zero length".into()))?;
        Ok(Self {
            normal: unit,
            offset: -unit.dot(point),
        })
    }

    pub fn normal(&self) -> Point3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.signed_distance(p).abs()
    }

    pub fn flipped(&self) -> Plane {
        Plane {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &Point3) -> Point3 {
        *p - self.normal * self.signed_distance(p)
    }

    /// The same physical plane expressed after moving space by `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Plane {
        let normal = t.apply_vector(&self.normal);
        let on_plane = t.apply(&(self.normal * -self.offset));
        Plane {
            normal,
            offset: -normal.dot(&on_plane),
        }
    }

    /// Angle between the two normals, ignoring orientation.
    pub fn angle_to(&self, other: &Plane) -> f64 {
        let c = self.normal.dot(&other.normal).abs();
        let s = self.normal.cross(&other.normal).norm();
        s.atan2(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Maximum point-to-plane distance of an inlier, meters.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 1e-3,
            max_iterations: 500,
            min_inliers: 3,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold.is_finite() && self.inlier_threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if self.min_inliers < 3 {
            return Err(Error::InvalidInput(format!(
                "min_inliers must be at least 3, got {}",
                self.min_inliers
            )));
        }
        Ok(())
    }
}

/// Result of [`ransac_plane`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Indices into the input slice, ascending.
    pub inliers: Vec<usize>,
    /// RMS point-to-plane distance over the inliers, meters.
    pub rms_residual: f64,
}

pub fn centroid(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = Point3::ORIGIN;
    for p in points {
        sum += *p;
    }
    Ok(sum / points.len() as f64)
}

/// Centroid and eigen-decomposition of the scatter matrix, eigenpairs sorted
/// by ascending eigenvalue.
struct Spread {
    centroid: Point3,
    values: [f64; 3],
    vectors: [Vector3<f64>; 3],
}

fn spread(points: &[Point3]) -> Result<Spread> {
    let c = centroid(points)?;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = (*p - c).to_vector();
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    Ok(Spread {
        centroid: c,
        values: order.map(|i| eig.eigenvalues[i].max(0.0)),
        vectors: order.map(|i| eig.eigenvectors.column(i).into_owned()),
    })
}

fn ensure_not_collinear(s: &Spread, what: &str) -> Result<()> {
    let [_, mid, max] = s.values;
    if !(max > 0.0) || mid / max < COLLINEAR_RATIO {
        return Err(Error::DegenerateInput(format!("{what} are collinear or coincident")));
    }
    Ok(())
}

/// Default normal orientation: positive z, falling back to x then y.
fn orient_default(n: Point3) -> Point3 {
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.x != 0.0 {
        n.x < 0.0
    } else {
        n.y < 0.0
    };
    if flip {
        -n
    } else {
        n
    }
}

/// Total least squares plane: normal along the smallest principal axis.
pub fn fit_plane_least_squares(points: &[Point3]) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points for a plane, got {}",
            points.len()
        )));
    }
    let s = spread(points)?;
    ensure_not_collinear(&s, "plane points")?;
    let normal = orient_default(Point3::from_vector(&s.vectors[0]));
    Plane::through(&s.centroid, normal)
}

#[derive(Clone, Debug)]
struct Hypothesis {
    iteration: usize,
    plane: Plane,
    inliers: Vec<usize>,
    rms: f64,
}

impl Hypothesis {
    /// Higher inlier count wins, then lower rms, then earlier iteration.
    fn beats(&self, other: &Hypothesis) -> bool {
        use std::cmp::Ordering::*;
        match self.inliers.len().cmp(&other.inliers.len()) {
            Greater => true,
            Less => false,
            Equal => match self.rms.total_cmp(&other.rms) {
                Less => true,
                Greater => false,
                Equal => self.iteration < other.iteration,
            },
        }
    }
}

fn score(points: &[Point3], plane: &Plane, threshold: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut sq = 0.0;
    for (i, p) in points.iter().enumerate() {
        let d = plane.distance(p);
        if d <= threshold {
            inliers.push(i);
            sq += d * d;
        }
    }
    let rms = if inliers.is_empty() {
        0.0
    } else {
        (sq / inliers.len() as f64).sqrt()
    };
    (inliers, rms)
}

/// Plane through three points, rejected if any of them lies within
/// `threshold` of the line through the other two.
fn plane_from_sample(a: &Point3, b: &Point3, c: &Point3, threshold: f64) -> Option<Plane> {
    let normal = (*b - *a).cross(&(*c - *a));
    let twice_area = normal.norm();
    let longest = a.distance(b).max(b.distance(c)).max(c.distance(a));
    if !(longest > 0.0) || twice_area / longest <= threshold {
        return None;
    }
    Plane::through(a, normal).ok()
}

fn max_distance_to_principal_line(points: &[Point3], s: &Spread) -> f64 {
    let dir = Point3::from_vector(&s.vectors[2]);
    points
        .iter()
        .map(|p| {
            let d = *p - s.centroid;
            (d - dir * d.dot(&dir)).norm()
        })
        .fold(0.0, f64::max)
}

pub fn ransac_plane(points: &[Point3], params: &RansacParams) -> Result<PlaneFit> {
    ransac_plane_with(points, params, Execution::default())
}

/// [`ransac_plane`] with explicit scheduling. Minimal samples are drawn
/// sequentially from the seeded generator before scoring, so the winning
/// model does not depend on `exec`.
pub fn ransac_plane_with(
    points: &[Point3],
    params: &RansacParams,
    exec: Execution,
) -> Result<PlaneFit> {
    params.validate()?;
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points for a plane, got {}",
            points.len()
        )));
    }
    if points.len() < params.min_inliers {
        return Err(Error::InsufficientInliers {
            found: points.len(),
            required: params.min_inliers,
        });
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("point {i} is not finite")));
    }
    let threshold = params.inlier_threshold;
    let s = spread(points)?;
    if max_distance_to_principal_line(points, &s) <= threshold {
        return Err(Error::DegenerateInput(
            "all points lie within the inlier threshold of a line".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<[usize; 3]> = (0..params.max_iterations)
        .map(|_| {
            let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
            [idx.index(0), idx.index(1), idx.index(2)]
        })
        .collect();

    let hypotheses = par::map_slice(&samples, exec, |&[a, b, c]| {
        plane_from_sample(&points[a], &points[b], &points[c], threshold)
    });
    let scored = par::map_indexed(hypotheses.len(), exec, |i| {
        hypotheses[i].map(|plane| {
            let (inliers, rms) = score(points, &plane, threshold);
            Hypothesis {
                iteration: i,
                plane,
                inliers,
                rms,
            }
        })
    });

    // The plane of all points competes too: on small clean sets every
    // minimal sample can leave one noisy point beyond the threshold while
    // the joint fit keeps it.
    let joint = fit_plane_least_squares(points)?;
    let (joint_inliers, joint_rms) = score(points, &joint, threshold);
    let joint = Hypothesis {
        iteration: params.max_iterations,
        plane: joint,
        inliers: joint_inliers,
        rms: joint_rms,
    };

    let mut best: Option<Hypothesis> = None;
    for h in scored.into_iter().flatten().chain(std::iter::once(joint)) {
        if best.as_ref().is_none_or(|b| h.beats(b)) {
            best = Some(h);
        }
    }
    let best = best.expect("the joint hypothesis is always present");
    if best.inliers.len() < params.min_inliers {
        return Err(Error::InsufficientInliers {
            found: best.inliers.len(),
            required: params.min_inliers,
        });
    }

    // Refit on the consensus set until it stops changing.
    let mut inliers = best.inliers;
    let mut plane = best.plane;
    for _ in 0..32 {
        let subset: Vec<Point3> = inliers.iter().map(|&i| points[i]).collect();
        plane = fit_plane_least_squares(&subset)?;
        let (next, _) = score(points, &plane, threshold);
        if next == inliers || next.len() < 3 {
            break;
        }
        inliers = next;
    }
    // Without convergence some refit members may sit just beyond the threshold.
    let (inliers, rms_residual) = score(points, &plane, threshold);
    if inliers.len() < params.min_inliers {
        return Err(Error::InsufficientInliers {
            found: inliers.len(),
            required: params.min_inliers,
        });
    }
    Ok(PlaneFit {
        plane,
        inliers,
        rms_residual,
    })
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn kabsch_register(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "registration needs at least 3 correspondences, got {}",
            src.len()
        )));
    }
    ensure_not_collinear(&spread(src)?, "source points")?;

    let cs = centroid(src)?;
    let cd = centroid(dst)?;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (*s - cs).to_vector() * (*d - cd).to_vector().transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateInput("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    // Flip the least significant direction if the optimum is a reflection.
    let d = (v * u.transpose()).determinant().signum();
    let mut correction = Matrix3::identity();
    correction[(2, 2)] = if d < 0.0 { -1.0 } else { 1.0 };
    // nalgebra sorts singular values in descending order, so column 2 is the smallest
    let r = v * correction * u.transpose();

    let rotation = UnitQuaternion::from_rotation_matrix(&r);
    let translation = cd - rotation.rotate(&cs);
    Ok(RigidTransform::new(rotation, translation))
}

/// RMS of `‖T src_i − dst_i‖`.
pub fn registration_rms(t: &RigidTransform, src: &[Point3], dst: &[Point3]) -> f64 {
    let n = src.len().min(dst.len());
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| t.apply(s).distance(d).powi(2))
        .sum();
    (sq / n as f64).sqrt()
}
