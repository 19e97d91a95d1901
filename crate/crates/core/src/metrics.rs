//! Pose and mirror accuracy metrics. Inputs are in meters, outputs in
//! millimeters or degrees.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::SkeletonTemplate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mrpe: f64,
    /// Root-aligned error of each joint.
    pub per_joint: Vec<f64>,
}

fn check_lengths(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            what: "predicted joints",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no joints to compare".into()));
    }
    Ok(())
}

fn per_joint_root_aligned(pred: &[Vector3<f64>], gt: &[Vector3<f64>], root: usize) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    if root >= gt.len() {
        return Err(Error::InvalidInput(format!("root index {root} out of range")));
    }
    let offset = gt[root] - pred[root];
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| 1000.0 * (p + offset - g).norm())
        .collect())
}

/// Mean per-joint position error after translating `pred` so the roots
/// coincide.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], root_index: usize) -> Result<f64> {
    let d = per_joint_root_aligned(pred, gt, root_index)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * x + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn spread_rank_ok(centered: &[Vector3<f64>]) -> bool {
    let cov: Matrix3<f64> = centered.iter().map(|c| c * c.transpose()).sum();
    let sv = cov.singular_values();
    let (max, mid) = (sv.max(), {
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s[1]
    });
    max > 0.0 && mid > 1e-12 * max
}

/// Least-squares similarity mapping `source` onto `target` with a proper
/// rotation (closed form, Umeyama).
pub fn similarity_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Similarity> {
    check_lengths(source, target)?;
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration("alignment needs at least 3 joints".into()));
    }
    let (mu_s, mu_t) = (centroid(source), centroid(target));
    let xs: Vec<_> = source.iter().map(|p| p - mu_s).collect();
    let ys: Vec<_> = target.iter().map(|p| p - mu_t).collect();
    if !spread_rank_ok(&xs) || !spread_rank_ok(&ys) {
        return Err(Error::DegenerateConfiguration("joints are collinear".into()));
    }
    let cross: Matrix3<f64> = xs.iter().zip(&ys).map(|(x, y)| y * x.transpose()).sum();
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let var_s: f64 = xs.iter().map(|x| x.norm_squared()).sum();
    let trace: f64 = (0..3).map(|k| svd.singular_values[k] * d[(k, k)]).sum();
    let scale = trace / var_s;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_t - scale * rotation * mu_s,
    })
}

/// Mean per-joint error after optimal similarity alignment of `pred` to
/// `gt` (reflections excluded).
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let sim = similarity_align(pred, gt)?;
    Ok(1000.0 * pred.iter().zip(gt).map(|(p, g)| (sim.apply(p) - g).norm()).sum::<f64>() / pred.len() as f64)
}

/// Root position error without alignment.
pub fn mrpe(pred_root: &Vector3<f64>, gt_root: &Vector3<f64>) -> f64 {
    1000.0 * (pred_root - gt_root).norm()
}

/// Unsigned angle between two plane normals, in degrees.
pub fn normal_angle_error(pred: &Vector3<f64>, gt: &Vector3<f64>) -> f64 {
    let c = (pred.dot(gt) / (pred.norm() * gt.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

/// Root used by the metrics: the joint named `pelvis`, else the midpoint of
/// `left_hip` and `right_hip`, else the template root.
pub fn root_position(template: &SkeletonTemplate, joints: &[Vector3<f64>]) -> Vector3<f64> {
    if let Some(p) = template.joint_index("pelvis") {
        return joints[p];
    }
    match (template.joint_index("left_hip"), template.joint_index("right_hip")) {
        (Some(l), Some(r)) => 0.5 * (joints[l] + joints[r]),
        _ => joints[template.root()],
    }
}

/// All pose metrics of one subject.
pub fn pose_error(
    template: &SkeletonTemplate,
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Result<PoseError> {
    check_lengths(pred, gt)?;
    let (root_pred, root_gt) = (root_position(template, pred), root_position(template, gt));
    let offset = root_gt - root_pred;
    let per_joint: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| 1000.0 * (p + offset - g).norm()).collect();
    Ok(PoseError {
        mpjpe: per_joint.iter().sum::<f64>() / per_joint.len() as f64,
        pa_mpjpe: pa_mpjpe(pred, gt)?,
        mrpe: mrpe(&root_pred, &root_gt),
        per_joint,
    })
}
