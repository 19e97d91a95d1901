//! Projective geometry of a pinhole camera facing a planar mirror.
//!
//! Conventions: camera frame with x right, y down, z forward; image origin
//! top-left. A [`MirrorPlane`] is `{X : n . X + d = 0}` with `n` pointing
//! from the mirror toward the camera, so `d > 0` for a mirror in view.

mod calibration;
mod vanishing;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_helpers;

pub use calibration::{calibrate, Calibration, CalibrationRoute, RouteTaken, VanishingPoints};
pub use vanishing::{
    focal_from_two_orthogonal_vps, intersect_lines, intrinsics_from_three_vps, line_through,
    normal_from_vp, vp_from_keypoint_pairs, vp_from_segments, HomogeneousPoint2, Line2D,
    INFINITY_THRESHOLD,
};

/// Pinhole intrinsics with square pixels and zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub focal: f64,
    #[serde(with = "serde_helpers::vec2")]
    pub principal_point: Vector2<f64>,
}

impl PinholeCamera {
    pub fn new(focal: f64, principal_point: Vector2<f64>) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::InvalidInput(format!("focal must be positive, got {focal}")));
        }
        Ok(Self {
            focal,
            principal_point,
        })
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        let (f, c) = (self.focal, self.principal_point);
        Matrix3::new(f, 0.0, c.x, 0.0, f, c.y, 0.0, 0.0, 1.0)
    }

    pub fn inverse_intrinsic_matrix(&self) -> Matrix3<f64> {
        let (f, c) = (self.focal, self.principal_point);
        Matrix3::new(1.0 / f, 0.0, -c.x / f, 0.0, 1.0 / f, -c.y / f, 0.0, 0.0, 1.0)
    }

    /// Perspective projection of a camera-frame point to pixels.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        if point.z <= 0.0 {
            return Err(Error::NonPositiveDepth { depth: point.z });
        }
        Ok(Vector2::new(
            self.focal * point.x / point.z + self.principal_point.x,
            self.focal * point.y / point.z + self.principal_point.y,
        ))
    }

    /// Inverse of [`project`](Self::project) at a given depth.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let xy = (pixel - self.principal_point) * (depth / self.focal);
        Vector3::new(xy.x, xy.y, depth)
    }

    /// Image of the point at infinity in direction `dir` (`K dir`).
    pub fn project_direction(&self, dir: &Vector3<f64>) -> HomogeneousPoint2 {
        HomogeneousPoint2::new(self.intrinsic_matrix() * dir)
            .expect("direction must be nonzero")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorPlane {
    #[serde(with = "serde_helpers::vec3")]
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl MirrorPlane {
    /// Normalizes `normal` (scaling `offset` alike) and orients the plane so
    /// that the camera center lies on its positive side.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 1e-12) || !offset.is_finite() {
            return Err(Error::DegenerateConfiguration("zero plane normal".into()));
        }
        let sign = if offset < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            normal: sign * normal / norm,
            offset: sign * offset / norm,
        })
    }

    /// Plane through `point` with the given normal direction.
    pub fn through_point(normal: Vector3<f64>, point: &Vector3<f64>) -> Result<Self> {
        let n = normal.normalize();
        Self::new(n, -n.dot(point))
    }

    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }

    pub fn reflect_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        x - 2.0 * self.signed_distance(x) * self.normal
    }

    /// Linear part `I - 2 n n^T` of the reflection.
    pub fn reflection_linear(&self) -> Matrix3<f64> {
        Matrix3::identity() - 2.0 * self.normal * self.normal.transpose()
    }

    /// Homogeneous 4x4 form of the reflection.
    pub fn reflection_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.reflection_linear());
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-2.0 * self.offset * self.normal));
        m
    }
}

pub fn reflect_point(plane: &MirrorPlane, x: &Vector3<f64>) -> Vector3<f64> {
    plane.reflect_point(x)
}

pub fn reflection_matrix(plane: &MirrorPlane) -> Matrix4<f64> {
    plane.reflection_matrix()
}

/// Fits the mirror plane from corresponding real/mirrored 3D joints.
///
/// `mirrored_joints[i]` must be the mirror counterpart of `real_joints[i]`.
/// The normal is the weighted mean of the unit segment directions, the
/// offset puts the plane through the weighted mean of the segment midpoints.
pub fn mirror_plane_from_midpoints(
    real_joints: &[Vector3<f64>],
    mirrored_joints: &[Vector3<f64>],
    weights: &[f64],
) -> Result<MirrorPlane> {
    if real_joints.len() != mirrored_joints.len() || real_joints.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            what: "mirror plane correspondences",
            expected: real_joints.len(),
            actual: mirrored_joints.len().min(weights.len()),
        });
    }
    let mut used = Vec::new();
    for ((a, b), &w) in real_joints.iter().zip(mirrored_joints).zip(weights) {
        let seg = b - a;
        let len = seg.norm();
        if w > 0.0 && len > 1e-9 {
            used.push((seg / len, 0.5 * (a + b), w));
        }
    }
    if used.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} usable midpoints, need 3",
            used.len()
        )));
    }
    let total: f64 = used.iter().map(|u| u.2).sum();
    let centroid = used.iter().map(|u| u.1 * u.2).sum::<Vector3<f64>>() / total;
    let mut scatter = Matrix3::zeros();
    for (_, p, w) in &used {
        let c = p - centroid;
        scatter += *w * c * c.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-18 * total.max(1.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration("midpoints are collinear".into()));
    }
    // Segments point from the real subject into the mirror; the normal
    // points back toward the camera side.
    let direction = used.iter().map(|u| u.0 * u.2).sum::<Vector3<f64>>();
    if direction.norm() < 1e-12 {
        return Err(Error::DegenerateConfiguration("segment directions cancel".into()));
    }
    MirrorPlane::through_point(-direction, &centroid)
}

/// Semantic label of an annotated image segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDirection {
    ParallelToMirrorHorizontal,
    ParallelToMirrorVertical,
    PerpendicularToMirror,
}

/// A family of annotated image segments sharing one 3D direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAnnotation {
    pub segments: Vec<[Vector2<f64>; 2]>,
    pub direction_label: EdgeDirection,
}

impl EdgeAnnotation {
    pub fn new(segments: Vec<[Vector2<f64>; 2]>, direction_label: EdgeDirection) -> Result<Self> {
        let required = match direction_label {
            EdgeDirection::PerpendicularToMirror => 0,
            _ => 2,
        };
        if segments.len() < required {
            return Err(Error::InvalidInput(format!(
                "{direction_label:?} family needs at least {required} segments, got {}",
                segments.len()
            )));
        }
        Ok(Self {
            segments,
            direction_label,
        })
    }

    /// Groups labeled segments into families, ordered by label.
    pub fn group(segments: &[([Vector2<f64>; 2], EdgeDirection)]) -> Result<Vec<Self>> {
        let mut families: Vec<Self> = Vec::new();
        for label in [
            EdgeDirection::ParallelToMirrorHorizontal,
            EdgeDirection::ParallelToMirrorVertical,
            EdgeDirection::PerpendicularToMirror,
        ] {
            let segs: Vec<_> = segments
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(s, _)| *s)
                .collect();
            if !segs.is_empty() {
                families.push(Self::new(segs, label)?);
            }
        }
        Ok(families)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_plane(seed: u64) -> MirrorPlane {
        let s = seed as f64;
        MirrorPlane::new(
            Vector3::new((s * 1.3).sin(), (s * 0.7).cos(), -1.0 - (s * 0.3).sin().abs()),
            2.0 + (s * 2.1).cos(),
        )
        .unwrap()
    }

    #[test]
    fn project_examples() {
        let cam = PinholeCamera::new(1000.0, Vector2::new(960.0, 540.0)).unwrap();
        assert_eq!(cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap(), Vector2::new(960.0, 540.0));
        let cam0 = PinholeCamera::new(1000.0, Vector2::zeros()).unwrap();
        assert_eq!(cam0.project(&Vector3::new(1.0, 1.0, 1.0)).unwrap(), Vector2::new(1000.0, 1000.0));
        // 1200 * 0.3 / 3 = 120; 1200 * -0.2 / 3 = -80.
        let cam2 = PinholeCamera::new(1200.0, Vector2::new(960.0, 540.0)).unwrap();
        let p = cam2.project(&Vector3::new(0.3, -0.2, 3.0)).unwrap();
        assert!((p - Vector2::new(1080.0, 460.0)).norm() < 1e-9);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let cam = PinholeCamera::new(1000.0, Vector2::zeros()).unwrap();
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::NonPositiveDepth { .. })
        ));
        assert!(cam.project(&Vector3::new(1.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn backprojection_recovers_point() {
        let cam = PinholeCamera::new(1234.0, Vector2::new(640.0, 360.0)).unwrap();
        let x = Vector3::new(-0.7, 0.31, 4.2);
        let back = cam.backproject(&cam.project(&x).unwrap(), x.z);
        assert!((back - x).norm() / x.norm() < 1e-9);
    }

    #[test]
    fn intrinsic_matrix_layout() {
        let cam = PinholeCamera::new(800.0, Vector2::new(1.0, 2.0)).unwrap();
        let k = cam.intrinsic_matrix();
        assert_eq!((k[(0, 0)], k[(1, 1)], k[(2, 2)]), (800.0, 800.0, 1.0));
        assert_eq!((k[(1, 0)], k[(2, 0)], k[(2, 1)]), (0.0, 0.0, 0.0));
        assert!((k * cam.inverse_intrinsic_matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(PinholeCamera::new(0.0, Vector2::zeros()).is_err());
    }

    #[test]
    fn reflect_point_examples() {
        let plane = MirrorPlane::new(Vector3::z(), 0.0).unwrap();
        assert_eq!(plane.reflect_point(&Vector3::new(1.0, 2.0, 3.0)), Vector3::new(1.0, 2.0, -3.0));
        let plane = random_plane(3);
        let on_plane = -plane.offset * plane.normal + plane.normal.cross(&Vector3::x()) * 0.4;
        assert!((plane.reflect_point(&on_plane) - on_plane).norm() < 1e-12);
    }

    #[test]
    fn reflection_matrix_properties() {
        let m = reflection_matrix(&MirrorPlane::new(Vector3::x(), 0.0).unwrap());
        assert_eq!(m, Matrix4::from_diagonal(&nalgebra::Vector4::new(-1.0, 1.0, 1.0, 1.0)));
        for seed in 0..20 {
            let plane = random_plane(seed);
            let m = plane.reflection_matrix();
            assert!((m * m - Matrix4::identity()).norm() < 1e-12);
            let lin = plane.reflection_linear();
            assert!((lin.determinant() + 1.0).abs() < 1e-12);
            let mut ev: Vec<f64> = lin.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12 && (ev[2] - 1.0).abs() < 1e-12);
            let x = Vector3::new(0.3 * seed as f64, -1.0, 2.5);
            let via_matrix = m * x.push(1.0);
            assert!((via_matrix.xyz() - plane.reflect_point(&x)).norm() < 1e-12);
            assert!((plane.reflect_point(&plane.reflect_point(&x)) - x).norm() < 1e-12);
        }
    }

    #[test]
    fn plane_orientation_convention() {
        let plane = MirrorPlane::new(Vector3::new(0.0, 0.0, 2.0), -4.0).unwrap();
        assert!((plane.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((plane.offset - 2.0).abs() < 1e-15);
        assert!(plane.signed_distance(&Vector3::zeros()) > 0.0);
    }

    #[test]
    fn plane_from_exact_midpoints() {
        let plane = MirrorPlane::new(Vector3::z(), -2.0).unwrap();
        let real: Vec<_> = (0..6)
            .map(|i| Vector3::new(i as f64 * 0.3 - 0.5, (i * i) as f64 * 0.1, 1.0 + 0.05 * i as f64))
            .collect();
        let mirrored: Vec<_> = real.iter().map(|x| plane.reflect_point(x)).collect();
        let fitted = mirror_plane_from_midpoints(&real, &mirrored, &[1.0; 6]).unwrap();
        assert!((fitted.normal.z.abs() - 1.0).abs() < 1e-10);
        assert!((fitted.offset * fitted.normal.z + 2.0).abs() < 1e-10);
    }

    #[test]
    fn plane_from_duplicated_pair_is_degenerate() {
        let a = Vector3::new(0.1, 0.2, 1.0);
        let b = Vector3::new(0.1, 0.2, 3.0);
        let err = mirror_plane_from_midpoints(&[a; 3], &[b; 3], &[1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::DegenerateConfiguration(_)));
    }

    #[test]
    fn edge_families_need_two_segments() {
        let seg = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)];
        assert!(EdgeAnnotation::new(vec![seg], EdgeDirection::ParallelToMirrorVertical).is_err());
        assert!(EdgeAnnotation::new(vec![], EdgeDirection::PerpendicularToMirror).is_ok());
        let grouped = EdgeAnnotation::group(&[
            (seg, EdgeDirection::ParallelToMirrorVertical),
            (seg, EdgeDirection::ParallelToMirrorHorizontal),
            (seg, EdgeDirection::ParallelToMirrorVertical),
            (seg, EdgeDirection::ParallelToMirrorHorizontal),
        ])
        .unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].direction_label, EdgeDirection::ParallelToMirrorHorizontal);
    }
}
