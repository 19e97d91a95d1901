//! Lines, vanishing points and closed-form intrinsics from orthogonal
//! vanishing points.

use nalgebra::{DMatrix, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::PinholeCamera;
use crate::error::{Error, Result};
use crate::observation::Observation2D;

/// A vanishing point is treated as infinite when
/// `|w| < INFINITY_THRESHOLD * ||(x, y)||`.
pub const INFINITY_THRESHOLD: f64 = 1e-8;

/// Homogeneous image point; `w = 0` encodes a point at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint2 {
    pub coords: Vector3<f64>,
}

impl HomogeneousPoint2 {
    pub fn new(coords: Vector3<f64>) -> Result<Self> {
        if coords.iter().all(|&c| c == 0.0) || !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("homogeneous point must be finite and nonzero".into()));
        }
        Ok(Self { coords })
    }

    pub fn from_euclidean(p: &Vector2<f64>) -> Self {
        Self {
            coords: Vector3::new(p.x, p.y, 1.0),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.coords.z.abs() < INFINITY_THRESHOLD * self.coords.xy().norm()
    }

    pub fn to_euclidean(&self) -> Option<Vector2<f64>> {
        (!self.is_infinite()).then(|| self.coords.xy() / self.coords.z)
    }

    /// Unit-norm representative, sign fixed so the result is deterministic.
    fn canonical(v: Vector3<f64>) -> Self {
        let mut v = v.normalize();
        let lead = if v.z != 0.0 {
            v.z
        } else if v.x != 0.0 {
            v.x
        } else {
            v.y
        };
        if lead < 0.0 {
            v = -v;
        }
        Self { coords: v }
    }
}

impl Serialize for HomogeneousPoint2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.coords.x, self.coords.y, self.coords.z].serialize(s)
    }
}

impl<'de> Deserialize<'de> for HomogeneousPoint2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = <[f64; 3]>::deserialize(d)?;
        Self::new(Vector3::from(raw)).map_err(serde::de::Error::custom)
    }
}

/// Image line `a x + b y + c = 0`, stored with `a^2 + b^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub coeffs: Vector3<f64>,
}

impl Line2D {
    pub fn new(coeffs: Vector3<f64>) -> Result<Self> {
        let n = coeffs.xy().norm();
        if !(n > 0.0) || !coeffs.z.is_finite() {
            return Err(Error::InvalidInput("line normal (a, b) must be nonzero".into()));
        }
        Ok(Self { coeffs: coeffs / n })
    }

    /// Signed distance of a point to the line.
    pub fn residual(&self, p: &Vector2<f64>) -> f64 {
        self.coeffs.x * p.x + self.coeffs.y * p.y + self.coeffs.z
    }
}

pub fn line_through(p: &Vector2<f64>, q: &Vector2<f64>) -> Result<Line2D> {
    let scale = 1.0 + p.amax().max(q.amax());
    if (p - q).norm() <= 1e-12 * scale {
        return Err(Error::DegenerateSegment);
    }
    Line2D::new(Vector3::new(p.x, p.y, 1.0).cross(&Vector3::new(q.x, q.y, 1.0)))
}

/// Total-least-squares intersection of a pencil of lines: the unit vector
/// `v` minimizing `sum_i w_i (l_i . v)^2`.
pub fn intersect_lines(lines: &[Line2D], weights: Option<&[f64]>) -> Result<HomogeneousPoint2> {
    if let Some(w) = weights {
        if w.len() != lines.len() {
            return Err(Error::DimensionMismatch {
                what: "line weights",
                expected: lines.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidInput("line weights must be nonnegative".into()));
        }
    }
    let rows: Vec<Vector3<f64>> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let w = weights.map_or(1.0, |w| w[i]);
            (w > 0.0).then(|| l.coeffs * w.sqrt())
        })
        .collect();
    if rows.len() < 2 {
        return Err(Error::RankDeficient("fewer than two weighted lines"));
    }
    let mut a = DMatrix::<f64>::zeros(rows.len().max(3), 3);
    for (i, r) in rows.iter().enumerate() {
        a.row_mut(i).copy_from(&r.transpose());
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (largest, middle) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if middle <= 1e-12 * largest {
        return Err(Error::RankDeficient("all lines coincide"));
    }
    let v = v_t.row(order[2]).transpose();
    Ok(HomogeneousPoint2::canonical(Vector3::new(v[0], v[1], v[2])))
}

/// [`intersect_lines`] in coordinates centered on `points` and scaled to
/// unit RMS radius, which keeps the homogeneous system well conditioned.
pub(crate) fn intersect_conditioned(
    lines: &[Line2D],
    weights: &[f64],
    points: &[Vector2<f64>],
) -> Result<HomogeneousPoint2> {
    let center = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    let rms = (points.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / points.len() as f64).sqrt();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    let moved = lines
        .iter()
        .map(|l| {
            let c = (l.coeffs.x * center.x + l.coeffs.y * center.y + l.coeffs.z) / scale;
            Line2D::new(Vector3::new(l.coeffs.x, l.coeffs.y, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let v = intersect_lines(&moved, Some(weights))?.coords;
    Ok(HomogeneousPoint2::canonical(Vector3::new(
        scale * v.x + center.x * v.z,
        scale * v.y + center.y * v.z,
        v.z,
    )))
}

/// Vanishing point of a family of image segments sharing a 3D direction.
/// Longer segments get proportionally more weight, since the direction
/// error of a segment scales with the inverse of its length.
pub fn vp_from_segments(segments: &[[Vector2<f64>; 2]]) -> Result<HomogeneousPoint2> {
    let lines = segments
        .iter()
        .map(|[p, q]| line_through(p, q))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = segments.iter().map(|[p, q]| (p - q).norm_squared()).collect();
    let points: Vec<_> = segments.iter().flatten().copied().collect();
    intersect_conditioned(&lines, &weights, &points)
}

/// Lines joining each real keypoint to the mirror keypoint of its
/// left/right counterpart, weighted by the product of confidences and the
/// squared segment length, with the segment endpoints.
pub(crate) fn keypoint_pair_lines(
    obs: &Observation2D,
    swap: &[usize],
    min_confidence: f64,
) -> Result<Vec<(Line2D, f64, [Vector2<f64>; 2])>> {
    if swap.len() != obs.num_joints() {
        return Err(Error::DimensionMismatch {
            what: "left/right pairing",
            expected: obs.num_joints(),
            actual: swap.len(),
        });
    }
    let mut lines = Vec::new();
    for (i, real) in obs.keypoints_real.iter().enumerate() {
        let mirrored = &obs.keypoints_mirrored[swap[i]];
        let usable = |c: f64| c > 0.0 && c >= min_confidence;
        if !usable(real.confidence) || !usable(mirrored.confidence) {
            continue;
        }
        if let Ok(line) = line_through(&real.position, &mirrored.position) {
            let length = (real.position - mirrored.position).norm_squared();
            lines.push((line, real.confidence * mirrored.confidence * length, [real.position, mirrored.position]));
        }
    }
    Ok(lines)
}

/// Vanishing point of the mirror-normal direction from real/mirrored
/// keypoint correspondences (left joints pair with mirrored right joints).
pub fn vp_from_keypoint_pairs(
    obs: &Observation2D,
    swap: &[usize],
    min_confidence: f64,
) -> Result<HomogeneousPoint2> {
    let pairs = keypoint_pair_lines(obs, swap, min_confidence)?;
    if pairs.len() < 2 {
        return Err(Error::InsufficientCorrespondences {
            usable: pairs.len(),
            required: 2,
        });
    }
    let lines: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let weights: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let points: Vec<_> = pairs.iter().flat_map(|p| p.2).collect();
    intersect_conditioned(&lines, &weights, &points)
}

fn finite(v: &HomogeneousPoint2) -> Result<Vector2<f64>> {
    v.to_euclidean().ok_or(Error::VanishingPointAtInfinity)
}

/// Focal length from two vanishing points of orthogonal directions with a
/// known principal point: `f^2 = -(v0 - c) . (v1 - c)`.
pub fn focal_from_two_orthogonal_vps(
    v0: &HomogeneousPoint2,
    v1: &HomogeneousPoint2,
    principal_point: &Vector2<f64>,
) -> Result<f64> {
    let (p0, p1) = (finite(v0)?, finite(v1)?);
    let focal_squared = -(p0 - principal_point).dot(&(p1 - principal_point));
    if !(focal_squared > 0.0) {
        return Err(Error::ImaginaryFocal { focal_squared });
    }
    Ok(focal_squared.sqrt())
}

/// Intrinsics from three vanishing points of mutually orthogonal
/// directions. The principal point is the orthocenter of the triangle and
/// the focal length the median of the three pairwise estimates.
pub fn intrinsics_from_three_vps(
    v0: &HomogeneousPoint2,
    v1: &HomogeneousPoint2,
    v2: &HomogeneousPoint2,
) -> Result<PinholeCamera> {
    let mut p = [finite(v0)?, finite(v1)?, finite(v2)?];
    // Canonical order makes the result independent of input order.
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let (e1, e2) = (p[1] - p[0], p[2] - p[0]);
    let area2 = (e1.x * e2.y - e1.y * e2.x).abs();
    let longest = e1.norm_squared().max(e2.norm_squared()).max((p[2] - p[1]).norm_squared());
    if !(area2 > 1e-12 * longest) {
        return Err(Error::DegenerateTriangle);
    }
    let (d12, d02) = (p[1] - p[2], p[0] - p[2]);
    let a = Matrix2::new(d12.x, d12.y, d02.x, d02.y);
    let b = Vector2::new(p[0].dot(&d12), p[1].dot(&d02));
    let h = a.lu().solve(&b).ok_or(Error::DegenerateTriangle)?;
    let mut f2 = [
        -(p[0] - h).dot(&(p[1] - h)),
        -(p[0] - h).dot(&(p[2] - h)),
        -(p[1] - h).dot(&(p[2] - h)),
    ];
    if let Some(&bad) = f2.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::ImaginaryFocal { focal_squared: bad });
    }
    f2.sort_by(f64::total_cmp);
    PinholeCamera::new(f2[1].sqrt(), h)
}

/// Unit 3D direction whose vanishing point is `v`, i.e. `K^-1 v`
/// normalized. The sign is chosen so the direction points from `toward`'s
/// location back to the camera when a point is supplied, otherwise so that
/// its depth component is negative.
pub fn normal_from_vp(
    camera: &PinholeCamera,
    v: &HomogeneousPoint2,
    toward: Option<&Vector3<f64>>,
) -> Vector3<f64> {
    let n = (camera.inverse_intrinsic_matrix() * v.coords).normalize();
    let flip = match toward {
        Some(centroid) => n.dot(centroid) > 0.0,
        None => n.z > 0.0,
    };
    if flip {
        -n
    } else {
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{ImageSize, Keypoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn pt(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn line_through_examples() {
        let l = line_through(&pt(0.0, 0.0), &pt(1.0, 0.0)).unwrap();
        assert!((l.coeffs.x.abs()) < 1e-15 && (l.coeffs.y.abs() - 1.0).abs() < 1e-15 && l.coeffs.z == 0.0);
        let l = line_through(&pt(0.0, 0.0), &pt(0.0, 1.0)).unwrap();
        assert!((l.coeffs.x.abs() - 1.0).abs() < 1e-15 && l.coeffs.y.abs() < 1e-15);
        let l = line_through(&pt(1.0, 2.0), &pt(3.0, 6.0)).unwrap();
        let expected = Vector3::new(2.0, -1.0, 0.0) / 5f64.sqrt();
        assert!((l.coeffs - expected).norm() < 1e-12 || (l.coeffs + expected).norm() < 1e-12);
        for p in [pt(1.0, 2.0), pt(3.0, 6.0)] {
            assert!(l.residual(&p).abs() < 1e-9);
        }
        assert_eq!(line_through(&pt(4.0, 4.0), &pt(4.0, 4.0)), Err(Error::DegenerateSegment));
    }

    #[test]
    fn intersect_axes_and_parallel_lines() {
        let y0 = line_through(&pt(0.0, 0.0), &pt(1.0, 0.0)).unwrap();
        let x0 = line_through(&pt(0.0, 0.0), &pt(0.0, 1.0)).unwrap();
        let v = intersect_lines(&[y0, x0], None).unwrap();
        assert!((v.coords - Vector3::z()).norm() < 1e-12);

        let y1 = Line2D::new(Vector3::new(0.0, 1.0, -1.0)).unwrap();
        let y2 = Line2D::new(Vector3::new(0.0, 1.0, -2.0)).unwrap();
        let v = intersect_lines(&[y1, y2], None).unwrap();
        assert!(v.is_infinite());
        assert!((v.coords.x.abs() - 1.0).abs() < 1e-12 && v.coords.y.abs() < 1e-12);
    }

    #[test]
    fn duplicate_lines_are_rank_deficient() {
        let l = Line2D::new(Vector3::new(0.0, 1.0, -1.0)).unwrap();
        assert!(matches!(intersect_lines(&[l, l, l], None), Err(Error::RankDeficient(_))));
        assert!(matches!(intersect_lines(&[l], None), Err(Error::RankDeficient(_))));
        assert!(matches!(
            intersect_lines(&[l, l], Some(&[1.0, 0.0])),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn noisy_pencil_recovers_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let center = pt(100.0, 200.0);
        let lines: Vec<_> = (0..5)
            .map(|k| {
                let angle = 0.3 + 0.55 * k as f64 + rng.random_range(-0.05..0.05);
                let dir = pt(angle.cos(), angle.sin());
                let mut a = center - 150.0 * dir;
                let mut b = center + 150.0 * dir;
                a += pt(noise.sample(&mut rng), noise.sample(&mut rng));
                b += pt(noise.sample(&mut rng), noise.sample(&mut rng));
                line_through(&a, &b).unwrap()
            })
            .collect();
        let v = intersect_lines(&lines, None).unwrap().to_euclidean().unwrap();
        assert!((v - center).norm() < 0.5, "{v:?}");
    }

    #[test]
    fn two_lines_give_exact_intersection() {
        let a = line_through(&pt(0.0, 0.0), &pt(10.0, 5.0)).unwrap();
        let b = line_through(&pt(0.0, 10.0), &pt(10.0, 0.0)).unwrap();
        let direct = a.coeffs.cross(&b.coeffs);
        let v = intersect_lines(&[a, b], Some(&[0.3, 0.9])).unwrap();
        assert!(v.coords.normalize().cross(&direct.normalize()).norm() < 1e-12);
        let e = v.to_euclidean().unwrap();
        assert!((e - pt(20.0 / 3.0, 10.0 / 3.0)).norm() < 1e-9);
    }

    #[test]
    fn keypoint_pairs_frontal_mirror_meet_at_infinity() {
        // Every correspondence line is horizontal.
        let swap = [1, 0, 2];
        let real = vec![Keypoint::new(100.0, 50.0, 1.0), Keypoint::new(120.0, 80.0, 1.0), Keypoint::new(110.0, 120.0, 0.9)];
        let mirrored = vec![Keypoint::new(400.0, 80.0, 1.0), Keypoint::new(380.0, 50.0, 1.0), Keypoint::new(390.0, 120.0, 0.8)];
        let obs = Observation2D::new(real, mirrored, ImageSize(640, 480)).unwrap();
        let v = vp_from_keypoint_pairs(&obs, &swap, 0.1).unwrap();
        assert!(v.is_infinite());
        assert!((v.coords.x.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn keypoint_pairs_need_two_usable_lines() {
        let swap = [0, 1];
        let real = vec![Keypoint::new(0.0, 0.0, 1.0), Keypoint::new(5.0, 5.0, 0.0)];
        let mirrored = vec![Keypoint::new(10.0, 0.0, 1.0), Keypoint::new(15.0, 5.0, 1.0)];
        let obs = Observation2D::new(real, mirrored, ImageSize(64, 64)).unwrap();
        assert_eq!(
            vp_from_keypoint_pairs(&obs, &swap, 0.1),
            Err(Error::InsufficientCorrespondences { usable: 1, required: 2 })
        );
    }

    #[test]
    fn focal_from_two_vps_examples() {
        let h = |x, y| HomogeneousPoint2::from_euclidean(&pt(x, y));
        let f = focal_from_two_orthogonal_vps(&h(1000.0, 0.0), &h(-1000.0, 0.0), &pt(0.0, 0.0)).unwrap();
        assert!((f - 1000.0).abs() < 1e-9);
        let f = focal_from_two_orthogonal_vps(&h(0.0, 800.0), &h(0.0, -450.0), &pt(0.0, 0.0)).unwrap();
        assert!((f - 600.0).abs() < 1e-9);
        assert!(matches!(
            focal_from_two_orthogonal_vps(&h(100.0, 0.0), &h(50.0, 0.0), &pt(0.0, 0.0)),
            Err(Error::ImaginaryFocal { .. })
        ));
        let inf = HomogeneousPoint2::new(Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            focal_from_two_orthogonal_vps(&inf, &h(-10.0, 0.0), &pt(0.0, 0.0)),
            Err(Error::VanishingPointAtInfinity)
        );
    }

    #[test]
    fn focal_is_invariant_to_homogeneous_scale() {
        let cam = PinholeCamera::new(1200.0, pt(960.0, 540.0)).unwrap();
        let a = Vector3::new(0.6, -0.2, -0.77).normalize();
        let b = a.cross(&Vector3::new(0.1, 1.0, 0.2)).normalize();
        let (va, vb) = (cam.project_direction(&a), cam.project_direction(&b));
        let f = focal_from_two_orthogonal_vps(&va, &vb, &cam.principal_point).unwrap();
        assert!((f - 1200.0).abs() / 1200.0 < 1e-9);
        let scaled = HomogeneousPoint2::new(va.coords * -37.5).unwrap();
        let f2 = focal_from_two_orthogonal_vps(&scaled, &vb, &cam.principal_point).unwrap();
        assert!((f - f2).abs() < 1e-9);
    }

    fn generic_rotation() -> nalgebra::Matrix3<f64> {
        crate::rotation::exp(&Vector3::new(0.35, -0.5, 0.2))
    }

    #[test]
    fn three_vps_recover_intrinsics() {
        let cam = PinholeCamera::new(1000.0, pt(960.0, 540.0)).unwrap();
        let r = generic_rotation();
        let vps: Vec<_> = (0..3).map(|k| cam.project_direction(&r.column(k).into_owned())).collect();
        let est = intrinsics_from_three_vps(&vps[0], &vps[1], &vps[2]).unwrap();
        assert!((est.focal - 1000.0).abs() / 1000.0 < 1e-6);
        assert!((est.principal_point - cam.principal_point).norm() / 960.0 < 1e-6);
        for perm in [[1, 0, 2], [2, 1, 0], [0, 2, 1], [1, 2, 0], [2, 0, 1]] {
            let other = intrinsics_from_three_vps(&vps[perm[0]], &vps[perm[1]], &vps[perm[2]]).unwrap();
            assert_eq!(other, est);
        }
    }

    #[test]
    fn three_vp_pairwise_estimates_agree() {
        let cam = PinholeCamera::new(1500.0, pt(640.0, 360.0)).unwrap();
        let r = crate::rotation::exp(&Vector3::new(-0.3, 0.62, 0.1));
        let p: Vec<_> = (0..3)
            .map(|k| cam.project_direction(&r.column(k).into_owned()).to_euclidean().unwrap())
            .collect();
        let c = cam.principal_point;
        let pair = |i: usize, j: usize| (-(p[i] - c).dot(&(p[j] - c))).sqrt();
        let est = [pair(0, 1), pair(0, 2), pair(1, 2)];
        for e in est {
            assert!((e - 1500.0).abs() / 1500.0 < 0.01);
        }
    }

    #[test]
    fn equilateral_triangle_orthocenter_is_centroid() {
        let r = 1000.0;
        let vps: Vec<_> = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                HomogeneousPoint2::from_euclidean(&pt(r * a.cos(), r * a.sin()))
            })
            .collect();
        let cam = intrinsics_from_three_vps(&vps[0], &vps[1], &vps[2]).unwrap();
        assert!(cam.principal_point.norm() < 1e-9);
        // f^2 = -r^2 cos(120 deg) = r^2 / 2.
        assert!((cam.focal - r / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn collinear_vps_are_degenerate() {
        let h = |x, y| HomogeneousPoint2::from_euclidean(&pt(x, y));
        assert_eq!(
            intrinsics_from_three_vps(&h(0.0, 0.0), &h(1.0, 1.0), &h(5.0, 5.0)),
            Err(Error::DegenerateTriangle)
        );
    }

    #[test]
    fn normal_from_vp_examples() {
        let cam = PinholeCamera::new(1000.0, pt(320.0, 240.0)).unwrap();
        let n = normal_from_vp(&cam, &HomogeneousPoint2::from_euclidean(&pt(320.0, 240.0)), None);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        let cam0 = PinholeCamera::new(1000.0, pt(0.0, 0.0)).unwrap();
        let n = normal_from_vp(&cam0, &HomogeneousPoint2::from_euclidean(&pt(1000.0, 0.0)), None);
        assert!((n - Vector3::new(-1.0, 0.0, -1.0) / 2f64.sqrt()).norm() < 1e-15);
        let toward = Vector3::new(0.0, 0.0, -5.0);
        let n = normal_from_vp(&cam0, &HomogeneousPoint2::from_euclidean(&pt(1000.0, 0.0)), Some(&toward));
        assert!(n.z > 0.0);
    }

    #[test]
    fn normal_round_trip() {
        let cam = PinholeCamera::new(1400.0, pt(960.0, 540.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..-0.1),
            )
            .normalize();
            let back = normal_from_vp(&cam, &cam.project_direction(&n), None);
            assert!((back - n).norm() < 1e-12);
            // Homogeneous scale does not matter.
            let scaled = HomogeneousPoint2::new(cam.project_direction(&n).coords * -3.0).unwrap();
            assert!((normal_from_vp(&cam, &scaled, None) - n).norm() < 1e-12);
        }
    }
}
