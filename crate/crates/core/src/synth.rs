//! Seeded generator of synthetic mirror scenes with exact ground truth.
//!
//! A scene is built in a gravity-aligned frame (y down) and then tilted by
//! the camera pitch: a vertical mirror, an upright person between camera and
//! mirror, and the person's exact reflection.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::{
    forward_kinematics, reflect_global, reflect_pose, GlobalTransform, PoseParams, ShapeParams,
    SkeletonTemplate,
};
use crate::camera_geometry::{EdgeAnnotation, EdgeDirection, MirrorPlane, PinholeCamera};
use crate::error::{Error, Result};
use crate::objectives::SubjectParams;
use crate::observation::{ImageSize, Keypoint, Observation2D};

const MAX_ATTEMPTS: usize = 1000;
const MIN_DEPTH: f64 = 0.1;

/// Sampling ranges of a synthetic scene. Angles in degrees, lengths in
/// meters, noise in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub focal_range: [f64; 2],
    pub image_size: ImageSize,
    /// Angle between the mirror normal and the optical axis.
    pub mirror_angle_deg: [f64; 2],
    /// Largest allowed angle between the mirror normal and the optical axis
    /// after the camera pitch is applied.
    pub mirror_cone_deg: f64,
    pub camera_pitch_deg: f64,
    pub subject_depth: [f64; 2],
    pub subject_lateral: f64,
    /// Distance of the subject's root from the mirror plane.
    pub mirror_distance: [f64; 2],
    pub facing_yaw_deg: f64,
    /// Standard deviation of each joint's axis-angle components (radians).
    pub pose_sigma: f64,
    pub shape_range: [f64; 2],
    pub keypoint_noise: f64,
    pub dropout: f64,
    pub mirror_size: [f64; 2],
    pub horizontal_edges: usize,
    pub vertical_edges: usize,
    pub perpendicular_edges: usize,
    pub edge_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            focal_range: [1000.0, 1600.0],
            image_size: ImageSize(1920, 1080),
            mirror_angle_deg: [20.0, 60.0],
            mirror_cone_deg: 60.0,
            camera_pitch_deg: 15.0,
            subject_depth: [3.0, 5.0],
            subject_lateral: 1.0,
            mirror_distance: [0.5, 2.0],
            facing_yaw_deg: 60.0,
            pose_sigma: 0.35,
            shape_range: [0.9, 1.1],
            keypoint_noise: 0.0,
            dropout: 0.0,
            mirror_size: [1.2, 2.0],
            horizontal_edges: 2,
            vertical_edges: 2,
            perpendicular_edges: 0,
            edge_noise: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, keypoint_noise: f64) -> Self {
        self.keypoint_noise = keypoint_noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ranges = [
            self.focal_range,
            self.mirror_angle_deg,
            self.subject_depth,
            self.mirror_distance,
            self.shape_range,
        ];
        if !ranges.iter().all(range_ok) {
            return Err(Error::InvalidConfig("scene spec range is empty".into()));
        }
        if self.focal_range[0] <= 0.0 || self.subject_depth[0] <= 0.0 || self.shape_range[0] <= 0.0 {
            return Err(Error::InvalidConfig("focal, depth and shape must be positive".into()));
        }
        let nonneg = [
            self.keypoint_noise,
            self.edge_noise,
            self.pose_sigma,
            self.camera_pitch_deg,
            self.facing_yaw_deg,
            self.subject_lateral,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("noise and spread values must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        Ok(())
    }
}

/// A synthetic scene and everything used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub seed: u64,
    pub camera: PinholeCamera,
    pub plane: MirrorPlane,
    pub real: SubjectParams,
    /// Reflected pose and global transform; same shape as `real`.
    pub mirrored: SubjectParams,
    pub joints_real: Vec<Vector3<f64>>,
    /// In the mirrored subject's own joint labeling: entry `j` is the
    /// reflection of real joint `swap(j)`.
    pub joints_mirrored: Vec<Vector3<f64>>,
    pub observation: Observation2D,
    pub edges: Vec<EdgeAnnotation>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    uniform(rng, [-half, half])
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Ground-truth shape: uniform bone scales, rescaled so that `sum b^2 =
/// sum b`. Global scale is unobservable from a single view; this makes the
/// truth the scale preferred by a shape prior centered on unit scales.
fn sample_shape(rng: &mut ChaCha8Rng, groups: usize, range: [f64; 2]) -> ShapeParams {
    let mut beta: Vec<f64> = (0..groups).map(|_| uniform(rng, range)).collect();
    let s = beta.iter().sum::<f64>() / beta.iter().map(|b| b * b).sum::<f64>();
    beta.iter_mut().for_each(|b| *b *= s);
    ShapeParams { beta }
}

/// Random pose; rotations of the root and of leaf joints move nothing and
/// are left at zero.
fn sample_pose(rng: &mut ChaCha8Rng, template: &SkeletonTemplate, sigma: f64) -> PoseParams {
    let n = template.num_joints();
    let mut has_child = vec![false; n];
    for j in 0..n {
        if let Some(p) = template.parent(j) {
            has_child[p] = true;
        }
    }
    let mut pose = PoseParams::zeros(n);
    for j in 0..n {
        if has_child[j] && template.parent(j).is_some() {
            pose.theta[j] = Vector3::from_fn(|_, _| gaussian(rng, sigma));
        }
    }
    pose.canonicalize();
    pose
}

fn in_image(p: &Vector2<f64>, size: ImageSize) -> bool {
    (0.0..=size.width()).contains(&p.x) && (0.0..=size.height()).contains(&p.y)
}

fn observe(
    rng: &mut ChaCha8Rng,
    camera: &PinholeCamera,
    joints: &[Vector3<f64>],
    spec: &SceneSpec,
) -> Option<Vec<Keypoint>> {
    let sigma = spec.keypoint_noise;
    let mut out = Vec::with_capacity(joints.len());
    for x in joints {
        if x.z < MIN_DEPTH {
            return None;
        }
        let clean = camera.project(x).ok()?;
        if !in_image(&clean, spec.image_size) {
            return None;
        }
        let noise = Vector2::new(gaussian(rng, sigma), gaussian(rng, sigma));
        let mut c = if sigma > 0.0 {
            (1.0 - noise.norm() / (3.0 * sigma)).clamp(0.1, 1.0)
        } else {
            1.0
        };
        if spec.dropout > 0.0 && rng.random_bool(spec.dropout) {
            c = 0.0;
        }
        out.push(Keypoint {
            position: clean + noise,
            confidence: c,
        });
    }
    Some(out)
}

fn attempt(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    template: &SkeletonTemplate,
) -> Option<GroundTruthScene> {
    let deg = PI / 180.0;
    let focal = uniform(rng, spec.focal_range);
    let camera = PinholeCamera::new(focal, spec.image_size.center()).ok()?;
    let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), symmetric(rng, spec.camera_pitch_deg) * deg);

    let psi = uniform(rng, spec.mirror_angle_deg) * deg * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let normal_level = Vector3::new(psi.sin(), 0.0, -psi.cos());
    let normal = pitch * normal_level;
    if (-normal.z).acos() > spec.mirror_cone_deg * deg {
        return None;
    }

    let root_level = Vector3::new(
        symmetric(rng, spec.subject_lateral),
        0.3 + symmetric(rng, 0.2),
        uniform(rng, spec.subject_depth),
    );
    let distance = uniform(rng, spec.mirror_distance);
    let plane_point_level = root_level - distance * normal_level;
    let plane = MirrorPlane::through_point(normal, &(pitch * plane_point_level)).ok()?;
    if plane.normal.dot(&normal) < 0.0 {
        // camera and subject on opposite sides of the mirror
        return None;
    }

    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), symmetric(rng, spec.facing_yaw_deg) * deg);
    let rotation = (pitch * yaw).scaled_axis();
    let real = SubjectParams {
        pose: sample_pose(rng, template, spec.pose_sigma),
        shape: sample_shape(rng, template.num_groups(), spec.shape_range),
        global: GlobalTransform::new(rotation, pitch * root_level),
    };
    let mirrored = SubjectParams {
        pose: reflect_pose(template, &real.pose),
        shape: real.shape.clone(),
        global: reflect_global(&real.global, &plane),
    };
    let joints_real = real.global.apply(&forward_kinematics(template, &real.pose, &real.shape).ok()?);
    let swap = template.left_right_pairs();
    let joints_mirrored: Vec<_> = (0..joints_real.len())
        .map(|j| plane.reflect_point(&joints_real[swap[j]]))
        .collect();

    let keypoints_real = observe(rng, &camera, &joints_real, spec)?;
    let keypoints_mirrored = observe(rng, &camera, &joints_mirrored, spec)?;
    for kps in [&keypoints_real, &keypoints_mirrored] {
        if Observation2D::confident_count(kps, 0.0) < 6 {
            return None;
        }
    }
    let observation = Observation2D::new(keypoints_real, keypoints_mirrored, spec.image_size).ok()?;

    let edges = sample_edges(rng, spec, &camera, &pitch, &normal_level, &plane_point_level)?;
    Some(GroundTruthScene {
        seed: spec.seed,
        camera,
        plane,
        real,
        mirrored,
        joints_real,
        joints_mirrored,
        observation,
        edges,
    })
}

/// Mirror-frame edges: the top/bottom and left/right sides of the mirror
/// rectangle plus any extra segments requested by the spec.
fn sample_edges(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    camera: &PinholeCamera,
    pitch: &Rotation3<f64>,
    normal_level: &Vector3<f64>,
    center_level: &Vector3<f64>,
) -> Option<Vec<EdgeAnnotation>> {
    let vertical = Vector3::y();
    let horizontal = vertical.cross(normal_level).normalize();
    let (half_w, half_h) = (spec.mirror_size[0] / 2.0, spec.mirror_size[1] / 2.0);
    let center = center_level - 0.2 * vertical;
    let at = |a: f64, b: f64| center + a * horizontal + b * vertical;

    let mut segments: Vec<([Vector3<f64>; 2], EdgeDirection)> = Vec::new();
    for k in 0..spec.horizontal_edges {
        let b = match k {
            0 => -half_h,
            1 => half_h,
            _ => symmetric(rng, half_h),
        };
        segments.push(([at(-half_w, b), at(half_w, b)], EdgeDirection::ParallelToMirrorHorizontal));
    }
    for k in 0..spec.vertical_edges {
        let a = match k {
            0 => -half_w,
            1 => half_w,
            _ => symmetric(rng, half_w),
        };
        segments.push(([at(a, -half_h), at(a, half_h)], EdgeDirection::ParallelToMirrorVertical));
    }
    for _ in 0..spec.perpendicular_edges {
        let start = at(symmetric(rng, half_w), uniform(rng, [0.5 * half_h, half_h]));
        segments.push(([start, start + 0.5 * normal_level], EdgeDirection::PerpendicularToMirror));
    }

    let mut labeled = Vec::with_capacity(segments.len());
    for (ends, label) in segments {
        let mut pixels = [Vector2::zeros(); 2];
        for (px, end) in pixels.iter_mut().zip(&ends) {
            let x = pitch * end;
            if x.z < MIN_DEPTH {
                return None;
            }
            let noise = Vector2::new(gaussian(rng, spec.edge_noise), gaussian(rng, spec.edge_noise));
            *px = camera.project(&x).ok()? + noise;
        }
        labeled.push((pixels, label));
    }
    EdgeAnnotation::group(&labeled).ok()
}

/// One scene from `spec.seed`, using rejection sampling for visibility.
pub fn generate_scene(spec: &SceneSpec, template: &SkeletonTemplate) -> Result<GroundTruthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = attempt(&mut rng, spec, template) {
            return Ok(scene);
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_ATTEMPTS,
    })
}

/// `count` scenes with seeds `spec.seed + i`.
pub fn generate_batch(
    spec: &SceneSpec,
    template: &SkeletonTemplate,
    count: usize,
) -> Result<Vec<GroundTruthScene>> {
    if count == 0 {
        return Err(Error::InvalidConfig("batch count must be at least 1".into()));
    }
    (0..count as u64)
        .map(|i| generate_scene(&spec.clone().with_seed(spec.seed.wrapping_add(i)), template))
        .collect()
}
