//! Initialization and staged L-BFGS minimization of the mirror objective,
//! and the end-to-end reconstruction pipeline.

use std::f64::consts::PI;

use log::{debug, info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body_model::{
    forward_kinematics, reflect_global, reflect_pose, GlobalTransform, SkeletonTemplate,
    SHAPE_BOUNDS,
};
use crate::camera_geometry::{
    calibrate, mirror_plane_from_midpoints, normal_from_vp, vp_from_keypoint_pairs,
    CalibrationRoute, EdgeAnnotation, HomogeneousPoint2, MirrorPlane, PinholeCamera, RouteTaken,
    VanishingPoints,
};
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsOptions, Termination};
use crate::metrics;
use crate::objectives::{
    reprojection_accumulate, Block, LossTerms, LossWeights, Objective, Reference, SubjectParams,
    TiedVariables, Variables,
};
use crate::observation::{Keypoint, Observation2D};
use crate::rotation;
use crate::serde_helpers;

/// Minimum number of confident keypoints per subject.
pub const MIN_KEYPOINTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub free: Vec<Block>,
    pub max_iterations: usize,
    /// Optimize with the mirrored subject tied to the exact reflection of
    /// the real one across an explicit plane. Skipped when the symmetry
    /// term is disabled.
    #[serde(default)]
    pub mirror_tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub stages: Vec<Stage>,
    pub grad_tolerance: f64,
    pub param_tolerance: f64,
    pub history: usize,
    /// Recorded in outputs; the pipeline itself draws no random numbers.
    pub seed: u64,
    /// Keypoints below this confidence are not used for vanishing points.
    pub min_confidence: f64,
    pub calibration_route: CalibrationRoute,
    /// Number of yaw samples of the rigid initialization grid.
    pub yaw_samples: usize,
    pub init_iterations: usize,
    /// Iterations of each screening run of a tied stage's multi-start.
    pub tied_screen_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            stages: vec![
                Stage {
                    free: vec![Block::RealGlobal, Block::MirroredGlobal],
                    max_iterations: 300,
                    mirror_tied: false,
                },
                Stage {
                    free: vec![Block::Pose, Block::Shape, Block::RealGlobal, Block::MirrorPlane],
                    max_iterations: 10000,
                    mirror_tied: true,
                },
                Stage {
                    free: vec![Block::Pose, Block::Shape, Block::RealGlobal, Block::MirroredGlobal],
                    max_iterations: 3000,
                    mirror_tied: false,
                },
            ],
            grad_tolerance: 1e-9,
            param_tolerance: 1e-12,
            history: 10,
            seed: 0,
            min_confidence: 0.0,
            calibration_route: CalibrationRoute::Auto,
            yaw_samples: 8,
            init_iterations: 200,
            tied_screen_iterations: 150,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.stages.last() else {
            return Err(Error::InvalidConfig("at least one stage is required".into()));
        };
        let all = [Block::Pose, Block::Shape, Block::RealGlobal, Block::MirroredGlobal];
        if last.mirror_tied || !all.iter().all(|b| last.free.contains(b)) {
            return Err(Error::InvalidConfig("the final stage must free every block".into()));
        }
        for stage in &self.stages {
            let plane = stage.free.contains(&Block::MirrorPlane);
            let mirrored = stage.free.contains(&Block::MirroredGlobal);
            if (plane && !stage.mirror_tied) || (mirrored && stage.mirror_tied) {
                return Err(Error::InvalidConfig(
                    "the mirror plane block belongs to tied stages, the mirrored global to untied ones".into(),
                ));
            }
        }
        if !(self.grad_tolerance > 0.0 && self.param_tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.history == 0 || self.yaw_samples == 0 {
            return Err(Error::InvalidConfig("history and yaw_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig("min_confidence must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn lbfgs(&self, max_iterations: usize) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations,
            grad_tolerance: self.grad_tolerance,
            param_tolerance: self.param_tolerance,
            history: self.history,
            ..LbfgsOptions::default()
        }
    }
}

/// Everything known about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    pub observation: Observation2D,
    pub edges: Vec<EdgeAnnotation>,
    pub known_intrinsics: Option<PinholeCamera>,
    pub known_normal: Option<Vector3<f64>>,
}

impl SceneInput {
    pub fn new(observation: Observation2D) -> Self {
        Self {
            observation,
            edges: Vec::new(),
            known_intrinsics: None,
            known_normal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Real,
    Mirrored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Initialization {
    pub real: SubjectParams,
    pub mirrored: SubjectParams,
    pub reference: Reference,
    /// Subject whose fit seeded the other.
    pub source: Subject,
    /// Mean robust reprojection cost per confident keypoint of the rigid
    /// fits, real then mirrored.
    pub reprojection_errors: [f64; 2],
    /// Alternative global transforms of the real subject, from the other
    /// local optima of both rigid fits; used as extra starts of tied stages.
    pub alternatives: Vec<GlobalTransform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSource {
    Known,
    TwoVp,
    ThreeVp,
    /// `1.2 * max(width, height)` at the image center.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalSource {
    Known,
    VanishingPoint,
    /// No normal; the normal term was disabled.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub free: Vec<Block>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub final_terms: LossTerms,
    /// Parameters at the end of the stage; not serialized.
    #[serde(skip)]
    pub variables: Option<Variables>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub real: SubjectParams,
    /// Pose is the reflection of the real pose, shape is the real shape.
    pub mirrored: SubjectParams,
    pub fitted_plane: MirrorPlane,
    pub camera: PinholeCamera,
    pub camera_source: CameraSource,
    #[serde(with = "serde_helpers::opt_vec3")]
    pub normal: Option<Vector3<f64>>,
    pub normal_source: NormalSource,
    pub keypoint_vanishing_point: Option<HomogeneousPoint2>,
    pub vanishing_points: Option<VanishingPoints>,
    pub init_source: Subject,
    pub reference: Reference,
    /// Weights actually used (the normal term is zeroed without a normal).
    pub weights: LossWeights,
    pub loss_trace: Vec<StageTrace>,
    pub termination_reason: Termination,
    pub final_loss: f64,
    #[serde(with = "serde_helpers::vec3_list")]
    pub joints_real: Vec<Vector3<f64>>,
    #[serde(with = "serde_helpers::vec3_list")]
    pub joints_mirrored: Vec<Vector3<f64>>,
}

impl ReconstructionResult {
    /// True when any estimate fell back to a default.
    pub fn degraded(&self) -> bool {
        self.camera_source == CameraSource::Fallback || self.normal_source == NormalSource::Unavailable
    }

    /// The free-variable view of the result.
    pub fn variables(&self) -> Variables {
        Variables {
            pose: self.real.pose.clone(),
            shape: self.real.shape.clone(),
            real_global: self.real.global,
            mirrored_global: self.mirrored.global,
        }
    }
}

fn confident(keypoints: &[Keypoint]) -> usize {
    Observation2D::confident_count(keypoints, 0.0)
}

fn check_keypoints(obs: &Observation2D, template: &SkeletonTemplate) -> Result<()> {
    if obs.num_joints() != template.num_joints() {
        return Err(Error::DimensionMismatch {
            what: "observation joints",
            expected: template.num_joints(),
            actual: obs.num_joints(),
        });
    }
    for (subject, kps) in [("real", &obs.keypoints_real), ("mirrored", &obs.keypoints_mirrored)] {
        let n = confident(kps);
        if n < MIN_KEYPOINTS {
            return Err(Error::InsufficientKeypoints {
                subject,
                confident: n,
                required: MIN_KEYPOINTS,
            });
        }
    }
    Ok(())
}

/// Robust reprojection cost of a rigid skeleton and its gradient w.r.t.
/// `(rotation, translation)`.
fn rigid_cost(
    camera: &PinholeCamera,
    rest: &[Vector3<f64>],
    keypoints: &[Keypoint],
    sigma: f64,
    x: &[f64],
    grad: &mut [f64],
) -> f64 {
    let w = Vector3::new(x[0], x[1], x[2]);
    let g = GlobalTransform::new(w, Vector3::new(x[3], x[4], x[5]));
    let joints = g.apply(rest);
    let mut g_x = vec![Vector3::zeros(); rest.len()];
    let value = reprojection_accumulate(camera, &joints, keypoints, sigma, Some(&mut g_x));
    let d = rotation::exp_derivatives(&w);
    grad.iter_mut().for_each(|v| *v = 0.0);
    for (p, gx) in rest.iter().zip(&g_x) {
        for k in 0..3 {
            grad[k] += gx.dot(&(d[k] * p));
            grad[3 + k] += gx[k];
        }
    }
    value
}

fn canonicalize_slice(x: &mut [f64]) -> bool {
    let w = Vector3::new(x[0], x[1], x[2]);
    let c = rotation::canonicalize(&w);
    if c != w {
        x[..3].copy_from_slice(c.as_slice());
        true
    } else {
        false
    }
}

/// Rigid fit of the rest-pose skeleton: yaw grid, each refined locally.
/// Returns the distinct local optima with their mean robust cost per
/// confident keypoint, best first.
fn fit_rigid(
    camera: &PinholeCamera,
    rest: &[Vector3<f64>],
    keypoints: &[Keypoint],
    config: &SolverConfig,
    sigma: f64,
) -> Vec<(GlobalTransform, f64)> {
    let used: Vec<usize> = (0..rest.len()).filter(|&j| keypoints[j].confidence > 0.0).collect();
    let n = used.len() as f64;
    let c3 = used.iter().map(|&j| rest[j]).sum::<Vector3<f64>>() / n;
    let c2 = used.iter().map(|&j| keypoints[j].position).sum::<nalgebra::Vector2<f64>>() / n;
    let s3 = (used.iter().map(|&j| (rest[j] - c3).norm_squared()).sum::<f64>() / n).sqrt();
    let s2 = (used.iter().map(|&j| (keypoints[j].position - c2).norm_squared()).sum::<f64>() / n).sqrt();
    let depth = if s2 > 1e-9 { camera.focal * s3 / s2 } else { 3.0 };

    let options = config.lbfgs(config.init_iterations);
    let mut found: Vec<(GlobalTransform, f64)> = Vec::new();
    for k in 0..config.yaw_samples {
        let yaw = 2.0 * PI * k as f64 / config.yaw_samples as f64;
        let w = Vector3::new(0.0, yaw, 0.0);
        let rotated_center = rotation::exp(&w) * c3;
        let t = camera.backproject(&c2, depth) - rotated_center;
        let x0 = vec![w.x, w.y, w.z, t.x, t.y, t.z];
        let f = |x: &[f64], g: &mut [f64]| rigid_cost(camera, rest, keypoints, sigma, x, g);
        let Ok(report) = lbfgs::minimize(f, x0, &[true; 6], &options, canonicalize_slice) else {
            continue;
        };
        let x = &report.x;
        let g = GlobalTransform::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]));
        let duplicate = found.iter().any(|(h, _)| {
            rotation::log(&(h.rotation_matrix().transpose() * g.rotation_matrix())).norm() < 0.1
                && (h.translation - g.translation).norm() < 0.05 * depth
        });
        if !duplicate && report.value.is_finite() {
            found.push((g, report.value / n));
        }
    }
    if found.is_empty() {
        found.push((GlobalTransform::new(Vector3::zeros(), Vector3::new(0.0, 0.0, depth)), f64::INFINITY));
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    found
}

/// Geometric initialization: rest pose and unit shape for both subjects,
/// rigid fits of each, and the better-fitting subject seeding the other.
pub fn initialize(
    scene: &SceneInput,
    camera: &PinholeCamera,
    template: &SkeletonTemplate,
    config: &SolverConfig,
    weights: &LossWeights,
    normal: Option<&Vector3<f64>>,
) -> Result<Initialization> {
    let obs = &scene.observation;
    check_keypoints(obs, template)?;
    let pose = template.zero_pose();
    let shape = template.unit_shape();
    let rest = forward_kinematics(template, &pose, &shape)?;
    let sigma = weights.gm_sigma;

    let fits_real = fit_rigid(camera, &rest, &obs.keypoints_real, config, sigma);
    let fits_mirr = fit_rigid(camera, &rest, &obs.keypoints_mirrored, config, sigma);
    let (g_real, e_real) = fits_real[0];
    let (g_mirr, e_mirr) = fits_mirr[0];
    // ties go to the real subject
    let source = if e_mirr < e_real { Subject::Mirrored } else { Subject::Real };
    let (better, worse, worse_kps, worse_err) = match source {
        Subject::Real => (g_real, g_mirr, &obs.keypoints_mirrored, e_mirr),
        Subject::Mirrored => (g_mirr, g_real, &obs.keypoints_real, e_real),
    };

    // The reflection of the better fit across the plane through the roots'
    // midpoint may explain the other subject better than its own fit.
    let midpoint = 0.5 * (better.translation + worse.translation);
    let direction = normal.copied().unwrap_or(better.translation - worse.translation);
    let mut other = worse;
    if let Ok(plane) = MirrorPlane::through_point(direction, &midpoint) {
        let candidate = reflect_global(&better, &plane);
        let mut g = [0.0; 6];
        let x: Vec<f64> = candidate.rotation.iter().chain(candidate.translation.iter()).copied().collect();
        let n = confident(worse_kps) as f64;
        let cost = rigid_cost(camera, &rest, worse_kps, sigma, &x, &mut g) / n;
        if cost < worse_err {
            debug!("reflected {source:?} fit replaces the other subject's rigid fit ({cost:.3} < {worse_err:.3})");
            other = candidate;
        }
    }
    let (real_global, mirrored_global) = match source {
        Subject::Real => (better, other),
        Subject::Mirrored => (other, better),
    };
    let mut alternatives: Vec<GlobalTransform> = fits_real[1..].iter().map(|f| f.0).collect();
    let midpoint = 0.5 * (real_global.translation + mirrored_global.translation);
    let direction = normal.copied().unwrap_or(real_global.translation - mirrored_global.translation);
    if let Ok(plane) = MirrorPlane::through_point(direction, &midpoint) {
        alternatives.extend(fits_mirr[1..].iter().map(|f| reflect_global(&f.0, &plane)));
    }

    let reference = Reference {
        pose: pose.clone(),
        shape: shape.clone(),
    };
    Ok(Initialization {
        real: SubjectParams {
            pose: pose.clone(),
            shape: shape.clone(),
            global: real_global,
        },
        mirrored: SubjectParams {
            pose: reflect_pose(template, &pose),
            shape,
            global: mirrored_global,
        },
        reference,
        source,
        reprojection_errors: [e_real, e_mirr],
        alternatives,
    })
}

fn project_variables(template: &SkeletonTemplate, x: &mut [f64]) -> bool {
    let n = template.num_joints();
    let b = template.num_groups();
    let mut changed = false;
    for j in 0..n {
        changed |= canonicalize_slice(&mut x[3 * j..3 * j + 3]);
    }
    for v in &mut x[3 * n..3 * n + b] {
        let c = v.clamp(SHAPE_BOUNDS.0, SHAPE_BOUNDS.1);
        changed |= c != *v;
        *v = c;
    }
    let g0 = 3 * n + b;
    changed |= canonicalize_slice(&mut x[g0..g0 + 3]);
    changed |= canonicalize_slice(&mut x[g0 + 6..g0 + 9]);
    changed
}

/// Exact minimization along the global scale orbit. Scaling bone scales and
/// both translations by `s` leaves every reprojection, the pose prior, the
/// normal term and the cross-product part of the symmetry term unchanged;
/// the shape prior is quadratic in `s` and the remaining symmetry part is
/// linear, so the optimal `s` has a closed form.
fn scale_gauge_step(objective: &Objective<'_>, x: &mut [f64]) -> Result<bool> {
    let t = objective.template;
    let (n, b) = (t.num_joints(), t.num_groups());
    let vars = Variables::from_slice(t, x)?;
    let w = &objective.weights;
    let along = objective.symmetry_offsets(&vars)?;
    let beta = &vars.shape.beta;
    let reference = &objective.reference.shape.beta;
    let sq: f64 = beta.iter().map(|v| v * v).sum();
    let cross: f64 = beta.iter().zip(reference).map(|(v, r)| v * r).sum();
    let curvature = 4.0 * w.lambda_p * w.lambda_beta * sq;
    if !(curvature > 0.0) {
        return Ok(false);
    }
    let s = (4.0 * w.lambda_p * w.lambda_beta * cross - w.lambda_s * along) / curvature;
    let s = s.clamp(
        beta.iter().fold(0.0f64, |m, v| m.max(SHAPE_BOUNDS.0 / v)),
        beta.iter().fold(f64::INFINITY, |m, v| m.min(SHAPE_BOUNDS.1 / v)),
    );
    if !(s.is_finite() && s > 0.0) || (s - 1.0).abs() < 1e-15 {
        return Ok(false);
    }
    let g0 = 3 * n + b;
    x[3 * n..g0].iter_mut().for_each(|v| *v *= s);
    x[g0 + 3..g0 + 6].iter_mut().for_each(|v| *v *= s);
    x[g0 + 9..g0 + 12].iter_mut().for_each(|v| *v *= s);
    Ok(true)
}

fn project_tied(template: &SkeletonTemplate, x: &mut [f64]) -> bool {
    let n = template.num_joints();
    let b = template.num_groups();
    let mut changed = false;
    for j in 0..n {
        changed |= canonicalize_slice(&mut x[3 * j..3 * j + 3]);
    }
    for v in &mut x[3 * n..3 * n + b] {
        let c = v.clamp(SHAPE_BOUNDS.0, SHAPE_BOUNDS.1);
        changed |= c != *v;
        *v = c;
    }
    let g0 = 3 * n + b;
    changed |= canonicalize_slice(&mut x[g0..g0 + 3]);
    // the objective only sees the normal's direction; keep its length sane
    let normal = Vector3::new(x[g0 + 7], x[g0 + 8], x[g0 + 9]);
    let norm = normal.norm();
    if norm > 0.0 && (norm - 1.0).abs() > 0.5 {
        x[g0 + 7..g0 + 10].copy_from_slice((normal / norm).as_slice());
        changed = true;
    }
    changed
}

/// Scale gauge step of the tied parameterization, where the symmetry term
/// vanishes and only the shape prior depends on the scale.
fn tied_scale_gauge_step(objective: &Objective<'_>, x: &mut [f64]) -> bool {
    let t = objective.template;
    let (n, b) = (t.num_joints(), t.num_groups());
    let g0 = 3 * n + b;
    let beta = &x[3 * n..g0];
    let sq: f64 = beta.iter().map(|v| v * v).sum();
    let cross: f64 = beta.iter().zip(&objective.reference.shape.beta).map(|(v, r)| v * r).sum();
    if !(sq > 0.0 && objective.weights.lambda_beta > 0.0 && objective.weights.lambda_p > 0.0) {
        return false;
    }
    let s = (cross / sq).clamp(
        beta.iter().fold(0.0f64, |m, v| m.max(SHAPE_BOUNDS.0 / v)),
        beta.iter().fold(f64::INFINITY, |m, v| m.min(SHAPE_BOUNDS.1 / v)),
    );
    if !(s.is_finite() && s > 0.0) || (s - 1.0).abs() < 1e-15 {
        return false;
    }
    x[3 * n..g0].iter_mut().for_each(|v| *v *= s);
    x[g0 + 3..g0 + 6].iter_mut().for_each(|v| *v *= s);
    // the offset is stored relative to the normalized direction
    x[g0 + 6] *= s;
    true
}

struct StageRun {
    x: Vec<f64>,
    iterations: usize,
    evaluations: usize,
    termination: Termination,
}

/// Tied starts from the current untied point: the real subject as is, and
/// the real subject replaced by the reflection of the mirrored one. The plane
/// passes through the midpoint of the two roots.
fn tied_starts(
    vars: &Variables,
    normal: Option<&Vector3<f64>>,
    alternatives: &[GlobalTransform],
) -> Vec<TiedVariables> {
    let (tr, tm) = (vars.real_global.translation, vars.mirrored_global.translation);
    let direction = normal.copied().unwrap_or(tr - tm);
    let Ok(plane) = MirrorPlane::through_point(direction, &(0.5 * (tr + tm))) else {
        return Vec::new();
    };
    [vars.real_global, reflect_global(&vars.mirrored_global, &plane)]
        .into_iter()
        .chain(alternatives.iter().copied())
        .map(|real_global| TiedVariables {
            pose: vars.pose.clone(),
            shape: vars.shape.clone(),
            real_global,
            normal: plane.normal,
            offset: plane.offset,
        })
        .collect()
}

fn run_tied_stage(
    objective: &Objective<'_>,
    stage: &Stage,
    config: &SolverConfig,
    x: &[f64],
    free_normal: bool,
    alternatives: &[GlobalTransform],
) -> Result<Option<StageRun>> {
    let template = objective.template;
    let vars = Variables::from_slice(template, x)?;
    let mask = TiedVariables::mask(template, &stage.free, free_normal);
    let f = |x: &[f64], g: &mut [f64]| -> f64 {
        let Ok(vars) = TiedVariables::from_slice(template, x) else {
            return f64::NAN;
        };
        match objective.evaluate_tied(&vars) {
            Ok(v) => {
                g.copy_from_slice(&v.gradient);
                v.value
            }
            Err(_) => f64::INFINITY,
        }
    };
    let minimize = |x0: Vec<f64>, iterations: usize| {
        lbfgs::minimize(f, x0, &mask, &config.lbfgs(iterations), |x| project_tied(template, x)).ok()
    };

    // short runs from every start, then the best one to completion
    let starts = tied_starts(&vars, objective.normal.as_ref(), alternatives);
    let screen = config.tied_screen_iterations.min(stage.max_iterations);
    let mut best: Option<lbfgs::LbfgsReport> = None;
    for start in starts {
        let Some(report) = minimize(start.to_vec(), screen) else {
            continue;
        };
        if best.as_ref().map_or(true, |b| report.value < b.value) {
            best = Some(report);
        }
    }
    let Some(screened) = best else {
        return Ok(None);
    };
    let (mut iterations, mut evaluations) = (screened.iterations, screened.evaluations);
    let mut report = screened;
    if report.termination == Termination::MaxIter && stage.max_iterations > screen {
        if let Some(r) = minimize(report.x.clone(), stage.max_iterations - screen) {
            iterations += r.iterations;
            evaluations += r.evaluations;
            report = r;
        }
    }
    let mut xt = report.x;
    if stage.free.contains(&Block::Shape) {
        let before = objective.evaluate_tied(&TiedVariables::from_slice(template, &xt)?)?.value;
        let mut scaled = xt.clone();
        if tied_scale_gauge_step(objective, &mut scaled) {
            let after = objective.evaluate_tied(&TiedVariables::from_slice(template, &scaled)?)?.value;
            if after <= before {
                xt = scaled;
            }
        }
    }
    let untied = TiedVariables::from_slice(template, &xt)?.untie()?;
    Ok(Some(StageRun {
        x: untied.to_vec(),
        iterations,
        evaluations,
        termination: report.termination,
    }))
}

fn run_untied_stage(
    objective: &Objective<'_>,
    stage: &Stage,
    config: &SolverConfig,
    x: &[f64],
) -> Result<StageRun> {
    let template = objective.template;
    let mask = Variables::mask(template, &stage.free);
    let f = |x: &[f64], g: &mut [f64]| -> f64 {
        let Ok(vars) = Variables::from_slice(template, x) else {
            return f64::NAN;
        };
        match objective.evaluate(&vars) {
            Ok(v) => {
                g.copy_from_slice(&v.gradient);
                v.value
            }
            Err(_) => f64::INFINITY,
        }
    };
    let report = lbfgs::minimize(f, x.to_vec(), &mask, &config.lbfgs(stage.max_iterations), |x| {
        project_variables(template, x)
    })
    .map_err(|e| Error::NonFiniteLoss {
        value: e.value,
        params: x.to_vec(),
    })?;
    let mut x = report.x;
    if stage.free.contains(&Block::Shape) && stage.max_iterations > 0 {
        let before = objective.value(&Variables::from_slice(template, &x)?)?.0;
        let mut scaled = x.clone();
        if scale_gauge_step(objective, &mut scaled)? {
            let after = objective.value(&Variables::from_slice(template, &scaled)?)?.0;
            debug!("scale gauge step: {before:.9e} -> {after:.9e}");
            if after <= before {
                x = scaled;
            }
        }
    }
    Ok(StageRun {
        x,
        iterations: report.iterations,
        evaluations: report.evaluations,
        termination: report.termination,
    })
}

/// Runs the configured stages from `init`.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    scene: &SceneInput,
    camera: &PinholeCamera,
    template: &SkeletonTemplate,
    init: &Initialization,
    weights: &LossWeights,
    config: &SolverConfig,
    normal: Option<&Vector3<f64>>,
) -> Result<(Variables, Vec<StageTrace>)> {
    config.validate()?;
    let objective = Objective::new(
        *camera,
        template,
        &scene.observation,
        &init.reference,
        weights,
        normal.copied(),
    )?;
    let mut x = Variables {
        pose: init.real.pose.clone(),
        shape: init.real.shape.clone(),
        real_global: init.real.global,
        mirrored_global: init.mirrored.global,
    }
    .to_vec();
    let mut trace = Vec::with_capacity(config.stages.len());
    for (k, stage) in config.stages.iter().enumerate() {
        let (_, initial) = objective.value(&Variables::from_slice(template, &x)?)?;
        if !initial.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                value: initial.total,
                params: x.clone(),
            });
        }
        let run = if stage.mirror_tied {
            if objective.weights.lambda_s == 0.0 {
                debug!("stage {k}: symmetry term disabled, skipping the tied stage");
                continue;
            }
            if stage.max_iterations == 0 {
                debug!("stage {k}: zero iterations, skipping the tied stage");
                continue;
            }
            match run_tied_stage(&objective, stage, config, &x, normal.is_none(), &init.alternatives)? {
                // an intermediate stage never makes things worse
                Some(run) if objective.value(&Variables::from_slice(template, &run.x)?)?.0 < initial.total => run,
                Some(run) => StageRun { x: x.clone(), ..run },
                None => continue,
            }
        } else {
            run_untied_stage(&objective, stage, config, &x)?
        };
        x = run.x;
        let (_, final_terms) = objective.value(&Variables::from_slice(template, &x)?)?;
        debug!(
            "stage {k}: {} iterations, {} evaluations, {:?}, loss {:.6e} -> {:.6e}",
            run.iterations, run.evaluations, run.termination, initial.total, final_terms.total
        );
        trace.push(StageTrace {
            free: stage.free.clone(),
            iterations: run.iterations,
            evaluations: run.evaluations,
            termination: run.termination,
            initial,
            final_terms,
            variables: Some(Variables::from_slice(template, &x)?),
        });
    }
    Ok((Variables::from_slice(template, &x)?, trace))
}

struct CameraChoice {
    camera: PinholeCamera,
    source: CameraSource,
    vanishing_points: Option<VanishingPoints>,
}

fn choose_camera(scene: &SceneInput, template: &SkeletonTemplate, config: &SolverConfig) -> CameraChoice {
    if let Some(camera) = scene.known_intrinsics {
        return CameraChoice {
            camera,
            source: CameraSource::Known,
            vanishing_points: None,
        };
    }
    let obs = &scene.observation;
    match calibrate(obs, template.left_right_pairs(), &scene.edges, config.min_confidence, config.calibration_route) {
        Ok(c) => CameraChoice {
            camera: c.camera,
            source: match c.route {
                RouteTaken::TwoVp => CameraSource::TwoVp,
                RouteTaken::ThreeVp => CameraSource::ThreeVp,
            },
            vanishing_points: Some(c.vanishing_points),
        },
        Err(e) => {
            let size = obs.image_size;
            let focal = 1.2 * size.width().max(size.height());
            warn!("calibration failed ({e}); using fallback focal {focal}");
            CameraChoice {
                camera: PinholeCamera::new(focal, size.center()).expect("positive focal"),
                source: CameraSource::Fallback,
                vanishing_points: None,
            }
        }
    }
}

/// Full pipeline: calibration (unless intrinsics are known), mirror normal,
/// initialization, staged optimization and the fitted mirror plane.
pub fn reconstruct_scene(
    scene: &SceneInput,
    template: &SkeletonTemplate,
    weights: &LossWeights,
    config: &SolverConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    weights.validate()?;
    check_keypoints(&scene.observation, template)?;
    let choice = choose_camera(scene, template, config);
    reconstruct_with_camera(scene, template, weights, config, choice)
}

fn reconstruct_with_camera(
    scene: &SceneInput,
    template: &SkeletonTemplate,
    weights: &LossWeights,
    config: &SolverConfig,
    choice: CameraChoice,
) -> Result<ReconstructionResult> {
    let swap = template.left_right_pairs();
    let camera = choice.camera;
    let v0 = vp_from_keypoint_pairs(&scene.observation, swap, config.min_confidence).ok();
    let (normal, normal_source) = match (scene.known_normal, v0) {
        (Some(n), _) if n.norm() > 0.0 => (Some(n.normalize()), NormalSource::Known),
        (_, Some(v)) if choice.source != CameraSource::Fallback => {
            (Some(normal_from_vp(&camera, &v, None)), NormalSource::VanishingPoint)
        }
        _ => (None, NormalSource::Unavailable),
    };
    let mut weights = weights.clone();
    if normal.is_none() {
        weights.lambda_n = 0.0;
    }
    info!(
        "camera f={:.3} ({:?}), normal {:?}",
        camera.focal, choice.source, normal_source
    );

    let init = initialize(scene, &camera, template, config, &weights, normal.as_ref())?;
    let (vars, loss_trace) = optimize(scene, &camera, template, &init, &weights, config, normal.as_ref())?;
    let real = vars.real();
    let mirrored = vars.mirrored(template);
    let joints_real = real.joints(template)?;
    let joints_mirrored = mirrored.joints(template)?;

    let obs = &scene.observation;
    let counterparts: Vec<_> = swap.iter().map(|&k| joints_mirrored[k]).collect();
    let plane_weights: Vec<f64> = (0..swap.len())
        .map(|i| obs.keypoints_real[i].confidence * obs.keypoints_mirrored[swap[i]].confidence)
        .collect();
    let fitted_plane = mirror_plane_from_midpoints(&joints_real, &counterparts, &plane_weights)?;

    let last = loss_trace.last().expect("validated non-empty stages");
    Ok(ReconstructionResult {
        termination_reason: last.termination,
        final_loss: last.final_terms.total,
        real,
        mirrored,
        fitted_plane,
        camera,
        camera_source: choice.source,
        normal: normal.map(|n| if n.z > 0.0 { -n } else { n }),
        normal_source,
        keypoint_vanishing_point: v0,
        vanishing_points: choice.vanishing_points,
        init_source: init.source,
        reference: init.reference,
        weights,
        loss_trace,
        joints_real,
        joints_mirrored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalSweepRow {
    pub multiplier: f64,
    pub focal: f64,
    pub mpjpe: f64,
}

/// Reconstructs with the focal length of `camera` scaled by each multiplier
/// and reports the real subject's MPJPE against `gt_joints`.
pub fn sweep_focal(
    scene: &SceneInput,
    camera: &PinholeCamera,
    gt_joints: &[Vector3<f64>],
    template: &SkeletonTemplate,
    weights: &LossWeights,
    config: &SolverConfig,
    multipliers: &[f64],
) -> Result<Vec<FocalSweepRow>> {
    let root = template.root();
    multipliers
        .iter()
        .map(|&m| {
            let cam = PinholeCamera::new(camera.focal * m, camera.principal_point)?;
            let scene = SceneInput {
                known_intrinsics: Some(cam),
                ..scene.clone()
            };
            let result = reconstruct_scene(&scene, template, weights, config)?;
            Ok(FocalSweepRow {
                multiplier: m,
                focal: cam.focal,
                mpjpe: metrics::mpjpe(&result.joints_real, gt_joints, root)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    fn scene(seed: u64, noise: f64) -> (SkeletonTemplate, crate::synth::GroundTruthScene) {
        let t = SkeletonTemplate::default();
        let s = generate_scene(&SceneSpec::default().with_seed(seed).with_noise(noise), &t).unwrap();
        (t, s)
    }

    fn known(s: &crate::synth::GroundTruthScene) -> SceneInput {
        SceneInput {
            known_intrinsics: Some(s.camera),
            ..SceneInput::new(s.observation.clone())
        }
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let (t, s) = scene(3, 0.0);
        let input = known(&s);
        let mut config = SolverConfig::default();
        config.stages.iter_mut().for_each(|st| st.max_iterations = 0);
        let w = LossWeights::default();
        let init = initialize(&input, &s.camera, &t, &config, &w, Some(&s.plane.normal)).unwrap();
        let (vars, trace) = optimize(&input, &s.camera, &t, &init, &w, &config, Some(&s.plane.normal)).unwrap();
        assert_eq!(vars.pose, init.real.pose);
        assert_eq!(vars.shape, init.real.shape);
        assert_eq!(vars.real_global, init.real.global);
        assert_eq!(vars.mirrored_global, init.mirrored.global);
        assert_eq!(trace.last().unwrap().termination, Termination::MaxIter);
    }

    #[test]
    fn corrupted_mirror_selects_the_real_subject() {
        let (t, s) = scene(5, 0.0);
        let mut input = known(&s);
        for (j, kp) in input.observation.keypoints_mirrored.iter_mut().enumerate() {
            kp.position.x += if j % 2 == 0 { 150.0 } else { -150.0 };
            kp.position.y += (j as f64 * 37.0) % 120.0 - 60.0;
        }
        let init = initialize(&input, &s.camera, &t, &SolverConfig::default(), &LossWeights::default(), None).unwrap();
        assert_eq!(init.source, Subject::Real);
        assert!(init.reprojection_errors[0] < init.reprojection_errors[1]);
    }

    #[test]
    fn ties_go_to_the_real_subject() {
        let (t, s) = scene(6, 0.0);
        let mut input = known(&s);
        input.observation.keypoints_mirrored = input.observation.keypoints_real.clone();
        let init = initialize(&input, &s.camera, &t, &SolverConfig::default(), &LossWeights::default(), None).unwrap();
        assert_eq!(init.reprojection_errors[0], init.reprojection_errors[1]);
        assert_eq!(init.source, Subject::Real);
    }

    #[test]
    fn too_few_keypoints_are_rejected() {
        let (t, s) = scene(2, 0.0);
        let mut input = known(&s);
        for kp in input.observation.keypoints_real.iter_mut().skip(5) {
            kp.confidence = 0.0;
        }
        let err = reconstruct_scene(&input, &t, &LossWeights::default(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientKeypoints { subject: "real", confident: 5, required: 6 }));
    }

    #[test]
    fn noiseless_scene_is_recovered() {
        let (t, s) = scene(1, 0.0);
        let r = reconstruct_scene(&known(&s), &t, &LossWeights::default(), &SolverConfig::default()).unwrap();
        let e = metrics::pose_error(&t, &r.joints_real, &s.joints_real).unwrap();
        assert!(e.mpjpe < 1.0 && e.mrpe < 5.0, "{e:?}");
        assert!(metrics::normal_angle_error(&r.fitted_plane.normal, &s.plane.normal) < 0.1);
        assert_eq!(r.camera_source, CameraSource::Known);
        assert_eq!(r.normal_source, NormalSource::VanishingPoint);
        assert!(!r.degraded());
        // the mirrored subject is derived, never fitted separately
        assert_eq!(r.mirrored.pose, reflect_pose(&t, &r.real.pose));
        assert_eq!(r.mirrored.shape, r.real.shape);
        assert!(r.normal.unwrap().z <= 0.0);
    }

    #[test]
    fn missing_calibration_falls_back() {
        let (t, s) = scene(4, 0.0);
        let input = SceneInput::new(s.observation.clone());
        let r = reconstruct_scene(&input, &t, &LossWeights::default(), &SolverConfig::default()).unwrap();
        assert_eq!(r.camera_source, CameraSource::Fallback);
        assert_eq!(r.camera.focal, 1.2 * 1920.0);
        assert_eq!(r.normal_source, NormalSource::Unavailable);
        assert_eq!(r.weights.lambda_n, 0.0);
        assert!(r.degraded());
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let (t, s) = scene(8, 2.0);
        let run = || reconstruct_scene(&known(&s), &t, &LossWeights::default(), &SolverConfig::default()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn ablations_skip_the_tied_stage() {
        let (t, s) = scene(9, 2.0);
        let r = reconstruct_scene(&known(&s), &t, &LossWeights::default().without_symmetry(), &SolverConfig::default()).unwrap();
        assert_eq!(r.loss_trace.len(), 2);
        assert!(r.loss_trace.iter().all(|st| !st.free.contains(&Block::MirrorPlane)));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let mut c = SolverConfig::default();
        c.stages.pop();
        assert!(c.validate().is_err(), "final stage is tied");
        let mut c = SolverConfig::default();
        c.stages[0].free.push(Block::MirrorPlane);
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.stages.clear();
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.grad_tolerance = 0.0;
        assert!(c.validate().is_err());
        let text = serde_json::to_string(&SolverConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<SolverConfig>(&text).unwrap(), SolverConfig::default());
        assert!(serde_json::from_str::<SolverConfig>(r#"{"stage": []}"#).is_err());
    }

    #[test]
    fn focal_sweep_at_truth_matches_the_baseline() {
        let (t, s) = scene(10, 2.0);
        let w = LossWeights::default();
        let c = SolverConfig::default();
        let rows = sweep_focal(&known(&s), &s.camera, &s.joints_real, &t, &w, &c, &[1.0, 0.5]).unwrap();
        let base = reconstruct_scene(&known(&s), &t, &w, &c).unwrap();
        assert_eq!(rows[0].mpjpe, metrics::mpjpe(&base.joints_real, &s.joints_real, t.root()).unwrap());
        assert!(rows[1].mpjpe > rows[0].mpjpe);
    }
}
