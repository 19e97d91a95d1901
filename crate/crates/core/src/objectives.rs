//! Loss terms of the mirror-constrained fitting objective and their
//! analytic gradients.
//!
//! The mirrored subject never has free pose or shape: its pose is the
//! reflection of the real pose and its shape is the real shape, so the free
//! variables are `(theta, beta, R, T, R', T')`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{
    forward_kinematics_backward, forward_kinematics_state, reflect_pose, GlobalTransform,
    PoseParams, ShapeParams, SkeletonTemplate,
};
use crate::camera_geometry::PinholeCamera;
use crate::error::{Error, Result};
use crate::rotation;

pub use crate::observation::{ImageSize, Keypoint, Observation2D};

/// Segments shorter than this (meters) have no defined direction.
pub const DEGENERATE_SEGMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSetName {
    /// All unordered pairs of the template's torso joints.
    Torso,
    /// All unordered pairs of joints.
    All,
}

/// Joint pairs entering the symmetry term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSelection {
    Named(PairSetName),
    Explicit(Vec<[usize; 2]>),
}

impl Default for PairSelection {
    fn default() -> Self {
        Self::Named(PairSetName::Torso)
    }
}

impl PairSelection {
    pub fn resolve(&self, template: &SkeletonTemplate) -> Result<Vec<(usize, usize)>> {
        let unordered = |joints: &[usize]| {
            let mut pairs = Vec::new();
            for (a, &i) in joints.iter().enumerate() {
                for &j in &joints[a + 1..] {
                    pairs.push((i, j));
                }
            }
            pairs
        };
        match self {
            Self::Named(PairSetName::Torso) => Ok(unordered(template.torso_joints())),
            Self::Named(PairSetName::All) => {
                Ok(unordered(&(0..template.num_joints()).collect::<Vec<_>>()))
            }
            Self::Explicit(list) => {
                let n = template.num_joints();
                if list.iter().any(|&[i, j]| i >= n || j >= n || i == j) {
                    return Err(Error::InvalidConfig("joint pair index out of range".into()));
                }
                Ok(list.iter().map(|&[i, j]| (i, j)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_n: f64,
    pub lambda_beta: f64,
    /// Geman-McClure scale in pixels.
    pub gm_sigma: f64,
    #[serde(default)]
    pub joint_pairs: PairSelection,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_s: 100.0,
            lambda_n: 100.0,
            lambda_beta: 10.0,
            gm_sigma: 100.0,
            joint_pairs: PairSelection::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.lambda_p, self.lambda_s, self.lambda_n, self.lambda_beta];
        if nonneg.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("loss weights must be finite and nonnegative".into()));
        }
        if !(self.gm_sigma > 0.0 && self.gm_sigma.is_finite()) {
            return Err(Error::InvalidConfig("gm_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Weights for the ablation without the normal term.
    pub fn without_normal(mut self) -> Self {
        self.lambda_n = 0.0;
        self
    }

    /// Weights for the ablation without both mirror terms.
    pub fn without_symmetry(mut self) -> Self {
        self.lambda_n = 0.0;
        self.lambda_s = 0.0;
        self
    }
}

/// Pose, shape and placement of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub global: GlobalTransform,
}

impl SubjectParams {
    /// Camera-frame joint positions.
    pub fn joints(&self, template: &SkeletonTemplate) -> Result<Vec<Vector3<f64>>> {
        let state = forward_kinematics_state(template, &self.pose, &self.shape)?;
        Ok(self.global.apply(&state.positions))
    }
}

/// Prior reference for the real subject; the mirrored reference is its
/// reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub pose: PoseParams,
    pub shape: ShapeParams,
}

/// Geman-McClure penalty `s^2 |r|^2 / (s^2 + |r|^2)`.
pub fn geman_mcclure(residual: &Vector2<f64>, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let r2 = residual.norm_squared();
    s2 * r2 / (s2 + r2)
}

fn geman_mcclure_with_grad(residual: &Vector2<f64>, sigma: f64) -> (f64, Vector2<f64>) {
    let s2 = sigma * sigma;
    let r2 = residual.norm_squared();
    let denom = s2 + r2;
    (s2 * r2 / denom, residual * (2.0 * s2 * s2 / (denom * denom)))
}

/// Robust reprojection term of one subject; joints behind the camera cost
/// the saturation value `c sigma^2`.
pub fn reprojection_loss(
    camera: &PinholeCamera,
    subject: &SubjectParams,
    template: &SkeletonTemplate,
    keypoints: &[Keypoint],
    sigma: f64,
) -> Result<f64> {
    let joints = subject.joints(template)?;
    if keypoints.len() != joints.len() {
        return Err(Error::DimensionMismatch {
            what: "keypoints",
            expected: joints.len(),
            actual: keypoints.len(),
        });
    }
    Ok(reprojection_accumulate(camera, &joints, keypoints, sigma, None))
}

pub(crate) fn reprojection_accumulate(
    camera: &PinholeCamera,
    joints: &[Vector3<f64>],
    keypoints: &[Keypoint],
    sigma: f64,
    mut grad: Option<&mut [Vector3<f64>]>,
) -> f64 {
    let f = camera.focal;
    let mut total = 0.0;
    for (j, (x, kp)) in joints.iter().zip(keypoints).enumerate() {
        let c = kp.confidence;
        if c <= 0.0 {
            continue;
        }
        if x.z <= 0.0 {
            total += c * sigma * sigma;
            continue;
        }
        let inv_z = 1.0 / x.z;
        let projected = Vector2::new(
            f * x.x * inv_z + camera.principal_point.x,
            f * x.y * inv_z + camera.principal_point.y,
        );
        let (rho, d_rho) = geman_mcclure_with_grad(&(kp.position - projected), sigma);
        total += c * rho;
        if let Some(g) = grad.as_deref_mut() {
            // d(projected)/dX, with residual = keypoint - projected.
            let gu = -c * d_rho.x;
            let gv = -c * d_rho.y;
            g[j] += Vector3::new(
                gu * f * inv_z,
                gv * f * inv_z,
                -(gu * f * x.x + gv * f * x.y) * inv_z * inv_z,
            );
        }
    }
    total
}

/// `|theta - ref_theta|^2 + lambda_beta |beta - ref_beta|^2`.
pub fn prior_loss(
    subject: &SubjectParams,
    reference_pose: &PoseParams,
    reference_shape: &ShapeParams,
    lambda_beta: f64,
) -> f64 {
    let pose: f64 = subject
        .pose
        .theta
        .iter()
        .zip(&reference_pose.theta)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let shape: f64 = subject
        .shape
        .beta
        .iter()
        .zip(&reference_shape.beta)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    pose + lambda_beta * shape
}

struct Segment {
    dir: Vector3<f64>,
    mid: Vector3<f64>,
    len: f64,
}

fn segment(a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Segment> {
    let d = b - a;
    let len = d.norm();
    (len > DEGENERATE_SEGMENT).then(|| Segment {
        dir: d / len,
        mid: 0.5 * (a + b),
        len,
    })
}

/// Accumulated gradients w.r.t. unit direction and midpoint of each segment.
struct SegmentGrads {
    dir: Vec<Vector3<f64>>,
    mid: Vec<Vector3<f64>>,
}

fn symmetry_terms(
    segs: &[Option<Segment>],
    pairs: &[(usize, usize)],
    mut grads: Option<&mut SegmentGrads>,
) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for &(i, j) in pairs {
        let (Some(si), Some(sj)) = (&segs[i], &segs[j]) else { continue };
        used += 1;
        let cross = si.dir.cross(&sj.dir);
        let cross_norm = cross.norm();
        let gap = sj.mid - si.mid;
        let dot = si.dir.dot(&gap);
        total += cross_norm + dot.abs();
        if let Some(g) = grads.as_deref_mut() {
            if cross_norm > 0.0 {
                let c_hat = cross / cross_norm;
                g.dir[i] += sj.dir.cross(&c_hat);
                g.dir[j] += c_hat.cross(&si.dir);
            }
            let sign = dot.signum() * (dot != 0.0) as u8 as f64;
            g.dir[i] += sign * gap;
            g.mid[j] += sign * si.dir;
            g.mid[i] -= sign * si.dir;
        }
    }
    (used > 0).then_some(total)
}

fn normal_terms(
    segs: &[Option<Segment>],
    normal: &Vector3<f64>,
    mut grads: Option<&mut SegmentGrads>,
) -> f64 {
    let mut total = 0.0;
    for (i, seg) in segs.iter().enumerate() {
        let Some(s) = seg else { continue };
        let cross = normal.cross(&s.dir);
        let norm = cross.norm();
        total += norm;
        if let (Some(g), true) = (grads.as_deref_mut(), norm > 0.0) {
            g.dir[i] += (cross / norm).cross(normal);
        }
    }
    total
}

/// Mirror symmetry term over joint pairs. `mirrored_joints[i]` must be the
/// mirror counterpart of `real_joints[i]`; pairs touching a degenerate
/// segment are skipped.
pub fn symmetry_loss(
    real_joints: &[Vector3<f64>],
    mirrored_joints: &[Vector3<f64>],
    joint_pairs: &[(usize, usize)],
) -> Result<f64> {
    if real_joints.len() != mirrored_joints.len() {
        return Err(Error::DimensionMismatch {
            what: "mirrored joints",
            expected: real_joints.len(),
            actual: mirrored_joints.len(),
        });
    }
    let segs: Vec<_> = real_joints
        .iter()
        .zip(mirrored_joints)
        .map(|(a, b)| segment(a, b))
        .collect();
    symmetry_terms(&segs, joint_pairs, None).ok_or(Error::NoValidPairs)
}

/// Sum of `|n x n_i|` over nondegenerate correspondence segments.
pub fn normal_loss(
    real_joints: &[Vector3<f64>],
    mirrored_joints: &[Vector3<f64>],
    normal: &Vector3<f64>,
) -> f64 {
    let segs: Vec<_> = real_joints
        .iter()
        .zip(mirrored_joints)
        .map(|(a, b)| segment(a, b))
        .collect();
    normal_terms(&segs, normal, None)
}

/// Per-term values of the total objective (already weighted where noted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub reprojection_real: f64,
    pub reprojection_mirrored: f64,
    /// `lambda_p * (L_p + L'_p)`
    pub prior: f64,
    /// `lambda_s * L_s`
    pub symmetry: f64,
    /// `lambda_n * L_n`
    pub normal: f64,
    pub total: f64,
}

/// Parameter blocks of the free-variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Pose,
    Shape,
    RealGlobal,
    MirroredGlobal,
    /// Plane offset and, without a known normal, its direction; only
    /// present in the mirror-tied parameterization.
    MirrorPlane,
}

/// The free variables `(theta, beta, R, T, R', T')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variables {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub real_global: GlobalTransform,
    pub mirrored_global: GlobalTransform,
}

impl Variables {
    pub fn len_for(template: &SkeletonTemplate) -> usize {
        3 * template.num_joints() + template.num_groups() + 12
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.pose.theta.len() + self.shape.beta.len() + 12);
        v.extend(self.pose.theta.iter().flat_map(|t| t.iter().copied()));
        v.extend(&self.shape.beta);
        for g in [&self.real_global, &self.mirrored_global] {
            v.extend(g.rotation.iter());
            v.extend(g.translation.iter());
        }
        v
    }

    pub fn from_slice(template: &SkeletonTemplate, x: &[f64]) -> Result<Self> {
        let (n, b) = (template.num_joints(), template.num_groups());
        if x.len() != Self::len_for(template) {
            return Err(Error::DimensionMismatch {
                what: "variable vector",
                expected: Self::len_for(template),
                actual: x.len(),
            });
        }
        let v3 = |o: usize| Vector3::new(x[o], x[o + 1], x[o + 2]);
        let g0 = 3 * n + b;
        Ok(Self {
            pose: PoseParams {
                theta: (0..n).map(|j| v3(3 * j)).collect(),
            },
            shape: ShapeParams {
                beta: x[3 * n..3 * n + b].to_vec(),
            },
            real_global: GlobalTransform::new(v3(g0), v3(g0 + 3)),
            mirrored_global: GlobalTransform::new(v3(g0 + 6), v3(g0 + 9)),
        })
    }

    /// Index mask of the entries belonging to `blocks`.
    pub fn mask(template: &SkeletonTemplate, blocks: &[Block]) -> Vec<bool> {
        let (n, b) = (template.num_joints(), template.num_groups());
        let mut mask = vec![false; Self::len_for(template)];
        let g0 = 3 * n + b;
        for block in blocks {
            let range = match block {
                Block::Pose => 0..3 * n,
                Block::Shape => 3 * n..g0,
                Block::RealGlobal => g0..g0 + 6,
                Block::MirroredGlobal => g0 + 6..g0 + 12,
                Block::MirrorPlane => continue,
            };
            mask[range].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn real(&self) -> SubjectParams {
        SubjectParams {
            pose: self.pose.clone(),
            shape: self.shape.clone(),
            global: self.real_global,
        }
    }

    pub fn mirrored(&self, template: &SkeletonTemplate) -> SubjectParams {
        SubjectParams {
            pose: reflect_pose(template, &self.pose),
            shape: self.shape.clone(),
            global: self.mirrored_global,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub terms: LossTerms,
    /// Gradient w.r.t. [`Variables::to_vec`] ordering.
    pub gradient: Vec<f64>,
}

/// The full objective for one real/mirrored subject pair.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub camera: PinholeCamera,
    pub template: &'a SkeletonTemplate,
    pub observation: &'a Observation2D,
    pub reference: &'a Reference,
    pub weights: LossWeights,
    pub normal: Option<Vector3<f64>>,
    pairs: Vec<(usize, usize)>,
    mirrored_reference: Reference,
}

impl<'a> Objective<'a> {
    /// Without a normal, the normal term is disabled regardless of
    /// `weights.lambda_n`.
    pub fn new(
        camera: PinholeCamera,
        template: &'a SkeletonTemplate,
        observation: &'a Observation2D,
        reference: &'a Reference,
        weights: &LossWeights,
        normal: Option<Vector3<f64>>,
    ) -> Result<Self> {
        weights.validate()?;
        if observation.num_joints() != template.num_joints() {
            return Err(Error::DimensionMismatch {
                what: "observation joints",
                expected: template.num_joints(),
                actual: observation.num_joints(),
            });
        }
        let mut weights = weights.clone();
        let normal = normal.map(|n| n.normalize());
        if normal.is_none() {
            weights.lambda_n = 0.0;
        }
        let pairs = weights.joint_pairs.resolve(template)?;
        let mirrored_reference = Reference {
            pose: reflect_pose(template, &reference.pose),
            shape: reference.shape.clone(),
        };
        Ok(Self {
            camera,
            template,
            observation,
            reference,
            weights,
            normal,
            pairs,
            mirrored_reference,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Smallest magnitude among the norm and absolute-value terms of the
    /// mirror losses at `vars`. The objective is not differentiable where
    /// this is zero; `f64::INFINITY` when no such term is active.
    pub fn kink_margin(&self, vars: &Variables) -> Result<f64> {
        let segs = self.segments(vars)?;
        let mut margin = f64::INFINITY;
        if self.weights.lambda_s > 0.0 {
            for &(i, j) in &self.pairs {
                if let (Some(a), Some(b)) = (&segs[i], &segs[j]) {
                    margin = margin
                        .min(a.dir.cross(&b.dir).norm())
                        .min(a.dir.dot(&(b.mid - a.mid)).abs());
                }
            }
        }
        if let (Some(n), true) = (self.normal, self.weights.lambda_n > 0.0) {
            for s in segs.iter().flatten() {
                margin = margin.min(n.cross(&s.dir).norm());
            }
        }
        Ok(margin)
    }

    /// Unweighted sum of the `|n_i . (p_j - p_i)|` parts of the symmetry
    /// term, the only part that changes with the global scale.
    pub fn symmetry_offsets(&self, vars: &Variables) -> Result<f64> {
        if self.weights.lambda_s == 0.0 {
            return Ok(0.0);
        }
        let segs = self.segments(vars)?;
        Ok(self
            .pairs
            .iter()
            .filter_map(|&(i, j)| match (&segs[i], &segs[j]) {
                (Some(a), Some(b)) => Some(a.dir.dot(&(b.mid - a.mid)).abs()),
                _ => None,
            })
            .sum())
    }

    fn segments(&self, vars: &Variables) -> Result<Vec<Option<Segment>>> {
        let t = self.template;
        let swap = t.left_right_pairs();
        let obs = self.observation;
        let real = vars.real().joints(t)?;
        let mirrored = vars.mirrored(t).joints(t)?;
        Ok((0..t.num_joints())
            .map(|i| {
                let usable = obs.keypoints_real[i].confidence > 0.0
                    && obs.keypoints_mirrored[swap[i]].confidence > 0.0;
                usable.then(|| segment(&real[i], &mirrored[swap[i]])).flatten()
            })
            .collect())
    }

    pub fn value(&self, vars: &Variables) -> Result<(f64, LossTerms)> {
        self.run(vars, false).map(|(v, t, _)| (v, t))
    }

    pub fn evaluate(&self, vars: &Variables) -> Result<ObjectiveValue> {
        let (value, terms, gradient) = self.run(vars, true)?;
        Ok(ObjectiveValue {
            value,
            terms,
            gradient: gradient.expect("requested"),
        })
    }

    fn run(&self, vars: &Variables, want_grad: bool) -> Result<(f64, LossTerms, Option<Vec<f64>>)> {
        let t = self.template;
        let n = t.num_joints();
        let w = &self.weights;
        let swap = t.left_right_pairs();
        let obs = self.observation;

        let mirrored_pose = reflect_pose(t, &vars.pose);
        let fk_real = forward_kinematics_state(t, &vars.pose, &vars.shape)?;
        let fk_mirr = forward_kinematics_state(t, &mirrored_pose, &vars.shape)?;
        let rot_real = vars.real_global.rotation_matrix();
        let rot_mirr = vars.mirrored_global.rotation_matrix();
        let x_real: Vec<_> = fk_real.positions.iter().map(|p| rot_real * p + vars.real_global.translation).collect();
        let x_mirr: Vec<_> = fk_mirr.positions.iter().map(|p| rot_mirr * p + vars.mirrored_global.translation).collect();

        let mut g_real = vec![Vector3::zeros(); n];
        let mut g_mirr = vec![Vector3::zeros(); n];
        let sigma = w.gm_sigma;
        let rep_real = reprojection_accumulate(
            &self.camera,
            &x_real,
            &obs.keypoints_real,
            sigma,
            want_grad.then_some(&mut g_real[..]),
        );
        let rep_mirr = reprojection_accumulate(
            &self.camera,
            &x_mirr,
            &obs.keypoints_mirrored,
            sigma,
            want_grad.then_some(&mut g_mirr[..]),
        );

        let mirrored_subject_prior = |pose: &PoseParams, shape: &ShapeParams, reference: &Reference| {
            let s = SubjectParams {
                pose: pose.clone(),
                shape: shape.clone(),
                global: GlobalTransform::identity(),
            };
            prior_loss(&s, &reference.pose, &reference.shape, w.lambda_beta)
        };
        let prior_real = mirrored_subject_prior(&vars.pose, &vars.shape, self.reference);
        let prior_mirr = mirrored_subject_prior(&mirrored_pose, &vars.shape, &self.mirrored_reference);

        // Correspondence segments J_i -> J'_swap(i), only where both
        // keypoints carry confidence.
        let segs: Vec<Option<Segment>> = (0..n)
            .map(|i| {
                let usable = obs.keypoints_real[i].confidence > 0.0
                    && obs.keypoints_mirrored[swap[i]].confidence > 0.0;
                if usable {
                    segment(&x_real[i], &x_mirr[swap[i]])
                } else {
                    None
                }
            })
            .collect();
        let mut seg_grads = SegmentGrads {
            dir: vec![Vector3::zeros(); n],
            mid: vec![Vector3::zeros(); n],
        };
        let mut sym_raw = 0.0;
        if w.lambda_s > 0.0 {
            let mut local = SegmentGrads {
                dir: vec![Vector3::zeros(); n],
                mid: vec![Vector3::zeros(); n],
            };
            let in_use = self.pairs.iter().any(|&(i, j)| {
                let c = |k: usize| {
                    obs.keypoints_real[k].confidence > 0.0 && obs.keypoints_mirrored[swap[k]].confidence > 0.0
                };
                c(i) && c(j)
            });
            if in_use {
                sym_raw = symmetry_terms(&segs, &self.pairs, want_grad.then_some(&mut local))
                    .ok_or(Error::NoValidPairs)?;
                for i in 0..n {
                    seg_grads.dir[i] += w.lambda_s * local.dir[i];
                    seg_grads.mid[i] += w.lambda_s * local.mid[i];
                }
            }
        }
        let mut normal_raw = 0.0;
        if let (Some(normal), true) = (self.normal, w.lambda_n > 0.0) {
            let mut local = SegmentGrads {
                dir: vec![Vector3::zeros(); n],
                mid: vec![Vector3::zeros(); n],
            };
            normal_raw = normal_terms(&segs, &normal, want_grad.then_some(&mut local));
            for i in 0..n {
                seg_grads.dir[i] += w.lambda_n * local.dir[i];
            }
        }

        let terms = LossTerms {
            reprojection_real: rep_real,
            reprojection_mirrored: rep_mirr,
            prior: w.lambda_p * (prior_real + prior_mirr),
            symmetry: w.lambda_s * sym_raw,
            normal: w.lambda_n * normal_raw,
            total: 0.0,
        };
        let value = terms.reprojection_real + terms.reprojection_mirrored + terms.prior + terms.symmetry + terms.normal;
        let terms = LossTerms { total: value, ..terms };
        if !want_grad {
            return Ok((value, terms, None));
        }

        for (i, seg) in segs.iter().enumerate() {
            let Some(s) = seg else { continue };
            let projector = Matrix3::identity() - s.dir * s.dir.transpose();
            let g_d = projector * seg_grads.dir[i] / s.len;
            let g_m = 0.5 * seg_grads.mid[i];
            g_real[i] += g_m - g_d;
            g_mirr[swap[i]] += g_m + g_d;
        }

        let mut grad = vec![0.0; Variables::len_for(t)];
        let g0 = 3 * n + t.num_groups();
        let gp_real = pull_back_rigid(&fk_real.positions, &g_real, &vars.real_global, &rot_real, &mut grad[g0..g0 + 6]);
        let gp_mirr = pull_back_rigid(&fk_mirr.positions, &g_mirr, &vars.mirrored_global, &rot_mirr, &mut grad[g0 + 6..g0 + 12]);

        let (gt_real, gb_real) = forward_kinematics_backward(t, &vars.pose, &vars.shape, &fk_real, &gp_real);
        let (gt_mirr, gb_mirr) = forward_kinematics_backward(t, &mirrored_pose, &vars.shape, &fk_mirr, &gp_mirr);
        for j in 0..n {
            // theta'_{swap(j)} = diag(1, -1, -1) theta_j
            let gm = gt_mirr[swap[j]];
            let g = gt_real[j] + Vector3::new(gm.x, -gm.y, -gm.z);
            let prior_g = 2.0 * w.lambda_p * (vars.pose.theta[j] - self.reference.pose.theta[j]);
            // The mirrored prior has the same gradient: S is an isometry.
            let total = g + 2.0 * prior_g;
            grad[3 * j..3 * j + 3].copy_from_slice(total.as_slice());
        }
        for g in 0..t.num_groups() {
            let prior_g = 2.0 * w.lambda_p * w.lambda_beta * (vars.shape.beta[g] - self.reference.shape.beta[g]);
            grad[3 * n + g] = gb_real[g] + gb_mirr[g] + 2.0 * prior_g;
        }
        Ok((value, terms, Some(grad)))
    }
}

/// Variables of the mirror-tied parameterization: the mirrored subject is
/// the exact reflection of the real one across the plane
/// `{X : n . X + d = 0}`, so the symmetry term vanishes identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedVariables {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub real_global: GlobalTransform,
    /// Any nonzero multiple of the plane normal; the offset is interpreted
    /// relative to the normalized direction.
    #[serde(with = "crate::serde_helpers::vec3")]
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl TiedVariables {
    pub fn len_for(template: &SkeletonTemplate) -> usize {
        3 * template.num_joints() + template.num_groups() + 10
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Variables {
            pose: self.pose.clone(),
            shape: self.shape.clone(),
            real_global: self.real_global,
            mirrored_global: GlobalTransform::identity(),
        }
        .to_vec();
        v.truncate(v.len() - 6);
        v.push(self.offset);
        v.extend(self.normal.iter());
        v
    }

    pub fn from_slice(template: &SkeletonTemplate, x: &[f64]) -> Result<Self> {
        let len = Self::len_for(template);
        if x.len() != len {
            return Err(Error::DimensionMismatch {
                what: "tied variable vector",
                expected: len,
                actual: x.len(),
            });
        }
        let mut padded = x[..len - 4].to_vec();
        padded.extend([0.0; 6]);
        let v = Variables::from_slice(template, &padded)?;
        Ok(Self {
            pose: v.pose,
            shape: v.shape,
            real_global: v.real_global,
            offset: x[len - 4],
            normal: Vector3::new(x[len - 3], x[len - 2], x[len - 1]),
        })
    }

    /// `MirrorPlane` selects the offset, plus the normal direction when
    /// `free_normal` is set.
    pub fn mask(template: &SkeletonTemplate, blocks: &[Block], free_normal: bool) -> Vec<bool> {
        let mut mask = Variables::mask(template, blocks);
        mask.truncate(mask.len() - 6);
        let plane = blocks.contains(&Block::MirrorPlane);
        mask.push(plane);
        mask.extend([plane && free_normal; 3]);
        mask
    }

    pub fn plane(&self) -> Result<crate::camera_geometry::MirrorPlane> {
        let norm = self.normal.norm();
        crate::camera_geometry::MirrorPlane::new(self.normal / norm, self.offset)
    }

    /// The equivalent point of the untied parameterization.
    pub fn untie(&self) -> Result<Variables> {
        let plane = self.plane()?;
        Ok(Variables {
            pose: self.pose.clone(),
            shape: self.shape.clone(),
            real_global: self.real_global,
            mirrored_global: crate::body_model::reflect_global(&self.real_global, &plane),
        })
    }
}

impl Objective<'_> {
    /// Objective and gradient at a mirror-tied point. Equals the untied
    /// objective at [`TiedVariables::untie`].
    pub fn evaluate_tied(&self, vars: &TiedVariables) -> Result<ObjectiveValue> {
        let t = self.template;
        let n_joints = t.num_joints();
        let w = &self.weights;
        let swap = t.left_right_pairs();
        let obs = self.observation;
        let norm = vars.normal.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateConfiguration("zero mirror normal".into()));
        }
        let n = vars.normal / norm;
        let d = vars.offset;

        let fk = forward_kinematics_state(t, &vars.pose, &vars.shape)?;
        let rot = vars.real_global.rotation_matrix();
        let x_real: Vec<_> = fk.positions.iter().map(|p| rot * p + vars.real_global.translation).collect();
        // mirrored joint swap(i) is the reflection of real joint i
        let mut x_mirr = vec![Vector3::zeros(); n_joints];
        for i in 0..n_joints {
            x_mirr[swap[i]] = x_real[i] - 2.0 * (n.dot(&x_real[i]) + d) * n;
        }

        let sigma = w.gm_sigma;
        let mut g_real = vec![Vector3::zeros(); n_joints];
        let mut g_mirr = vec![Vector3::zeros(); n_joints];
        let rep_real = reprojection_accumulate(&self.camera, &x_real, &obs.keypoints_real, sigma, Some(&mut g_real));
        let rep_mirr = reprojection_accumulate(&self.camera, &x_mirr, &obs.keypoints_mirrored, sigma, Some(&mut g_mirr));

        let subject = SubjectParams {
            pose: vars.pose.clone(),
            shape: vars.shape.clone(),
            global: GlobalTransform::identity(),
        };
        let prior = prior_loss(&subject, &self.reference.pose, &self.reference.shape, w.lambda_beta);

        let mut g_n = Vector3::zeros();
        let mut g_d = 0.0;
        let mut normal_raw = 0.0;
        if let (Some(known), true) = (self.normal, w.lambda_n > 0.0) {
            let valid = (0..n_joints)
                .filter(|&i| {
                    obs.keypoints_real[i].confidence > 0.0
                        && obs.keypoints_mirrored[swap[i]].confidence > 0.0
                        && 2.0 * (n.dot(&x_real[i]) + d).abs() > DEGENERATE_SEGMENT
                })
                .count() as f64;
            let cross = known.cross(&n);
            let c = cross.norm();
            normal_raw = valid * c;
            if c > 0.0 {
                g_n += w.lambda_n * valid * (cross / c).cross(&known);
            }
        }

        for i in 0..n_joints {
            let gm = g_mirr[swap[i]];
            let dist = n.dot(&x_real[i]) + d;
            g_real[i] += gm - 2.0 * gm.dot(&n) * n;
            g_n += -2.0 * (gm.dot(&n) * x_real[i] + dist * gm);
            g_d += -2.0 * gm.dot(&n);
        }

        let terms = LossTerms {
            reprojection_real: rep_real,
            reprojection_mirrored: rep_mirr,
            prior: 2.0 * w.lambda_p * prior,
            symmetry: 0.0,
            normal: w.lambda_n * normal_raw,
            total: 0.0,
        };
        let value = terms.reprojection_real + terms.reprojection_mirrored + terms.prior + terms.normal;
        let terms = LossTerms { total: value, ..terms };

        let mut grad = vec![0.0; TiedVariables::len_for(t)];
        let g0 = 3 * n_joints + t.num_groups();
        let gp = pull_back_rigid(&fk.positions, &g_real, &vars.real_global, &rot, &mut grad[g0..g0 + 6]);
        let (g_theta, g_beta) = forward_kinematics_backward(t, &vars.pose, &vars.shape, &fk, &gp);
        for j in 0..n_joints {
            let total = g_theta[j] + 4.0 * w.lambda_p * (vars.pose.theta[j] - self.reference.pose.theta[j]);
            grad[3 * j..3 * j + 3].copy_from_slice(total.as_slice());
        }
        for g in 0..t.num_groups() {
            grad[3 * n_joints + g] = g_beta[g]
                + 4.0 * w.lambda_p * w.lambda_beta * (vars.shape.beta[g] - self.reference.shape.beta[g]);
        }
        grad[g0 + 6] = g_d;
        let g_raw = (Matrix3::identity() - n * n.transpose()) * g_n / norm;
        grad[g0 + 7..g0 + 10].copy_from_slice(g_raw.as_slice());
        Ok(ObjectiveValue {
            value,
            terms,
            gradient: grad,
        })
    }
}

/// Gradient of camera-frame joints `R p + T` pulled back to `(R, T)`,
/// written to `out`; returns the gradient w.r.t. the root-frame `p`.
fn pull_back_rigid(
    positions: &[Vector3<f64>],
    g_cam: &[Vector3<f64>],
    global: &GlobalTransform,
    rot: &Matrix3<f64>,
    out: &mut [f64],
) -> Vec<Vector3<f64>> {
    let d = rotation::exp_derivatives(&global.rotation);
    let mut g_t = Vector3::zeros();
    let mut g_w = Vector3::zeros();
    let mut g_p = Vec::with_capacity(positions.len());
    for (p, g) in positions.iter().zip(g_cam) {
        g_t += g;
        for k in 0..3 {
            g_w[k] += g.dot(&(d[k] * p));
        }
        g_p.push(rot.transpose() * g);
    }
    out[..3].copy_from_slice(g_w.as_slice());
    out[3..6].copy_from_slice(g_t.as_slice());
    g_p
}

/// Total objective and its gradient for a real subject, the mirrored
/// subject's global transform, and an optional mirror normal.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    camera: &PinholeCamera,
    real: &SubjectParams,
    mirrored_global: &GlobalTransform,
    obs: &Observation2D,
    template: &SkeletonTemplate,
    reference: &Reference,
    weights: &LossWeights,
    normal: Option<&Vector3<f64>>,
) -> Result<ObjectiveValue> {
    let objective = Objective::new(*camera, template, obs, reference, weights, normal.copied())?;
    objective.evaluate(&Variables {
        pose: real.pose.clone(),
        shape: real.shape.clone(),
        real_global: real.global,
        mirrored_global: *mirrored_global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, GroundTruthScene, SceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, noise: f64) -> (SkeletonTemplate, GroundTruthScene) {
        let t = SkeletonTemplate::default();
        let s = generate_scene(&SceneSpec::default().with_seed(seed).with_noise(noise), &t).unwrap();
        (t, s)
    }

    fn truth_vars(s: &GroundTruthScene) -> Variables {
        Variables {
            pose: s.real.pose.clone(),
            shape: s.real.shape.clone(),
            real_global: s.real.global,
            mirrored_global: s.mirrored.global,
        }
    }

    fn truth_reference(s: &GroundTruthScene) -> Reference {
        Reference {
            pose: s.real.pose.clone(),
            shape: s.real.shape.clone(),
        }
    }

    /// Scalar re-implementation of the robust reprojection sum.
    fn reprojection_oracle(f: f64, c: (f64, f64), joints: &[Vector3<f64>], kps: &[Keypoint], sigma: f64) -> f64 {
        let mut total = 0.0;
        for (x, kp) in joints.iter().zip(kps) {
            if kp.confidence == 0.0 {
                continue;
            }
            if x[2] <= 0.0 {
                total += kp.confidence * sigma * sigma;
                continue;
            }
            let du = kp.position[0] - (f * x[0] / x[2] + c.0);
            let dv = kp.position[1] - (f * x[1] / x[2] + c.1);
            let r2 = du * du + dv * dv;
            total += kp.confidence * sigma * sigma * r2 / (sigma * sigma + r2);
        }
        total
    }

    #[test]
    fn geman_mcclure_values() {
        assert_eq!(geman_mcclure(&Vector2::zeros(), 100.0), 0.0);
        assert!((geman_mcclure(&Vector2::new(60.0, 80.0), 100.0) - 5000.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = Vector2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
            let s = rng.random_range(1.0..200.0);
            assert!(geman_mcclure(&r, s) <= r.norm_squared().min(s * s) + 1e-9);
        }
    }

    #[test]
    fn reprojection_zero_at_truth_and_masked() {
        let (t, s) = scene(1, 0.0);
        let v = reprojection_loss(&s.camera, &s.real, &t, &s.observation.keypoints_real, 100.0).unwrap();
        assert!(v < 1e-10);
        let mut kps = s.observation.keypoints_real.clone();
        kps.iter_mut().for_each(|k| {
            k.confidence = 0.0;
            k.position.x += 50.0;
        });
        assert_eq!(reprojection_loss(&s.camera, &s.real, &t, &kps, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn reprojection_matches_scalar_oracle() {
        let (t, s) = scene(2, 2.0);
        let mut subject = s.real.clone();
        subject.global.translation.z += 0.01;
        let joints = subject.joints(&t).unwrap();
        let pp = s.camera.principal_point;
        let expected = reprojection_oracle(s.camera.focal, (pp.x, pp.y), &joints, &s.observation.keypoints_real, 100.0);
        let got = reprojection_loss(&s.camera, &subject, &t, &s.observation.keypoints_real, 100.0).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.max(1.0));
        assert!(got > 0.0);
    }

    #[test]
    fn behind_camera_saturates() {
        let (t, s) = scene(3, 0.0);
        let mut subject = s.real.clone();
        subject.global.translation.z = -10.0;
        let v = reprojection_loss(&s.camera, &subject, &t, &s.observation.keypoints_real, 10.0).unwrap();
        assert!((v - 17.0 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn prior_examples() {
        let t = SkeletonTemplate::default();
        let mut s = SubjectParams {
            pose: t.zero_pose(),
            shape: t.unit_shape(),
            global: GlobalTransform::identity(),
        };
        let (p0, b0) = (t.zero_pose(), t.unit_shape());
        assert_eq!(prior_loss(&s, &p0, &b0, 10.0), 0.0);
        s.pose.theta[5] = Vector3::new(0.0, 0.6, 0.8);
        assert!((prior_loss(&s, &p0, &b0, 3.0) - 1.0).abs() < 1e-12);
        s.pose = p0.clone();
        s.shape.beta.iter_mut().for_each(|b| *b += 0.1);
        assert!((prior_loss(&s, &p0, &b0, 10.0) - 0.8).abs() < 1e-12);
    }

    /// Independent recomputation of the symmetry term.
    fn symmetry_oracle(a: &[Vector3<f64>], b: &[Vector3<f64>], pairs: &[(usize, usize)]) -> f64 {
        let dir = |i: usize| (b[i] - a[i]).normalize();
        let mid = |i: usize| (a[i] + b[i]) / 2.0;
        pairs
            .iter()
            .map(|&(i, j)| {
                let (ni, nj) = (dir(i), dir(j));
                let cross = Vector3::new(
                    ni[1] * nj[2] - ni[2] * nj[1],
                    ni[2] * nj[0] - ni[0] * nj[2],
                    ni[0] * nj[1] - ni[1] * nj[0],
                );
                let gap = mid(j) - mid(i);
                cross.norm() + (ni[0] * gap[0] + ni[1] * gap[1] + ni[2] * gap[2]).abs()
            })
            .sum()
    }

    fn counterparts(t: &SkeletonTemplate, mirrored: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        t.left_right_pairs().iter().map(|&k| mirrored[k]).collect()
    }

    #[test]
    fn symmetry_examples() {
        let (t, s) = scene(4, 0.0);
        let pairs = PairSelection::Named(PairSetName::All).resolve(&t).unwrap();
        let m = counterparts(&t, &s.joints_mirrored);
        assert!(symmetry_loss(&s.joints_real, &m, &pairs).unwrap() < 1e-9);

        // parallel segments, midpoints offset along the direction
        let a = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.5)];
        let b = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.5)];
        let v = symmetry_loss(&a, &b, &[(0, 1)]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy: Vec<_> = m
            .iter()
            .map(|x| x + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)))
            .collect();
        let got = symmetry_loss(&s.joints_real, &noisy, &pairs).unwrap();
        assert!((got - symmetry_oracle(&s.joints_real, &noisy, &pairs)).abs() < 1e-9);
        assert!(got > 0.0);
    }

    #[test]
    fn symmetry_degenerate_pairs() {
        let a = [Vector3::zeros(), Vector3::x()];
        assert_eq!(symmetry_loss(&a, &a, &[(0, 1)]), Err(Error::NoValidPairs));
        let b = [Vector3::z(), Vector3::x()];
        // pair dropped, nothing left
        assert_eq!(symmetry_loss(&a, &b, &[(0, 1)]), Err(Error::NoValidPairs));
    }

    #[test]
    fn normal_examples() {
        let (t, s) = scene(5, 0.0);
        let m = counterparts(&t, &s.joints_mirrored);
        assert!(normal_loss(&s.joints_real, &m, &s.plane.normal) < 1e-9);

        let a: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let mut b: Vec<_> = a.iter().map(|x| x + Vector3::z()).collect();
        b[3] = a[3];
        assert!((normal_loss(&a, &b, &Vector3::x()) - 3.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<_> = m
            .iter()
            .map(|x| x + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)))
            .collect();
        let n = s.plane.normal;
        let expected: f64 = s
            .joints_real
            .iter()
            .zip(&noisy)
            .map(|(p, q)| {
                let d = (q - p) / (q - p).norm();
                let c = [n[1] * d[2] - n[2] * d[1], n[2] * d[0] - n[0] * d[2], n[0] * d[1] - n[1] * d[0]];
                (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            })
            .sum();
        assert!((normal_loss(&s.joints_real, &noisy, &n) - expected).abs() < 1e-9);
    }

    #[test]
    fn symmetry_rigid_motion_invariance() {
        let (t, s) = scene(6, 0.0);
        let pairs = PairSelection::Named(PairSetName::All).resolve(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: Vec<_> = counterparts(&t, &s.joints_mirrored)
            .iter()
            .map(|x| x + Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)))
            .collect();
        let base = symmetry_loss(&s.joints_real, &m, &pairs).unwrap();
        for _ in 0..10 {
            let g = GlobalTransform::new(
                Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            );
            let v = symmetry_loss(&g.apply(&s.joints_real), &g.apply(&m), &pairs).unwrap();
            assert!((v - base).abs() < 1e-9);
        }
    }

    #[test]
    fn total_zero_at_truth() {
        let (t, s) = scene(7, 0.0);
        let r = truth_reference(&s);
        let v = total_objective(
            &s.camera,
            &s.real,
            &s.mirrored.global,
            &s.observation,
            &t,
            &r,
            &LossWeights::default(),
            Some(&s.plane.normal),
        )
        .unwrap();
        assert!(v.value < 1e-8, "{:?}", v.terms);
        assert_eq!(v.gradient.len(), Variables::len_for(&t));
    }

    #[test]
    fn decouples_without_mirror_terms() {
        let (t, s) = scene(8, 2.0);
        let weights = LossWeights::default().without_symmetry();
        let r = Reference {
            pose: t.zero_pose(),
            shape: t.unit_shape(),
        };
        let total = total_objective(&s.camera, &s.real, &s.mirrored.global, &s.observation, &t, &r, &weights, None)
            .unwrap()
            .value;
        let single = |subject: &SubjectParams, kps: &[Keypoint], reference: &Reference| {
            reprojection_loss(&s.camera, subject, &t, kps, weights.gm_sigma).unwrap()
                + prior_loss(subject, &reference.pose, &reference.shape, weights.lambda_beta)
        };
        let mirrored_ref = Reference {
            pose: reflect_pose(&t, &r.pose),
            shape: r.shape.clone(),
        };
        let expected = single(&s.real, &s.observation.keypoints_real, &r)
            + single(&s.mirrored, &s.observation.keypoints_mirrored, &mirrored_ref);
        assert!((total - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn lambda_n_disabled_without_normal() {
        let (t, s) = scene(9, 0.0);
        let r = truth_reference(&s);
        let obj = Objective::new(s.camera, &t, &s.observation, &r, &LossWeights::default(), None).unwrap();
        assert_eq!(obj.weights.lambda_n, 0.0);
    }

    fn perturbed(t: &SkeletonTemplate, s: &GroundTruthScene, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = truth_vars(s).to_vec();
        let n = 3 * t.num_joints();
        for (k, v) in x.iter_mut().enumerate() {
            let scale = if k < n { 0.3 } else if k < n + t.num_groups() { 0.1 } else { 0.2 };
            *v += rng.random_range(-scale..scale);
        }
        x
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..3 {
            let (t, s) = scene(seed, 2.0);
            let r = Reference {
                pose: t.zero_pose(),
                shape: t.unit_shape(),
            };
            let weights = LossWeights {
                joint_pairs: PairSelection::Named(PairSetName::All),
                ..LossWeights::default()
            };
            let obj = Objective::new(s.camera, &t, &s.observation, &r, &weights, Some(s.plane.normal)).unwrap();
            let mut checked = 0;
            while checked < 4 {
                let x = perturbed(&t, &s, &mut rng);
                // finite differences are meaningless across a kink
                if obj.kink_margin(&Variables::from_slice(&t, &x).unwrap()).unwrap() < 1e-3 {
                    continue;
                }
                checked += 1;
                let g = obj.evaluate(&Variables::from_slice(&t, &x).unwrap()).unwrap().gradient;
                let f = |x: &[f64]| obj.value(&Variables::from_slice(&t, x).unwrap()).unwrap().0;
                let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for k in 0..x.len() {
                    let h = 1e-5;
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[k] += h;
                    b[k] -= h;
                    let fd = (f(&a) - f(&b)) / (2.0 * h);
                    let err = (fd - g[k]).abs() / g[k].abs().max(1e-3 * g_inf);
                    assert!(err < 1e-4, "seed {seed} k {k}: fd {fd} analytic {}", g[k]);
                }
            }
        }
    }

    fn random_tied(t: &SkeletonTemplate, s: &GroundTruthScene, rng: &mut ChaCha8Rng) -> TiedVariables {
        let x = perturbed(t, s, rng);
        let v = Variables::from_slice(t, &x).unwrap();
        TiedVariables {
            pose: v.pose,
            shape: v.shape,
            real_global: v.real_global,
            normal: s.plane.normal * 1.3 + Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)),
            offset: s.plane.offset + rng.random_range(-0.3..0.3),
        }
    }

    #[test]
    fn tied_matches_untied_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..4 {
            let (t, s) = scene(seed, 2.0);
            let r = Reference {
                pose: t.zero_pose(),
                shape: t.unit_shape(),
            };
            let obj = Objective::new(s.camera, &t, &s.observation, &r, &LossWeights::default(), Some(s.plane.normal)).unwrap();
            let tied = random_tied(&t, &s, &mut rng);
            let a = obj.evaluate_tied(&tied).unwrap();
            let b = obj.value(&tied.untie().unwrap()).unwrap().1;
            assert!((a.value - b.total).abs() < 1e-8 * b.total, "{:?} vs {:?}", a.terms, b);
            assert!(b.symmetry < 1e-6);
        }
    }

    #[test]
    fn tied_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for seed in 0..3 {
            let (t, s) = scene(seed, 2.0);
            let r = Reference {
                pose: t.zero_pose(),
                shape: t.unit_shape(),
            };
            let obj = Objective::new(s.camera, &t, &s.observation, &r, &LossWeights::default(), Some(s.plane.normal)).unwrap();
            let x = random_tied(&t, &s, &mut rng).to_vec();
            let g = obj.evaluate_tied(&TiedVariables::from_slice(&t, &x).unwrap()).unwrap().gradient;
            let f = |x: &[f64]| obj.evaluate_tied(&TiedVariables::from_slice(&t, x).unwrap()).unwrap().value;
            let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..x.len() {
                let h = 1e-5;
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let err = (fd - g[k]).abs() / g[k].abs().max(1e-3 * g_inf);
                assert!(err < 1e-4, "seed {seed} k {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn variable_round_trip_and_masks() {
        let (t, s) = scene(10, 0.0);
        let v = truth_vars(&s);
        assert_eq!(Variables::from_slice(&t, &v.to_vec()).unwrap(), v);
        let mask = Variables::mask(&t, &[Block::RealGlobal, Block::MirroredGlobal]);
        assert_eq!(mask.iter().filter(|m| **m).count(), 12);
        assert!(mask[..3 * 17 + 8].iter().all(|m| !m));
        let all = Variables::mask(&t, &[Block::Pose, Block::Shape, Block::RealGlobal, Block::MirroredGlobal]);
        assert!(all.iter().all(|m| *m));
        assert!(Variables::from_slice(&t, &[0.0; 3]).is_err());
    }

    #[test]
    fn pair_selection_serde() {
        let t = SkeletonTemplate::default();
        let torso: PairSelection = serde_json::from_str("\"torso\"").unwrap();
        assert_eq!(torso.resolve(&t).unwrap().len(), 15);
        let all: PairSelection = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(all.resolve(&t).unwrap().len(), 136);
        let explicit: PairSelection = serde_json::from_str("[[0, 8], [11, 14]]").unwrap();
        assert_eq!(explicit.resolve(&t).unwrap(), vec![(0, 8), (11, 14)]);
        let bad: PairSelection = serde_json::from_str("[[0, 99]]").unwrap();
        assert!(bad.resolve(&t).is_err());
        let w: LossWeights = serde_json::from_str(&serde_json::to_string(&LossWeights::default()).unwrap()).unwrap();
        assert_eq!(w, LossWeights::default());
    }
}
