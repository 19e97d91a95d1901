//! Bone-scaled articulated skeleton: forward kinematics, its reverse-mode
//! derivative, and the mirror reflection of pose and global parameters.
//!
//! Rest frame: x is the subject's left, y points down, z points backwards
//! (an identity global rotation makes the subject face the camera). The
//! left/right involution therefore reflects across the x = 0 plane.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera_geometry::MirrorPlane;
use crate::error::{Error, Result};
use crate::rotation;
use crate::serde_helpers;

/// Handedness flip matching the pose reflection convention.
pub fn handedness_flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0))
}

/// On-disk form of a [`SkeletonTemplate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<[f64; 3]>,
    /// Scale group of each joint's incoming bone; `null` for the root.
    pub bone_groups: Vec<Option<usize>>,
    pub left_right_pairs: Vec<usize>,
    /// Joints used by the default symmetry pair set.
    pub torso_joints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateSpec", into = "TemplateSpec")]
pub struct SkeletonTemplate {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<Vector3<f64>>,
    bone_groups: Vec<Option<usize>>,
    num_groups: usize,
    left_right_pairs: Vec<usize>,
    torso_joints: Vec<usize>,
    root: usize,
    /// Parents before children.
    order: Vec<usize>,
}

impl TryFrom<TemplateSpec> for SkeletonTemplate {
    type Error = Error;

    fn try_from(spec: TemplateSpec) -> Result<Self> {
        Self::new(spec)
    }
}

impl From<SkeletonTemplate> for TemplateSpec {
    fn from(t: SkeletonTemplate) -> Self {
        TemplateSpec {
            joint_names: t.joint_names,
            parents: t.parents,
            rest_offsets: t.rest_offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
            bone_groups: t.bone_groups,
            left_right_pairs: t.left_right_pairs,
            torso_joints: t.torso_joints,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidTemplate(msg.into())
}

impl SkeletonTemplate {
    pub fn new(spec: TemplateSpec) -> Result<Self> {
        let n = spec.joint_names.len();
        if n == 0 {
            return Err(invalid("no joints"));
        }
        for (what, len) in [
            ("parents", spec.parents.len()),
            ("rest_offsets", spec.rest_offsets.len()),
            ("bone_groups", spec.bone_groups.len()),
            ("left_right_pairs", spec.left_right_pairs.len()),
        ] {
            if len != n {
                return Err(invalid(format!("{what} has {len} entries, expected {n}")));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&j| spec.parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(invalid(format!("expected exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        if spec.parents.iter().flatten().any(|&p| p >= n) {
            return Err(invalid("parent index out of range"));
        }

        // Breadth-first order from the root; joints never reached lie on a cycle.
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            head += 1;
            order.extend((0..n).filter(|&c| spec.parents[c] == Some(j)));
        }
        if order.len() != n {
            return Err(invalid("parent array contains a cycle"));
        }

        if spec.bone_groups[root].is_some() {
            return Err(invalid("root joint must not have a bone group"));
        }
        let mut groups = Vec::with_capacity(n);
        for j in 0..n {
            match (j == root, spec.bone_groups[j]) {
                (true, _) => {}
                (false, Some(g)) => groups.push(g),
                (false, None) => {
                    return Err(invalid(format!("joint {} has no bone group", spec.joint_names[j])))
                }
            }
        }
        let num_groups = groups.iter().max().map_or(0, |&g| g + 1);
        if (0..num_groups).any(|g| !groups.contains(&g)) {
            return Err(invalid("bone group indices must be contiguous"));
        }

        let pairs = &spec.left_right_pairs;
        let flip = handedness_flip();
        for j in 0..n {
            let m = pairs[j];
            if m >= n || pairs[m] != j {
                return Err(invalid("left_right_pairs is not an involution"));
            }
            if spec.parents[m] != spec.parents[j].map(|p| pairs[p]) {
                return Err(invalid(format!(
                    "paired joints {} and {} have unpaired parents",
                    spec.joint_names[j], spec.joint_names[m]
                )));
            }
            if spec.bone_groups[m] != spec.bone_groups[j] {
                return Err(invalid("paired joints must share a bone group"));
            }
            let (a, b) = (Vector3::from(spec.rest_offsets[j]), Vector3::from(spec.rest_offsets[m]));
            if (flip * a - b).norm() > 1e-9 {
                return Err(invalid(format!(
                    "rest offsets of {} and {} are not mirror images",
                    spec.joint_names[j], spec.joint_names[m]
                )));
            }
        }
        if spec.torso_joints.iter().any(|&j| j >= n) {
            return Err(invalid("torso joint index out of range"));
        }

        Ok(Self {
            joint_names: spec.joint_names,
            parents: spec.parents,
            rest_offsets: spec.rest_offsets.into_iter().map(Vector3::from).collect(),
            bone_groups: spec.bone_groups,
            num_groups,
            left_right_pairs: spec.left_right_pairs,
            torso_joints: spec.torso_joints,
            root,
            order,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn rest_offset(&self, j: usize) -> &Vector3<f64> {
        &self.rest_offsets[j]
    }

    pub fn bone_group(&self, j: usize) -> Option<usize> {
        self.bone_groups[j]
    }

    pub fn left_right_pairs(&self) -> &[usize] {
        &self.left_right_pairs
    }

    pub fn torso_joints(&self) -> &[usize] {
        &self.torso_joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Joint indices with every parent listed before its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn zero_pose(&self) -> PoseParams {
        PoseParams::zeros(self.num_joints())
    }

    pub fn unit_shape(&self) -> ShapeParams {
        ShapeParams::ones(self.num_groups)
    }

    fn check(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<()> {
        if pose.theta.len() != self.num_joints() {
            return Err(Error::DimensionMismatch {
                what: "pose",
                expected: self.num_joints(),
                actual: pose.theta.len(),
            });
        }
        if shape.beta.len() != self.num_groups {
            return Err(Error::DimensionMismatch {
                what: "shape",
                expected: self.num_groups,
                actual: shape.beta.len(),
            });
        }
        Ok(())
    }
}

const DEFAULT_JOINTS: [(&str, Option<usize>, [f64; 3], Option<usize>); 17] = [
    ("pelvis", None, [0.0, 0.0, 0.0], None),
    ("right_hip", Some(0), [-0.12, 0.02, 0.0], Some(0)),
    ("right_knee", Some(1), [0.0, 0.43, 0.01], Some(1)),
    ("right_ankle", Some(2), [0.0, 0.42, 0.04], Some(2)),
    ("left_hip", Some(0), [0.12, 0.02, 0.0], Some(0)),
    ("left_knee", Some(4), [0.0, 0.43, 0.01], Some(1)),
    ("left_ankle", Some(5), [0.0, 0.42, 0.04], Some(2)),
    ("spine", Some(0), [0.0, -0.24, 0.02], Some(3)),
    ("neck", Some(7), [0.0, -0.25, -0.01], Some(3)),
    ("nose", Some(8), [0.0, -0.11, -0.1], Some(4)),
    ("head", Some(9), [0.0, -0.12, 0.08], Some(4)),
    ("left_shoulder", Some(8), [0.16, 0.03, 0.0], Some(5)),
    ("left_elbow", Some(11), [0.05, 0.27, 0.02], Some(6)),
    ("left_wrist", Some(12), [0.03, 0.25, -0.05], Some(7)),
    ("right_shoulder", Some(8), [-0.16, 0.03, 0.0], Some(5)),
    ("right_elbow", Some(14), [-0.05, 0.27, 0.02], Some(6)),
    ("right_wrist", Some(15), [-0.03, 0.25, -0.05], Some(7)),
];

/// Names of the eight default bone-scale groups.
pub const DEFAULT_GROUP_NAMES: [&str; 8] = [
    "hip", "thigh", "shin", "spine", "head", "shoulder", "upper_arm", "forearm",
];

impl Default for SkeletonTemplate {
    /// 17-joint skeleton in the common pelvis-rooted keypoint layout with
    /// eight bone-scale groups.
    fn default() -> Self {
        let spec = TemplateSpec {
            joint_names: DEFAULT_JOINTS.iter().map(|j| j.0.to_string()).collect(),
            parents: DEFAULT_JOINTS.iter().map(|j| j.1).collect(),
            rest_offsets: DEFAULT_JOINTS.iter().map(|j| j.2).collect(),
            bone_groups: DEFAULT_JOINTS.iter().map(|j| j.3).collect(),
            left_right_pairs: vec![0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13],
            // pelvis, neck, shoulders, hips
            torso_joints: vec![0, 8, 11, 14, 1, 4],
        };
        Self::new(spec).expect("built-in template is valid")
    }
}

/// Per-joint axis-angle rotations relative to the parent (root unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseParams {
    #[serde(with = "serde_helpers::vec3_list")]
    pub theta: Vec<Vector3<f64>>,
}

impl PoseParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            theta: vec![Vector3::zeros(); n],
        }
    }

    pub fn canonicalize(&mut self) {
        for t in &mut self.theta {
            *t = rotation::canonicalize(t);
        }
    }
}

pub const SHAPE_BOUNDS: (f64, f64) = (0.5, 2.0);

/// Per-group bone-length scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeParams {
    pub beta: Vec<f64>,
}

impl ShapeParams {
    pub fn ones(n: usize) -> Self {
        Self { beta: vec![1.0; n] }
    }

    pub fn clamp_to_bounds(&mut self) {
        for b in &mut self.beta {
            *b = b.clamp(SHAPE_BOUNDS.0, SHAPE_BOUNDS.1);
        }
    }
}

/// Rigid transform taking root-frame joints into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTransform {
    #[serde(with = "serde_helpers::vec3")]
    pub rotation: Vector3<f64>,
    #[serde(with = "serde_helpers::vec3")]
    pub translation: Vector3<f64>,
}

impl GlobalTransform {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation::exp(&self.rotation)
    }

    pub fn apply(&self, joints: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let r = self.rotation_matrix();
        joints.iter().map(|p| r * p + self.translation).collect()
    }
}

pub fn apply_global(g: &GlobalTransform, joints: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    g.apply(joints)
}

/// Intermediate quantities of one forward-kinematics pass.
#[derive(Debug, Clone)]
pub struct FkState {
    pub positions: Vec<Vector3<f64>>,
    /// Accumulated rotation of each joint's frame.
    pub frames: Vec<Matrix3<f64>>,
    local: Vec<Matrix3<f64>>,
}

/// Joint positions in the root frame.
pub fn forward_kinematics(
    template: &SkeletonTemplate,
    pose: &PoseParams,
    shape: &ShapeParams,
) -> Result<Vec<Vector3<f64>>> {
    Ok(forward_kinematics_state(template, pose, shape)?.positions)
}

pub fn forward_kinematics_state(
    template: &SkeletonTemplate,
    pose: &PoseParams,
    shape: &ShapeParams,
) -> Result<FkState> {
    template.check(pose, shape)?;
    let n = template.num_joints();
    let mut positions = vec![Vector3::zeros(); n];
    let mut frames = vec![Matrix3::identity(); n];
    let mut local = vec![Matrix3::identity(); n];
    for &j in &template.order {
        let Some(p) = template.parents[j] else { continue };
        let group = template.bone_groups[j].expect("validated");
        local[j] = rotation::exp(&pose.theta[j]);
        positions[j] = positions[p] + frames[p] * (shape.beta[group] * template.rest_offsets[j]);
        frames[j] = frames[p] * local[j];
    }
    Ok(FkState {
        positions,
        frames,
        local,
    })
}

/// Pulls a gradient on root-frame joint positions back to pose and shape.
pub fn forward_kinematics_backward(
    template: &SkeletonTemplate,
    pose: &PoseParams,
    shape: &ShapeParams,
    state: &FkState,
    grad_positions: &[Vector3<f64>],
) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let n = template.num_joints();
    let mut g_pos = grad_positions.to_vec();
    let mut g_frame = vec![Matrix3::<f64>::zeros(); n];
    let mut g_theta = vec![Vector3::zeros(); n];
    let mut g_beta = vec![0.0; template.num_groups];
    for &j in template.order.iter().rev() {
        let Some(p) = template.parents[j] else { continue };
        let group = template.bone_groups[j].expect("validated");
        let offset = template.rest_offsets[j];
        let gp = g_pos[j];
        g_pos[p] += gp;
        g_frame[p] += gp * (shape.beta[group] * offset).transpose();
        g_beta[group] += gp.dot(&(state.frames[p] * offset));

        let gf = g_frame[j];
        if gf.iter().any(|&v| v != 0.0) {
            g_frame[p] += gf * state.local[j].transpose();
            let d = rotation::exp_derivatives(&pose.theta[j]);
            for k in 0..3 {
                g_theta[j][k] = gf.dot(&(state.frames[p] * d[k]));
            }
        }
    }
    (g_theta, g_beta)
}

/// Mirror reflection of pose parameters: left/right relabeling with the
/// y and z axis-angle components negated.
pub fn reflect_pose(template: &SkeletonTemplate, pose: &PoseParams) -> PoseParams {
    let mut out = PoseParams::zeros(pose.theta.len());
    for (j, t) in pose.theta.iter().enumerate() {
        out.theta[template.left_right_pairs[j]] = Vector3::new(t.x, -t.y, -t.z);
    }
    out
}

/// Global transform of the mirror image of a subject with global `g`, for
/// use with the reflected pose.
pub fn reflect_global(g: &GlobalTransform, plane: &MirrorPlane) -> GlobalTransform {
    let r = plane.reflection_linear() * g.rotation_matrix() * handedness_flip();
    GlobalTransform::new(rotation::log(&r), plane.reflect_point(&g.translation))
}
