//! On-disk JSON documents: scene inputs, ground-truth sidecars, results
//! and the combined configuration file.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mirrorpose_core::solver::SceneInput;
use mirrorpose_core::synth::{GroundTruthScene, SceneSpec};
use mirrorpose_core::{
    EdgeAnnotation, EdgeDirection, Error as CoreError, ImageSize, Keypoint, LossWeights, MirrorPlane,
    Observation2D, PinholeCamera, ReconstructionResult, SkeletonTemplate, SolverConfig, SubjectParams,
};

pub const TOOL: &str = "mirrorpose";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: [f64; 2],
}

impl From<PinholeCamera> for Intrinsics {
    fn from(c: PinholeCamera) -> Self {
        Self {
            focal: c.focal,
            principal_point: [c.principal_point.x, c.principal_point.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFamily {
    pub direction: EdgeDirection,
    pub segments: Vec<[[f64; 2]; 2]>,
}

/// Input of `reconstruct` and `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub image_size: ImageSize,
    pub keypoints_real: Vec<Keypoint>,
    pub keypoints_mirrored: Vec<Keypoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
}

fn invalid(message: String) -> CoreError {
    CoreError::InvalidInput(message)
}

impl SceneFile {
    pub fn from_ground_truth(scene: &GroundTruthScene, with_intrinsics: bool, with_normal: bool) -> Self {
        let obs = &scene.observation;
        Self {
            image_size: obs.image_size,
            keypoints_real: obs.keypoints_real.clone(),
            keypoints_mirrored: obs.keypoints_mirrored.clone(),
            edges: scene
                .edges
                .iter()
                .map(|e| EdgeFamily {
                    direction: e.direction_label,
                    segments: e.segments.iter().map(|[p, q]| [[p.x, p.y], [q.x, q.y]]).collect(),
                })
                .collect(),
            intrinsics: with_intrinsics.then(|| scene.camera.into()),
            normal: with_normal.then(|| scene.plane.normal.into()),
        }
    }

    /// Checks the document against `template` and builds the solver input.
    /// Coordinates must lie within the image box enlarged to twice its size
    /// about its center.
    pub fn to_input(&self, template: &SkeletonTemplate) -> Result<SceneInput, CoreError> {
        let ImageSize(w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(invalid("image_size must be positive".into()));
        }
        for (name, kps) in [("keypoints_real", &self.keypoints_real), ("keypoints_mirrored", &self.keypoints_mirrored)] {
            if kps.len() != template.num_joints() {
                return Err(invalid(format!(
                    "{name} has {} entries, the skeleton has {} joints",
                    kps.len(),
                    template.num_joints()
                )));
            }
        }
        let (w, h) = (w as f64, h as f64);
        let inside = |p: &Vector2<f64>| {
            (-0.5 * w..=1.5 * w).contains(&p.x) && (-0.5 * h..=1.5 * h).contains(&p.y)
        };
        let keypoints = self.keypoints_real.iter().chain(&self.keypoints_mirrored);
        if let Some(kp) = keypoints.filter(|k| k.confidence > 0.0).find(|k| !inside(&k.position)) {
            return Err(invalid(format!("keypoint {:?} lies far outside the image", kp.position)));
        }
        let observation = Observation2D::new(self.keypoints_real.clone(), self.keypoints_mirrored.clone(), self.image_size)?;

        let mut edges = Vec::with_capacity(self.edges.len());
        for family in &self.edges {
            let segments: Vec<[Vector2<f64>; 2]> = family
                .segments
                .iter()
                .map(|[p, q]| [Vector2::from(*p), Vector2::from(*q)])
                .collect();
            if let Some(p) = segments.iter().flatten().find(|p| !inside(p)) {
                return Err(invalid(format!("edge endpoint {p:?} lies far outside the image")));
            }
            edges.push(EdgeAnnotation::new(segments, family.direction)?);
        }
        let known_intrinsics = self
            .intrinsics
            .map(|i| PinholeCamera::new(i.focal, Vector2::from(i.principal_point)))
            .transpose()?;
        let known_normal = match self.normal {
            Some(n) => {
                let n = Vector3::from(n);
                if !(n.norm() > 0.0 && n.iter().all(|v| v.is_finite())) {
                    return Err(invalid("normal must be a finite nonzero vector".into()));
                }
                Some(n.normalize())
            }
            None => None,
        };
        Ok(SceneInput {
            observation,
            edges,
            known_intrinsics,
            known_normal,
        })
    }
}

/// Which estimates fell back to defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackFlags {
    pub camera: bool,
    pub normal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<FallbackFlags>,
    /// Seconds since the Unix epoch; the only field that differs between
    /// otherwise identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Provenance {
    pub fn new(seed: u64) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            seed,
            config_hash: None,
            fallback: None,
            timestamp: None,
        }
    }

    pub fn stamped(mut self) -> Self {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub provenance: Provenance,
    pub result: ReconstructionResult,
}

/// Ground-truth sidecar written next to each synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub provenance: Provenance,
    pub spec: SceneSpec,
    pub camera: PinholeCamera,
    pub plane: MirrorPlane,
    pub real: SubjectParams,
    pub mirrored: SubjectParams,
    pub joints_real: Vec<[f64; 3]>,
    /// Entry `j` is the reflection of real joint `swap(j)`.
    pub joints_mirrored: Vec<[f64; 3]>,
}

impl GroundTruthFile {
    pub fn new(scene: &GroundTruthScene, spec: &SceneSpec) -> Self {
        let rows = |v: &[Vector3<f64>]| v.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            provenance: Provenance::new(scene.seed),
            spec: spec.clone().with_seed(scene.seed),
            camera: scene.camera,
            plane: scene.plane,
            real: scene.real.clone(),
            mirrored: scene.mirrored.clone(),
            joints_real: rows(&scene.joints_real),
            joints_mirrored: rows(&scene.joints_mirrored),
        }
    }

    pub fn joints_real(&self) -> Vec<Vector3<f64>> {
        self.joints_real.iter().map(|p| Vector3::from(*p)).collect()
    }
}

/// Loss weights and solver settings in one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub weights: LossWeights,
    pub solver: SolverConfig,
}

impl ConfigFile {
    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
