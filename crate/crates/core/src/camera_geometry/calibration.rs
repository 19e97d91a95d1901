//! Single-image intrinsics calibration from the keypoint vanishing point
//! and annotated mirror edges.

use serde::{Deserialize, Serialize};

use super::vanishing::{intersect_conditioned, keypoint_pair_lines};
use super::{
    focal_from_two_orthogonal_vps, intrinsics_from_three_vps, line_through,
    vp_from_segments, EdgeAnnotation, EdgeDirection, HomogeneousPoint2, PinholeCamera,
};
use crate::error::{Error, Result};
use crate::observation::Observation2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRoute {
    /// Three-VP when three finite vanishing points give a principal point
    /// inside the image, otherwise two-VP.
    #[default]
    Auto,
    TwoVp,
    ThreeVp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteTaken {
    TwoVp,
    ThreeVp,
}

/// `v0`: mirror-normal direction; `v1`/`v2`: horizontal/vertical mirror
/// edge directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoints {
    pub v0: Option<HomogeneousPoint2>,
    pub v1: Option<HomogeneousPoint2>,
    pub v2: Option<HomogeneousPoint2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub camera: PinholeCamera,
    pub route: RouteTaken,
    pub vanishing_points: VanishingPoints,
}

impl VanishingPoints {
    /// Estimates every vanishing point the inputs support. `v0` pools the
    /// keypoint correspondence lines with any perpendicular edge segments.
    pub fn estimate(
        obs: &Observation2D,
        swap: &[usize],
        edges: &[EdgeAnnotation],
        min_confidence: f64,
    ) -> Result<Self> {
        let family = |label| edges.iter().find(|e| e.direction_label == label);
        let mut pencil = keypoint_pair_lines(obs, swap, min_confidence)?;
        if let Some(perp) = family(EdgeDirection::PerpendicularToMirror) {
            for [p, q] in &perp.segments {
                pencil.push((line_through(p, q)?, (p - q).norm_squared(), [*p, *q]));
            }
        }
        let v0 = if pencil.len() >= 2 {
            let lines: Vec<_> = pencil.iter().map(|p| p.0).collect();
            let weights: Vec<_> = pencil.iter().map(|p| p.1).collect();
            let points: Vec<_> = pencil.iter().flat_map(|p| p.2).collect();
            intersect_conditioned(&lines, &weights, &points).ok()
        } else {
            None
        };
        let vp_of = |label| {
            family(label)
                .filter(|f| f.segments.len() >= 2)
                .map(|f| vp_from_segments(&f.segments))
                .transpose()
        };
        Ok(Self {
            v0,
            v1: vp_of(EdgeDirection::ParallelToMirrorHorizontal)?,
            v2: vp_of(EdgeDirection::ParallelToMirrorVertical)?,
        })
    }
}

/// Calibrates zero-skew, square-pixel intrinsics. The two-VP route assumes
/// the principal point at the image center.
pub fn calibrate(
    obs: &Observation2D,
    swap: &[usize],
    edges: &[EdgeAnnotation],
    min_confidence: f64,
    route: CalibrationRoute,
) -> Result<Calibration> {
    let vps = VanishingPoints::estimate(obs, swap, edges, min_confidence)?;
    let three = || -> Result<Calibration> {
        match (vps.v0, vps.v1, vps.v2) {
            (Some(a), Some(b), Some(c)) => Ok(Calibration {
                camera: intrinsics_from_three_vps(&a, &b, &c)?,
                route: RouteTaken::ThreeVp,
                vanishing_points: vps,
            }),
            _ => Err(Error::CalibrationFailed(
                "three-VP route needs keypoint, horizontal and vertical vanishing points".into(),
            )),
        }
    };
    let two = || -> Result<Calibration> {
        let center = obs.image_size.center();
        let candidates = [(vps.v0, vps.v1), (vps.v0, vps.v2), (vps.v1, vps.v2)];
        let mut last_err = Error::CalibrationFailed("no pair of orthogonal vanishing points".into());
        for (a, b) in candidates {
            if let (Some(a), Some(b)) = (a, b) {
                match focal_from_two_orthogonal_vps(&a, &b, &center) {
                    Ok(focal) => {
                        return Ok(Calibration {
                            camera: PinholeCamera::new(focal, center)?,
                            route: RouteTaken::TwoVp,
                            vanishing_points: vps,
                        })
                    }
                    Err(e) => last_err = e,
                }
            }
        }
        Err(Error::CalibrationFailed(last_err.to_string()))
    };
    match route {
        CalibrationRoute::TwoVp => two(),
        CalibrationRoute::ThreeVp => three().map_err(|e| Error::CalibrationFailed(e.to_string())),
        CalibrationRoute::Auto => match three() {
            Ok(c) if inside(&c.camera, obs) => Ok(c),
            _ => two(),
        },
    }
}

fn inside(camera: &PinholeCamera, obs: &Observation2D) -> bool {
    let p = camera.principal_point;
    (0.0..=obs.image_size.width()).contains(&p.x) && (0.0..=obs.image_size.height()).contains(&p.y)
}
