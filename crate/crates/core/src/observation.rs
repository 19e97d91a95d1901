use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image dimensions in pixels, serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize(pub u32, pub u32);

impl ImageSize {
    pub fn width(&self) -> f64 {
        self.0 as f64
    }

    pub fn height(&self) -> f64 {
        self.1 as f64
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.width() / 2.0, self.height() / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub position: Vector2<f64>,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            position: Vector2::new(x, y),
            confidence,
        }
    }

    pub fn missing() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

impl Serialize for Keypoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.position.x, self.position.y, self.confidence].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Keypoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, c] = <[f64; 3]>::deserialize(d)?;
        Ok(Self::new(x, y, c))
    }
}

/// Detected 2D keypoints of the real person and of its mirror image, one
/// entry per skeleton joint. Keypoints with zero confidence are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation2D {
    pub keypoints_real: Vec<Keypoint>,
    pub keypoints_mirrored: Vec<Keypoint>,
    pub image_size: ImageSize,
}

impl Observation2D {
    pub fn new(
        keypoints_real: Vec<Keypoint>,
        keypoints_mirrored: Vec<Keypoint>,
        image_size: ImageSize,
    ) -> Result<Self> {
        if keypoints_real.len() != keypoints_mirrored.len() {
            return Err(Error::DimensionMismatch {
                what: "mirrored keypoints",
                expected: keypoints_real.len(),
                actual: keypoints_mirrored.len(),
            });
        }
        for kp in keypoints_real.iter().chain(&keypoints_mirrored) {
            if !(0.0..=1.0).contains(&kp.confidence) || !kp.position.iter().all(|v| v.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "keypoint {:?} has confidence outside [0, 1] or non-finite coordinates",
                    kp
                )));
            }
        }
        Ok(Self {
            keypoints_real,
            keypoints_mirrored,
            image_size,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.keypoints_real.len()
    }

    pub fn confident_count(keypoints: &[Keypoint], min_confidence: f64) -> usize {
        keypoints
            .iter()
            .filter(|k| k.confidence > 0.0 && k.confidence >= min_confidence)
            .count()
    }
}
