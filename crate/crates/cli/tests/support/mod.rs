#![allow(dead_code)]

use mirrorpose_core::{generate_scene, GroundTruthScene, SceneInput, SceneSpec, SkeletonTemplate};
use nalgebra::{Matrix3, Rotation3, Vector3};

pub fn scene(seed: u64, noise: f64) -> GroundTruthScene {
    let spec = SceneSpec::default().with_seed(seed).with_noise(noise);
    generate_scene(&spec, &SkeletonTemplate::default()).expect("synthetic scene")
}

/// Scene input with the true camera and nothing else.
pub fn known_camera_input(s: &GroundTruthScene) -> SceneInput {
    let mut input = SceneInput::new(s.observation.clone());
    input.known_intrinsics = Some(s.camera);
    input
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Procrustes error found by search rather than SVD: for a fixed rotation
/// the best scale and translation are closed form, and the remaining
/// objective tr(R M) is maximized by a rotation grid followed by Newton
/// steps on the rotation manifold.
pub fn brute_force_pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    let n = pred.len() as f64;
    let pc = pred.iter().sum::<Vector3<f64>>() / n;
    let gc = gt.iter().sum::<Vector3<f64>>() / n;
    let p: Vec<_> = pred.iter().map(|x| x - pc).collect();
    let g: Vec<_> = gt.iter().map(|x| x - gc).collect();
    // tr(R M) = sum <R p_i, g_i>
    let m: Matrix3<f64> = p.iter().zip(&g).map(|(a, b)| a * b.transpose()).sum();
    let score = |r: &Matrix3<f64>| (r * m).trace();

    let mut best = Matrix3::identity();
    let steps = 12;
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                let angles = [i, j, k].map(|s| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * s as f64 / steps as f64);
                let r = *Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).matrix();
                if score(&r) > score(&best) {
                    best = r;
                }
            }
        }
    }

    // local model: tr(R exp([w]) M) with A = M R
    for _ in 0..100 {
        let a = m * best;
        let grad = Vector3::new(a[(1, 2)] - a[(2, 1)], a[(2, 0)] - a[(0, 2)], a[(0, 1)] - a[(1, 0)]);
        if grad.norm() < 1e-15 * (1.0 + m.norm()) {
            break;
        }
        let hess = 0.5 * (a + a.transpose()) - a.trace() * Matrix3::identity();
        let step = match hess.try_inverse() {
            Some(h) => -(h * grad),
            None => grad * 1e-3,
        };
        let step = if step.norm() > 0.5 { step * (0.5 / step.norm()) } else { step };
        let candidate = best * Rotation3::new(step).matrix();
        if score(&candidate) < score(&best) {
            break;
        }
        best = candidate;
    }

    let pp: f64 = p.iter().map(|x| x.norm_squared()).sum();
    let scale = score(&best) / pp;
    let per_joint: f64 = p
        .iter()
        .zip(&g)
        .map(|(a, b)| (scale * (best * a) - b).norm())
        .sum();
    1000.0 * per_joint / n
}
