use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector2;

use mirrorpose_core::camera_geometry::{intersect_lines, line_through};
use mirrorpose_core::objectives::Reference;
use mirrorpose_core::solver::SceneInput;
use mirrorpose_core::synth::{generate_scene, GroundTruthScene, SceneSpec};
use mirrorpose_core::{
    forward_kinematics, reconstruct_scene, LossWeights, Objective, SkeletonTemplate, SolverConfig, Variables,
};

fn scene(t: &SkeletonTemplate) -> GroundTruthScene {
    generate_scene(&SceneSpec::default().with_seed(7).with_noise(2.0), t).unwrap()
}

fn bench_forward_kinematics(c: &mut Criterion) {
    let t = SkeletonTemplate::default();
    let s = scene(&t);
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(&t, black_box(&s.real.pose), black_box(&s.real.shape)).unwrap())
    });
}

fn bench_objective(c: &mut Criterion) {
    let t = SkeletonTemplate::default();
    let s = scene(&t);
    let reference = Reference {
        pose: t.zero_pose(),
        shape: t.unit_shape(),
    };
    let weights = LossWeights::default();
    let objective = Objective::new(s.camera, &t, &s.observation, &reference, &weights, Some(s.plane.normal)).unwrap();
    let vars = Variables {
        pose: s.real.pose.clone(),
        shape: s.real.shape.clone(),
        real_global: s.real.global,
        mirrored_global: s.mirrored.global,
    };
    c.bench_function("objective_value", |b| b.iter(|| objective.value(black_box(&vars)).unwrap()));
    c.bench_function("objective_value_and_gradient", |b| {
        b.iter(|| objective.evaluate(black_box(&vars)).unwrap())
    });
}

fn bench_intersect_lines(c: &mut Criterion) {
    let v = Vector2::new(3000.0, 400.0);
    let lines: Vec<_> = (0..34)
        .map(|k| {
            let p = Vector2::new(100.0 + 40.0 * k as f64, 900.0 - 13.0 * k as f64);
            line_through(&p, &(p + 0.3 * (v - p))).unwrap()
        })
        .collect();
    c.bench_function("intersect_lines_34", |b| b.iter(|| intersect_lines(black_box(&lines), None).unwrap()));
}

fn bench_reconstruct(c: &mut Criterion) {
    let t = SkeletonTemplate::default();
    let s = scene(&t);
    let input = SceneInput {
        known_intrinsics: Some(s.camera),
        ..SceneInput::new(s.observation.clone())
    };
    let weights = LossWeights::default();
    let config = SolverConfig::default();
    let mut group = c.benchmark_group("reconstruct");
    group.sample_size(10);
    group.bench_function("known_intrinsics_2px", |b| {
        b.iter(|| reconstruct_scene(black_box(&input), &t, &weights, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forward_kinematics, bench_objective, bench_intersect_lines, bench_reconstruct);
criterion_main!(benches);
