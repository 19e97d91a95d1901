//! Implementation of each verb. Every command returns `Ok(())` or a
//! [`CliError`] carrying its exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use mirrorpose_core::camera_geometry::{
    calibrate, normal_from_vp, CalibrationRoute, HomogeneousPoint2, RouteTaken, VanishingPoints,
};
use mirrorpose_core::metrics::{normal_angle_error, pose_error};
use mirrorpose_core::objectives::{Block, LossTerms};
use mirrorpose_core::solver::{CameraSource, NormalSource, StageTrace};
use mirrorpose_core::synth::{generate_scene, SceneSpec};
use mirrorpose_core::{
    reconstruct_scene, sweep_focal, Error as CoreError, MirrorPlane, PinholeCamera, ReconstructionResult,
    SkeletonTemplate, Variables,
};
use nalgebra::Vector3;

use crate::args::{
    CalibrateArgs, ConfigCommand, EvalArgs, GlobalArgs, LossFlags, ReconstructArgs, RouteArg, SweepArgs, SynthArgs,
};
use crate::error::{CliError, CliResult};
use crate::export;
use crate::formats::{ConfigFile, FallbackFlags, GroundTruthFile, Provenance, ResultFile, SceneFile};
use crate::io::{canonical_json, expand_glob, read_json, scene_id, write_atomic, write_json};

/// Shared state resolved from the global flags.
pub struct Context {
    pub template: SkeletonTemplate,
    pub config: ConfigFile,
    pub seed: u64,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> CliResult<Self> {
        let template = match &global.template {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                SkeletonTemplate::from_json(&text).map_err(|e| CliError::parse(path, e))?
            }
            None => SkeletonTemplate::default(),
        };
        let mut config: ConfigFile = match &global.config {
            Some(path) => read_json(path)?,
            None => ConfigFile::default(),
        };
        if let Some(seed) = global.seed {
            config.solver.seed = seed;
        }
        let seed = config.solver.seed;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = global.jobs {
            if jobs == 0 {
                return Err(CliError::InvalidArgument("--jobs must be at least 1".into()));
            }
            pool = pool.num_threads(jobs);
        }
        let pool = pool
            .build()
            .map_err(|e| CliError::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(Self {
            template,
            config,
            seed,
            pool,
        })
    }

    /// The configuration after the loss-ablation flags, validated.
    fn effective_config(&self, flags: &LossFlags) -> CliResult<ConfigFile> {
        let mut config = self.config.clone();
        if flags.no_normal_loss {
            config.weights = config.weights.without_normal();
        }
        if flags.no_symmetry_loss {
            config.weights = config.weights.without_symmetry().without_normal();
        }
        let check = |r: mirrorpose_core::Result<()>| r.map_err(|e| CliError::core("config", e));
        check(config.weights.validate())?;
        check(config.solver.validate())?;
        Ok(config)
    }
}

fn load_scene(path: &Path, template: &SkeletonTemplate) -> CliResult<mirrorpose_core::SceneInput> {
    let file: SceneFile = read_json(path)?;
    file.to_input(template).map_err(|e| CliError::core(path.display().to_string(), e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.to_string_lossy();
    let base = stem.strip_suffix(".json").unwrap_or(&stem);
    PathBuf::from(format!("{base}{suffix}"))
}

#[derive(Serialize)]
struct StageDump<'a> {
    stage: usize,
    free: &'a [Block],
    iterations: usize,
    evaluations: usize,
    termination: mirrorpose_core::lbfgs::Termination,
    initial: &'a LossTerms,
    #[serde(rename = "final")]
    final_terms: &'a LossTerms,
    variables: &'a Option<Variables>,
}

fn dump_stages(dir: &Path, id: &str, trace: &[StageTrace]) -> CliResult<()> {
    for (k, st) in trace.iter().enumerate() {
        let dump = StageDump {
            stage: k,
            free: &st.free,
            iterations: st.iterations,
            evaluations: st.evaluations,
            termination: st.termination,
            initial: &st.initial,
            final_terms: &st.final_terms,
            variables: &st.variables,
        };
        write_json(&dir.join(id).join(format!("stage_{k}.json")), &dump)?;
    }
    Ok(())
}

pub fn result_file(result: ReconstructionResult, config: &ConfigFile, seed: u64) -> ResultFile {
    let mut provenance = Provenance::new(seed);
    provenance.config_hash = Some(config.hash());
    provenance.fallback = Some(FallbackFlags {
        camera: result.camera_source == CameraSource::Fallback,
        normal: result.normal_source == NormalSource::Unavailable,
    });
    ResultFile {
        provenance: provenance.stamped(),
        result,
    }
}

pub fn reconstruct(ctx: &Context, args: &ReconstructArgs) -> CliResult<()> {
    let config = ctx.effective_config(&args.loss)?;
    let batch = args.scenes.len() > 1 || args.out.is_dir();
    let outputs: Vec<PathBuf> = args
        .scenes
        .iter()
        .map(|s| {
            if batch {
                args.out.join(format!("{}.result.json", scene_id(s)))
            } else {
                args.out.clone()
            }
        })
        .collect();
    let run = |scene: &PathBuf, out: &PathBuf| -> CliResult<ReconstructionResult> {
        let input = load_scene(scene, &ctx.template)?;
        let result = reconstruct_scene(&input, &ctx.template, &config.weights, &config.solver)
            .map_err(|e| CliError::core(scene.display().to_string(), e))?;
        if let Some(dir) = &args.stage_dump {
            dump_stages(dir, &scene_id(scene), &result.loss_trace)?;
        }
        if args.obj {
            write_atomic(&with_suffix(out, ".obj"), export::to_obj(&result, &ctx.template).as_bytes())?;
        }
        if args.csv {
            write_atomic(&with_suffix(out, ".joints.csv"), &export::joints_csv(&result, &ctx.template))?;
        }
        let file = result_file(result.clone(), &config, ctx.seed);
        write_json(out, &file)?;
        Ok(result)
    };
    let results: Vec<CliResult<ReconstructionResult>> = ctx.pool.install(|| {
        args.scenes
            .par_iter()
            .zip(&outputs)
            .map(|(scene, out)| run(scene, out))
            .collect()
    });
    // logged in input order, not completion order
    let mut first_error = None;
    for (scene, result) in args.scenes.iter().zip(results) {
        match result {
            Ok(r) => info!(
                "{}: loss {:.6e}, {:?}, focal {:.2} ({:?})",
                scene.display(),
                r.final_loss,
                r.termination_reason,
                r.camera.focal,
                r.camera_source
            ),
            Err(e) => {
                warn!("{e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum CalibrationRouteOut {
    TwoVp,
    ThreeVp,
    Fallback,
}

#[derive(Serialize)]
struct CalibrationFile {
    provenance: Provenance,
    route: CalibrationRouteOut,
    focal: f64,
    principal_point: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    normal: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vanishing_points: Option<VanishingPoints>,
}

pub fn calibrate_scene(ctx: &Context, args: &CalibrateArgs) -> CliResult<()> {
    let input = load_scene(&args.scene, &ctx.template)?;
    let obs = &input.observation;
    let route = match args.route {
        RouteArg::Auto => CalibrationRoute::Auto,
        RouteArg::TwoVp => CalibrationRoute::TwoVp,
        RouteArg::ThreeVp => CalibrationRoute::ThreeVp,
    };
    let swap = ctx.template.left_right_pairs();
    let outcome = calibrate(obs, swap, &input.edges, ctx.config.solver.min_confidence, route);
    let normal_of = |camera: &PinholeCamera, v0: Option<&HomogeneousPoint2>| {
        v0.map(|v| {
            let n = normal_from_vp(camera, v, None);
            [n.x, n.y, n.z]
        })
    };
    let file = match outcome {
        Ok(c) => CalibrationFile {
            provenance: Provenance::new(ctx.seed),
            route: match c.route {
                RouteTaken::TwoVp => CalibrationRouteOut::TwoVp,
                RouteTaken::ThreeVp => CalibrationRouteOut::ThreeVp,
            },
            focal: c.camera.focal,
            principal_point: [c.camera.principal_point.x, c.camera.principal_point.y],
            normal: normal_of(&c.camera, c.vanishing_points.v0.as_ref()),
            vanishing_points: Some(c.vanishing_points),
        },
        Err(e) if args.allow_fallback => {
            let size = obs.image_size;
            let focal = 1.2 * size.width().max(size.height());
            warn!("calibration failed ({e}); writing fallback focal {focal}");
            let center = size.center();
            CalibrationFile {
                provenance: Provenance::new(ctx.seed),
                route: CalibrationRouteOut::Fallback,
                focal,
                principal_point: [center.x, center.y],
                normal: None,
                vanishing_points: None,
            }
        }
        Err(e) => {
            let e = match e {
                CoreError::CalibrationFailed(_) => e,
                other => CoreError::CalibrationFailed(other.to_string()),
            };
            return Err(CliError::core(args.scene.display().to_string(), e));
        }
    };
    write_json(&args.out, &file)
}

pub fn synth(ctx: &Context, global: &GlobalArgs, args: &SynthArgs) -> CliResult<()> {
    let mut spec: SceneSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = global.seed {
        spec.seed = seed;
    }
    if let Some(noise) = args.noise {
        spec.keypoint_noise = noise;
    }
    if let Some(noise) = args.edge_noise {
        spec.edge_noise = noise;
    }
    spec.validate().map_err(|e| CliError::core("scene spec", e))?;
    if args.count == 0 {
        return Err(CliError::InvalidArgument("--count must be at least 1".into()));
    }
    let results: Vec<CliResult<()>> = ctx.pool.install(|| {
        (0..args.count)
            .into_par_iter()
            .map(|i| {
                let seed = spec.seed + i as u64;
                let scene = generate_scene(&spec.clone().with_seed(seed), &ctx.template)
                    .map_err(|e| CliError::core(format!("scene {i}"), e))?;
                let id = format!("scene_{i:04}");
                let file = SceneFile::from_ground_truth(&scene, args.with_intrinsics, args.with_normal);
                write_json(&args.out_dir.join(format!("{id}.scene.json")), &file)?;
                write_json(&args.out_dir.join(format!("{id}.gt.json")), &GroundTruthFile::new(&scene, &spec))
            })
            .collect()
    });
    results.into_iter().collect::<CliResult<Vec<()>>>()?;
    info!("wrote {} scenes to {}", args.count, args.out_dir.display());
    Ok(())
}

/// Files of two globs matched by scene id.
fn pair_by_id(left: &str, right: &str) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let index = |pattern: &str| -> CliResult<BTreeMap<String, PathBuf>> {
        let paths = expand_glob(pattern)?;
        if paths.is_empty() {
            return Err(CliError::Pairing(format!("no files match {pattern:?}")));
        }
        let mut map = BTreeMap::new();
        for p in paths {
            let id = scene_id(&p);
            if let Some(previous) = map.insert(id.clone(), p.clone()) {
                return Err(CliError::Pairing(format!(
                    "scene id {id} appears twice ({} and {})",
                    previous.display(),
                    p.display()
                )));
            }
        }
        Ok(map)
    };
    let (a, b) = (index(left)?, index(right)?);
    let unmatched: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).chain(b.keys().filter(|k| !a.contains_key(*k))).collect();
    if !unmatched.is_empty() {
        return Err(CliError::Pairing(format!("unpaired scene ids: {unmatched:?}")));
    }
    Ok(a.into_iter().map(|(id, p)| {
        let q = b[&id].clone();
        (id, p, q)
    }).collect())
}

/// What `eval` compares against the ground truth.
struct Prediction {
    joints_real: Vec<Vector3<f64>>,
    plane: MirrorPlane,
    focal: f64,
}

fn load_prediction(path: &Path) -> CliResult<Prediction> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match serde_json::from_str::<ResultFile>(&text) {
        Ok(r) => Ok(Prediction {
            joints_real: r.result.joints_real,
            plane: r.result.fitted_plane,
            focal: r.result.camera.focal,
        }),
        Err(result_err) => match serde_json::from_str::<GroundTruthFile>(&text) {
            Ok(gt) => Ok(Prediction {
                joints_real: gt.joints_real(),
                plane: gt.plane,
                focal: gt.camera.focal,
            }),
            Err(_) => Err(CliError::parse(path, result_err)),
        },
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MetricRow {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub mrpe_mm: f64,
    pub normal_angle_deg: f64,
    pub focal_error_pct: f64,
}

impl MetricRow {
    fn values(&self) -> [f64; 5] {
        [self.mpjpe_mm, self.pa_mpjpe_mm, self.mrpe_mm, self.normal_angle_deg, self.focal_error_pct]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            mpjpe_mm: v[0],
            pa_mpjpe_mm: v[1],
            mrpe_mm: v[2],
            normal_angle_deg: v[3],
            focal_error_pct: v[4],
        }
    }
}

#[derive(Serialize)]
struct SceneMetrics {
    scene: String,
    joints: usize,
    #[serde(flatten)]
    metrics: MetricRow,
}

#[derive(Serialize)]
struct EvalReport {
    provenance: Provenance,
    scenes: Vec<SceneMetrics>,
    mean: MetricRow,
    std: MetricRow,
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> CliResult<()> {
    let pairs = pair_by_id(&args.results, &args.gt)?;
    let rows: Vec<CliResult<SceneMetrics>> = ctx.pool.install(|| {
        pairs
            .par_iter()
            .map(|(id, pred_path, gt_path)| {
                let pred = load_prediction(pred_path)?;
                let gt: GroundTruthFile = read_json(gt_path)?;
                let e = pose_error(&ctx.template, &pred.joints_real, &gt.joints_real())
                    .map_err(|e| CliError::core(id.clone(), e))?;
                Ok(SceneMetrics {
                    scene: id.clone(),
                    joints: pred.joints_real.len(),
                    metrics: MetricRow {
                        mpjpe_mm: e.mpjpe,
                        pa_mpjpe_mm: e.pa_mpjpe,
                        mrpe_mm: e.mrpe,
                        normal_angle_deg: normal_angle_error(&pred.plane.normal, &gt.plane.normal),
                        focal_error_pct: 100.0 * (pred.focal - gt.camera.focal).abs() / gt.camera.focal,
                    },
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    for k in 0..5 {
        (mean[k], std[k]) = mean_std(rows.iter().map(|r| r.metrics.values()[k]));
    }
    let (mean, std) = (MetricRow::from_values(mean), MetricRow::from_values(std));

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::InvalidArgument(format!("csv: {e}"));
    w.write_record(["scene", "joints", "mpjpe_mm", "pa_mpjpe_mm", "mrpe_mm", "normal_angle_deg", "focal_error_pct"])
        .map_err(csv_err)?;
    let joints = rows.first().map_or(0, |r| r.joints);
    let labeled = rows
        .iter()
        .map(|r| (r.scene.as_str(), r.joints, r.metrics))
        .chain([("mean", joints, mean), ("std", joints, std)]);
    for (scene, joints, m) in labeled {
        let mut record = vec![scene.to_string(), joints.to_string()];
        record.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::InvalidArgument(format!("csv: {e}")))?;
    write_atomic(&args.out, &bytes)?;
    info!("{} scenes: mean MPJPE {:.3} mm, PA-MPJPE {:.3} mm, MRPE {:.3} mm", rows.len(), mean.mpjpe_mm, mean.pa_mpjpe_mm, mean.mrpe_mm);
    if let Some(path) = &args.json {
        let report = EvalReport {
            provenance: Provenance::new(ctx.seed),
            scenes: rows,
            mean,
            std,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::InvalidArgument(format!("focal grid {spec:?}: {why}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + k as f64 * step).collect()
    } else {
        spec.split(',').map(number).collect::<CliResult<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(bad("multipliers must be positive"));
    }
    Ok(grid)
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> CliResult<()> {
    let config = ctx.effective_config(&args.loss)?;
    let grid = parse_grid(&args.grid)?;
    let pairs = pair_by_id(&args.scenes, &args.gt)?;
    let per_scene: Vec<CliResult<Vec<f64>>> = ctx.pool.install(|| {
        pairs
            .par_iter()
            .map(|(id, scene_path, gt_path)| {
                let input = load_scene(scene_path, &ctx.template)?;
                let gt: GroundTruthFile = read_json(gt_path)?;
                let rows = sweep_focal(&input, &gt.camera, &gt.joints_real(), &ctx.template, &config.weights, &config.solver, &grid)
                    .map_err(|e| CliError::core(id.clone(), e))?;
                Ok(rows.iter().map(|r| r.mpjpe).collect())
            })
            .collect()
    });
    let per_scene = per_scene.into_iter().collect::<CliResult<Vec<_>>>()?;
    let means: Vec<f64> = (0..grid.len())
        .map(|k| per_scene.iter().map(|s| s[k]).sum::<f64>() / per_scene.len() as f64)
        .collect();
    let baseline = grid.iter().position(|m| (m - 1.0).abs() < 1e-12).map(|k| means[k]);

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::InvalidArgument(format!("csv: {e}"));
    w.write_record(["multiplier", "scenes", "mean_mpjpe_mm", "relative_change_pct"]).map_err(csv_err)?;
    for (m, mean) in grid.iter().zip(&means) {
        let change = baseline.map_or(String::new(), |b| (100.0 * (mean - b) / b).to_string());
        w.write_record([m.to_string(), per_scene.len().to_string(), mean.to_string(), change])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::InvalidArgument(format!("csv: {e}")))?;
    write_atomic(&args.out, &bytes)
}

pub fn config(command: &ConfigCommand) -> CliResult<()> {
    match command {
        ConfigCommand::Init { out } => {
            let text = canonical_json(&ConfigFile::default());
            match out {
                Some(path) => write_atomic(path, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}
