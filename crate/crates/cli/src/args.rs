use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mirrorpose", version, about = "3D skeleton, focal length and mirror plane from one image of a person and their reflection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON file with `weights` and `solver` sections; defaults otherwise
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed recorded in outputs; base seed of `synth`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Skeleton template JSON (default: built-in 17-joint skeleton)
    #[arg(long, global = true)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LossFlags {
    /// Disable the mirror-normal term
    #[arg(long)]
    pub no_normal_loss: bool,
    /// Disable the symmetry term (implies --no-normal-loss)
    #[arg(long)]
    pub no_symmetry_loss: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct skeletons, camera and mirror plane from scene files
    Reconstruct(ReconstructArgs),
    /// Estimate intrinsics from vanishing points
    Calibrate(CalibrateArgs),
    /// Generate synthetic scenes with ground-truth sidecars
    Synth(SynthArgs),
    /// Compare results with ground truth
    Eval(EvalArgs),
    /// Reconstruct at scaled focal lengths and tabulate the pose error
    SweepFocal(SweepArgs),
    /// Configuration helpers
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Scene files; with more than one, `--out` is a directory
    #[arg(required = true)]
    pub scenes: Vec<PathBuf>,
    /// Result file, or directory receiving `<id>.result.json`
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write `<result>.obj` with both skeletons and the mirror
    #[arg(long)]
    pub obj: bool,
    /// Also write `<result>.joints.csv`
    #[arg(long)]
    pub csv: bool,
    /// Write per-stage parameters to `<dir>/<id>/stage_<k>.json`
    #[arg(long)]
    pub stage_dump: Option<PathBuf>,
    #[command(flatten)]
    pub loss: LossFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RouteArg {
    Auto,
    TwoVp,
    ThreeVp,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub scene: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub route: RouteArg,
    /// Write the fallback intrinsics instead of failing
    #[arg(long)]
    pub allow_fallback: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Scene generator settings (JSON); defaults otherwise
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Keypoint noise in pixels
    #[arg(long)]
    pub noise: Option<f64>,
    /// Edge endpoint noise in pixels
    #[arg(long)]
    pub edge_noise: Option<f64>,
    /// Store the true intrinsics in the scene files
    #[arg(long)]
    pub with_intrinsics: bool,
    /// Store the true mirror normal in the scene files
    #[arg(long)]
    pub with_normal: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Glob of result files (ground-truth files are accepted too)
    #[arg(long)]
    pub results: String,
    /// Glob of ground-truth sidecars
    #[arg(long)]
    pub gt: String,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the metrics as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Glob of scene files
    #[arg(long)]
    pub scenes: String,
    /// Glob of ground-truth sidecars
    #[arg(long)]
    pub gt: String,
    /// Focal multipliers: `start:stop:step` or a comma-separated list
    #[arg(long, default_value = "0.9:1.1:0.05")]
    pub grid: String,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub loss: LossFlags,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Write the default configuration
    Init {
        /// Destination (default: stdout)
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}
