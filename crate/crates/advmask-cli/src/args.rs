//! Command-line surface. Every option is also a key in the optional config
//! file; explicit flags win over file values, which win over defaults.

use std::path::PathBuf;

use advmask::attack::{AttackMethod, NormMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "advmask",
    version,
    about = "Adversarial face-mask attacks against face verification, with an evaluation harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Attack sampled identity pairs and write per-pair artifacts
    /// (adversarial image, printable mask crop, loss trace).
    Attack {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Attack sampled pairs, score the results against victim models and
    /// verification backends, and write an evaluation report.
    Evaluate {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Re-run the evaluation across several transform strengths and plot
    /// the sensitivity curve.
    SweepBeta {
        #[command(flatten)]
        opts: CommonOpts,
        /// Comma-separated transform strengths, e.g. 0.0,0.1,0.2.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Warp the mask template onto one face and write the binary mask plus
    /// an overlay preview.
    MakeMask {
        #[command(flatten)]
        opts: CommonOpts,
        /// Source face image; its landmark sidecar must sit beside it.
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonOpts {
    /// TOML or JSON config file mirroring these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root: <identity>/<image>.{jpg,png} with landmark sidecars.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of cross-identity pairs to sample.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Master seed; per-pair seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attack method.
    #[arg(long, value_enum)]
    pub attack: Option<AttackArg>,
    /// Perturbation norm.
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    /// Perturbation budget around the initial composite.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Step size per iteration.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gradient iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Transform strength for the random similarity transform.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Model registry file (TOML or JSON).
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Verification backend config file (TOML or JSON).
    #[arg(long)]
    pub backends: Option<PathBuf>,
    /// Output directory for artifacts and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs fully sequentially.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Working canvas edge in pixels.
    #[arg(long)]
    pub canvas: Option<usize>,
    /// Mask template PNG; defaults to the bundled template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Registry models to attack through (comma-separated); defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub surrogates: Option<Vec<String>>,
    /// Registry models to score against (comma-separated); defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub victims: Option<Vec<String>>,
    /// False-acceptance-rate target used when calibrating thresholds.
    #[arg(long)]
    pub far: Option<f64>,
    /// Print resolution for the physical-size metadata of mask crops.
    #[arg(long)]
    pub dpi: Option<u32>,
}

/// Attack method names as they appear on the command line.
#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum AttackArg {
    Paste,
    Am,
    Rstam,
    RstamAll,
    RstamMeta,
}

impl From<AttackArg> for AttackMethod {
    fn from(value: AttackArg) -> Self {
        match value {
            AttackArg::Paste => AttackMethod::Paste,
            AttackArg::Am => AttackMethod::Am,
            AttackArg::Rstam => AttackMethod::Rstam,
            AttackArg::RstamAll => AttackMethod::RstamAll,
            AttackArg::RstamMeta => AttackMethod::RstamMeta,
        }
    }
}

/// Norm names as they appear on the command line.
#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum NormArg {
    Linf,
    L2,
}

impl From<NormArg> for NormMode {
    fn from(value: NormArg) -> Self {
        match value {
            NormArg::Linf => NormMode::Linf,
            NormArg::L2 => NormMode::L2,
        }
    }
}
