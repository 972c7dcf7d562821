use std::path::PathBuf;
use std::str::FromStr;

use bcae::frames::Shape3;
use bcae::network::Variant;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "bcae", version, about = "Autoencoder compression for sparse TPC voxel data")]
pub struct Cli {
    /// TOML file with option defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic zero-suppressed frames to a directory.
    Generate(GenerateArgs),
    /// Train a model on a directory of frames.
    Train(TrainArgs),
    /// Encode one frame into a compressed container.
    Compress(CompressArgs),
    /// Decode a container back into a frame.
    Decompress(DecompressArgs),
    /// Report reconstruction metrics at the swept gate threshold.
    Evaluate(EvaluateArgs),
    /// Compare the model against baseline codecs.
    Benchmark(BenchmarkArgs),
    /// Write the MSE curve over gate thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n_frames: Option<usize>,
    /// Target fraction of nonzero voxels.
    #[arg(long)]
    pub occupancy: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    /// Use the small desk-scale frame shape.
    #[arg(long, conflicts_with = "shape")]
    pub downscale: bool,
    /// Frame shape as `azimuth,height,radius`.
    #[arg(long)]
    pub shape: Option<ShapeArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path; the epoch log and manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Checkpoint or weights file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gate threshold; defaults to the one stored in the container.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Threshold grid as `start:end:step`.
    #[arg(long)]
    pub sweep: Option<GridArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write log-ADC histograms to this CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Round reconstructions to ADC counts before computing metrics.
    #[arg(long)]
    pub round: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub grid: Option<GridArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma separated: `bcae`, `reference`, `plugin:PATH`.
    #[arg(long, value_delimiter = ',')]
    pub codecs: Option<Vec<String>>,
    /// Model used for the `bcae` entry.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Absolute error bounds for the baseline codecs.
    #[arg(long, value_delimiter = ',')]
    pub bounds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-bound survey of each baseline to this CSV.
    #[arg(long)]
    pub survey: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ShapeArg(pub Shape3);

impl FromStr for ShapeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Vec<usize> = s
            .split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad extent {d:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match dims.as_slice() {
            [a, h, r] if *a > 0 && *h > 0 && *r > 0 => Ok(ShapeArg([*a, *h, *r])),
            _ => Err(format!("expected three positive extents, got {s:?}")),
        }
    }
}

impl TryFrom<String> for ShapeArg {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ShapeArg> for String {
    fn from(s: ShapeArg) -> String {
        format!("{},{},{}", s.0[0], s.0[1], s.0[2])
    }
}

/// Inclusive `start:end:step` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridArg {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridArg {
    pub const GATE: GridArg = GridArg {
        start: 0.0,
        end: 1.0,
        step: 0.02,
    };

    /// Post-processing thresholds for baselines, in ADC units.
    pub const POST: GridArg = GridArg {
        start: 0.0,
        end: 96.0,
        step: 1.0,
    };

    /// Gate thresholds, which must lie in `[0, 1]`.
    pub fn gate_values(self) -> bcae::Result<Vec<f64>> {
        bcae::evaluation::threshold_grid(self.start, self.end, self.step)
    }

    /// Unrestricted inclusive grid.
    pub fn values(self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad grid value {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [start, end, step] if step > &0.0 && end >= start => Ok(GridArg {
                start: *start,
                end: *end,
                step: *step,
            }),
            _ => Err(format!("expected start:end:step with step > 0, got {s:?}")),
        }
    }
}

impl TryFrom<String> for GridArg {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GridArg> for String {
    fn from(g: GridArg) -> String {
        format!("{}:{}:{}", g.start, g.end, g.step)
    }
}
