use std::path::{Path, PathBuf};

use bcae::frames::{Shape3, DESK_SHAPE, SECTION_SHAPE};
use bcae::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::{
    BenchmarkArgs, EvaluateArgs, GenerateArgs, GridArg, ShapeArg, ShapeArgs, SweepArgs, TrainArgs,
};
use crate::error::{CliError, CliResult};

pub const DEFAULT_OCCUPANCY: f64 = 0.1;
pub const DEFAULT_N_FRAMES: usize = 16;
pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_BOUNDS: [f64; 4] = [1.0, 4.0, 16.0, 64.0];

/// Option defaults read from `--config`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub log_level: Option<String>,
    pub downscale: Option<bool>,
    pub shape: Option<ShapeArg>,
    pub generate: GenerateFile,
    pub train: Option<TrainConfig>,
    pub evaluate: EvaluateFile,
    pub benchmark: BenchmarkFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateFile {
    pub n_frames: Option<usize>,
    pub occupancy: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateFile {
    pub sweep: Option<GridArg>,
    pub bins: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkFile {
    pub codecs: Option<Vec<String>>,
    pub bounds: Option<Vec<f64>>,
    pub post_grid: Option<GridArg>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Shape from flags, then file; `None` if neither names one.
    fn shape(&self, flags: &ShapeArgs) -> Option<Shape3> {
        if flags.downscale {
            return Some(DESK_SHAPE);
        }
        if let Some(s) = flags.shape {
            return Some(s.0);
        }
        match (self.downscale, self.shape) {
            (Some(true), Some(_)) => None,
            (Some(true), None) => Some(DESK_SHAPE),
            (_, s) => s.map(|s| s.0),
        }
    }

    fn check_shape_conflict(&self, flags: &ShapeArgs) -> CliResult<()> {
        if !flags.downscale && flags.shape.is_none() && self.downscale == Some(true) && self.shape.is_some() {
            return Err(CliError::Usage("config sets both downscale and an explicit shape".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateRun {
    pub n_frames: usize,
    pub occupancy: f64,
    pub seed: u64,
    pub shape: Shape3,
    pub out: PathBuf,
}

impl GenerateRun {
    pub fn resolve(args: &GenerateArgs, file: &FileConfig) -> CliResult<Self> {
        file.check_shape_conflict(&args.shape)?;
        Ok(Self {
            n_frames: args.n_frames.or(file.generate.n_frames).unwrap_or(DEFAULT_N_FRAMES),
            occupancy: args.occupancy.or(file.generate.occupancy).unwrap_or(DEFAULT_OCCUPANCY),
            seed: args.seed.or(file.seed).unwrap_or(0),
            shape: file.shape(&args.shape).unwrap_or(SECTION_SHAPE),
            out: args.out.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    pub train: TrainConfig,
    /// `None` means the shape of the data.
    pub shape: Option<Shape3>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: Option<u64>,
}

impl TrainRun {
    pub fn resolve(args: &TrainArgs, file: &FileConfig) -> CliResult<Self> {
        file.check_shape_conflict(&args.shape)?;
        let mut train = file.train.clone().unwrap_or_default();
        if let Some(seed) = file.seed {
            train.seed = seed;
        }
        if let Some(v) = args.variant {
            train.variant = v;
        }
        if let Some(e) = args.epochs {
            train.epochs = e;
        }
        if let Some(b) = args.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = args.lr {
            train.optimizer.lr = lr;
        }
        if let Some(s) = args.seed {
            train.seed = s;
        }
        train.validate()?;
        if args.checkpoint_every == Some(0) {
            return Err(CliError::Usage("--checkpoint-every must be positive".into()));
        }
        Ok(Self {
            train,
            shape: file.shape(&args.shape),
            data: args.data.clone(),
            out: args.out.clone(),
            resume: args.resume.clone(),
            checkpoint_every: args.checkpoint_every,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateRun {
    pub model: PathBuf,
    pub data: PathBuf,
    pub sweep: GridArg,
    pub out: PathBuf,
    pub histogram: Option<PathBuf>,
    pub bins: usize,
    pub samples: usize,
    pub seed: u64,
    pub round: bool,
}

impl EvaluateRun {
    pub fn resolve(args: &EvaluateArgs, file: &FileConfig) -> CliResult<Self> {
        Ok(Self {
            model: args.model.clone(),
            data: args.data.clone(),
            sweep: args.sweep.or(file.evaluate.sweep).unwrap_or(GridArg::GATE),
            out: args.out.clone(),
            histogram: args.histogram.clone(),
            bins: args.bins.or(file.evaluate.bins).unwrap_or(DEFAULT_BINS),
            samples: args
                .samples
                .or(file.evaluate.samples)
                .unwrap_or(bcae::evaluation::HISTOGRAM_SAMPLES),
            seed: args.seed.or(file.seed).unwrap_or(0),
            round: args.round,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub model: PathBuf,
    pub data: PathBuf,
    pub grid: GridArg,
    pub out: PathBuf,
}

impl SweepRun {
    pub fn resolve(args: &SweepArgs, file: &FileConfig) -> CliResult<Self> {
        Ok(Self {
            model: args.model.clone(),
            data: args.data.clone(),
            grid: args.grid.or(file.evaluate.sweep).unwrap_or(GridArg::GATE),
            out: args.out.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRun {
    pub codecs: Vec<String>,
    pub model: Option<PathBuf>,
    pub data: PathBuf,
    pub bounds: Vec<f64>,
    pub gate_grid: GridArg,
    pub post_grid: GridArg,
    pub out: PathBuf,
    pub survey: Option<PathBuf>,
}

impl BenchmarkRun {
    pub fn resolve(args: &BenchmarkArgs, file: &FileConfig) -> CliResult<Self> {
        let codecs = args
            .codecs
            .clone()
            .or_else(|| file.benchmark.codecs.clone())
            .unwrap_or_else(|| vec!["bcae".into(), "reference".into()]);
        if codecs.iter().any(|c| c == "bcae") && args.model.is_none() {
            return Err(CliError::Usage("the bcae codec needs --model".into()));
        }
        let bounds = args
            .bounds
            .clone()
            .or_else(|| file.benchmark.bounds.clone())
            .unwrap_or_else(|| DEFAULT_BOUNDS.to_vec());
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(CliError::Usage("error bounds must be finite and non-negative".into()));
        }
        Ok(Self {
            codecs,
            model: args.model.clone(),
            data: args.data.clone(),
            bounds,
            gate_grid: file.evaluate.sweep.unwrap_or(GridArg::GATE),
            post_grid: file.benchmark.post_grid.unwrap_or(GridArg::POST),
            out: args.out.clone(),
            survey: args.survey.clone(),
        })
    }
}
