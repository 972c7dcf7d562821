use std::fs;
use std::path::{Path, PathBuf};

use bcae::codec::{compress, compression_ratio, decompress, CompressedContainer};
use bcae::evaluation::{
    histogram_report, reconstruct_frames, run_benchmark, survey_error_bounds, threshold_sweep, write_csv,
    BaselineCodec, BenchmarkEntry, MetricsReport, PluginCodec, PostThreshold, ReferenceCodec,
};
use bcae::frames::{generate_synthetic_frames, read_frame, write_frame, AdcFrame, RealFrame, SyntheticConfig};
use bcae::network::{ModelBundle, NetworkConfig, Variant, WEIGHTS_MAGIC};
use bcae::training::{Trainer, CHECKPOINT_MAGIC};
use bcae::transform::Threshold;
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::config::{BenchmarkRun, EvaluateRun, GenerateRun, SweepRun, TrainRun};
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, sibling, Manifest};

const FRAME_EXTENSION: &str = "bin";

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.{FRAME_EXTENSION}")
}

/// Frame files of a directory in name order.
pub fn list_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == FRAME_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .{FRAME_EXTENSION} frames in {}", dir.display())));
    }
    Ok(paths)
}

pub fn load_frames(dir: &Path) -> CliResult<Vec<AdcFrame>> {
    let frames = list_frames(dir)?
        .iter()
        .map(read_frame)
        .collect::<bcae::Result<Vec<_>>>()?;
    let shape = frames[0].shape();
    if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
        return Err(bcae::Error::shape(shape, bad.shape()).into());
    }
    info!(dir = %dir.display(), frames = frames.len(), ?shape, "loaded frames");
    Ok(frames)
}

/// Accepts a training checkpoint or a bare weights file.
pub fn load_model(path: &Path) -> CliResult<ModelBundle> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        file.read_exact(&mut magic).map_err(|_| bcae::Error::parse(0, "file too short for a model"))?;
    }
    if &magic == CHECKPOINT_MAGIC {
        Ok(Trainer::load_checkpoint(path)?.model)
    } else if &magic == WEIGHTS_MAGIC {
        Ok(ModelBundle::load(path)?)
    } else {
        Err(bcae::Error::parse(0, format!("{} is neither a checkpoint nor a weights file", path.display())).into())
    }
}

fn model_ratio(model: &ModelBundle) -> f64 {
    let s = model.config.input_shape;
    compression_ratio(&[1, s[0], s[1], s[2]], 16, &model.latent_shape(), 16)
}

pub fn generate(run: &GenerateRun) -> CliResult<()> {
    let config = SyntheticConfig::new(run.shape, run.occupancy, run.seed);
    let frames = generate_synthetic_frames(&config, run.n_frames)?;
    fs::create_dir_all(&run.out).map_err(|e| CliError::io(&run.out, e))?;
    let mut checksums = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        write_frame(frame, run.out.join(frame_file_name(i)))?;
        checksums.push(format!("{:016x}", frame.checksum()));
    }
    let occupancy = frames.iter().map(|f| f.nonzero_fraction()).sum::<f64>() / frames.len().max(1) as f64;
    info!(frames = frames.len(), occupancy, out = %run.out.display(), "generated");
    Manifest::new("generate", run, json!({ "checksums": checksums, "mean_occupancy": occupancy }))
        .write(&run.out.join("manifest.json"))
}

pub fn train(run: &TrainRun) -> CliResult<()> {
    ensure_parent(&run.out)?;
    let mut frames = load_frames(&run.data)?;
    let shape = frames[0].shape();
    if let Some(expected) = run.shape {
        if expected != shape {
            return Err(bcae::Error::shape(expected, shape).into());
        }
    }
    frames.truncate(run.train.train_size);
    let mut trainer = match &run.resume {
        Some(path) => {
            let network = NetworkConfig::with_input(shape, run.train.variant);
            let t = Trainer::resume(path, &run.train, &network)?;
            info!(from = %path.display(), epoch = t.epoch(), "resumed");
            t
        }
        None => Trainer::new(run.train.clone(), shape)?,
    };
    let log_path = sibling(&run.out, "log.csv");
    info!(
        variant = trainer.config.variant.name(),
        frames = frames.len(),
        epochs = trainer.config.epochs,
        parameters = trainer.model.parameter_count(),
        "training"
    );
    while trainer.epoch() < trainer.config.epochs {
        let r = trainer.train_epoch(&frames)?.clone();
        info!(
            epoch = r.epoch,
            lr = r.lr,
            rho_s = r.rho_s,
            rho_r = r.rho_r,
            seg_weight = r.seg_weight,
            total = r.total,
            wall_time = r.wall_time,
            "epoch"
        );
        if run.checkpoint_every.is_some_and(|n| r.epoch % n == 0) {
            trainer.save_checkpoint(&run.out)?;
            write_csv(&trainer.history, &log_path)?;
        }
    }
    trainer.save_checkpoint(&run.out)?;
    write_csv(&trainer.history, &log_path)?;
    let outputs = json!({
        "checkpoint": run.out,
        "log": log_path,
        "training_hash": format!("{:016x}", trainer.config_hash()),
        "model_hash": format!("{:016x}", trainer.model.model_hash()),
        "epochs_completed": trainer.epoch(),
    });
    Manifest::new("train", run, outputs).write(&manifest_path(&run.out))
}

#[derive(Serialize)]
struct CodecRun<'a> {
    model: &'a Path,
    input: &'a Path,
    out: &'a Path,
    threshold: Option<f64>,
}

pub fn compress_file(model_path: &Path, input: &Path, out: &Path) -> CliResult<()> {
    ensure_parent(out)?;
    let model = load_model(model_path)?;
    let frame = read_frame(input)?;
    let container = compress(&model, &frame)?;
    container.write(out)?;
    info!(bytes = container.size_bytes(), ratio = model_ratio(&model), "compressed");
    let run = CodecRun {
        model: model_path,
        input,
        out,
        threshold: None,
    };
    let outputs = json!({ "model_hash": format!("{:016x}", container.model_hash), "bytes": container.size_bytes() });
    Manifest::new("compress", &run, outputs).write(&manifest_path(out))
}

pub fn decompress_file(model_path: &Path, input: &Path, out: &Path, threshold: Option<f64>) -> CliResult<()> {
    ensure_parent(out)?;
    let model = load_model(model_path)?;
    let container = CompressedContainer::read(input)?;
    let h = Threshold::new(threshold.unwrap_or(f64::from(container.default_threshold)))?;
    let frame = decompress(&model, &container, h)?;
    write_frame(&frame, out)?;
    info!(threshold = h.value(), nonzero = frame.nonzero_count(), "decompressed");
    let run = CodecRun {
        model: model_path,
        input,
        out,
        threshold,
    };
    let outputs = json!({ "threshold": h.value(), "checksum": format!("{:016x}", frame.checksum()) });
    Manifest::new("decompress", &run, outputs).write(&manifest_path(out))
}

pub fn evaluate(run: &EvaluateRun) -> CliResult<()> {
    ensure_parent(&run.out)?;
    if let Some(path) = &run.histogram {
        ensure_parent(path)?;
    }
    let model = load_model(&run.model)?;
    let frames = load_frames(&run.data)?;
    let ratio = model_ratio(&model);
    let name = model.config.variant.name();
    let h = if model.config.variant == Variant::Cae {
        Threshold::TRAINING
    } else {
        let sweep = threshold_sweep(&model, &frames, &run.sweep.gate_values()?)?;
        info!(h = sweep.best.h, mse = sweep.best.mse, "threshold sweep");
        Threshold::new(sweep.best.h)?
    };
    let reconstruct = |h| -> CliResult<Vec<RealFrame>> {
        let recon = reconstruct_frames(&model, &frames, h)?;
        if !run.round {
            return Ok(recon);
        }
        recon
            .iter()
            .map(|r| {
                let adc = r.to_adc();
                Ok(RealFrame::new(adc.shape(), adc.to_f32())?)
            })
            .collect()
    };
    let mut rows = Vec::new();
    let recon = reconstruct(h)?;
    let mut best = MetricsReport::for_frames(name, &recon, &frames, ratio)?;
    best.threshold = h.value();
    best.note = "swept threshold".into();
    rows.push(best);
    if h != Threshold::TRAINING {
        let fixed = reconstruct(Threshold::TRAINING)?;
        let mut row = MetricsReport::for_frames(name, &fixed, &frames, ratio)?;
        row.threshold = Threshold::TRAINING.value();
        row.note = "training threshold".into();
        rows.push(row);
    }
    for row in &mut rows {
        row.rounded = run.round;
    }
    for r in &rows {
        info!(codec = %r.codec, h = r.threshold, mse = r.mse, log_mae = r.log_mae, psnr_db = r.psnr_db, "metrics");
    }
    write_csv(&rows, &run.out)?;
    if let Some(path) = &run.histogram {
        let report = histogram_report(&frames, &recon, run.bins, run.samples, run.seed)?;
        write_csv(&report.rows, path)?;
    }
    let outputs = json!({ "threshold": h.value(), "mse": rows[0].mse, "log_mae": rows[0].log_mae });
    Manifest::new("evaluate", run, outputs).write(&manifest_path(&run.out))
}

pub fn sweep(run: &SweepRun) -> CliResult<()> {
    ensure_parent(&run.out)?;
    let model = load_model(&run.model)?;
    let frames = load_frames(&run.data)?;
    let result = threshold_sweep(&model, &frames, &run.grid.gate_values()?)?;
    info!(h = result.best.h, mse = result.best.mse, "best threshold");
    write_csv(&result.curve, &run.out)?;
    Manifest::new("sweep", run, json!({ "best": result.best })).write(&manifest_path(&run.out))
}

#[derive(Serialize)]
struct SurveyCsvRow {
    codec: String,
    bound: f64,
    mean_ratio: f64,
    mean_mse: f64,
    frames_ok: usize,
    failures: usize,
}

enum Baseline {
    Codec(Box<dyn Fn() -> Box<dyn BaselineCodec>>),
    Missing { name: String, reason: String },
}

fn parse_baseline(spec: &str) -> CliResult<Option<Baseline>> {
    if spec == "bcae" {
        return Ok(None);
    }
    if spec == "reference" {
        return Ok(Some(Baseline::Codec(Box::new(|| Box::new(ReferenceCodec)))));
    }
    if let Some(path) = spec.strip_prefix("plugin:") {
        let plugin = PluginCodec::new(path);
        if !plugin.is_available() {
            return Ok(Some(Baseline::Missing {
                name: spec.to_string(),
                reason: format!("plugin {path} not found"),
            }));
        }
        return Ok(Some(Baseline::Codec(Box::new(move || Box::new(plugin.clone())))));
    }
    Err(CliError::Usage(format!("unknown codec {spec:?}; expected bcae, reference or plugin:PATH")))
}

pub fn benchmark(run: &BenchmarkRun) -> CliResult<()> {
    ensure_parent(&run.out)?;
    if let Some(path) = &run.survey {
        ensure_parent(path)?;
    }
    let frames = load_frames(&run.data)?;
    let model = run.model.as_deref().map(load_model).transpose()?;
    let baselines = run
        .codecs
        .iter()
        .map(|c| parse_baseline(c))
        .collect::<CliResult<Vec<_>>>()?;
    let post_grid = run.post_grid.values();
    let mut entries = Vec::new();
    for (spec, baseline) in run.codecs.iter().zip(&baselines) {
        match baseline {
            None => entries.push(BenchmarkEntry::Model {
                name: spec.clone(),
                bundle: model.as_ref().expect("checked when resolving"),
                h_grid: run.gate_grid.gate_values()?,
            }),
            Some(Baseline::Codec(make)) => {
                for &bound in &run.bounds {
                    entries.push(BenchmarkEntry::Baseline {
                        codec: make(),
                        bound,
                        post: PostThreshold::Sweep(post_grid.clone()),
                    });
                }
            }
            Some(Baseline::Missing { name, reason }) => entries.push(BenchmarkEntry::Unavailable {
                name: name.clone(),
                reason: reason.clone(),
            }),
        }
    }
    let rows = run_benchmark(entries, &frames)?;
    for r in &rows {
        info!(codec = %r.codec, available = r.available, ratio = r.compression_ratio, mse = r.mse, note = %r.note, "benchmark row");
    }
    write_csv(&rows, &run.out)?;
    if let Some(path) = &run.survey {
        let mut survey = Vec::new();
        for baseline in &baselines {
            if let Some(Baseline::Codec(make)) = baseline {
                let codec = make();
                for row in survey_error_bounds(codec.as_ref(), &frames, &run.bounds)? {
                    survey.push(SurveyCsvRow {
                        codec: codec.name(),
                        bound: row.bound,
                        mean_ratio: row.mean_ratio,
                        mean_mse: row.mean_mse,
                        frames_ok: row.frames_ok,
                        failures: row.failures.len(),
                    });
                }
            }
        }
        write_csv(&survey, path)?;
    }
    let available = rows.iter().filter(|r| r.available).count();
    Manifest::new("benchmark", run, json!({ "rows": rows.len(), "available": available }))
        .write(&manifest_path(&run.out))
}
