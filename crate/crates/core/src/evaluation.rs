//! Metrics, threshold sweeps, baseline codecs and the benchmark harness.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{compress_batch, compression_ratio, decode_containers};
use crate::error::{Error, Result};
use crate::frames::{decode_frame_any, encode_frame, AdcFrame, RealFrame, Shape3, ADC_MAX};
use crate::network::{combine_decoded, ModelBundle, Variant};
use crate::seed;
use crate::tensor::Real;
use crate::transform::Threshold;
use crate::wire::{element_count, Reader};

/// 10-bit full scale.
pub const ADC_PEAK: f64 = ADC_MAX as f64;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(b, a));
    }
    Ok(())
}

pub fn mse_metric(recon: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(recon.len(), truth.len())?;
    let n = recon.len().max(1) as f64;
    Ok(recon.iter().zip(truth).map(|(r, t)| (r - t) * (r - t)).sum::<f64>() / n)
}

/// Mean of `|log2(recon + 1) - log2(truth + 1)|` over every voxel.
/// Negative reconstructions are clamped to zero first.
pub fn log_mae_metric(recon: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(recon.len(), truth.len())?;
    let n = recon.len().max(1) as f64;
    Ok(recon
        .iter()
        .zip(truth)
        .map(|(&r, &t)| ((r.max(0.0) + 1.0).log2() - (t.max(0.0) + 1.0).log2()).abs())
        .sum::<f64>()
        / n)
}

/// `10 log10(peak^2 / mse)` in dB; `+inf` when `mse` is zero.
pub fn psnr_metric(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn zero_fraction(values: &[f64]) -> f64 {
    values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub codec: String,
    pub available: bool,
    pub compression_ratio: f64,
    pub mse: f64,
    pub log_mae: f64,
    pub psnr_db: f64,
    /// PSNR in bels, `psnr_db / 10`.
    pub psnr_bels: f64,
    pub zero_fraction_true: f64,
    pub zero_fraction_recon: f64,
    pub n_voxels: u64,
    /// Threshold used for gating or post-processing.
    pub threshold: f64,
    /// Whether reconstructions were rounded to ADC counts.
    pub rounded: bool,
    pub note: String,
}

impl MetricsReport {
    pub fn compute(codec: &str, recon: &[f64], truth: &[f64], compression_ratio: f64) -> Result<Self> {
        let mse = mse_metric(recon, truth)?;
        let psnr_db = psnr_metric(mse, ADC_PEAK);
        Ok(Self {
            codec: codec.to_string(),
            available: true,
            compression_ratio,
            mse,
            log_mae: log_mae_metric(recon, truth)?,
            psnr_db,
            psnr_bels: psnr_db / 10.0,
            zero_fraction_true: zero_fraction(truth),
            zero_fraction_recon: zero_fraction(recon),
            n_voxels: recon.len() as u64,
            threshold: 0.0,
            rounded: false,
            note: String::new(),
        })
    }

    /// Metrics pooled over all voxels of paired frames.
    pub fn for_frames(codec: &str, recon: &[RealFrame], truth: &[AdcFrame], compression_ratio: f64) -> Result<Self> {
        same_len(recon.len(), truth.len())?;
        let (r, t) = flatten(recon, truth)?;
        Self::compute(codec, &r, &t, compression_ratio)
    }

    pub fn unavailable(codec: &str, reason: impl Into<String>) -> Self {
        Self {
            codec: codec.to_string(),
            available: false,
            compression_ratio: f64::NAN,
            mse: f64::NAN,
            log_mae: f64::NAN,
            psnr_db: f64::NAN,
            psnr_bels: f64::NAN,
            zero_fraction_true: f64::NAN,
            zero_fraction_recon: f64::NAN,
            n_voxels: 0,
            threshold: f64::NAN,
            rounded: false,
            note: reason.into(),
        }
    }
}

fn flatten(recon: &[RealFrame], truth: &[AdcFrame]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = Vec::new();
    let mut t = Vec::new();
    for (a, b) in recon.iter().zip(truth) {
        if a.shape() != b.shape() {
            return Err(Error::shape(b.shape(), a.shape()));
        }
        r.extend(a.to_f64());
        t.extend(b.to_f64());
    }
    Ok((r, t))
}

/// Inclusive grid `start, start + step, ..., <= end`.
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(0.0..=1.0).contains(&start) || !(start..=1.0).contains(&end) {
        return Err(Error::Config(format!("bad sweep grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub h: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: SweepPoint,
    pub curve: Vec<SweepPoint>,
}

/// Index of the smallest `mse`, ties to the smallest `h`.
fn argmin(curve: &[SweepPoint]) -> usize {
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        let b = &curve[best];
        if p.mse < b.mse || (p.mse == b.mse && p.h < b.h) {
            best = i;
        }
    }
    best
}

/// Mean MSE of the gated reconstruction at each threshold. Frames are
/// compressed once through the half precision codec.
pub fn threshold_sweep<T: Real>(bundle: &ModelBundle<T>, frames: &[AdcFrame], h_grid: &[f64]) -> Result<SweepResult> {
    if h_grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    let grid: Vec<Threshold> = h_grid.iter().map(|&h| Threshold::new(h)).collect::<Result<_>>()?;
    let mut sums = vec![0.0; grid.len()];
    for chunk in frames.chunks(16) {
        let refs: Vec<&AdcFrame> = chunk.iter().collect();
        let containers = compress_batch(bundle, &refs)?;
        let decoded = decode_containers(bundle, &containers.iter().collect::<Vec<_>>())?;
        for (n, frame) in chunk.iter().enumerate() {
            let truth = frame.to_f64();
            for (sum, &h) in sums.iter_mut().zip(&grid) {
                *sum += mse_metric(&combine_decoded(&bundle.config, &decoded, n, h)?.to_f64(), &truth)?;
            }
        }
    }
    let n = frames.len().max(1) as f64;
    let curve: Vec<SweepPoint> = grid
        .iter()
        .zip(&sums)
        .map(|(h, s)| SweepPoint { h: h.value(), mse: s / n })
        .collect();
    let best = curve[argmin(&curve)];
    Ok(SweepResult { best, curve })
}

/// Reconstructs frames through the codec at a fixed threshold.
pub fn reconstruct_frames<T: Real>(bundle: &ModelBundle<T>, frames: &[AdcFrame], h: Threshold) -> Result<Vec<RealFrame>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(16) {
        let refs: Vec<&AdcFrame> = chunk.iter().collect();
        let containers = compress_batch(bundle, &refs)?;
        out.extend(crate::codec::decompress_real_batch(bundle, &containers.iter().collect::<Vec<_>>(), h)?);
    }
    Ok(out)
}

/// Maps values below `h` (in ADC units) to zero.
pub fn baseline_postprocess(recon: &RealFrame, h: f64) -> RealFrame {
    let values = recon
        .values()
        .iter()
        .map(|&v| if f64::from(v) < h { 0.0 } else { v })
        .collect();
    RealFrame::new(recon.shape(), values).expect("shape unchanged")
}

/// An error-bounded lossy compressor used for comparison.
pub trait BaselineCodec {
    fn name(&self) -> String;
    fn compress(&self, frame: &AdcFrame, bound: f64) -> Result<Vec<u8>>;
    fn decompress(&self, bytes: &[u8]) -> Result<RealFrame>;
}

const REFERENCE_MAGIC: &[u8; 4] = b"RQZ1";

/// Quantizes residuals of a previous-value predictor along the radial
/// axis with an odd integer step, so the absolute error never exceeds the
/// bound, then deflates the zigzag varint stream. A bound below 1 is
/// lossless.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceCodec;

impl ReferenceCodec {
    fn step(bound: f64) -> i64 {
        2 * bound.max(0.0).floor() as i64 + 1
    }
}

fn put_varint(out: &mut Vec<u8>, q: i64) {
    let mut z = ((q << 1) ^ (q >> 63)) as u64;
    loop {
        let byte = (z & 0x7f) as u8;
        z >>= 7;
        if z == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn get_varint(data: &[u8], pos: &mut usize) -> Option<i64> {
    let mut z = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *data.get(*pos)?;
        *pos += 1;
        z |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Some((z >> 1) as i64 ^ -((z & 1) as i64));
        }
    }
    None
}

impl BaselineCodec for ReferenceCodec {
    fn name(&self) -> String {
        "reference".into()
    }

    fn compress(&self, frame: &AdcFrame, bound: f64) -> Result<Vec<u8>> {
        if !(bound >= 0.0) {
            return Err(Error::Config(format!("error bound {bound} must be non-negative")));
        }
        let step = Self::step(bound);
        let radial = frame.shape()[2];
        let mut stream = Vec::with_capacity(frame.len());
        for row in frame.values().chunks(radial) {
            let mut prev = 0i64;
            for &v in row {
                let residual = i64::from(v) - prev;
                let q = (residual as f64 / step as f64).round() as i64;
                put_varint(&mut stream, q);
                prev += q * step;
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(REFERENCE_MAGIC);
        for d in frame.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(step as u32).to_le_bytes());
        let mut enc = ZlibEncoder::new(out, Compression::default());
        enc.write_all(&stream)?;
        Ok(enc.finish()?)
    }

    fn decompress(&self, bytes: &[u8]) -> Result<RealFrame> {
        let mut r = Reader::new(bytes);
        r.magic(REFERENCE_MAGIC)?;
        let at = r.offset();
        let mut shape: Shape3 = [0; 3];
        for d in &mut shape {
            *d = r.u32("dims")? as usize;
        }
        let n = element_count(&shape, at)?;
        let step = i64::from(r.u32("step")?);
        let body_at = r.offset();
        let mut stream = Vec::new();
        ZlibDecoder::new(r.take(r.remaining(), "payload")?)
            .read_to_end(&mut stream)
            .map_err(|e| Error::parse(body_at, format!("deflate stream: {e}")))?;
        let mut pos = 0;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n / shape[2] {
            let mut prev = 0i64;
            for _ in 0..shape[2] {
                let q = get_varint(&stream, &mut pos)
                    .ok_or_else(|| Error::parse(body_at, "quantized stream is truncated"))?;
                prev += q * step;
                values.push(prev as f32);
            }
        }
        RealFrame::new(shape, values)
    }
}

/// An external executable speaking
/// `PLUGIN compress --bound B < frame > code` and
/// `PLUGIN decompress < code > frame`, frames in the `TPCF` format.
#[derive(Debug, Clone)]
pub struct PluginCodec {
    pub path: PathBuf,
}

impl PluginCodec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn is_available(&self) -> bool {
        self.path.is_file()
    }

    fn run(&self, args: &[String], input: Vec<u8>) -> Result<Vec<u8>> {
        let fail = |message: String| Error::Plugin {
            name: self.path.display().to_string(),
            message,
        };
        let mut child = Command::new(&self.path)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        let written = writer.join().map_err(|_| fail("stdin writer panicked".into()))?;
        if !output.status.success() {
            return Err(fail(format!(
                "{} exited with {}: {}",
                args[0],
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        written.map_err(|e| fail(format!("writing stdin: {e}")))?;
        Ok(output.stdout)
    }
}

impl BaselineCodec for PluginCodec {
    fn name(&self) -> String {
        let stem = self.path.file_stem().map(|s| s.to_string_lossy().into_owned());
        format!("plugin:{}", stem.unwrap_or_default())
    }

    fn compress(&self, frame: &AdcFrame, bound: f64) -> Result<Vec<u8>> {
        self.run(&["compress".into(), "--bound".into(), bound.to_string()], encode_frame(frame))
    }

    fn decompress(&self, bytes: &[u8]) -> Result<RealFrame> {
        let out = self.run(&["decompress".into()], bytes.to_vec())?;
        decode_frame_any(&out)
            .map(|f| f.to_real())
            .map_err(|e| Error::Plugin {
                name: self.name(),
                message: format!("bad frame on stdout: {e}"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub bound: f64,
    pub mean_ratio: f64,
    pub mean_mse: f64,
    pub frames_ok: usize,
    pub failures: Vec<String>,
}

/// Input bytes at 16 bits per element over compressed bytes, and MSE
/// before any post-processing, averaged over frames for each bound.
pub fn survey_error_bounds(codec: &dyn BaselineCodec, frames: &[AdcFrame], bounds: &[f64]) -> Result<Vec<SurveyRow>> {
    if frames.is_empty() {
        return Err(Error::Config("survey needs at least one frame".into()));
    }
    Ok(bounds
        .iter()
        .map(|&bound| {
            let (mut ratio, mut mse, mut ok) = (0.0, 0.0, 0usize);
            let mut failures = Vec::new();
            for (i, f) in frames.iter().enumerate() {
                let attempt = codec.compress(f, bound).and_then(|bytes| {
                    let recon = codec.decompress(&bytes)?;
                    let m = mse_metric(&recon.to_f64(), &f.to_f64())?;
                    Ok(((2 * f.len()) as f64 / bytes.len() as f64, m))
                });
                match attempt {
                    Ok((r, m)) => {
                        ratio += r;
                        mse += m;
                        ok += 1;
                    }
                    Err(e) => failures.push(format!("frame {i}: {e}")),
                }
            }
            let n = ok.max(1) as f64;
            SurveyRow {
                bound,
                mean_ratio: if ok > 0 { ratio / n } else { f64::NAN },
                mean_mse: if ok > 0 { mse / n } else { f64::NAN },
                frames_ok: ok,
                failures,
            }
        })
        .collect())
}

/// Post-processing threshold minimising pooled MSE, ties to the smallest.
pub fn sweep_postprocess_threshold(recon: &[RealFrame], truth: &[AdcFrame], grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    let (r, t) = flatten(recon, truth)?;
    let curve: Vec<SweepPoint> = grid
        .iter()
        .map(|&h| {
            let thresholded: Vec<f64> = r.iter().map(|&v| if v < h { 0.0 } else { v }).collect();
            Ok(SweepPoint {
                h,
                mse: mse_metric(&thresholded, &t)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = curve[argmin(&curve)];
    Ok(SweepResult { best, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_truth: u64,
    pub count_recon: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub rows: Vec<HistogramRow>,
    /// `joint[i][j]`: truth in bin `i`, reconstruction in bin `j`.
    pub joint: Vec<Vec<u64>>,
    pub samples: u64,
}

pub const HISTOGRAM_SAMPLES: usize = 1_000_000;
/// Upper edge of the `log2(v + 1)` axis.
pub const HISTOGRAM_MAX: f64 = 10.0;

fn bin_of(v: f64, n_bins: usize) -> usize {
    let x = (v.max(0.0) + 1.0).log2();
    ((x / HISTOGRAM_MAX * n_bins as f64) as usize).min(n_bins - 1)
}

/// Histograms of `log2(v + 1)` over voxels drawn uniformly (with
/// replacement) from all frames.
pub fn histogram_report(
    truth: &[AdcFrame],
    recon: &[RealFrame],
    n_bins: usize,
    samples: usize,
    root_seed: u64,
) -> Result<HistogramReport> {
    same_len(recon.len(), truth.len())?;
    if n_bins == 0 || truth.is_empty() {
        return Err(Error::Config("histogram needs bins and frames".into()));
    }
    for (a, b) in recon.iter().zip(truth) {
        if a.shape() != b.shape() {
            return Err(Error::shape(b.shape(), a.shape()));
        }
    }
    let mut rng = seed::rng(seed::derive(root_seed, seed::SAMPLING));
    let mut rows: Vec<HistogramRow> = (0..n_bins)
        .map(|i| HistogramRow {
            bin_lo: HISTOGRAM_MAX * i as f64 / n_bins as f64,
            bin_hi: HISTOGRAM_MAX * (i + 1) as f64 / n_bins as f64,
            count_truth: 0,
            count_recon: 0,
        })
        .collect();
    let mut joint = vec![vec![0u64; n_bins]; n_bins];
    for _ in 0..samples {
        let f = rng.random_range(0..truth.len());
        let i = rng.random_range(0..truth[f].len());
        let bt = bin_of(f64::from(truth[f].values()[i]), n_bins);
        let br = bin_of(f64::from(recon[f].values()[i]), n_bins);
        rows[bt].count_truth += 1;
        rows[br].count_recon += 1;
        joint[bt][br] += 1;
    }
    Ok(HistogramReport {
        rows,
        joint,
        samples: samples as u64,
    })
}

pub fn write_csv<R: Serialize>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(offset, format!("{}: {other:?}", path.display())),
    }
}

/// Writes the 2D histogram as `truth_bin,recon_bin,count` rows, skipping
/// empty cells.
pub fn write_joint_csv(report: &HistogramReport, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Cell {
        truth_bin: usize,
        recon_bin: usize,
        count: u64,
    }
    let cells: Vec<Cell> = report
        .joint
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(move |(j, &count)| Cell {
                    truth_bin: i,
                    recon_bin: j,
                    count,
                })
        })
        .collect();
    write_csv(&cells, path)
}

/// How a baseline's post-processing threshold is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum PostThreshold {
    Fixed(f64),
    Sweep(Vec<f64>),
}

pub enum BenchmarkEntry<'a> {
    Model {
        name: String,
        bundle: &'a ModelBundle,
        h_grid: Vec<f64>,
    },
    Baseline {
        codec: Box<dyn BaselineCodec + 'a>,
        bound: f64,
        post: PostThreshold,
    },
    Unavailable {
        name: String,
        reason: String,
    },
}

/// One report row per entry. Model rows use the swept gate threshold;
/// baseline rows are post-processed. Failing entries are marked
/// unavailable and the run continues.
pub fn run_benchmark(entries: Vec<BenchmarkEntry<'_>>, frames: &[AdcFrame]) -> Result<Vec<MetricsReport>> {
    if frames.is_empty() {
        return Err(Error::Config("benchmark needs at least one frame".into()));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let row = match entry {
            BenchmarkEntry::Model { name, bundle, h_grid } => benchmark_model(&name, bundle, frames, &h_grid),
            BenchmarkEntry::Baseline { codec, bound, post } => benchmark_baseline(codec.as_ref(), bound, &post, frames),
            BenchmarkEntry::Unavailable { name, reason } => Ok(MetricsReport::unavailable(&name, reason)),
        };
        rows.push(row.or_else(|e| match e {
            Error::Plugin { name, message } => Ok(MetricsReport::unavailable(&name, message)),
            other => Err(other),
        })?);
    }
    Ok(rows)
}

fn benchmark_model(name: &str, bundle: &ModelBundle, frames: &[AdcFrame], h_grid: &[f64]) -> Result<MetricsReport> {
    let h = if bundle.config.variant == Variant::Cae {
        Threshold::TRAINING
    } else {
        Threshold::new(threshold_sweep(bundle, frames, h_grid)?.best.h)?
    };
    let recon = reconstruct_frames(bundle, frames, h)?;
    let s = bundle.config.input_shape;
    let ratio = compression_ratio(&[1, s[0], s[1], s[2]], 16, &bundle.latent_shape(), 16);
    let mut row = MetricsReport::for_frames(name, &recon, frames, ratio)?;
    row.threshold = h.value();
    Ok(row)
}

fn benchmark_baseline(codec: &dyn BaselineCodec, bound: f64, post: &PostThreshold, frames: &[AdcFrame]) -> Result<MetricsReport> {
    let mut recon = Vec::with_capacity(frames.len());
    let mut ratio = 0.0;
    for f in frames {
        let bytes = codec.compress(f, bound)?;
        ratio += (2 * f.len()) as f64 / bytes.len() as f64;
        recon.push(codec.decompress(&bytes)?);
    }
    let h = match post {
        PostThreshold::Fixed(h) => *h,
        PostThreshold::Sweep(grid) => sweep_postprocess_threshold(&recon, frames, grid)?.best.h,
    };
    let recon: Vec<RealFrame> = recon.iter().map(|r| baseline_postprocess(r, h)).collect();
    let mut row = MetricsReport::for_frames(&codec.name(), &recon, frames, ratio / frames.len() as f64)?;
    row.threshold = h;
    row.note = format!("error bound {bound}");
    Ok(row)
}

/// Published full-scale results, kept as documentation targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub codec: &'static str,
    pub compression_ratio: f64,
    pub mse: f64,
    pub log_mae: f64,
    pub psnr: f64,
}

pub const REFERENCE_RESULTS: [ReferenceRow; 6] = [
    ReferenceRow { codec: "MGARD", compression_ratio: 27.0, mse: 626.28, log_mae: 1.213, psnr: 3.223 },
    ReferenceRow { codec: "SZ", compression_ratio: 24.0, mse: 369.69, log_mae: 0.302, psnr: 3.452 },
    ReferenceRow { codec: "ZFP", compression_ratio: 19.0, mse: 219.48, log_mae: 0.267, psnr: 3.678 },
    ReferenceRow { codec: "CAE", compression_ratio: 27.0, mse: 227.61, log_mae: 0.349, psnr: 3.703 },
    ReferenceRow { codec: "BCAEwoT", compression_ratio: 27.0, mse: 230.59, log_mae: 0.193, psnr: 3.706 },
    ReferenceRow { codec: "BCAE", compression_ratio: 27.0, mse: 218.44, log_mae: 0.185, psnr: 3.724 },
];

/// Published post-processing thresholds of the baselines, in ADC units.
pub const REFERENCE_POST_THRESHOLDS: [(&str, f64); 3] = [("MGARD", 11.0), ("SZ", 8.0), ("ZFP", 32.0)];
