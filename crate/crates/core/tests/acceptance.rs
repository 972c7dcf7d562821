//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 3`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bcae::codec::{compress, compress_batch, compression_ratio, decompress_real_batch, CompressedContainer};
use bcae::evaluation::{
    mse_metric, log_mae_metric, reconstruct_frames, survey_error_bounds, sweep_postprocess_threshold,
    threshold_grid, threshold_sweep, zero_fraction, BaselineCodec, ReferenceCodec, REFERENCE_RESULTS,
};
use bcae::frames::{generate_synthetic_frames, AdcFrame, RealFrame, Shape3, SyntheticConfig, DESK_SHAPE};
use bcae::network::{build_model, ModelBundle, NetworkConfig, Variant};
use bcae::training::{lr_at_epoch, TrainConfig, Trainer};
use bcae::transform::{
    combine_output, focal_loss, focal_loss_grad, regression_loss, regression_loss_and_grad, soft_label,
    Combine, FocalParams, SoftLabelParams, Threshold, TransformParams,
};
use rand::Rng;

const TINY_SHAPE: Shape3 = [16, 9, 4];
const CANONICAL_SHAPE: Shape3 = [192, 249, 16];
const CANONICAL_LATENT: [usize; 4] = [8, 13, 17, 16];

const DESK_FRAMES: usize = 4;
const DESK_EPOCHS: u64 = 200;
const DESK_SEED: u64 = 2024;
const DESK_BUDGET: Duration = Duration::from_secs(15 * 60);

const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];
const ABLATION_TRAIN: usize = 16;
const ABLATION_TEST: usize = 4;
const ABLATION_EPOCHS: u64 = 100;
const ABLATION_BATCH: usize = 2;
const ABLATION_OCCUPANCY: f64 = 0.1;
const ABLATION_BUDGET: Duration = Duration::from_secs(45 * 60);
/// Allowed relative deviation of a gated reconstruction's zero fraction.
const ZERO_FRACTION_TOLERANCE: f64 = 0.10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn desk_frames(n: usize, seed: u64) -> Vec<AdcFrame> {
    generate_synthetic_frames(&SyntheticConfig::new(DESK_SHAPE, ABLATION_OCCUPANCY, seed), n).unwrap()
}

fn flat(frames: &[AdcFrame]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.to_f64()).collect()
}

fn flat_real(frames: &[RealFrame]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.to_f64()).collect()
}

fn shape_fidelity() -> Verdict {
    let start = Instant::now();
    let config = NetworkConfig::canonical(Variant::Bcae);
    let model: ModelBundle = build_model(config, 1).unwrap();
    let frame = generate_synthetic_frames(&SyntheticConfig::new(CANONICAL_SHAPE, 0.1, 1), 1).unwrap().remove(0);
    let latent = model.encode(&frame).unwrap();
    let decoded = model.decode(&latent).unwrap();
    let seg = decoded.seg.expect("bicephalous model has a segmentation head").shape();
    let reg = decoded.reg.shape();
    let expected_out = [1, 1, CANONICAL_SHAPE[0], CANONICAL_SHAPE[1], CANONICAL_SHAPE[2]];
    let code = &latent.shape()[1..];
    let elapsed = start.elapsed();
    Verdict::new(
        code == CANONICAL_LATENT && seg == expected_out && reg == expected_out && elapsed < Duration::from_secs(60),
        format!("latent {code:?}, seg {seg:?}, reg {reg:?}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn compression_ratio_check() -> Verdict {
    let input = [1, CANONICAL_SHAPE[0], CANONICAL_SHAPE[1], CANONICAL_SHAPE[2]];
    let ratio = compression_ratio(&input, 16, &CANONICAL_LATENT, 16);
    // independent count: input voxels over code elements, equal bit widths
    let oracle = (192.0 * 249.0 * 16.0) / (8.0 * 13.0 * 17.0 * 16.0);
    let from_model = NetworkConfig::canonical(Variant::Bcae).latent_shape().unwrap();
    Verdict::new(
        (ratio - 27.04).abs() <= 0.005 && (ratio - oracle).abs() < 1e-12 && from_model == CANONICAL_LATENT,
        format!("ratio {ratio:.6}, oracle {oracle:.6}"),
    )
}

fn transform_correctness() -> Verdict {
    let params = TransformParams::default();
    let worst = (65..=1023)
        .map(|v| {
            let v = f64::from(v);
            (params.inverse(params.forward(v)) - v).abs() / v
        })
        .fold(0.0f64, f64::max);
    let at_65 = params.forward(65.0);
    let label = soft_label(63.0, &SoftLabelParams::default());
    Verdict::new(
        worst < 1e-6 && at_65 == 0.0 && (label - 0.5).abs() < 1e-9,
        format!("max round-trip rel err {worst:.2e}, T(65) = {at_65}, soft_label(63) = {label:.12}"),
    )
}

fn base2_cross_entropy(pred: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &l)| -(l * p.log2() + (1.0 - l) * (1.0 - p).log2()))
        .sum();
    total / pred.len() as f64
}

fn loss_correctness() -> Verdict {
    let mut rng = bcae::seed::rng(4);
    let no_focus = FocalParams {
        gamma: 0.0,
        ..FocalParams::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
        let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let ours = focal_loss(&pred, &labels, &no_focus).unwrap();
        worst = worst.max((ours - base2_cross_entropy(&pred, &labels)).abs());
    }
    let single = focal_loss(&[0.5], &[1.0], &FocalParams::default()).unwrap();
    Verdict::new(
        worst < 1e-6 && single == 0.25,
        format!("max |focal(gamma=0) - bce2| {worst:.2e}, single voxel {single}"),
    )
}

/// Worst relative error between `analytic` and central differences of `f`.
fn finite_difference_error(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let step = 1e-6 * x[i].abs().max(1e-2);
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        // absolute floor for entries that are zero on both sides
        if analytic[i].abs().max(numeric.abs()) > 1e-12 {
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let mut rng = bcae::seed::rng(5);
    let n = 4 * 4 * 4;
    let focal = FocalParams::default();
    let transform = TransformParams::default();
    let h = Threshold::TRAINING;
    let adc: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(65.0..1023.0) } else { 0.0 })
        .collect();
    let labels: Vec<f64> = adc.iter().map(|&v| soft_label(v, &SoftLabelParams::default())).collect();
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let seg: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let reg: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..1.15)).collect();

    let focal_grad = focal_loss_grad(&pred, &labels, &focal).unwrap();
    let focal_err = finite_difference_error(&pred, &focal_grad, |p| focal_loss(p, &labels, &focal).unwrap());

    let (_, reg_grad) = regression_loss_and_grad(&reg, Some(&seg), &adc, h, Combine::Transform, &transform).unwrap();
    let reg_err = finite_difference_error(&reg, &reg_grad, |r| {
        regression_loss(&combine_output(r, &seg, h, &transform).unwrap(), &adc).unwrap()
    });
    let elapsed = start.elapsed();
    Verdict::new(
        focal_err < 1e-4 && reg_err < 1e-4 && elapsed < Duration::from_secs(60),
        format!("focal rel err {focal_err:.2e}, regression rel err {reg_err:.2e}"),
    )
}

fn schedule_and_balancing() -> Verdict {
    let config = TrainConfig::default();
    let lrs = [0, 20, 40].map(|e| lr_at_epoch(e, &config));
    let expected = [0.01, 0.0095, 0.009025];
    let schedule_ok = lrs.iter().zip(&expected).all(|(a, b)| rel_err(*a, *b) < 1e-12);

    let data = generate_synthetic_frames(&SyntheticConfig::new(TINY_SHAPE, 0.1, 6), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 2,
        seed: 6,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, TINY_SHAPE).unwrap();
    trainer.fit(&data, |_| {}).unwrap();
    let worst = trainer
        .history
        .windows(2)
        .map(|w| rel_err(w[1].seg_weight, w[0].rho_r / w[0].rho_s))
        .fold(0.0f64, f64::max);
    let balancing_ok = trainer.history.len() == 10 && worst < 1e-9;
    Verdict::new(
        schedule_ok && balancing_ok,
        format!("lr {lrs:?}, max seg_weight rel err {worst:.2e} over {} epochs", trainer.history.len()),
    )
}

fn without_wall_time(trainer: &mut Trainer) -> Vec<u8> {
    for record in &mut trainer.history {
        record.wall_time = 0.0;
    }
    trainer.checkpoint_bytes()
}

fn codec_round_trips() -> Verdict {
    let data = generate_synthetic_frames(&SyntheticConfig::new(TINY_SHAPE, 0.1, 7), 4).unwrap();
    let model: ModelBundle = build_model(NetworkConfig::with_input(TINY_SHAPE, Variant::Bcae), 7).unwrap();
    let container = compress(&model, &data[0]).unwrap();
    let bytes = container.to_bytes();
    let parsed = CompressedContainer::from_bytes(&bytes).unwrap();
    let container_ok = parsed == container && parsed.to_bytes() == bytes;

    let cfg = |epochs| TrainConfig {
        epochs,
        batch_size: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(cfg(10), TINY_SHAPE).unwrap();
    straight.fit(&data, |_| {}).unwrap();
    let mut first = Trainer::new(cfg(5), TINY_SHAPE).unwrap();
    first.fit(&data, |_| {}).unwrap();
    let mut resumed = Trainer::from_checkpoint_bytes(&first.checkpoint_bytes()).unwrap();
    resumed.config.epochs = 10;
    resumed.fit(&data, |_| {}).unwrap();
    let state_ok = resumed.loss_state == straight.loss_state;
    let weights_ok = resumed.model.model_hash() == straight.model.model_hash();
    let checkpoint_ok = without_wall_time(&mut resumed) == without_wall_time(&mut straight);
    Verdict::new(
        container_ok && state_ok && weights_ok && checkpoint_ok,
        format!(
            "container {} bytes re-serialized {}, resume: loss state {}, weights {}, full checkpoint {}",
            bytes.len(),
            if container_ok { "identically" } else { "differently" },
            same(state_ok),
            same(weights_ok),
            same(checkpoint_ok)
        ),
    )
}

fn same(ok: bool) -> &'static str {
    if ok {
        "equal"
    } else {
        "differ"
    }
}

fn desk_training() -> Verdict {
    let start = Instant::now();
    let data = desk_frames(DESK_FRAMES, DESK_SEED);
    let cfg = TrainConfig {
        epochs: DESK_EPOCHS,
        seed: DESK_SEED,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, DESK_SHAPE).unwrap();
    let outcome = trainer.fit(&data, |_| {});
    let elapsed = start.elapsed();
    if let Err(e) = outcome {
        return Verdict::new(false, format!("training failed after {} epochs: {e}", trainer.history.len()));
    }
    let first = &trainer.history[0];
    let last = trainer.history.last().unwrap();
    let finite = trainer
        .history
        .iter()
        .all(|r| r.total.is_finite() && r.rho_s.is_finite() && r.rho_r.is_finite());
    let ratio = last.total / first.total;
    Verdict::new(
        finite && ratio < 0.2 && elapsed <= DESK_BUDGET,
        format!(
            "total {:.1} -> {:.1} (x{ratio:.3}), regression {:.1} -> {:.1}, all finite: {finite}, {:.0}s",
            first.total,
            last.total,
            first.rho_r,
            last.rho_r,
            elapsed.as_secs_f64()
        ),
    )
}

struct VariantScore {
    log_mae: f64,
    zero_fraction: f64,
}

struct SeedRun {
    seed: u64,
    truth_zero_fraction: f64,
    bcae: VariantScore,
    bcae_wot: VariantScore,
    cae: VariantScore,
    bcae_model: ModelBundle,
    test: Vec<AdcFrame>,
}

fn train_and_score(variant: Variant, train: &[AdcFrame], test: &[AdcFrame], seed: u64) -> (VariantScore, ModelBundle) {
    let cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        batch_size: ABLATION_BATCH,
        variant,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, DESK_SHAPE).unwrap();
    trainer.fit(train, |_| {}).unwrap();
    let recon = flat_real(&reconstruct_frames(&trainer.model, test, Threshold::TRAINING).unwrap());
    let truth = flat(test);
    let score = VariantScore {
        log_mae: log_mae_metric(&recon, &truth).unwrap(),
        zero_fraction: zero_fraction(&recon),
    };
    (score, trainer.model)
}

fn ablation_runs() -> Vec<SeedRun> {
    ABLATION_SEEDS
        .iter()
        .map(|&seed| {
            let all = desk_frames(ABLATION_TRAIN + ABLATION_TEST, seed);
            let (train, test) = all.split_at(ABLATION_TRAIN);
            let (bcae, bcae_model) = train_and_score(Variant::Bcae, train, test, seed);
            let (bcae_wot, _) = train_and_score(Variant::BcaeWoT, train, test, seed);
            let (cae, _) = train_and_score(Variant::Cae, train, test, seed);
            SeedRun {
                seed,
                truth_zero_fraction: zero_fraction(&flat(test)),
                bcae,
                bcae_wot,
                cae,
                bcae_model,
                test: test.to_vec(),
            }
        })
        .collect()
}

fn within_tolerance(value: f64, truth: f64) -> bool {
    (value - truth).abs() <= ZERO_FRACTION_TOLERANCE * truth
}

fn ablation_ordering(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let claims: [(&str, fn(&SeedRun) -> bool); 4] = [
        ("bcae log_mae <= cae", |r| r.bcae.log_mae <= r.cae.log_mae),
        ("cae zeros < bcae zeros", |r| r.cae.zero_fraction < r.bcae.zero_fraction),
        ("cae zeros < truth", |r| r.cae.zero_fraction < r.truth_zero_fraction),
        ("gated zeros near truth", |r| {
            within_tolerance(r.bcae.zero_fraction, r.truth_zero_fraction)
                && within_tolerance(r.bcae_wot.zero_fraction, r.truth_zero_fraction)
        }),
    ];
    let mut all_hold = true;
    let mut parts = Vec::new();
    for (name, claim) in claims {
        let votes = runs.iter().filter(|r| claim(r)).count();
        all_hold &= 2 * votes > runs.len();
        parts.push(format!("{name} {votes}/{}", runs.len()));
    }
    for r in runs {
        parts.push(format!(
            "seed {}: log_mae bcae {:.3} wot {:.3} cae {:.3}; zeros truth {:.3} bcae {:.3} wot {:.3} cae {:.3}",
            r.seed,
            r.bcae.log_mae,
            r.bcae_wot.log_mae,
            r.cae.log_mae,
            r.truth_zero_fraction,
            r.bcae.zero_fraction,
            r.bcae_wot.zero_fraction,
            r.cae.zero_fraction
        ));
    }
    parts.push(format!("{:.0}s", elapsed.as_secs_f64()));
    Verdict::new(all_hold && elapsed <= ABLATION_BUDGET, parts.join("; "))
}

fn threshold_sweep_check(runs: &[SeedRun]) -> Verdict {
    let grid = threshold_grid(0.0, 1.0, 0.02).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let sweep = threshold_sweep(&r.bcae_model, &r.test, &grid).unwrap();
        let refs: Vec<&AdcFrame> = r.test.iter().collect();
        let containers = compress_batch(&r.bcae_model, &refs).unwrap();
        let recon = decompress_real_batch(&r.bcae_model, &containers.iter().collect::<Vec<_>>(), Threshold::TRAINING)
            .unwrap();
        let per_frame: Vec<f64> = recon
            .iter()
            .zip(&r.test)
            .map(|(a, b)| mse_metric(&a.to_f64(), &b.to_f64()).unwrap())
            .collect();
        let at_training = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        let min = sweep.curve.iter().map(|p| p.mse).fold(f64::INFINITY, f64::min);
        let first_min = sweep.curve.iter().find(|p| p.mse == min).unwrap();
        let argmin_ok = sweep.best == *first_min;
        let dominates = sweep.best.mse <= at_training * (1.0 + 1e-12);
        pass &= argmin_ok && dominates;
        parts.push(format!(
            "seed {}: h* {:.2} mse {:.1} vs {:.1} at 0.5, argmin {}",
            r.seed,
            sweep.best.h,
            sweep.best.mse,
            at_training,
            if argmin_ok { "ok" } else { "wrong" }
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn benchmark_harness() -> Verdict {
    let frames = desk_frames(4, 11);
    let bounds = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let codec = ReferenceCodec;
    let survey = survey_error_bounds(&codec, &frames, &bounds).unwrap();
    let mses: Vec<f64> = survey.iter().map(|r| r.mean_mse).collect();
    let monotone = mses.windows(2).all(|w| w[0] <= w[1]) && survey.iter().all(|r| r.frames_ok == frames.len());

    let bound = 32.0;
    let recon: Vec<RealFrame> = frames
        .iter()
        .map(|f| codec.decompress(&codec.compress(f, bound).unwrap()).unwrap())
        .collect();
    let grid: Vec<f64> = (0..=96).map(f64::from).collect();
    let sweep = sweep_postprocess_threshold(&recon, &frames, &grid).unwrap();
    let raw = mse_metric(&flat_real(&recon), &flat(&frames)).unwrap();
    let post: Vec<f64> = flat_real(&recon)
        .into_iter()
        .map(|v| if v < sweep.best.h { 0.0 } else { v })
        .collect();
    let post_mse = mse_metric(&post, &flat(&frames)).unwrap();
    let registry: Vec<String> = REFERENCE_RESULTS
        .iter()
        .map(|r| format!("{} {}/{}", r.codec, r.mse, r.log_mae))
        .collect();
    Verdict::new(
        monotone && post_mse <= raw,
        format!(
            "survey mse {:?}; bound {bound}: raw {raw:.2}, post-processed at h {} {post_mse:.2}; registry (not asserted) {}",
            mses.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>(),
            sweep.best.h,
            registry.join(", ")
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let message = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict::new(false, format!("panicked: {message}"))
    })
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    let quick: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "shape fidelity", shape_fidelity),
        (2, "compression ratio", compression_ratio_check),
        (3, "transform correctness", transform_correctness),
        (4, "loss correctness", loss_correctness),
        (5, "gradient checks", gradient_checks),
        (6, "schedule and balancing", schedule_and_balancing),
        (7, "codec round trips", codec_round_trips),
        (8, "desk-scale training", desk_training),
    ];
    let mut failures = 0;
    let mut report = |id: u32, name: &str, v: Verdict| {
        failures += usize::from(!v.pass);
        println!("{} [{id}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    for (id, name, check) in quick {
        if wanted(id) {
            report(id, name, guarded(check));
        }
    }
    if wanted(9) || wanted(10) {
        let start = Instant::now();
        match catch_unwind(ablation_runs) {
            Ok(runs) => {
                let elapsed = start.elapsed();
                if wanted(9) {
                    report(9, "ablation ordering", guarded(|| ablation_ordering(&runs, elapsed)));
                }
                if wanted(10) {
                    report(10, "threshold sweep", guarded(|| threshold_sweep_check(&runs)));
                }
            }
            Err(_) => {
                for (id, name) in [(9, "ablation ordering"), (10, "threshold sweep")] {
                    if wanted(id) {
                        report(id, name, Verdict::new(false, "toy training panicked"));
                    }
                }
            }
        }
    }
    if wanted(11) {
        report(11, "benchmark harness", guarded(benchmark_harness));
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
