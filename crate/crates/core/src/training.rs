//! Balanced two-loss training, AdamW, ablation variants and checkpoints.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::{AdcFrame, Shape3};
use crate::network::{build_model, ModelBundle, NetworkConfig, Variant};
use crate::seed;
use crate::tensor::Tensor;
use crate::transform::{
    focal_loss, focal_loss_grad, regression_loss_and_grad, soft_labels, Combine, FocalParams, LossState,
    SoftLabelParams, Threshold, TransformParams,
};
use crate::wire::{put_f32s, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub optimizer: AdamWConfig,
    pub lr_decay_factor: f64,
    pub lr_decay_period: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub variant: Variant,
    pub threshold: Threshold,
    pub seed: u64,
    pub focal: FocalParams,
    pub soft_label: SoftLabelParams,
    pub transform: TransformParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 2000,
            optimizer: AdamWConfig::default(),
            lr_decay_factor: 0.95,
            lr_decay_period: 20,
            train_size: 960,
            test_size: 320,
            variant: Variant::Bcae,
            threshold: Threshold::TRAINING,
            seed: 0,
            focal: FocalParams::default(),
            soft_label: SoftLabelParams::default(),
            transform: TransformParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if self.lr_decay_period == 0 || !(self.lr_decay_factor > 0.0) || !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate schedule must be positive".into()));
        }
        self.transform.validate()
    }

    /// Identity of everything that shapes the trajectory except the run
    /// length, so a run can be extended from a checkpoint.
    pub fn hash(&self, network: &NetworkConfig) -> u64 {
        let mut identity = self.clone();
        identity.epochs = 0;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&identity).expect("config serializes"));
        h.update(serde_json::to_vec(network).expect("config serializes"));
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

/// Step-decayed learning rate for a 0-based epoch.
pub fn lr_at_epoch(epoch: u64, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.lr_decay_period) as i32;
    config.optimizer.lr * config.lr_decay_factor.powi(steps)
}

/// Decoupled weight decay Adam. Moments are kept per parameter tensor in
/// the bundle's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, model: &ModelBundle) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, model: &mut ModelBundle, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let step_size = (lr / bias1) as f32;
        let sqrt_bias2 = bias2.sqrt() as f32;
        let eps = c.eps as f32;
        for ((p, m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() / sqrt_bias2 + eps);
            }
        }
    }
}

/// Builds a fresh model for an ablation variant.
pub fn make_variant(kind: Variant, input_shape: Shape3, seed: u64) -> Result<ModelBundle> {
    build_model(NetworkConfig::with_input(input_shape, kind), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u64,
    pub lr: f64,
    pub rho_s: f64,
    pub rho_r: f64,
    /// Weight applied to the segmentation loss during this epoch.
    pub seg_weight: f64,
    /// `seg_weight * rho_s + rho_r`.
    pub total: f64,
    pub wall_time: f64,
}

/// Losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub seg: f64,
    pub reg: f64,
}

fn combine_rule(variant: Variant) -> Combine {
    match variant {
        Variant::Bcae => Combine::Transform,
        Variant::BcaeWoT => Combine::Identity,
        Variant::Cae => Combine::Ungated,
    }
}

fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

fn to_tensor(shape: [usize; 5], v: Vec<f64>) -> Tensor<f32> {
    Tensor::from_vec(shape, v.into_iter().map(|g| g as f32).collect())
}

/// Forward, backward and accumulate gradients for one batch with the given
/// segmentation weight. Parameter gradients are zeroed first.
pub fn batch_gradients(
    model: &mut ModelBundle,
    frames: &[&AdcFrame],
    seg_weight: f64,
    config: &TrainConfig,
) -> Result<BatchLosses> {
    model.zero_grad();
    let x = model.input_tensor(frames)?;
    let truth: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    let (z, enc_tape) = model.encoder.forward_taped(x);

    let mut seg_out = None;
    let mut seg_loss = 0.0;
    let mut gz = None;
    if let Some(ds) = model.decoder_s.as_mut() {
        let (seg, tape) = ds.forward_taped(z.clone());
        let pred = to_f64(&seg);
        let labels = soft_labels(&truth, &config.soft_label);
        seg_loss = focal_loss(&pred, &labels, &config.focal)?;
        let mut grad = focal_loss_grad(&pred, &labels, &config.focal)?;
        for g in &mut grad {
            *g *= seg_weight;
        }
        gz = Some(ds.backward(&tape, &seg, &to_tensor(seg.shape(), grad)));
        seg_out = Some(pred);
    }

    let (reg, tape) = model.decoder_r.forward_taped(z);
    let (reg_loss, grad) = regression_loss_and_grad(
        &to_f64(&reg),
        seg_out.as_deref(),
        &truth,
        config.threshold,
        combine_rule(model.config.variant),
        &config.transform,
    )?;
    if !(reg_loss.is_finite() && seg_loss.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite batch loss (segmentation {seg_loss}, regression {reg_loss})"
        )));
    }
    let mut g = model.decoder_r.backward(&tape, &reg, &to_tensor(reg.shape(), grad));
    if let Some(gs) = gz {
        g.add_assign(&gs);
    }
    model.encoder.backward(&enc_tape, &g);
    Ok(BatchLosses {
        seg: seg_loss,
        reg: reg_loss,
    })
}

/// Frame order for a 0-based epoch.
pub fn epoch_order(n: usize, epoch: u64, root_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive_indexed(root_seed, seed::SHUFFLE, epoch)));
    order
}

/// One pass over `data`. Returns the advanced loss state and the epoch's
/// log record.
pub fn train_epoch(
    model: &mut ModelBundle,
    optimizer: &mut AdamW,
    data: &[AdcFrame],
    state: LossState,
    config: &TrainConfig,
) -> Result<(LossState, EpochRecord)> {
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let start = Instant::now();
    let lr = lr_at_epoch(state.epoch, config);
    let order = epoch_order(data.len(), state.epoch, config.seed);
    let (mut sum_s, mut sum_r) = (0.0, 0.0);
    for chunk in order.chunks(config.batch_size) {
        let frames: Vec<&AdcFrame> = chunk.iter().map(|&i| &data[i]).collect();
        let losses = batch_gradients(model, &frames, state.seg_weight, config)?;
        sum_s += losses.seg * chunk.len() as f64;
        sum_r += losses.reg * chunk.len() as f64;
        optimizer.update(model, lr);
    }
    let n = data.len() as f64;
    let (rho_s, rho_r) = (sum_s / n, sum_r / n);
    let record = EpochRecord {
        epoch: state.epoch + 1,
        lr,
        rho_s,
        rho_r,
        seg_weight: state.seg_weight,
        total: state.seg_weight * rho_s + rho_r,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let next = if model.config.variant.has_segmentation() {
        state.with_epoch_losses(rho_s, rho_r)
    } else {
        LossState {
            rho_s,
            rho_r,
            epoch: state.epoch + 1,
            ..state
        }
    };
    tracing::debug!(epoch = record.epoch, lr, rho_s, rho_r, seg_weight = record.seg_weight, "epoch done");
    Ok((next, record))
}

/// Owns a model and everything needed to continue training it.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelBundle,
    pub optimizer: AdamW,
    pub loss_state: LossState,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_shape: Shape3) -> Result<Self> {
        config.validate()?;
        let model = make_variant(config.variant, input_shape, config.seed)?;
        let optimizer = AdamW::new(config.optimizer, &model);
        Ok(Self {
            model,
            optimizer,
            loss_state: LossState::default(),
            config,
            history: Vec::new(),
            last_checkpoint: None,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.loss_state.epoch
    }

    pub fn train_epoch(&mut self, data: &[AdcFrame]) -> Result<&EpochRecord> {
        let (state, record) = train_epoch(&mut self.model, &mut self.optimizer, data, self.loss_state, &self.config)
            .map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(match &self.last_checkpoint {
                    Some(p) => format!("{msg}; last checkpoint: {}", p.display()),
                    None => format!("{msg}; no checkpoint written"),
                }),
                other => other,
            })?;
        self.loss_state = state;
        self.history.push(record);
        Ok(self.history.last().unwrap())
    }

    /// Trains until `config.epochs` epochs have completed.
    pub fn fit(&mut self, data: &[AdcFrame], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while self.epoch() < self.config.epochs {
            on_epoch(self.train_epoch(data)?);
        }
        Ok(())
    }

    pub fn config_hash(&self) -> u64 {
        self.config.hash(&self.model.config)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let header = CheckpointHeader {
            train_config: self.config.clone(),
            network_config: self.model.config.clone(),
            model_seed: self.model.seed,
            loss_state: self.loss_state,
            epoch: self.loss_state.epoch,
            optimizer_step: self.optimizer.step,
            config_hash: self.config_hash(),
            rng: RngState {
                root_seed: self.config.seed,
                next_epoch: self.loss_state.epoch,
            },
            history: self.history.clone(),
            tensors: params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for ((p, m), v) in params.iter().zip(&self.optimizer.m).zip(&self.optimizer.v) {
            put_f32s(&mut out, &p.value);
            put_f32s(&mut out, m);
            put_f32s(&mut out, v);
        }
        out
    }

    pub fn save_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    /// Restores a trainer using the configuration stored in the checkpoint.
    pub fn from_checkpoint_bytes(data: &[u8]) -> Result<Self> {
        let (header, body_at) = parse_header(data)?;
        let mut model = build_model(header.network_config.clone(), header.model_seed)?;
        let mut optimizer = AdamW::new(header.train_config.optimizer, &model);
        optimizer.step = header.optimizer_step;
        let mut r = Reader::new(&data[body_at..]);
        let params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::parse(body_at as u64, "tensor directory does not match the model"));
        }
        for (((p, entry), m), v) in params.into_iter().zip(&header.tensors).zip(&mut optimizer.m).zip(&mut optimizer.v) {
            if p.name != entry.name || p.shape != entry.shape {
                return Err(Error::parse(body_at as u64, format!("unexpected tensor {}", entry.name)));
            }
            let n = p.value.len();
            p.value = r.f32_vec(n, &entry.name)?;
            *m = r.f32_vec(n, &entry.name)?;
            *v = r.f32_vec(n, &entry.name)?;
        }
        if r.remaining() != 0 {
            return Err(Error::parse(body_at as u64 + r.offset(), "trailing bytes after tensors"));
        }
        let trainer = Self {
            model,
            optimizer,
            loss_state: header.loss_state,
            config: header.train_config,
            history: header.history,
            last_checkpoint: None,
        };
        if trainer.config_hash() != header.config_hash {
            return Err(Error::parse(8, "stored config hash does not match stored config"));
        }
        Ok(trainer)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut t = Self::from_checkpoint_bytes(&data)?;
        t.last_checkpoint = Some(path.to_path_buf());
        Ok(t)
    }

    /// Loads a checkpoint only if it was written for `config` and
    /// `network`; the epoch budget may differ.
    pub fn resume(path: impl AsRef<Path>, config: &TrainConfig, network: &NetworkConfig) -> Result<Self> {
        let path = path.as_ref();
        let header = inspect_checkpoint(path)?;
        let expected = config.hash(network);
        if header.config_hash != expected {
            return Err(Error::Config(format!(
                "checkpoint {} was written for config {:016x}, not {expected:016x}",
                path.display(),
                header.config_hash
            )));
        }
        let mut t = Self::load_checkpoint(path)?;
        t.config.epochs = config.epochs;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The shuffle stream is a pure function of these two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub root_seed: u64,
    pub next_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub train_config: TrainConfig,
    pub network_config: NetworkConfig,
    pub model_seed: u64,
    pub loss_state: LossState,
    pub epoch: u64,
    pub optimizer_step: u64,
    pub config_hash: u64,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    pub tensors: Vec<TensorEntry>,
}

const PREAMBLE_LEN: usize = 10;

fn parse_preamble(data: &[u8]) -> Result<usize> {
    let mut r = Reader::new(data);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(at, format!("unsupported checkpoint version {version}")));
    }
    Ok(r.u32("header length")? as usize)
}

fn parse_header(data: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let len = parse_preamble(data)?;
    let mut r = Reader::new(&data[PREAMBLE_LEN.min(data.len())..]);
    let json = r.take(len, "header").map_err(|e| shift(e, PREAMBLE_LEN))?;
    let header = serde_json::from_slice(json).map_err(|e| Error::parse(PREAMBLE_LEN as u64, format!("header: {e}")))?;
    Ok((header, PREAMBLE_LEN + len))
}

fn shift(e: Error, by: usize) -> Error {
    match e {
        Error::Parse { offset, message } => Error::Parse {
            offset: offset + by as u64,
            message,
        },
        other => other,
    }
}

/// Reads only the JSON header of a checkpoint file.
pub fn inspect_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut preamble = [0u8; PREAMBLE_LEN];
    let got = read_up_to(&mut f, &mut preamble).map_err(|e| Error::io(path, e))?;
    let len = parse_preamble(&preamble[..got])?;
    let mut json = vec![0u8; len];
    let got = read_up_to(&mut f, &mut json).map_err(|e| Error::io(path, e))?;
    if got < len {
        return Err(Error::parse((PREAMBLE_LEN + got) as u64, "truncated checkpoint header"));
    }
    serde_json::from_slice(&json).map_err(|e| Error::parse(PREAMBLE_LEN as u64, format!("header: {e}")))
}

fn read_up_to(f: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{generate_synthetic_frames, SyntheticConfig};

    const TINY: Shape3 = [16, 9, 4];

    fn tiny_data(n: usize) -> Vec<AdcFrame> {
        generate_synthetic_frames(&SyntheticConfig::new(TINY, 0.1, 3), n).unwrap()
    }

    fn tiny_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 6,
            variant,
            seed: 21,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &c), 0.01);
        assert!((lr_at_epoch(20, &c) - 0.0095).abs() < 1e-15);
        assert!((lr_at_epoch(40, &c) - 0.009025).abs() < 1e-15);
        assert_eq!(lr_at_epoch(19, &c), 0.01);
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let lr = lr_at_epoch(e, &c);
            assert!(lr <= prev);
            assert_eq!(lr, lr_at_epoch(e - e % 20, &c));
            prev = lr;
        }
    }

    #[test]
    fn adamw_matches_reference_step() {
        // one scalar parameter, grad 0.5, lr 0.1, starting at 1.0
        let mut model = make_variant(Variant::Cae, TINY, 1).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &model);
        for p in model.params_mut() {
            p.value.fill(1.0);
            p.grad.fill(0.5);
        }
        opt.update(&mut model, 0.1);
        // decay: 1 - 0.1*0.01 = 0.999; m_hat = 0.5, v_hat = 0.25 -> step 0.1 * 0.5 / (0.5 + 1e-8)
        let expected = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((model.params()[0].value[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn variants_share_encoder() {
        let a = make_variant(Variant::Bcae, TINY, 4).unwrap();
        let b = make_variant(Variant::BcaeWoT, TINY, 4).unwrap();
        let c = make_variant(Variant::Cae, TINY, 4).unwrap();
        assert_eq!(a.config.encoder, c.config.encoder);
        assert_eq!(a.encoder, b.encoder);
        assert!(c.decoder_s.is_none());
    }

    #[test]
    fn balancing_history_and_determinism() {
        let data = tiny_data(5);
        let run = || {
            let mut t = Trainer::new(tiny_config(Variant::Bcae), TINY).unwrap();
            t.fit(&data, |_| {}).unwrap();
            t
        };
        let a = run();
        let b = run();
        assert_eq!(a.loss_state, b.loss_state);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history[0].seg_weight, 1.0);
        for w in a.history.windows(2) {
            let expected = w[0].rho_r / w[0].rho_s;
            assert!((w[1].seg_weight - expected).abs() <= 1e-9 * expected.abs());
        }
        assert!(a.history.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn cae_never_uses_segmentation_loss() {
        let mut t = Trainer::new(tiny_config(Variant::Cae), TINY).unwrap();
        t.fit(&tiny_data(3), |_| {}).unwrap();
        assert!(t.history.iter().all(|r| r.rho_s == 0.0 && r.seg_weight == 1.0));
        assert!(!t.loss_state.fallback);
    }

    #[test]
    fn checkpoint_resume_is_bitwise() {
        let data = tiny_data(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut straight = Trainer::new(TrainConfig { epochs: 4, ..tiny_config(Variant::BcaeWoT) }, TINY).unwrap();
        straight.fit(&data, |_| {}).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 2, ..tiny_config(Variant::BcaeWoT) }, TINY).unwrap();
        first.fit(&data, |_| {}).unwrap();
        first.save_checkpoint(&path).unwrap();
        let header = inspect_checkpoint(&path).unwrap();
        assert_eq!(header.epoch, 2);
        assert_eq!(header.tensors.len(), first.model.params().len());

        let cfg = TrainConfig { epochs: 4, ..tiny_config(Variant::BcaeWoT) };
        let mut resumed = Trainer::resume(&path, &cfg, &first.model.config).unwrap();
        resumed.fit(&data, |_| {}).unwrap();
        assert_eq!(resumed.loss_state, straight.loss_state);
        assert_eq!(resumed.model, straight.model);
        assert_eq!(resumed.optimizer, straight.optimizer);

        let other = TrainConfig { seed: 99, ..cfg };
        assert!(matches!(Trainer::resume(&path, &other, &first.model.config), Err(Error::Config(_))));
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(Trainer::from_checkpoint_bytes(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Trainer::from_checkpoint_bytes(&bad), Err(Error::Parse { offset: 4, .. })));
    }
}
