//! Value transform, soft labels and the two training losses.
//!
//! All reductions accumulate in `f64` in row-major (slice) order, so results
//! are reproducible for a given input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T(x) = ln(x - shift) / scale`, natural log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub shift: f64,
    pub scale: f64,
    /// Lower bound on the log argument.
    pub epsilon_guard: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            shift: 64.0,
            scale: 6.0,
            epsilon_guard: 1e-6,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift >= 0.0 && self.scale > 0.0 && self.epsilon_guard > 0.0) {
            return Err(Error::Config(format!("invalid transform params {self:?}")));
        }
        Ok(())
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.shift).max(self.epsilon_guard).ln() / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (self.scale * y).exp() + self.shift
    }

    /// d/dy of [`Self::inverse`].
    pub fn inverse_derivative(&self, y: f64) -> f64 {
        self.scale * (self.scale * y).exp()
    }
}

pub fn forward_transform(v: f64, params: &TransformParams) -> f64 {
    params.forward(v)
}

pub fn inverse_transform(y: f64, params: &TransformParams) -> f64 {
    params.inverse(y)
}

/// Sigmoid step on the log ADC value `log2(v + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelParams {
    pub mu: f64,
    pub alpha: f64,
}

impl Default for SoftLabelParams {
    fn default() -> Self {
        Self {
            mu: 6.0,
            alpha: 20.0,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn soft_label(v: f64, params: &SoftLabelParams) -> f64 {
    sigmoid(params.alpha * ((v + 1.0).log2() - params.mu))
}

pub fn soft_labels(values: &[f64], params: &SoftLabelParams) -> Vec<f64> {
    values.iter().map(|&v| soft_label(v, params)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    /// Predictions are clamped to `[eps, 1 - eps]` before taking logs.
    pub clamp_eps: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            clamp_eps: 1e-7,
        }
    }
}

/// Segmentation gate threshold `h`, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub const TRAINING: Threshold = Threshold(0.5);

    pub fn new(h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("threshold {h} outside [0, 1]")));
        }
        Ok(Self(h))
    }

    /// Clamp any real into `[0, 1]`; NaN maps to 0.5.
    pub fn clamped(h: f64) -> Self {
        if h.is_nan() {
            Self::TRAINING
        } else {
            Self(h.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn passes(self, seg: f64) -> bool {
        seg >= self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Threshold::new(h)
    }
}

impl From<Threshold> for f64 {
    fn from(h: Threshold) -> f64 {
        h.0
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(a, b));
    }
    Ok(())
}

/// Focal loss with base-2 logs, averaged over all voxels.
pub fn focal_loss(pred: &[f64], labels: &[f64], params: &FocalParams) -> Result<f64> {
    check_len(pred.len(), labels.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let (eps, gamma) = (params.clamp_eps, params.gamma);
    let mut sum = 0.0f64;
    for (&p, &l) in pred.iter().zip(labels) {
        let p = p.clamp(eps, 1.0 - eps);
        sum += -l * p.log2() * (1.0 - p).powf(gamma) - (1.0 - l) * (1.0 - p).log2() * p.powf(gamma);
    }
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`focal_loss`] with respect to each prediction. Zero where
/// the prediction is clamped.
pub fn focal_loss_grad(pred: &[f64], labels: &[f64], params: &FocalParams) -> Result<Vec<f64>> {
    check_len(pred.len(), labels.len())?;
    let m = pred.len() as f64;
    let (eps, gamma) = (params.clamp_eps, params.gamma);
    let ln2 = std::f64::consts::LN_2;
    Ok(pred
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            if p < eps || p > 1.0 - eps {
                return 0.0;
            }
            let q = 1.0 - p;
            let mut pos = q.powf(gamma) / (p * ln2);
            let mut neg = -p.powf(gamma) / (q * ln2);
            if gamma != 0.0 {
                pos -= gamma * p.log2() * q.powf(gamma - 1.0);
                neg += gamma * q.log2() * p.powf(gamma - 1.0);
            }
            (-l * pos - (1.0 - l) * neg) / m
        })
        .collect())
}

/// Gated reconstruction: `T^-1(reg)` where `seg >= h`, else 0.
pub fn combine_output(
    reg: &[f64],
    seg: &[f64],
    h: Threshold,
    params: &TransformParams,
) -> Result<Vec<f64>> {
    check_len(reg.len(), seg.len())?;
    Ok(reg
        .iter()
        .zip(seg)
        .map(|(&r, &s)| if h.passes(s) { params.inverse(r) } else { 0.0 })
        .collect())
}

/// Gated reconstruction without the value transform: `reg` where
/// `seg >= h`, else 0.
pub fn combine_output_without_transform(reg: &[f64], seg: &[f64], h: Threshold) -> Result<Vec<f64>> {
    check_len(reg.len(), seg.len())?;
    Ok(reg
        .iter()
        .zip(seg)
        .map(|(&r, &s)| if h.passes(s) { r } else { 0.0 })
        .collect())
}

/// Mean squared error over every voxel, zeros included.
pub fn regression_loss(combined: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(combined.len(), truth.len())?;
    if combined.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = combined
        .iter()
        .zip(truth)
        .map(|(&c, &t)| (c - t) * (c - t))
        .sum();
    Ok(sum / combined.len() as f64)
}

/// How the regression head's output becomes a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    /// Gate, then inverse transform.
    Transform,
    /// Gate only.
    Identity,
    /// No gate: the regression output is the reconstruction.
    Ungated,
}

/// Regression loss of the combined output together with its gradient with
/// respect to the regression head. The gate is held fixed: gated-off voxels
/// contribute `v^2` to the loss and nothing to the gradient.
pub fn regression_loss_and_grad(
    reg: &[f64],
    seg: Option<&[f64]>,
    truth: &[f64],
    h: Threshold,
    combine: Combine,
    params: &TransformParams,
) -> Result<(f64, Vec<f64>)> {
    check_len(reg.len(), truth.len())?;
    if let Some(seg) = seg {
        check_len(reg.len(), seg.len())?;
    } else if combine != Combine::Ungated {
        return Err(Error::Config("gated combination needs a segmentation output".into()));
    }
    let m = reg.len().max(1) as f64;
    let mut sum = 0.0f64;
    let mut grad = vec![0.0; reg.len()];
    for (i, (&r, &t)) in reg.iter().zip(truth).enumerate() {
        let open = match (combine, seg) {
            (Combine::Ungated, _) => true,
            (_, Some(seg)) => h.passes(seg[i]),
            (_, None) => unreachable!(),
        };
        let (value, dvalue) = match (open, combine) {
            (false, _) => (0.0, 0.0),
            (true, Combine::Transform) => (params.inverse(r), params.inverse_derivative(r)),
            (true, _) => (r, 1.0),
        };
        let diff = value - t;
        sum += diff * diff;
        grad[i] = 2.0 * diff * dvalue / m;
    }
    Ok((sum / m, grad))
}

/// Epoch-level loss bookkeeping for the balanced objective
/// `L = seg_weight * L_s + L_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossState {
    /// Segmentation loss of the last completed epoch (0 before any).
    pub rho_s: f64,
    /// Regression loss of the last completed epoch.
    pub rho_r: f64,
    /// Weight on the segmentation loss for the next epoch.
    pub seg_weight: f64,
    /// Number of completed epochs.
    pub epoch: u64,
    /// Set when the last update could not form `rho_r / rho_s`.
    pub fallback: bool,
}

impl Default for LossState {
    fn default() -> Self {
        Self {
            rho_s: 0.0,
            rho_r: 0.0,
            seg_weight: 1.0,
            epoch: 0,
            fallback: false,
        }
    }
}

impl LossState {
    /// Record the epoch means and advance.
    pub fn with_epoch_losses(self, rho_s: f64, rho_r: f64) -> LossState {
        update_loss_weight(LossState {
            rho_s,
            rho_r,
            ..self
        })
    }
}

/// Next-epoch weight `rho_r / rho_s`. A non-positive `rho_s` keeps the
/// previous weight and sets `fallback`.
pub fn update_loss_weight(state: LossState) -> LossState {
    let usable = state.rho_s > 0.0 && state.rho_s.is_finite() && state.rho_r.is_finite();
    if usable {
        LossState {
            seg_weight: state.rho_r / state.rho_s,
            epoch: state.epoch + 1,
            fallback: false,
            ..state
        }
    } else {
        tracing::warn!(
            rho_s = state.rho_s,
            rho_r = state.rho_r,
            seg_weight = state.seg_weight,
            "segmentation loss not positive, keeping previous weight"
        );
        LossState {
            epoch: state.epoch + 1,
            fallback: true,
            ..state
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn transform_examples() {
        let p = TransformParams::default();
        assert_eq!(p.forward(65.0), 0.0);
        assert_relative_eq!(p.forward(64.0 + 6f64.exp()), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.forward(1023.0), 959f64.ln() / 6.0, epsilon = 1e-12);
        assert!((p.forward(1023.0) - 1.14432).abs() < 1e-5);
        assert_eq!(p.inverse(0.0), 65.0);
        // 1.14432 is rounded to 5 digits; dT^-1/dy = 6 * 959 amplifies that to ~0.03
        assert!((p.inverse(1.14432) - 1023.0).abs() < 0.05);
        // boundary is guarded, not NaN
        assert!(p.forward(64.0).is_finite());
    }

    #[test]
    fn transform_round_trip_over_adc_range() {
        let p = TransformParams::default();
        for v in 65..=1023 {
            let v = f64::from(v);
            assert!((p.inverse(p.forward(v)) - v).abs() / v < 1e-6);
        }
    }

    #[test]
    fn soft_label_examples() {
        let p = SoftLabelParams::default();
        assert_eq!(soft_label(63.0, &p), 0.5);
        assert!(soft_label(0.0, &p) < 1e-50);
        assert_relative_eq!(soft_label(127.0, &p), 1.0 / (1.0 + (-20f64).exp()), epsilon = 1e-15);
        assert!((soft_label(127.0, &p) - 0.999999998).abs() < 1e-9);
    }

    #[test]
    fn focal_examples() {
        let p = FocalParams::default();
        assert_eq!(focal_loss(&[0.5], &[1.0], &p).unwrap(), 0.25);
        assert!(focal_loss(&[1.0], &[1.0], &p).unwrap() < 1e-12);
        assert!(focal_loss(&[0.5, 0.5], &[1.0], &p).is_err());
    }

    #[test]
    fn focal_gamma_zero_is_bce() {
        let p = FocalParams { gamma: 0.0, ..Default::default() };
        let pred = [0.1, 0.7, 0.95, 0.3];
        let labels = [0.0, 1.0, 0.8, 0.2];
        let bce: f64 = pred
            .iter()
            .zip(&labels)
            .map(|(&q, &l): (&f64, &f64)| -(l * q.log2() + (1.0 - l) * (1.0 - q).log2()))
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(focal_loss(&pred, &labels, &p).unwrap(), bce, epsilon = 1e-12);
    }

    #[test]
    fn focal_grad_matches_central_differences() {
        let p = FocalParams::default();
        let pred = [0.2, 0.5, 0.9, 0.33, 0.61];
        let labels = [0.0, 1.0, 0.3, 0.99, 0.5];
        let g = focal_loss_grad(&pred, &labels, &p).unwrap();
        for i in 0..pred.len() {
            let step = 1e-6;
            let mut up = pred;
            let mut dn = pred;
            up[i] += step;
            dn[i] -= step;
            let fd = (focal_loss(&up, &labels, &p).unwrap() - focal_loss(&dn, &labels, &p).unwrap())
                / (2.0 * step);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn combine_examples() {
        let tp = TransformParams::default();
        let h = Threshold::new(0.5).unwrap();
        assert_eq!(combine_output(&[3.0], &[0.3], h, &tp).unwrap(), vec![0.0]);
        assert_eq!(combine_output(&[0.0], &[0.6], h, &tp).unwrap(), vec![65.0]);
        let all = combine_output(&[0.1, -2.0], &[0.0, 0.01], Threshold::new(0.0).unwrap(), &tp).unwrap();
        assert_eq!(all, vec![tp.inverse(0.1), tp.inverse(-2.0)]);
        assert_eq!(combine_output_without_transform(&[7.0], &[0.3], h).unwrap(), vec![0.0]);
        assert_eq!(combine_output_without_transform(&[500.0], &[0.9], h).unwrap(), vec![500.0]);
    }

    #[test]
    fn combine_variants_differ_by_inverse_transform() {
        let tp = TransformParams::default();
        let h = Threshold::TRAINING;
        let reg = [0.1, 0.5, -0.3, 1.0];
        let seg = [0.2, 0.7, 0.5, 0.49];
        let with = combine_output(&reg, &seg, h, &tp).unwrap();
        let without = combine_output_without_transform(&reg, &seg, h).unwrap();
        for i in 0..4 {
            if seg[i] >= 0.5 {
                assert_eq!(with[i], tp.inverse(without[i]));
            } else {
                assert_eq!((with[i], without[i]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn regression_examples() {
        assert_eq!(regression_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(regression_loss(&[3.0; 5], &[0.0; 5]).unwrap(), 9.0);
        assert!(regression_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn loss_weight_examples() {
        let s = LossState::default();
        assert_eq!(s.seg_weight, 1.0);
        let next = s.with_epoch_losses(4.0, 2.0);
        assert_eq!((next.seg_weight, next.epoch), (0.5, 1));
        assert_eq!(s.with_epoch_losses(3.0, 3.0).seg_weight, 1.0);
        let fallback = next.with_epoch_losses(0.0, 5.0);
        assert_eq!(fallback.seg_weight, 0.5);
        assert!(fallback.fallback);
        assert_eq!(fallback.epoch, 2);
    }

    #[test]
    fn threshold_bounds() {
        assert!(Threshold::new(1.01).is_err());
        assert!(Threshold::new(-0.1).is_err());
        assert_eq!(Threshold::clamped(1.0 + 1e-9).value(), 1.0);
        assert_eq!(Threshold::clamped(-3.0).value(), 0.0);
    }

    proptest! {
        #[test]
        fn transform_and_labels_monotone(a in 65.0f64..1023.0, d in 0.01f64..100.0) {
            let tp = TransformParams::default();
            let sp = SoftLabelParams::default();
            let b = a + d;
            prop_assert!(tp.forward(b) > tp.forward(a));
            prop_assert!(tp.inverse(b / 1000.0) > tp.inverse(a / 1000.0));
            // the sigmoid saturates numerically, so compare non-strictly in
            // the tails and strictly near the midpoint
            prop_assert!(soft_label(b, &sp) >= soft_label(a, &sp));
            let x = a / 20.0 + 55.0;
            prop_assert!(soft_label(x + 0.5, &sp) > soft_label(x, &sp));
        }

        #[test]
        fn focal_nonnegative(pred in proptest::collection::vec(0.0f64..=1.0, 1..50), seed in 0u64..1000) {
            let labels: Vec<f64> = pred.iter().enumerate()
                .map(|(i, _)| ((i as u64 * 7 + seed) % 3) as f64 / 2.0).collect();
            let loss = focal_loss(&pred, &labels, &FocalParams::default()).unwrap();
            prop_assert!(loss >= 0.0);
        }

        #[test]
        fn gate_support_is_exact(seg in proptest::collection::vec(0.0f64..1.0, 1..64), h in 0.0f64..=1.0) {
            let h = Threshold::new(h).unwrap();
            let reg: Vec<f64> = seg.iter().map(|s| s - 0.5).collect();
            let out = combine_output(&reg, &seg, h, &TransformParams::default()).unwrap();
            for (o, s) in out.iter().zip(&seg) {
                prop_assert_eq!(*o != 0.0, *s >= h.value());
            }
        }
    }
}
