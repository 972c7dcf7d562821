//! Encoder and decoders built from layer tables, shape oracles and weight
//! export.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::{AdcFrame, RealFrame, Shape3, DESK_SHAPE, SECTION_SHAPE};
use crate::layers::{
    leaky_backward, leaky_forward, relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, Conv3d,
    ConvTranspose3d, Geometry, InstanceNorm3d, Param,
};
use crate::seed;
use crate::tensor::{Real, Tensor};
use crate::transform::{combine_output, combine_output_without_transform, Threshold, TransformParams};
use crate::wire::{put_f32s, Reader};

pub const LATENT_CHANNELS: usize = 8;
pub const WEIGHTS_MAGIC: &[u8; 4] = b"BCAW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output_padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    /// Layer with padding `floor(kernel / 2)` on every axis.
    pub fn new(kind: LayerKind, kernel: [usize; 3], stride: [usize; 3], in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            kernel,
            stride,
            padding: kernel.map(|k| k / 2),
            output_padding: [0; 3],
            in_channels,
            out_channels,
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::Config(format!("kernel and stride must be >= 1 in {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("channel counts must be >= 1 in {self:?}")));
        }
        if self.output_padding.iter().zip(&self.stride).any(|(op, s)| op >= s) {
            return Err(Error::Config(format!("output padding must be below stride in {self:?}")));
        }
        if self.output_padding != [0; 3] {
            return Err(Error::Config("non-zero output padding is not supported".into()));
        }
        Ok(())
    }
}

/// Per axis `floor((n + 2p - f) / s) + 1`.
pub fn conv_output_shape(input: Shape3, layer: &LayerSpec) -> Result<Shape3> {
    if layer.kind != LayerKind::Conv {
        return Err(Error::Config("conv_output_shape needs a conv layer".into()));
    }
    let mut out = [0; 3];
    for axis in 0..3 {
        let span = (input[axis] + 2 * layer.padding[axis]) as i64 - layer.kernel[axis] as i64;
        let n = span.div_euclid(layer.stride[axis] as i64) + 1;
        if span < 0 || n <= 0 {
            return Err(Error::NonPositiveExtent {
                what: "conv output".into(),
                axis,
                value: n.min(0),
            });
        }
        out[axis] = n as usize;
    }
    Ok(out)
}

/// Per axis `(n - 1) s - 2p + f + output_padding`.
pub fn deconv_output_shape(input: Shape3, layer: &LayerSpec) -> Result<Shape3> {
    if layer.kind != LayerKind::Deconv {
        return Err(Error::Config("deconv_output_shape needs a deconv layer".into()));
    }
    let mut out = [0; 3];
    for axis in 0..3 {
        let n = (input[axis] as i64 - 1) * layer.stride[axis] as i64 - 2 * layer.padding[axis] as i64
            + layer.kernel[axis] as i64
            + layer.output_padding[axis] as i64;
        if input[axis] == 0 || n <= 0 {
            return Err(Error::NonPositiveExtent {
                what: "deconv output".into(),
                axis,
                value: n.min(0),
            });
        }
        out[axis] = n as usize;
    }
    Ok(out)
}

pub fn layer_output_shape(input: Shape3, layer: &LayerSpec) -> Result<Shape3> {
    match layer.kind {
        LayerKind::Conv => conv_output_shape(input, layer),
        LayerKind::Deconv => deconv_output_shape(input, layer),
    }
}

/// Residual block: `first -> norm -> act -> second` on the main path and
/// `first' -> norm -> act` on the side path, merged by a sum. The side
/// path's layer has the same geometry as `first` but its own weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResBlockSpec {
    pub first: LayerSpec,
    pub second: LayerSpec,
}

impl ResBlockSpec {
    pub fn new(kind: LayerKind, kernel: [usize; 3], stride: [usize; 3], in_channels: usize, out_channels: usize) -> Self {
        Self {
            first: LayerSpec::new(kind, kernel, stride, in_channels, out_channels),
            second: LayerSpec::new(kind, [3, 3, 3], [1, 1, 1], out_channels, out_channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.second.validate()?;
        let s = &self.second;
        if s.kind != self.first.kind
            || s.stride != [1; 3]
            || s.in_channels != self.first.out_channels
            || s.out_channels != s.in_channels
            || s.kernel.iter().zip(&s.padding).any(|(&k, &p)| 2 * p + 1 != k)
        {
            return Err(Error::Config(format!("second layer must preserve shape and channels: {s:?}")));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        let mid = layer_output_shape(input, &self.first)?;
        layer_output_shape(mid, &self.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Two decoders, gated output with the log transform.
    Bcae,
    /// Two decoders, gated output without the transform and a
    /// non-negative regression head.
    #[serde(rename = "bcae-wot")]
    BcaeWoT,
    /// Single decoder with a non-negative head and plain MSE.
    Cae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Bcae => "bcae",
            Variant::BcaeWoT => "bcae-wot",
            Variant::Cae => "cae",
        }
    }

    pub fn has_segmentation(self) -> bool {
        self != Variant::Cae
    }

    pub fn regression_head(self) -> Head {
        match self {
            Variant::Bcae => Head::Identity,
            Variant::BcaeWoT | Variant::Cae => Head::Relu,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bcae" => Ok(Variant::Bcae),
            "bcae-wot" | "bcaewot" | "bcae_wot" => Ok(Variant::BcaeWoT),
            "cae" => Ok(Variant::Cae),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sigmoid,
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_shape: Shape3,
    pub encoder: Vec<ResBlockSpec>,
    pub encoder_final: LayerSpec,
    pub decoder: Vec<ResBlockSpec>,
    pub decoder_final: LayerSpec,
    pub leaky_slope: f64,
    pub norm_eps: f64,
    pub variant: Variant,
}

impl NetworkConfig {
    /// The published layer tables applied to an arbitrary input shape.
    pub fn with_input(input_shape: Shape3, variant: Variant) -> Self {
        use LayerKind::{Conv, Deconv};
        let s = [2, 2, 1];
        Self {
            input_shape,
            encoder: vec![
                ResBlockSpec::new(Conv, [4, 5, 3], s, 1, 8),
                ResBlockSpec::new(Conv, [3, 3, 3], s, 8, 16),
                ResBlockSpec::new(Conv, [3, 3, 3], s, 16, 32),
                ResBlockSpec::new(Conv, [3, 4, 3], s, 32, 32),
            ],
            encoder_final: LayerSpec::new(Conv, [1, 1, 1], [1, 1, 1], 32, LATENT_CHANNELS),
            decoder: vec![
                ResBlockSpec::new(Deconv, [3, 4, 3], s, LATENT_CHANNELS, 8),
                ResBlockSpec::new(Deconv, [3, 3, 3], s, 8, 4),
                ResBlockSpec::new(Deconv, [3, 3, 3], s, 4, 2),
            ],
            decoder_final: LayerSpec::new(Deconv, [4, 5, 3], s, 2, 1),
            leaky_slope: crate::layers::LEAKY_SLOPE,
            norm_eps: 1e-5,
            variant,
        }
    }

    pub fn canonical(variant: Variant) -> Self {
        Self::with_input(SECTION_SHAPE, variant)
    }

    pub fn desk(variant: Variant) -> Self {
        Self::with_input(DESK_SHAPE, variant)
    }

    /// Checks layer invariants, channel chaining and shape closure.
    /// Returns the latent shape `(channels, d, h, w)`.
    pub fn validate(&self) -> Result<[usize; 4]> {
        if self.input_shape.contains(&0) {
            return Err(Error::NonPositiveExtent {
                what: "input shape".into(),
                axis: self.input_shape.iter().position(|&d| d == 0).unwrap(),
                value: 0,
            });
        }
        if !(self.leaky_slope.is_finite() && self.norm_eps > 0.0) {
            return Err(Error::Config("leaky slope must be finite and norm eps positive".into()));
        }
        let mut channels = 1;
        let mut shape = self.input_shape;
        for (i, b) in self.encoder.iter().enumerate() {
            let name = format!("encoder.block{}", i + 1);
            check_block(b, LayerKind::Conv, channels, &name)?;
            shape = b.output_shape(shape).map_err(|e| named(e, &name))?;
            channels = b.first.out_channels;
        }
        check_layer(&self.encoder_final, LayerKind::Conv, channels, "encoder.final")?;
        shape = conv_output_shape(shape, &self.encoder_final).map_err(|e| named(e, "encoder.final"))?;
        let latent = [self.encoder_final.out_channels, shape[0], shape[1], shape[2]];
        channels = latent[0];
        for (i, b) in self.decoder.iter().enumerate() {
            let name = format!("decoder.block{}", i + 1);
            check_block(b, LayerKind::Deconv, channels, &name)?;
            shape = b.output_shape(shape).map_err(|e| named(e, &name))?;
            channels = b.first.out_channels;
        }
        check_layer(&self.decoder_final, LayerKind::Deconv, channels, "decoder.final")?;
        shape = deconv_output_shape(shape, &self.decoder_final).map_err(|e| named(e, "decoder.final"))?;
        if shape != self.input_shape || self.decoder_final.out_channels != 1 {
            return Err(Error::Shape {
                expected: format!("decoder output (1, {:?})", self.input_shape),
                actual: format!("({}, {shape:?}) at decoder.final", self.decoder_final.out_channels),
            });
        }
        Ok(latent)
    }

    pub fn latent_shape(&self) -> Result<[usize; 4]> {
        self.validate()
    }

    /// Spatial shapes after each encoder block and the final conv.
    pub fn encoder_trace(&self) -> Result<Vec<Shape3>> {
        let mut trace = vec![self.input_shape];
        for b in &self.encoder {
            trace.push(b.output_shape(*trace.last().unwrap())?);
        }
        Ok(trace)
    }

    /// Spatial shapes from the latent through each decoder block to the
    /// output.
    pub fn decoder_trace(&self) -> Result<Vec<Shape3>> {
        let l = self.latent_shape()?;
        let mut trace = vec![[l[1], l[2], l[3]]];
        for b in &self.decoder {
            trace.push(b.output_shape(*trace.last().unwrap())?);
        }
        trace.push(deconv_output_shape(*trace.last().unwrap(), &self.decoder_final)?);
        Ok(trace)
    }

    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        first_u64(&Sha256::digest(json))
    }
}

fn named(e: Error, layer: &str) -> Error {
    match e {
        Error::NonPositiveExtent { what, axis, value } => Error::NonPositiveExtent {
            what: format!("{what} of {layer}"),
            axis,
            value,
        },
        other => other,
    }
}

fn check_layer(l: &LayerSpec, kind: LayerKind, in_channels: usize, name: &str) -> Result<()> {
    l.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
    if l.kind != kind {
        return Err(Error::Config(format!("{name}: expected a {kind:?} layer")));
    }
    if l.in_channels != in_channels {
        return Err(Error::Config(format!(
            "{name}: takes {} channels but receives {in_channels}",
            l.in_channels
        )));
    }
    Ok(())
}

fn check_block(b: &ResBlockSpec, kind: LayerKind, in_channels: usize, name: &str) -> Result<()> {
    b.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
    check_layer(&b.first, kind, in_channels, name)
}

fn first_u64(digest: &[u8]) -> u64 {
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A convolution or transposed convolution.
#[derive(Debug, Clone, PartialEq)]
pub enum Resample<T> {
    Conv(Conv3d<T>),
    Deconv(ConvTranspose3d<T>),
}

impl<T: Real> Resample<T> {
    fn build(spec: &LayerSpec, name: &str, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        match spec.kind {
            LayerKind::Conv => Resample::Conv(Conv3d::new(name, spec.in_channels, spec.out_channels, spec.geometry(), rng)),
            LayerKind::Deconv => {
                Resample::Deconv(ConvTranspose3d::new(name, spec.in_channels, spec.out_channels, spec.geometry(), rng))
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Resample::Conv(l) => l.forward(x),
            Resample::Deconv(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        match self {
            Resample::Conv(l) => l.backward(x, gy, want_dx),
            Resample::Deconv(l) => l.backward(x, gy, want_dx),
        }
    }

    fn params(&self) -> [&Param<T>; 2] {
        match self {
            Resample::Conv(l) => l.params(),
            Resample::Deconv(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        match self {
            Resample::Conv(l) => l.params_mut(),
            Resample::Deconv(l) => l.params_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub main_first: Resample<T>,
    pub main_norm: InstanceNorm3d<T>,
    pub main_second: Resample<T>,
    pub side_first: Resample<T>,
    pub side_norm: InstanceNorm3d<T>,
    pub slope: f64,
}

/// Intermediate activations of one block, kept for the backward pass.
#[derive(Debug)]
pub struct BlockTape<T> {
    input: Tensor<T>,
    main_pre: Tensor<T>,
    main_normed: Tensor<T>,
    main_act: Tensor<T>,
    side_pre: Tensor<T>,
    side_normed: Tensor<T>,
}

impl<T: Real> ResBlock<T> {
    fn build(spec: &ResBlockSpec, prefix: &str, slope: f64, eps: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let mut main_norm = InstanceNorm3d::new(&format!("{prefix}.main.norm"), spec.first.out_channels);
        let mut side_norm = InstanceNorm3d::new(&format!("{prefix}.side.norm"), spec.first.out_channels);
        main_norm.eps = eps;
        side_norm.eps = eps;
        Self {
            main_first: Resample::build(&spec.first, &format!("{prefix}.main.conv1"), rng),
            main_norm,
            main_second: Resample::build(&spec.second, &format!("{prefix}.main.conv2"), rng),
            side_first: Resample::build(&spec.first, &format!("{prefix}.side.conv1"), rng),
            side_norm,
            slope,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_taped(x.clone()).0
    }

    pub fn forward_taped(&self, input: Tensor<T>) -> (Tensor<T>, BlockTape<T>) {
        let main_pre = self.main_first.forward(&input);
        let main_normed = self.main_norm.forward(&main_pre);
        let main_act = leaky_forward(&main_normed, self.slope);
        let mut y = self.main_second.forward(&main_act);
        let side_pre = self.side_first.forward(&input);
        let side_normed = self.side_norm.forward(&side_pre);
        y.add_assign(&leaky_forward(&side_normed, self.slope));
        let tape = BlockTape {
            input,
            main_pre,
            main_normed,
            main_act,
            side_pre,
            side_normed,
        };
        (y, tape)
    }

    pub fn backward(&mut self, tape: &BlockTape<T>, gy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let d_act = self.main_second.backward(&tape.main_act, gy, true).unwrap();
        let d_normed = leaky_backward(&tape.main_normed, &d_act, self.slope);
        let d_pre = self.main_norm.backward(&tape.main_pre, &d_normed);
        let dx_main = self.main_first.backward(&tape.input, &d_pre, want_dx);
        let d_side_normed = leaky_backward(&tape.side_normed, gy, self.slope);
        let d_side_pre = self.side_norm.backward(&tape.side_pre, &d_side_normed);
        let dx_side = self.side_first.backward(&tape.input, &d_side_pre, want_dx);
        match (dx_main, dx_side) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::with_capacity(10);
        v.extend(self.main_first.params());
        v.extend(self.main_norm.params());
        v.extend(self.main_second.params());
        v.extend(self.side_first.params());
        v.extend(self.side_norm.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::with_capacity(10);
        v.extend(self.main_first.params_mut());
        v.extend(self.main_norm.params_mut());
        v.extend(self.main_second.params_mut());
        v.extend(self.side_first.params_mut());
        v.extend(self.side_norm.params_mut());
        v
    }
}

/// Applies one residual block to `x`.
pub fn resblock_forward<T: Real>(block: &ResBlock<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let expected = match &block.main_first {
        Resample::Conv(l) => l.in_channels,
        Resample::Deconv(l) => l.in_channels,
    };
    if x.channels() != expected {
        return Err(Error::shape(format!("{expected} input channels"), x.shape()));
    }
    Ok(block.forward(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub blocks: Vec<ResBlock<T>>,
    pub final_conv: Conv3d<T>,
}

#[derive(Debug)]
pub struct EncoderTape<T> {
    blocks: Vec<BlockTape<T>>,
    final_input: Tensor<T>,
}

impl<T: Real> Encoder<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h);
        }
        self.final_conv.forward(&h)
    }

    pub fn forward_taped(&self, x: Tensor<T>) -> (Tensor<T>, EncoderTape<T>) {
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &self.blocks {
            let (y, t) = b.forward_taped(h);
            tapes.push(t);
            h = y;
        }
        let y = self.final_conv.forward(&h);
        (y, EncoderTape { blocks: tapes, final_input: h })
    }

    /// Accumulates parameter gradients; the input gradient is not needed.
    pub fn backward(&mut self, tape: &EncoderTape<T>, gy: &Tensor<T>) {
        let mut g = self.final_conv.backward(&tape.final_input, gy, true).unwrap();
        let n = self.blocks.len();
        for (i, (b, t)) in self.blocks.iter_mut().zip(&tape.blocks).enumerate().rev() {
            match b.backward(t, &g, i > 0) {
                Some(dx) => g = dx,
                None => debug_assert!(i == 0 || n == 0),
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<_> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.final_conv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<_> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.final_conv.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub blocks: Vec<ResBlock<T>>,
    pub final_deconv: ConvTranspose3d<T>,
    pub head: Head,
}

#[derive(Debug)]
pub struct DecoderTape<T> {
    blocks: Vec<BlockTape<T>>,
    final_input: Tensor<T>,
    pre_head: Tensor<T>,
}

impl<T: Real> Decoder<T> {
    fn apply_head(&self, pre: &Tensor<T>) -> Tensor<T> {
        match self.head {
            Head::Sigmoid => sigmoid_forward(pre),
            Head::Identity => pre.clone(),
            Head::Relu => relu_forward(pre),
        }
    }

    pub fn forward(&self, latent: &Tensor<T>) -> Tensor<T> {
        let mut h = latent.clone();
        for b in &self.blocks {
            h = b.forward(&h);
        }
        self.apply_head(&self.final_deconv.forward(&h))
    }

    pub fn forward_taped(&self, latent: Tensor<T>) -> (Tensor<T>, DecoderTape<T>) {
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut h = latent;
        for b in &self.blocks {
            let (y, t) = b.forward_taped(h);
            tapes.push(t);
            h = y;
        }
        let pre_head = self.final_deconv.forward(&h);
        let y = self.apply_head(&pre_head);
        let tape = DecoderTape {
            blocks: tapes,
            final_input: h,
            pre_head,
        };
        (y, tape)
    }

    /// Accumulates parameter gradients and returns the latent gradient.
    /// `output` is the value returned by the taped forward pass.
    pub fn backward(&mut self, tape: &DecoderTape<T>, output: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        let g_pre = match self.head {
            Head::Sigmoid => sigmoid_backward(output, gy),
            Head::Identity => gy.clone(),
            Head::Relu => relu_backward(&tape.pre_head, gy),
        };
        let mut g = self.final_deconv.backward(&tape.final_input, &g_pre, true).unwrap();
        for (b, t) in self.blocks.iter_mut().zip(&tape.blocks).rev() {
            g = b.backward(t, &g, true).unwrap();
        }
        g
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<_> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.final_deconv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<_> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.final_deconv.params_mut());
        v
    }
}

/// Decoder outputs for a batch. `seg` is absent for the single-decoder
/// variant.
#[derive(Debug, Clone)]
pub struct Decoded<T> {
    pub seg: Option<Tensor<T>>,
    pub reg: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T = f32> {
    pub encoder: Encoder<T>,
    pub decoder_s: Option<Decoder<T>>,
    pub decoder_r: Decoder<T>,
    pub config: NetworkConfig,
    pub seed: u64,
}

fn build_encoder<T: Real>(config: &NetworkConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Encoder<T> {
    let blocks = config
        .encoder
        .iter()
        .enumerate()
        .map(|(i, b)| ResBlock::build(b, &format!("encoder.block{}", i + 1), config.leaky_slope, config.norm_eps, rng))
        .collect();
    let f = &config.encoder_final;
    Encoder {
        blocks,
        final_conv: Conv3d::new("encoder.final", f.in_channels, f.out_channels, f.geometry(), rng),
    }
}

fn build_decoder<T: Real>(config: &NetworkConfig, name: &str, head: Head, rng: &mut rand_chacha::ChaCha8Rng) -> Decoder<T> {
    let blocks = config
        .decoder
        .iter()
        .enumerate()
        .map(|(i, b)| ResBlock::build(b, &format!("{name}.block{}", i + 1), config.leaky_slope, config.norm_eps, rng))
        .collect();
    let f = &config.decoder_final;
    Decoder {
        blocks,
        final_deconv: ConvTranspose3d::new(&format!("{name}.final"), f.in_channels, f.out_channels, f.geometry(), rng),
        head,
    }
}

/// Builds the encoder and decoders with deterministic initialisation.
pub fn build_model<T: Real>(config: NetworkConfig, seed: u64) -> Result<ModelBundle<T>> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(seed, seed::INIT));
    let encoder = build_encoder(&config, &mut rng);
    let decoder_s = config
        .variant
        .has_segmentation()
        .then(|| build_decoder(&config, "decoder_s", Head::Sigmoid, &mut rng));
    let decoder_r = build_decoder(&config, "decoder_r", config.variant.regression_head(), &mut rng);
    Ok(ModelBundle {
        encoder,
        decoder_s,
        decoder_r,
        config,
        seed,
    })
}

impl<T: Real> ModelBundle<T> {
    pub fn latent_shape(&self) -> [usize; 4] {
        self.config.latent_shape().expect("validated at build")
    }

    pub fn input_tensor(&self, frames: &[&AdcFrame]) -> Result<Tensor<T>> {
        let shape = self.config.input_shape;
        let mut data = Vec::with_capacity(frames.len() * shape.iter().product::<usize>());
        for f in frames {
            if f.shape() != shape {
                return Err(Error::shape(shape, f.shape()));
            }
            data.extend(f.values().iter().map(|&v| T::of(f64::from(v))));
        }
        Ok(Tensor::from_vec([frames.len(), 1, shape[0], shape[1], shape[2]], data))
    }

    /// Encodes a batch `(n, 1, d, h, w)` of raw ADC counts.
    pub fn encode_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.config.input_shape;
        if x.shape()[1..] != [1, s[0], s[1], s[2]] {
            return Err(Error::shape([1, s[0], s[1], s[2]], &x.shape()[1..]));
        }
        let z = self.encoder.forward(x);
        if !z.all_finite() {
            return Err(Error::Divergence("encoder produced non-finite values".into()));
        }
        Ok(z)
    }

    /// Latent `(1, 8, d, h, w)` of one frame.
    pub fn encode(&self, frame: &AdcFrame) -> Result<Tensor<T>> {
        self.encode_batch(&self.input_tensor(&[frame])?)
    }

    pub fn decode(&self, latent: &Tensor<T>) -> Result<Decoded<T>> {
        let l = self.latent_shape();
        if latent.shape()[1..] != l {
            return Err(Error::shape(l, &latent.shape()[1..]));
        }
        let seg = self.decoder_s.as_ref().map(|d| d.forward(latent));
        let reg = self.decoder_r.forward(latent);
        if !reg.all_finite() || seg.as_ref().is_some_and(|s| !s.all_finite()) {
            return Err(Error::Divergence("decoder produced non-finite values".into()));
        }
        Ok(Decoded { seg, reg })
    }

    /// Encode, decode and combine one frame into real-valued output.
    pub fn reconstruct(&self, frame: &AdcFrame, h: Threshold) -> Result<RealFrame> {
        let decoded = self.decode(&self.encode(frame)?)?;
        combine_decoded(&self.config, &decoded, 0, h)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        if let Some(d) = &self.decoder_s {
            v.extend(d.params());
        }
        v.extend(self.decoder_r.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        if let Some(d) = &mut self.decoder_s {
            v.extend(d.params_mut());
        }
        v.extend(self.decoder_r.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Identifies config and parameter values.
    pub fn model_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.seed.to_le_bytes());
        for p in self.params() {
            h.update(p.name.as_bytes());
            for v in &p.value {
                h.update(v.to_f32().unwrap().to_le_bytes());
            }
        }
        first_u64(&h.finalize())
    }

    pub fn cast<U: Real>(&self) -> ModelBundle<U> {
        let mut out: ModelBundle<U> = build_model(self.config.clone(), self.seed).expect("config was valid");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.iter().map(|v| U::of(v.to_f64().unwrap())).collect();
        }
        out
    }

    /// Serializes config and named parameters (f32, little endian).
    pub fn export_weights(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&WeightsHeader {
            config: self.config.clone(),
            seed: self.seed,
        })
        .expect("header serializes");
        let params = self.params();
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.shape.len() as u8);
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let values: Vec<f32> = p.value.iter().map(|v| v.to_f32().unwrap()).collect();
            put_f32s(&mut out, &values);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.export_weights()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    config: NetworkConfig,
    seed: u64,
}

impl ModelBundle<f32> {
    pub fn import_weights(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.magic(WEIGHTS_MAGIC)?;
        let at = r.offset();
        let version = r.u16("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::parse(at, format!("unsupported weights version {version}")));
        }
        let len = r.u32("header length")? as usize;
        let at = r.offset();
        let header: WeightsHeader =
            serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::parse(at, format!("header: {e}")))?;
        let mut model: ModelBundle<f32> = build_model(header.config, header.seed)?;
        let at = r.offset();
        let count = r.u32("tensor count")? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(Error::parse(at, format!("expected {} tensors, found {count}", params.len())));
        }
        for p in params.iter_mut() {
            let at = r.offset();
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::parse(at, "tensor name is not utf-8"))?;
            if name != p.name {
                return Err(Error::parse(at, format!("expected tensor {}, found {name}", p.name)));
            }
            let ndim = r.u8("ndim")? as usize;
            let at = r.offset();
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dim")? as usize);
            }
            if shape != p.shape {
                return Err(Error::parse(at, format!("{name}: shape {shape:?}, expected {:?}", p.shape)));
            }
            p.value = r.f32_vec(p.value.len(), name)?;
        }
        if r.remaining() != 0 {
            return Err(Error::parse(r.offset(), "trailing bytes after last tensor"));
        }
        drop(params);
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::import_weights(&data)
    }
}

/// Combines sample `n` of the decoder outputs into a reconstruction
/// according to the variant's rule.
pub fn combine_decoded<T: Real>(config: &NetworkConfig, decoded: &Decoded<T>, n: usize, h: Threshold) -> Result<RealFrame> {
    let reg: Vec<f64> = decoded.reg.sample(n).iter().map(|v| v.to_f64().unwrap()).collect();
    let values = match (&decoded.seg, config.variant) {
        (Some(seg), Variant::Bcae) => {
            let seg: Vec<f64> = seg.sample(n).iter().map(|v| v.to_f64().unwrap()).collect();
            combine_output(&reg, &seg, h, &TransformParams::default())?
        }
        (Some(seg), Variant::BcaeWoT) => {
            let seg: Vec<f64> = seg.sample(n).iter().map(|v| v.to_f64().unwrap()).collect();
            combine_output_without_transform(&reg, &seg, h)?
        }
        _ => reg,
    };
    RealFrame::new(config.input_shape, values.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smallest input on which the published tables close.
    pub(crate) const TINY: Shape3 = [16, 9, 4];

    #[test]
    fn oracle_examples() {
        let l = LayerSpec::new(LayerKind::Conv, [4, 5, 3], [2, 2, 1], 1, 8);
        assert_eq!(conv_output_shape([192, 249, 16], &l).unwrap(), [97, 125, 16]);
        let d = LayerSpec::new(LayerKind::Deconv, [3, 3, 3], [2, 2, 1], 8, 8);
        assert_eq!(deconv_output_shape([13, 13, 16], &d).unwrap(), [25, 25, 16]);
        let s = LayerSpec::new(LayerKind::Conv, [3, 3, 3], [1, 1, 1], 1, 1);
        assert_eq!(conv_output_shape([16, 16, 16], &s).unwrap(), [16, 16, 16]);
        let big = LayerSpec::new(LayerKind::Conv, [9, 1, 1], [1, 1, 1], 1, 1);
        let mut unpadded = big;
        unpadded.padding = [0; 3];
        match conv_output_shape([3, 5, 5], &unpadded) {
            Err(Error::NonPositiveExtent { axis, .. }) => assert_eq!(axis, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn canonical_traces() {
        let c = NetworkConfig::canonical(Variant::Bcae);
        assert_eq!(c.latent_shape().unwrap(), [8, 13, 17, 16]);
        assert_eq!(
            c.encoder_trace().unwrap(),
            vec![[192, 249, 16], [97, 125, 16], [49, 63, 16], [25, 32, 16], [13, 17, 16]]
        );
        assert_eq!(
            c.decoder_trace().unwrap(),
            vec![[13, 17, 16], [25, 32, 16], [49, 63, 16], [97, 125, 16], [192, 249, 16]]
        );
        assert_eq!(NetworkConfig::desk(Variant::Bcae).latent_shape().unwrap(), [8, 4, 5, 16]);
    }

    #[test]
    fn non_closing_input_is_rejected() {
        let err = NetworkConfig::with_input([48, 64, 16], Variant::Bcae).validate().unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(err.to_string().contains("decoder.final"));
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let mut c = NetworkConfig::canonical(Variant::Bcae);
        c.encoder[2].first.in_channels = 7;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("encoder.block3"), "{err}");
    }

    #[test]
    fn deterministic_build_and_names() {
        let a: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::Bcae), 5).unwrap();
        let b: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::Bcae), 5).unwrap();
        let c: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::Bcae), 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model_hash(), b.model_hash());
        assert_ne!(a.model_hash(), c.model_hash());
        assert_eq!(a.parameter_count(), b.parameter_count());
        let names: Vec<_> = a.params().iter().map(|p| p.name.clone()).collect();
        assert!(names.contains(&"encoder.block1.main.conv1.weight".to_string()));
        assert!(names.contains(&"encoder.block4.side.norm.bias".to_string()));
        assert!(names.contains(&"decoder_s.block3.main.conv2.weight".to_string()));
        assert!(names.contains(&"decoder_r.final.bias".to_string()));
        let cae: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::Cae), 5).unwrap();
        assert!(cae.decoder_s.is_none());
        assert!(cae.parameter_count() < a.parameter_count());
    }

    #[test]
    fn zero_parameters_give_zero_block_output() {
        let mut m: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::Bcae), 1).unwrap();
        for p in m.encoder.blocks[1].params_mut() {
            p.value.fill(0.0);
        }
        let x = Tensor::from_vec([1, 8, 8, 5, 4], (0..1280).map(|i| i as f32 * 0.01).collect());
        let y = resblock_forward(&m.encoder.blocks[1], &x).unwrap();
        assert_eq!(y.shape(), [1, 16, 4, 3, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(resblock_forward(&m.encoder.blocks[1], &Tensor::zeros([1, 3, 8, 5, 4])).is_err());
    }

    #[test]
    fn encode_decode_ranges() {
        for variant in [Variant::Bcae, Variant::BcaeWoT, Variant::Cae] {
            let m: ModelBundle = build_model(NetworkConfig::with_input(TINY, variant), 2).unwrap();
            let frame = crate::frames::AdcFrame::new(TINY, (0..576).map(|i| if i % 7 == 0 { 300 } else { 0 }).collect()).unwrap();
            let z = m.encode(&frame).unwrap();
            assert_eq!(z, m.encode(&frame).unwrap());
            assert_eq!(z.shape(), [1, 8, 2, 2, 4]);
            let d = m.decode(&z).unwrap();
            assert_eq!(d.reg.shape(), [1, 1, 16, 9, 4]);
            if let Some(seg) = &d.seg {
                assert!(seg.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            if variant != Variant::Bcae {
                assert!(d.reg.data().iter().all(|&v| v >= 0.0));
            }
            assert!(m.encode(&AdcFrame::zeros(TINY)).unwrap().all_finite());
        }
    }

    #[test]
    fn weights_round_trip() {
        let m: ModelBundle = build_model(NetworkConfig::with_input(TINY, Variant::BcaeWoT), 3).unwrap();
        let bytes = m.export_weights();
        let back = ModelBundle::import_weights(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            ModelBundle::import_weights(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
    }

    /// Central differences of a scalar loss through the whole model, in f64.
    #[test]
    fn model_gradients_match_finite_differences() {
        let config = NetworkConfig::with_input([16, 25, 3], Variant::Bcae);
        let mut m: ModelBundle<f64> = build_model(config, 4).unwrap();
        let mut rng = seed::rng(9);
        use rand::Rng;
        let x = Tensor::from_vec([2, 1, 16, 25, 3], (0..2400).map(|_| rng.random_range(0.0..3.0)).collect());
        let rs: Vec<f64> = (0..2400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rr: Vec<f64> = (0..2400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |m: &ModelBundle<f64>| {
            let d = m.decode(&m.encoder.forward(&x)).unwrap();
            let s: f64 = d.seg.unwrap().data().iter().zip(&rs).map(|(a, b)| a * b).sum();
            let r: f64 = d.reg.data().iter().zip(&rr).map(|(a, b)| a * b).sum();
            s + r
        };
        let (z, et) = m.encoder.forward_taped(x.clone());
        let ds = m.decoder_s.as_mut().unwrap();
        let (ys, st) = ds.forward_taped(z.clone());
        let gz_s = ds.backward(&st, &ys, &Tensor::from_vec(ys.shape(), rs.clone()));
        let (yr, rt) = m.decoder_r.forward_taped(z);
        let mut gz = m.decoder_r.backward(&rt, &yr, &Tensor::from_vec(yr.shape(), rr.clone()));
        gz.add_assign(&gz_s);
        m.encoder.backward(&et, &gz);

        let n_params = m.params().len();
        let step = 1e-6;
        for pi in (0..n_params).step_by(3) {
            let len = m.params()[pi].value.len();
            for i in [0, len / 2, len - 1] {
                let analytic = m.params()[pi].grad[i];
                let orig = m.params()[pi].value[i];
                m.params_mut()[pi].value[i] = orig + step;
                let up = loss(&m);
                m.params_mut()[pi].value[i] = orig - step;
                let dn = loss(&m);
                m.params_mut()[pi].value[i] = orig;
                let fd = (up - dn) / (2.0 * step);
                let name = &m.params()[pi].name;
                assert!(analytic.is_finite());
                assert!((fd - analytic).abs() <= 1e-5 * fd.abs().max(1.0), "{name}[{i}]: fd {fd} vs {analytic}");
            }
        }
    }
}
