//! Layers with explicit forward and backward passes.
//!
//! Layers do not cache activations. `backward` takes the same input that
//! was given to `forward`, recomputes whatever it needs, accumulates
//! parameter gradients and returns the input gradient.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{gemm, Mat, Real, Tensor};

/// Upper bound on im2col buffer elements; larger problems are chunked along
/// the first spatial axis of the coarse grid.
const MAX_COL_ELEMENTS: usize = 1 << 22;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self::new(name, shape, value)
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![T::of(v); n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Kernel, stride and symmetric padding of a (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Geometry {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Strided convolution output extent, `None` if not positive.
    pub fn conv_out(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let span = (input[i] + 2 * self.padding[i]).checked_sub(self.kernel[i])?;
            out[i] = span / self.stride[i] + 1;
        }
        Some(out)
    }

    /// Transposed convolution output extent (output padding 0).
    pub fn deconv_out(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            if input[i] == 0 {
                return None;
            }
            let n = ((input[i] - 1) * self.stride[i] + self.kernel[i]).checked_sub(2 * self.padding[i])?;
            if n == 0 {
                return None;
            }
            out[i] = n;
        }
        Some(out)
    }
}

/// The fine ("big") and coarse ("small") grids linked by a geometry.
/// For a convolution the input is fine; for a transposed convolution the
/// output is.
#[derive(Debug, Clone, Copy)]
struct Grids {
    big: [usize; 3],
    small: [usize; 3],
    g: Geometry,
}

impl Grids {
    fn small_plane(&self) -> usize {
        self.small[1] * self.small[2]
    }

    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn chunks(&self, channels: usize) -> Vec<Range<usize>> {
        let row = channels * self.g.kernel_volume() * self.small_plane();
        let per = (MAX_COL_ELEMENTS / row.max(1)).max(1);
        (0..self.small[0])
            .step_by(per)
            .map(|s| s..(s + per).min(self.small[0]))
            .collect()
    }
}

/// Unfold patches of `src` (`channels x big`) for coarse positions whose
/// first index lies in `rows` into `cols` (`channels*K x len(rows)*plane`).
fn im2col<T: Real>(src: &[T], channels: usize, gr: &Grids, rows: Range<usize>, cols: &mut [T]) {
    let [bd, bh, bw] = gr.big;
    let [_, sh, sw] = gr.small;
    let [kd_n, kh_n, kw_n] = gr.g.kernel;
    let [s0, s1, s2] = gr.g.stride;
    let [p0, p1, p2] = gr.g.padding.map(|p| p as isize);
    let plane = sh * sw;
    let ncols = rows.len() * plane;
    let zero = T::zero();
    for c in 0..channels {
        let src_c = &src[c * bd * bh * bw..(c + 1) * bd * bh * bw];
        for kd in 0..kd_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let row = ((c * kd_n + kd) * kh_n + kh) * kw_n + kw;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for (i, od) in rows.clone().enumerate() {
                        let drow = &mut dst[i * plane..(i + 1) * plane];
                        let id = (od * s0 + kd) as isize - p0;
                        if id < 0 || id >= bd as isize {
                            drow.fill(zero);
                            continue;
                        }
                        for oh in 0..sh {
                            let seg = &mut drow[oh * sw..(oh + 1) * sw];
                            let ih = (oh * s1 + kh) as isize - p1;
                            if ih < 0 || ih >= bh as isize {
                                seg.fill(zero);
                                continue;
                            }
                            let base = (id as usize * bh + ih as usize) * bw;
                            for (ow, out) in seg.iter_mut().enumerate() {
                                let iw = (ow * s2 + kw) as isize - p2;
                                *out = if iw >= 0 && iw < bw as isize {
                                    src_c[base + iw as usize]
                                } else {
                                    zero
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back onto `dst`.
fn col2im<T: Real>(cols: &[T], channels: usize, gr: &Grids, rows: Range<usize>, dst: &mut [T]) {
    let [bd, bh, bw] = gr.big;
    let [_, sh, sw] = gr.small;
    let [kd_n, kh_n, kw_n] = gr.g.kernel;
    let [s0, s1, s2] = gr.g.stride;
    let [p0, p1, p2] = gr.g.padding.map(|p| p as isize);
    let plane = sh * sw;
    let ncols = rows.len() * plane;
    for c in 0..channels {
        let dst_c = &mut dst[c * bd * bh * bw..(c + 1) * bd * bh * bw];
        for kd in 0..kd_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let row = ((c * kd_n + kd) * kh_n + kh) * kw_n + kw;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for (i, od) in rows.clone().enumerate() {
                        let id = (od * s0 + kd) as isize - p0;
                        if id < 0 || id >= bd as isize {
                            continue;
                        }
                        for oh in 0..sh {
                            let ih = (oh * s1 + kh) as isize - p1;
                            if ih < 0 || ih >= bh as isize {
                                continue;
                            }
                            let base = (id as usize * bh + ih as usize) * bw;
                            let seg = &src[i * plane + oh * sw..i * plane + (oh + 1) * sw];
                            for (ow, &v) in seg.iter().enumerate() {
                                let iw = (ow * s2 + kw) as isize - p2;
                                if iw >= 0 && iw < bw as isize {
                                    dst_c[base + iw as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], gy: &[T], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        let s: f64 = gy[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| v.to_f64().unwrap())
            .sum();
        *g += T::of(s);
    }
}

/// 3D convolution. Weight layout `[out, in, kd, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: Geometry,
}

impl<T: Real> Conv3d<T> {
    /// Uniform initialisation in `±1/sqrt(fan_in)`, `fan_in = in * K`.
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, geometry: Geometry, rng: &mut ChaCha8Rng) -> Self {
        let k = geometry.kernel;
        let bound = 1.0 / ((in_channels * geometry.kernel_volume()) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{prefix}.weight"), vec![out_channels, in_channels, k[0], k[1], k[2]], bound, rng),
            bias: Param::uniform(format!("{prefix}.bias"), vec![out_channels], bound, rng),
            in_channels,
            out_channels,
            geometry,
        }
    }

    fn grids(&self, input: [usize; 3]) -> Grids {
        let small = self
            .geometry
            .conv_out(input)
            .unwrap_or_else(|| panic!("{}: input {input:?} too small", self.weight.name));
        Grids { big: input, small, g: self.geometry }
    }

    pub fn output_shape(&self, x: [usize; 5]) -> [usize; 5] {
        let s = self.grids([x[2], x[3], x[4]]).small;
        [x[0], self.out_channels, s[0], s[1], s[2]]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_channels, "{}", self.weight.name);
        let gr = self.grids(x.spatial());
        let out_shape = self.output_shape(x.shape());
        let mut out = Tensor::zeros(out_shape);
        let ck = self.in_channels * self.geometry.kernel_volume();
        let (p_out, plane) = (gr.small_len(), gr.small_plane());
        let w = Mat::new(&self.weight.value, self.out_channels, ck, ck);
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let ys = out.sample_mut(n);
            for rows in gr.chunks(self.in_channels) {
                let ncols = rows.len() * plane;
                cols.resize(ck * ncols, T::zero());
                im2col(xs, self.in_channels, &gr, rows.clone(), &mut cols);
                let off = rows.start * plane;
                gemm(T::one(), w, Mat::new(&cols, ck, ncols, ncols), T::zero(), &mut ys[off..], p_out);
            }
            add_channel_bias(ys, &self.bias.value, p_out);
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let gr = self.grids(x.spatial());
        assert_eq!(gy.shape(), self.output_shape(x.shape()));
        let ck = self.in_channels * self.geometry.kernel_volume();
        let (p_out, plane) = (gr.small_len(), gr.small_plane());
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let gs = gy.sample(n);
            accumulate_bias_grad(&mut self.bias.grad, gs, p_out);
            for rows in gr.chunks(self.in_channels) {
                let ncols = rows.len() * plane;
                let off = rows.start * plane;
                let g_chunk = Mat::new(&gs[off..], self.out_channels, ncols, p_out);
                cols.resize(ck * ncols, T::zero());
                im2col(xs, self.in_channels, &gr, rows.clone(), &mut cols);
                gemm(T::one(), g_chunk, Mat::new(&cols, ck, ncols, ncols).t(), T::one(), &mut self.weight.grad, ck);
                if let Some(dx) = dx.as_mut() {
                    dcols.resize(ck * ncols, T::zero());
                    let w = Mat::new(&self.weight.value, self.out_channels, ck, ck);
                    gemm(T::one(), w.t(), g_chunk, T::zero(), &mut dcols, ncols);
                    col2im(&dcols, self.in_channels, &gr, rows, dx.sample_mut(n));
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// 3D transposed convolution with zero output padding. Weight layout
/// `[in, out, kd, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose3d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: Geometry,
}

impl<T: Real> ConvTranspose3d<T> {
    /// Uniform initialisation in `±1/sqrt(fan_in)` with `fan_in = out * K`
    /// (the weight's second dimension times the kernel volume).
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, geometry: Geometry, rng: &mut ChaCha8Rng) -> Self {
        let k = geometry.kernel;
        let bound = 1.0 / ((out_channels * geometry.kernel_volume()) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{prefix}.weight"), vec![in_channels, out_channels, k[0], k[1], k[2]], bound, rng),
            bias: Param::uniform(format!("{prefix}.bias"), vec![out_channels], bound, rng),
            in_channels,
            out_channels,
            geometry,
        }
    }

    fn grids(&self, input: [usize; 3]) -> Grids {
        let big = self
            .geometry
            .deconv_out(input)
            .unwrap_or_else(|| panic!("{}: input {input:?} too small", self.weight.name));
        Grids { big, small: input, g: self.geometry }
    }

    pub fn output_shape(&self, x: [usize; 5]) -> [usize; 5] {
        let b = self.grids([x[2], x[3], x[4]]).big;
        [x[0], self.out_channels, b[0], b[1], b[2]]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_channels, "{}", self.weight.name);
        let gr = self.grids(x.spatial());
        let mut out = Tensor::zeros(self.output_shape(x.shape()));
        let ck = self.out_channels * self.geometry.kernel_volume();
        let (p_in, plane) = (gr.small_len(), gr.small_plane());
        let w = Mat::new(&self.weight.value, self.in_channels, ck, ck);
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let ys = out.sample_mut(n);
            for rows in gr.chunks(self.out_channels) {
                let ncols = rows.len() * plane;
                let off = rows.start * plane;
                cols.resize(ck * ncols, T::zero());
                gemm(T::one(), w.t(), Mat::new(&xs[off..], self.in_channels, ncols, p_in), T::zero(), &mut cols, ncols);
                col2im(&cols, self.out_channels, &gr, rows, ys);
            }
            add_channel_bias(ys, &self.bias.value, gr.big_len());
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let gr = self.grids(x.spatial());
        assert_eq!(gy.shape(), self.output_shape(x.shape()));
        let ck = self.out_channels * self.geometry.kernel_volume();
        let (p_in, plane) = (gr.small_len(), gr.small_plane());
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let gs = gy.sample(n);
            accumulate_bias_grad(&mut self.bias.grad, gs, gr.big_len());
            for rows in gr.chunks(self.out_channels) {
                let ncols = rows.len() * plane;
                let off = rows.start * plane;
                cols.resize(ck * ncols, T::zero());
                im2col(gs, self.out_channels, &gr, rows.clone(), &mut cols);
                let cm = Mat::new(&cols, ck, ncols, ncols);
                let x_chunk = Mat::new(&xs[off..], self.in_channels, ncols, p_in);
                gemm(T::one(), x_chunk, cm.t(), T::one(), &mut self.weight.grad, ck);
                if let Some(dx) = dx.as_mut() {
                    let w = Mat::new(&self.weight.value, self.in_channels, ck, ck);
                    gemm(T::one(), w, cm, T::zero(), &mut dx.sample_mut(n)[off..], p_in);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Per-sample, per-channel normalisation over the spatial axes, with a
/// learned scale and shift per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm3d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub eps: f64,
}

impl<T: Real> InstanceNorm3d<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            weight: Param::filled(format!("{prefix}.weight"), vec![channels], 1.0),
            bias: Param::filled(format!("{prefix}.bias"), vec![channels], 0.0),
            eps: Self::DEFAULT_EPS,
        }
    }

    fn stats(&self, x: &[T]) -> (f64, f64) {
        let s = x.len() as f64;
        let mean = x.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / s;
        let var = x
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>()
            / s;
        (mean, 1.0 / (var + self.eps).sqrt())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let plane = x.spatial_len();
        let mut out = x.clone();
        for n in 0..x.batch() {
            let ys = out.sample_mut(n);
            for c in 0..x.channels() {
                let seg = &mut ys[c * plane..(c + 1) * plane];
                let (mean, inv_std) = self.stats(seg);
                let g = self.weight.value[c].to_f64().unwrap();
                let b = self.bias.value[c].to_f64().unwrap();
                for v in seg.iter_mut() {
                    *v = T::of(g * (v.to_f64().unwrap() - mean) * inv_std + b);
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        let plane = x.spatial_len();
        let s = plane as f64;
        let mut dx = Tensor::zeros(x.shape());
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let gs = gy.sample(n);
            let ds = dx.sample_mut(n);
            for c in 0..x.channels() {
                let r = c * plane..(c + 1) * plane;
                let (mean, inv_std) = self.stats(&xs[r.clone()]);
                let g = self.weight.value[c].to_f64().unwrap();
                let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
                for (xv, gv) in xs[r.clone()].iter().zip(&gs[r.clone()]) {
                    let xhat = (xv.to_f64().unwrap() - mean) * inv_std;
                    let dy = gv.to_f64().unwrap();
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
                self.weight.grad[c] += T::of(sum_dy_xhat);
                self.bias.grad[c] += T::of(sum_dy);
                // dx = g * inv_std / S * (S*dy - sum(dy) - xhat * sum(dy*xhat))
                for ((xv, gv), d) in xs[r.clone()].iter().zip(&gs[r.clone()]).zip(&mut ds[r]) {
                    let xhat = (xv.to_f64().unwrap() - mean) * inv_std;
                    let dy = gv.to_f64().unwrap();
                    *d = T::of(g * inv_std / s * (s * dy - sum_dy - xhat * sum_dy_xhat));
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

pub const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub fn leaky_activation<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

pub fn leaky_forward<T: Real>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    x.map(|v| leaky_activation(v, s))
}

pub fn leaky_backward<T: Real>(x: &Tensor<T>, gy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &g)| if xv >= T::zero() { g } else { s * g })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Logistic function, clamped so the result lies strictly inside (0, 1)
/// at the type's precision.
pub fn sigmoid_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::of(2.0);
    x.map(|v| {
        let v = v.to_f64().unwrap();
        let s = crate::transform::sigmoid(v);
        T::of(s).max(lo).min(hi)
    })
}

/// Backward through the logistic given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&yv, &g)| g * yv * (T::one() - yv))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
