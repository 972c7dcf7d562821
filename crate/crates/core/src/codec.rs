//! Half precision code blocks and the `BCAE` container.
//!
//! Layout (little endian): magic `BCAE`, version `u16`, model hash `u64`,
//! dtype `u8` (1 = f16), source dims `3 x u32`, code dims `4 x u32`,
//! default threshold `f32`, then the row-major f16 payload.

use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::frames::{AdcFrame, RealFrame, Shape3};
use crate::network::{combine_decoded, Decoded, ModelBundle};
use crate::tensor::{Real, Tensor};
use crate::transform::Threshold;
use crate::wire::{element_count, Reader};

pub const CONTAINER_MAGIC: &[u8; 4] = b"BCAE";
pub const CONTAINER_VERSION: u16 = 1;
pub const DTYPE_F16: u8 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 1 + 12 + 16 + 4;
pub const HALF_MAX: f32 = 65504.0;

/// A latent stored at half precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    shape: [usize; 4],
    values: Vec<f16>,
}

impl CodeBlock {
    pub fn new(shape: [usize; 4], values: Vec<f16>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(shape, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("code value {i} is not finite")));
        }
        Ok(Self { shape, values })
    }

    /// Downcasts with saturation at the half precision range. Returns the
    /// block and the number of saturated elements.
    pub fn from_latent(shape: [usize; 4], latent: &[f32]) -> Result<(Self, usize)> {
        let mut saturated = 0;
        let mut values = Vec::with_capacity(latent.len());
        for (i, &v) in latent.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Divergence(format!("latent value {i} is not finite")));
            }
            if v.abs() > HALF_MAX {
                saturated += 1;
            }
            values.push(f16::from_f32(v.clamp(-HALF_MAX, HALF_MAX)));
        }
        Ok((Self::new(shape, values)?, saturated))
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn values(&self) -> &[f16] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|v| v.to_f32()).collect()
    }

    pub fn payload_bytes(&self) -> usize {
        2 * self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedContainer {
    pub model_hash: u64,
    pub source_shape: Shape3,
    pub default_threshold: Threshold,
    pub code: CodeBlock,
}

impl CompressedContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.code.payload_bytes());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.push(DTYPE_F16);
        for d in self.source_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for d in self.code.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.default_threshold.value() as f32).to_le_bytes());
        for v in &self.code.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.magic(CONTAINER_MAGIC)?;
        let at = r.offset();
        let version = r.u16("version")?;
        if version != CONTAINER_VERSION {
            return Err(Error::parse(at, format!("unsupported container version {version}")));
        }
        let model_hash = r.u64("model hash")?;
        let at = r.offset();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F16 {
            return Err(Error::parse(at, format!("unsupported code dtype {dtype}")));
        }
        let at = r.offset();
        let mut source_shape = [0; 3];
        for d in &mut source_shape {
            *d = r.u32("source dims")? as usize;
        }
        element_count(&source_shape, at)?;
        let at = r.offset();
        let mut code_shape = [0; 4];
        for d in &mut code_shape {
            *d = r.u32("code dims")? as usize;
        }
        let n = element_count(&code_shape, at)?;
        let at = r.offset();
        let h = r.f32("threshold")?;
        let default_threshold =
            Threshold::new(f64::from(h)).map_err(|_| Error::parse(at, format!("threshold {h} outside [0, 1]")))?;
        let at = r.offset();
        let payload = r.take(n.checked_mul(2).ok_or_else(|| Error::parse(at, "payload size overflows"))?, "payload")?;
        if r.remaining() != 0 {
            return Err(Error::parse(r.offset(), "trailing bytes after payload"));
        }
        let values = payload
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]))
            .collect();
        let code = CodeBlock::new(code_shape, values).map_err(|e| Error::parse(at, e.to_string()))?;
        Ok(Self {
            model_hash,
            source_shape,
            default_threshold,
            code,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }

    pub fn size_bytes(&self) -> usize {
        HEADER_LEN + self.code.payload_bytes()
    }
}

fn containers_from_latents<T: Real>(bundle: &ModelBundle<T>, z: &Tensor<T>) -> Result<Vec<CompressedContainer>> {
    let shape = bundle.latent_shape();
    let hash = bundle.model_hash();
    (0..z.batch())
        .map(|n| {
            let latent: Vec<f32> = z.sample(n).iter().map(|v| v.to_f32().unwrap()).collect();
            let (code, saturated) = CodeBlock::from_latent(shape, &latent)?;
            if saturated > 0 {
                tracing::warn!(saturated, "latent values exceeded the half precision range and were clamped");
            }
            Ok(CompressedContainer {
                model_hash: hash,
                source_shape: bundle.config.input_shape,
                default_threshold: Threshold::TRAINING,
                code,
            })
        })
        .collect()
}

pub fn compress<T: Real>(bundle: &ModelBundle<T>, frame: &AdcFrame) -> Result<CompressedContainer> {
    let z = bundle.encode(frame)?;
    Ok(containers_from_latents(bundle, &z)?.remove(0))
}

/// Compresses several frames in one encoder pass.
pub fn compress_batch<T: Real>(bundle: &ModelBundle<T>, frames: &[&AdcFrame]) -> Result<Vec<CompressedContainer>> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let z = bundle.encode_batch(&bundle.input_tensor(frames)?)?;
    containers_from_latents(bundle, &z)
}

fn check_container<T: Real>(bundle: &ModelBundle<T>, model: u64, c: &CompressedContainer) -> Result<()> {
    if c.model_hash != model {
        return Err(Error::ModelHash {
            container: c.model_hash,
            model,
        });
    }
    if c.code.shape != bundle.latent_shape() || c.source_shape != bundle.config.input_shape {
        return Err(Error::shape(
            (bundle.config.input_shape, bundle.latent_shape()),
            (c.source_shape, c.code.shape),
        ));
    }
    Ok(())
}

/// Runs the decoders on the upcast code blocks without combining.
pub fn decode_containers<T: Real>(bundle: &ModelBundle<T>, containers: &[&CompressedContainer]) -> Result<Decoded<T>> {
    let l = bundle.latent_shape();
    let mut data = Vec::with_capacity(containers.len() * l.iter().product::<usize>());
    let model = bundle.model_hash();
    for c in containers {
        check_container(bundle, model, c)?;
        data.extend(c.code.values.iter().map(|v| T::of(f64::from(v.to_f32()))));
    }
    let z = Tensor::from_vec([containers.len(), l[0], l[1], l[2], l[3]], data);
    bundle.decode(&z)
}

/// Decodes containers into unrounded reals.
pub fn decompress_real_batch<T: Real>(
    bundle: &ModelBundle<T>,
    containers: &[&CompressedContainer],
    h: Threshold,
) -> Result<Vec<RealFrame>> {
    if containers.is_empty() {
        return Ok(Vec::new());
    }
    let decoded = decode_containers(bundle, containers)?;
    (0..containers.len())
        .map(|n| combine_decoded(&bundle.config, &decoded, n, h))
        .collect()
}

pub fn decompress_real<T: Real>(bundle: &ModelBundle<T>, container: &CompressedContainer, h: Threshold) -> Result<RealFrame> {
    Ok(decompress_real_batch(bundle, &[container], h)?.remove(0))
}

/// Decodes to ADC counts, rounded to nearest and clamped to the 10-bit
/// range.
pub fn decompress<T: Real>(bundle: &ModelBundle<T>, container: &CompressedContainer, h: Threshold) -> Result<AdcFrame> {
    Ok(decompress_real(bundle, container, h)?.to_adc())
}

/// Size ratio of input to code from element counts and widths only.
pub fn compression_ratio(input_shape: &[usize], input_bits: u32, code_shape: &[usize], code_bits: u32) -> f64 {
    let input: f64 = input_shape.iter().map(|&d| d as f64).product::<f64>() * f64::from(input_bits);
    let code: f64 = code_shape.iter().map(|&d| d as f64).product::<f64>() * f64::from(code_bits);
    input / code
}
