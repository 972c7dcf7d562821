//! `TPCF` frame files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TPCF"
//! 4       2     version (u16, = 1)
//! 6       1     dtype (0 = u16, 1 = f32)
//! 7       1     ndim (= 3)
//! 8       12    dims, 3 x u32
//! 20      ...   row-major payload
//! ```
//! All integers are little-endian.

use std::path::Path;

use super::{AdcFrame, RealFrame, Shape3, ADC_MAX};
use crate::error::{Error, Result};
use crate::wire::{element_count, Reader};

pub const FRAME_MAGIC: &[u8; 4] = b"TPCF";
pub const FRAME_VERSION: u16 = 1;
pub const DTYPE_U16: u8 = 0;
/// Real-valued reconstructions, used by the baseline plugin protocol.
pub const DTYPE_F32: u8 = 1;

const HEADER_LEN: usize = 20;

fn header(dtype: u8, shape: Shape3) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.push(dtype);
    out.push(3);
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn encode_frame(frame: &AdcFrame) -> Vec<u8> {
    let mut out = header(DTYPE_U16, frame.shape());
    out.reserve(frame.len() * 2);
    for v in frame.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_real_frame(frame: &RealFrame) -> Vec<u8> {
    let mut out = header(DTYPE_F32, frame.shape());
    crate::wire::put_f32s(&mut out, frame.values());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyFrame {
    Adc(AdcFrame),
    Real(RealFrame),
}

impl AnyFrame {
    pub fn to_real(&self) -> RealFrame {
        match self {
            AnyFrame::Adc(f) => RealFrame::from(f),
            AnyFrame::Real(f) => f.clone(),
        }
    }
}

pub fn decode_frame_any(data: &[u8]) -> Result<AnyFrame> {
    let mut r = Reader::new(data);
    r.magic(FRAME_MAGIC)?;
    let version = r.u16("version")?;
    if version != FRAME_VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_U16 && dtype != DTYPE_F32 {
        return Err(Error::parse(6, format!("unknown dtype code {dtype}")));
    }
    let ndim = r.u8("ndim")?;
    if ndim != 3 {
        return Err(Error::parse(7, format!("ndim must be 3, got {ndim}")));
    }
    let mut shape = [0usize; 3];
    for d in shape.iter_mut() {
        *d = r.u32("dims")? as usize;
    }
    let n = element_count(&shape, 8)?;
    match dtype {
        DTYPE_U16 => {
            let start = r.offset();
            let bytes = r.take(n * 2, "u16 payload")?;
            let values: Vec<u16> = bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            if let Some(i) = values.iter().position(|&v| v > ADC_MAX) {
                return Err(Error::parse(
                    start + 2 * i as u64,
                    format!("ADC value {} exceeds {ADC_MAX}", values[i]),
                ));
            }
            check_trailing(&r)?;
            Ok(AnyFrame::Adc(AdcFrame::new(shape, values)?))
        }
        _ => {
            let values = r.f32_vec(n, "f32 payload")?;
            check_trailing(&r)?;
            Ok(AnyFrame::Real(RealFrame::new(shape, values)?))
        }
    }
}

fn check_trailing(r: &Reader<'_>) -> Result<()> {
    if r.remaining() != 0 {
        return Err(Error::parse(
            r.offset(),
            format!("{} trailing bytes after payload", r.remaining()),
        ));
    }
    Ok(())
}

pub fn decode_frame(data: &[u8]) -> Result<AdcFrame> {
    match decode_frame_any(data)? {
        AnyFrame::Adc(f) => Ok(f),
        AnyFrame::Real(_) => Err(Error::parse(6, "expected u16 payload, found f32")),
    }
}

pub fn write_frame(frame: &AdcFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_frame(frame)).map_err(|e| Error::io(path, e))
}

pub fn write_real_frame(frame: &RealFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_real_frame(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<AdcFrame> {
    let path = path.as_ref();
    decode_frame(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_frame_any(path: impl AsRef<Path>) -> Result<AnyFrame> {
    let path = path.as_ref();
    decode_frame_any(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
