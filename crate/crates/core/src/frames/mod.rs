//! Voxel frame data model.
//!
//! Axes are ordered `(azimuth, horizontal, radial)` and stored row-major, so
//! the radial index varies fastest. ADC values are 10-bit counts held in
//! `u16`.

mod io;
mod synthetic;

pub use io::{decode_frame, decode_frame_any, encode_frame, encode_real_frame, read_frame,
    read_frame_any, write_frame, write_real_frame, AnyFrame, DTYPE_F32, DTYPE_U16, FRAME_MAGIC,
    FRAME_VERSION};
pub use synthetic::{generate_synthetic_frame, generate_synthetic_frames, SyntheticConfig};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Shape3 = [usize; 3];

pub const ADC_MAX: u16 = 1023;
pub const ZERO_SUPPRESSION_THRESHOLD: u16 = 64;

/// Outer layer group readout volume.
pub const FULL_SHAPE: Shape3 = [2304, 498, 16];
/// One compression unit: 1/12 of the azimuth, half of the horizontal axis.
pub const SECTION_SHAPE: Shape3 = [192, 249, 16];
/// Reduced section used for CPU-scale training. Chosen so that the encoder
/// and decoder shape arithmetic closes exactly.
pub const DESK_SHAPE: Shape3 = [48, 57, 16];

pub const AZIMUTHAL_SECTIONS: usize = 12;
pub const HORIZONTAL_HALVES: usize = 2;
pub const SECTIONS_PER_FRAME: usize = AZIMUTHAL_SECTIONS * HORIZONTAL_HALVES;

pub fn voxel_count(shape: Shape3) -> usize {
    shape.iter().product()
}

/// A 3D grid of ADC counts.
#[derive(Clone, PartialEq, Eq)]
pub struct AdcFrame {
    shape: Shape3,
    values: Vec<u16>,
}

impl std::fmt::Debug for AdcFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdcFrame")
            .field("shape", &self.shape)
            .field("nonzero_fraction", &self.nonzero_fraction())
            .finish()
    }
}

impl AdcFrame {
    pub fn new(shape: Shape3, values: Vec<u16>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::NonPositiveExtent {
                what: "frame shape".into(),
                axis,
                value: 0,
            });
        }
        if values.len() != voxel_count(shape) {
            return Err(Error::shape(
                format!("{} values for shape {shape:?}", voxel_count(shape)),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|&v| v > ADC_MAX) {
            return Err(Error::Config(format!(
                "ADC value {} at flat index {i} exceeds {ADC_MAX}",
                values[i]
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape3) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self {
            shape,
            values: vec![0; voxel_count(shape)],
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u16> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, a: usize, h: usize, r: usize) -> usize {
        (a * self.shape[1] + h) * self.shape[2] + r
    }

    pub fn get(&self, a: usize, h: usize, r: usize) -> u16 {
        self.values[self.index(a, h, r)]
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0).count()
    }

    /// Fraction of voxels with a positive count; exactly `count / M`.
    pub fn nonzero_fraction(&self) -> f64 {
        self.nonzero_count() as f64 / self.values.len() as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| f32::from(v)).collect()
    }

    /// First 8 bytes of SHA-256 over shape and values.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        for d in self.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        u64::from_le_bytes(hasher.finalize()[..8].try_into().unwrap())
    }
}

/// A real-valued reconstruction (baseline codec output, unrounded decoder
/// output). Values may be negative or exceed the ADC range.
#[derive(Clone, Debug, PartialEq)]
pub struct RealFrame {
    shape: Shape3,
    values: Vec<f32>,
}

impl RealFrame {
    pub fn new(shape: Shape3, values: Vec<f32>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::NonPositiveExtent {
                what: "frame shape".into(),
                axis,
                value: 0,
            });
        }
        if values.len() != voxel_count(shape) {
            return Err(Error::shape(voxel_count(shape), values.len()));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    /// Round to nearest and clamp into `[0, ADC_MAX]`.
    pub fn to_adc(&self) -> AdcFrame {
        let values = self
            .values
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    0
                } else {
                    v.round().clamp(0.0, f32::from(ADC_MAX)) as u16
                }
            })
            .collect();
        AdcFrame {
            shape: self.shape,
            values,
        }
    }
}

impl From<&AdcFrame> for RealFrame {
    fn from(frame: &AdcFrame) -> Self {
        RealFrame {
            shape: frame.shape,
            values: frame.to_f32(),
        }
    }
}

/// The full outer-layer volume, shape [`FULL_SHAPE`].
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FullFrame(AdcFrame);

impl FullFrame {
    pub fn new(frame: AdcFrame) -> Result<Self> {
        if frame.shape != FULL_SHAPE {
            return Err(Error::shape(
                format!("full frame {FULL_SHAPE:?}"),
                frame.shape,
            ));
        }
        Ok(Self(frame))
    }

    pub fn zeros() -> Self {
        Self(AdcFrame::zeros(FULL_SHAPE))
    }

    pub fn frame(&self) -> &AdcFrame {
        &self.0
    }

    pub fn into_frame(self) -> AdcFrame {
        self.0
    }
}

/// Split a full frame into 24 sections: 12 azimuthal blocks of 192, each
/// halved horizontally into 249-wide blocks. Output order is azimuth-major,
/// then half, i.e. section `2 * a + h`.
pub fn section_frame(full: &FullFrame) -> Vec<AdcFrame> {
    let src = &full.0;
    let [sa, sh, sr] = SECTION_SHAPE;
    let mut out = Vec::with_capacity(SECTIONS_PER_FRAME);
    for a_block in 0..AZIMUTHAL_SECTIONS {
        for h_block in 0..HORIZONTAL_HALVES {
            let mut values = Vec::with_capacity(voxel_count(SECTION_SHAPE));
            for a in 0..sa {
                let start = src.index(a_block * sa + a, h_block * sh, 0);
                values.extend_from_slice(&src.values[start..start + sh * sr]);
            }
            out.push(AdcFrame {
                shape: SECTION_SHAPE,
                values,
            });
        }
    }
    out
}

/// Inverse of [`section_frame`]. Sections must be in canonical order.
pub fn assemble_frame(sections: &[AdcFrame]) -> Result<FullFrame> {
    if sections.len() != SECTIONS_PER_FRAME {
        return Err(Error::shape(
            format!("{SECTIONS_PER_FRAME} sections"),
            format!("{} sections", sections.len()),
        ));
    }
    if let Some(bad) = sections.iter().find(|s| s.shape != SECTION_SHAPE) {
        return Err(Error::shape(SECTION_SHAPE, bad.shape));
    }
    let [sa, sh, sr] = SECTION_SHAPE;
    let mut full = AdcFrame::zeros(FULL_SHAPE);
    for (i, section) in sections.iter().enumerate() {
        let (a_block, h_block) = (i / HORIZONTAL_HALVES, i % HORIZONTAL_HALVES);
        for a in 0..sa {
            let dst = full.index(a_block * sa + a, h_block * sh, 0);
            let src = a * sh * sr;
            full.values[dst..dst + sh * sr].copy_from_slice(&section.values[src..src + sh * sr]);
        }
    }
    Ok(FullFrame(full))
}

/// Zero every count at or below `threshold`; larger counts are unchanged.
pub fn zero_suppress(frame: &AdcFrame, threshold: u16) -> AdcFrame {
    AdcFrame {
        shape: frame.shape,
        values: frame
            .values
            .iter()
            .map(|&v| if v <= threshold { 0 } else { v })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_full(seed: u64) -> FullFrame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..voxel_count(FULL_SHAPE))
            .map(|_| rng.random_range(0..=ADC_MAX))
            .collect();
        FullFrame::new(AdcFrame::new(FULL_SHAPE, values).unwrap()).unwrap()
    }

    #[test]
    fn sections_have_section_shape() {
        let sections = section_frame(&FullFrame::zeros());
        assert_eq!(sections.len(), 24);
        for s in &sections {
            assert_eq!(s.shape(), [192, 249, 16]);
            assert!(s.values().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn section_round_trip_and_partition() {
        let full = random_full(3);
        let sections = section_frame(&full);
        // index bookkeeping oracle: every full-frame voxel appears exactly
        // once, at the position derived from its coordinates
        let mut seen = vec![0u8; voxel_count(FULL_SHAPE)];
        for (i, s) in sections.iter().enumerate() {
            let (ab, hb) = (i / 2, i % 2);
            for a in (0..192).step_by(37) {
                for h in (0..249).step_by(31) {
                    for r in 0..16 {
                        assert_eq!(
                            s.get(a, h, r),
                            full.frame().get(ab * 192 + a, hb * 249 + h, r)
                        );
                    }
                }
            }
            for a in 0..192 {
                for h in 0..249 {
                    for r in 0..16 {
                        seen[full.frame().index(ab * 192 + a, hb * 249 + h, r)] += 1;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(assemble_frame(&sections).unwrap(), full);
    }

    #[test]
    fn permuted_sections_change_the_frame() {
        let full = random_full(5);
        let mut sections = section_frame(&full);
        sections.swap(0, 7);
        let rebuilt = assemble_frame(&sections).unwrap();
        assert_ne!(rebuilt.frame().checksum(), full.frame().checksum());
    }

    #[test]
    fn assemble_rejects_bad_input() {
        let sections = section_frame(&FullFrame::zeros());
        assert!(assemble_frame(&sections[..23]).is_err());
        let mut bad = sections.clone();
        bad[3] = AdcFrame::zeros([192, 248, 16]);
        assert!(matches!(assemble_frame(&bad), Err(Error::Shape { .. })));
        assert!(matches!(
            FullFrame::new(AdcFrame::zeros([2304, 497, 16])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_suppression_boundary() {
        let frame = AdcFrame::new([1, 1, 4], vec![63, 64, 65, 1023]).unwrap();
        let out = zero_suppress(&frame, ZERO_SUPPRESSION_THRESHOLD);
        assert_eq!(out.values(), &[0, 0, 65, 1023]);
    }

    #[test]
    fn constructor_rejects_out_of_range_and_empty() {
        assert!(AdcFrame::new([1, 1, 1], vec![1024]).is_err());
        assert!(AdcFrame::new([0, 1, 1], vec![]).is_err());
        assert!(AdcFrame::new([2, 1, 1], vec![0]).is_err());
    }

    #[test]
    fn real_frame_to_adc_rounds_and_clamps() {
        let rf = RealFrame::new([1, 1, 4], vec![-3.0, 64.4, 64.6, 2000.0]).unwrap();
        assert_eq!(rf.to_adc().values(), &[0, 64, 65, 1023]);
    }

    proptest! {
        #[test]
        fn zero_suppress_idempotent(values in proptest::collection::vec(0u16..=1023, 64)) {
            let f = AdcFrame::new([4, 4, 4], values).unwrap();
            let once = zero_suppress(&f, 64);
            prop_assert_eq!(zero_suppress(&once, 64), once.clone());
            prop_assert!(once.values().iter().all(|&v| v == 0 || v >= 65));
        }

        #[test]
        fn nonzero_fraction_is_exact(values in proptest::collection::vec(0u16..=3, 1..200)) {
            let n = values.len();
            let count = values.iter().filter(|&&v| v > 0).count();
            let f = AdcFrame::new([1, 1, n], values).unwrap();
            let frac = f.nonzero_fraction();
            prop_assert!((0.0..=1.0).contains(&frac));
            prop_assert_eq!(frac, count as f64 / n as f64);
        }
    }
}
