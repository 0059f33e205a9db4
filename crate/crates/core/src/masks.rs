//! Ideal binary mask targets, mask application and cross-channel median fusion.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Speech,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Binary,
    Soft,
}

/// A `frames × bins` plane of gains in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    values: Array2<f64>,
    kind: MaskKind,
    hardness: Hardness,
}

impl MaskPlane {
    pub fn new(values: Array2<f64>, kind: MaskKind, hardness: Hardness) -> Result<Self> {
        match hardness {
            Hardness::Binary => {
                if values.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidInput("binary mask holds a value other than 0/1".into()));
                }
            }
            Hardness::Soft => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidInput("mask value outside [0, 1]".into()));
                }
            }
        }
        Ok(MaskPlane {
            values,
            kind,
            hardness,
        })
    }

    pub fn soft(values: Array2<f64>, kind: MaskKind) -> Result<Self> {
        MaskPlane::new(values, kind, Hardness::Soft)
    }

    pub fn filled(shape: (usize, usize), value: f64, kind: MaskKind) -> Result<Self> {
        let hardness = if value == 0.0 || value == 1.0 {
            Hardness::Binary
        } else {
            Hardness::Soft
        };
        MaskPlane::new(Array2::from_elem(shape, value), kind, hardness)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn hardness(&self) -> Hardness {
        self.hardness
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Rounds every value to the nearest float32, matching what a
    /// write/read cycle through the mask file format returns.
    pub fn quantized_f32(&self) -> MaskPlane {
        MaskPlane {
            values: self.values.mapv(|v| v as f32 as f64),
            ..self.clone()
        }
    }

    /// Binary file: `MSKP`, u32 LE header length, JSON header
    /// `{shape, kind, hardness}`, then row-major little-endian float32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = MaskHeader {
            shape: [self.values.nrows(), self.values.ncols()],
            kind: self.kind,
            hardness: self.hardness,
        };
        let json = serde_json::to_vec(&header).expect("mask header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.values.len());
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.values.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("mask file: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MASK_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: MaskHeader = serde_json::from_slice(body)?;
        let [t, b] = header.shape;
        let data = &bytes[8 + hlen..];
        if data.len() != 4 * t * b {
            return Err(bad("payload length does not match shape"));
        }
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let values = Array2::from_shape_vec((t, b), values).map_err(|e| bad(&e.to_string()))?;
        MaskPlane::new(values, header.kind, header.hardness)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        MaskPlane::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const MASK_MAGIC: &[u8; 4] = b"MSKP";

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    shape: [usize; 2],
    kind: MaskKind,
    hardness: Hardness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RatioDomain {
    #[default]
    Power,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IbmConfig {
    /// Linear ratio clean/noise above which a bin is speech-dominated.
    pub speech_threshold: f64,
    /// Linear ratio noise/clean above which a bin is noise-dominated.
    pub noise_threshold: f64,
    pub domain: RatioDomain,
}

impl Default for IbmConfig {
    fn default() -> Self {
        IbmConfig {
            speech_threshold: 1.0,
            noise_threshold: 1.0,
            domain: RatioDomain::Power,
        }
    }
}

impl IbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speech_threshold > 0.0 && self.noise_threshold > 0.0) {
            return Err(Error::Config("IBM thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Speech and noise ideal binary masks from single-channel clean and noise
/// spectrograms. The comparisons are `num > threshold * den`, so a bin with
/// zero noise and nonzero speech is speech-dominated, and a bin where both
/// are zero is neither.
pub fn ideal_binary_masks(
    clean: &Spectrogram,
    noise: &Spectrogram,
    cfg: &IbmConfig,
) -> Result<(MaskPlane, MaskPlane)> {
    cfg.validate()?;
    if clean.num_channels() != 1 || noise.num_channels() != 1 {
        return Err(Error::Shape("ideal_binary_masks needs single-channel inputs".into()));
    }
    if !clean.same_shape(noise) {
        return Err(Error::Shape(format!(
            "clean {:?} vs noise {:?}",
            clean.plane_dim(),
            noise.plane_dim()
        )));
    }
    let level = |c: &num_complex::Complex64| match cfg.domain {
        RatioDomain::Power => c.norm_sqr(),
        RatioDomain::Magnitude => c.norm(),
    };
    let shape = clean.plane_dim();
    let mut ibm_x = Array2::zeros(shape);
    let mut ibm_n = Array2::zeros(shape);
    Zip::from(&mut ibm_x)
        .and(&mut ibm_n)
        .and(&clean.channel(0))
        .and(&noise.channel(0))
        .for_each(|mx, mn, x, n| {
            let (lx, ln) = (level(x), level(n));
            *mx = if lx > cfg.speech_threshold * ln { 1.0 } else { 0.0 };
            *mn = if ln > cfg.noise_threshold * lx { 1.0 } else { 0.0 };
        });
    Ok((
        MaskPlane::new(ibm_x, MaskKind::Speech, Hardness::Binary)?,
        MaskPlane::new(ibm_n, MaskKind::Noise, Hardness::Binary)?,
    ))
}

/// Scales every complex bin of a single-channel spectrogram by the mask.
pub fn apply_mask(mask: &MaskPlane, spec: &Spectrogram) -> Result<Spectrogram> {
    if spec.num_channels() != 1 {
        return Err(Error::Shape("apply_mask needs a single-channel spectrogram".into()));
    }
    if mask.dim() != spec.plane_dim() {
        return Err(Error::Shape(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.dim(),
            spec.plane_dim()
        )));
    }
    let mut out = spec.clone();
    Zip::from(out.data_mut().index_axis_mut(ndarray::Axis(0), 0))
        .and(mask.values())
        .for_each(|c, &w| *c *= w);
    Ok(out)
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Elementwise median across channel masks.
pub fn median_fuse(masks: &[MaskPlane]) -> Result<MaskPlane> {
    let Some(first) = masks.first() else {
        return Err(Error::InvalidInput("median_fuse needs at least one mask".into()));
    };
    if masks.iter().any(|m| m.kind != first.kind) {
        return Err(Error::InvalidInput("median_fuse got masks of mixed kinds".into()));
    }
    if masks.iter().any(|m| m.dim() != first.dim()) {
        return Err(Error::Shape("median_fuse got masks of different shapes".into()));
    }
    let (t, b) = first.dim();
    let mut scratch = vec![0.0; masks.len()];
    let values = Array2::from_shape_fn((t, b), |(i, j)| {
        for (s, m) in scratch.iter_mut().zip(masks) {
            *s = m.values[[i, j]];
        }
        median(&mut scratch)
    });
    let all_binary = masks.iter().all(|m| m.hardness == Hardness::Binary);
    let hardness = if all_binary && values.iter().all(|&v| v == 0.0 || v == 1.0) {
        Hardness::Binary
    } else {
        Hardness::Soft
    };
    MaskPlane::new(values, first.kind, hardness)
}
