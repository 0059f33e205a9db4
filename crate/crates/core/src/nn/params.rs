use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::MaskKind;

/// Layer widths. The defaults give a 513-bin input, 256 LSTM units per
/// direction and 513-unit feedforward layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    /// Frequency bins in and mask values out.
    pub input: usize,
    /// LSTM units per direction; the trunk output is twice this.
    pub hidden: usize,
    /// Width of the first feedforward layer of each head.
    pub ff: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            input: 513,
            hidden: 256,
            ff: 513,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadSet {
    /// Speech and noise heads (baseline and student networks).
    SpeechNoise,
    /// Speech head only (teacher network).
    Speech,
}

impl HeadSet {
    pub fn kinds(&self) -> &'static [MaskKind] {
        match self {
            HeadSet::SpeechNoise => &[MaskKind::Speech, MaskKind::Noise],
            HeadSet::Speech => &[MaskKind::Speech],
        }
    }
}

/// Output nonlinearity of the second feedforward layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    /// `min(max(z, 0), 1)`.
    ClippedRelu,
}

/// One LSTM direction. Gate blocks are stacked in the order input, forget,
/// cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H × D`
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

/// Two feedforward layers producing one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `F × 2H`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `D × F`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every weight of the mask network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNetParams {
    pub dims: NetDims,
    pub activation: OutputActivation,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub speech: HeadParams,
    pub noise: Option<HeadParams>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

fn uniform1(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(-bound..bound))
}

impl LstmParams {
    fn zeros(d: usize, h: usize) -> Self {
        LstmParams {
            w_ih: Array2::zeros((4 * h, d)),
            w_hh: Array2::zeros((4 * h, h)),
            bias: Array1::zeros(4 * h),
        }
    }

    fn init(rng: &mut ChaCha8Rng, d: usize, h: usize) -> Self {
        let mut p = LstmParams {
            w_ih: uniform(rng, (4 * h, d), 1.0 / (d as f64).sqrt()),
            w_hh: uniform(rng, (4 * h, h), 1.0 / (h as f64).sqrt()),
            bias: uniform1(rng, 4 * h, 1.0 / (h as f64).sqrt()),
        };
        p.bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        p
    }
}

impl HeadParams {
    fn zeros(dims: &NetDims) -> Self {
        HeadParams {
            w1: Array2::zeros((dims.ff, 2 * dims.hidden)),
            b1: Array1::zeros(dims.ff),
            w2: Array2::zeros((dims.input, dims.ff)),
            b2: Array1::zeros(dims.input),
        }
    }

    fn init(rng: &mut ChaCha8Rng, dims: &NetDims) -> Self {
        let b1 = 1.0 / ((2 * dims.hidden) as f64).sqrt();
        let b2 = 1.0 / (dims.ff as f64).sqrt();
        HeadParams {
            w1: uniform(rng, (dims.ff, 2 * dims.hidden), b1),
            b1: uniform1(rng, dims.ff, b1),
            w2: uniform(rng, (dims.input, dims.ff), b2),
            b2: uniform1(rng, dims.input, b2),
        }
    }
}

impl MaskNetParams {
    pub fn zeros(dims: NetDims, heads: HeadSet, activation: OutputActivation) -> Self {
        MaskNetParams {
            dims,
            activation,
            forward: LstmParams::zeros(dims.input, dims.hidden),
            backward: LstmParams::zeros(dims.input, dims.hidden),
            speech: HeadParams::zeros(&dims),
            noise: (heads == HeadSet::SpeechNoise).then(|| HeadParams::zeros(&dims)),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights with forget-gate biases set to 1.
    pub fn init(dims: NetDims, heads: HeadSet, activation: OutputActivation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forward = LstmParams::init(&mut rng, dims.input, dims.hidden);
        let backward = LstmParams::init(&mut rng, dims.input, dims.hidden);
        let speech = HeadParams::init(&mut rng, &dims);
        let noise = (heads == HeadSet::SpeechNoise).then(|| HeadParams::init(&mut rng, &dims));
        MaskNetParams {
            dims,
            activation,
            forward,
            backward,
            speech,
            noise,
        }
    }

    pub fn heads(&self) -> HeadSet {
        if self.noise.is_some() {
            HeadSet::SpeechNoise
        } else {
            HeadSet::Speech
        }
    }

    pub fn head(&self, kind: MaskKind) -> Option<&HeadParams> {
        match kind {
            MaskKind::Speech => Some(&self.speech),
            MaskKind::Noise => self.noise.as_ref(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MaskNetParams::zeros(self.dims, self.heads(), self.activation)
    }

    /// Tensors in canonical order, each as a flat row-major slice.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (dir, l) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            out.push((format!("blstm.{dir}.w_ih"), l.w_ih.as_slice().expect("standard layout")));
            out.push((format!("blstm.{dir}.w_hh"), l.w_hh.as_slice().expect("standard layout")));
            out.push((format!("blstm.{dir}.bias"), l.bias.as_slice().expect("standard layout")));
        }
        let heads = [("speech", Some(&self.speech)), ("noise", self.noise.as_ref())];
        for (name, h) in heads {
            if let Some(h) = h {
                out.push((format!("{name}.ff1.w"), h.w1.as_slice().expect("standard layout")));
                out.push((format!("{name}.ff1.b"), h.b1.as_slice().expect("standard layout")));
                out.push((format!("{name}.ff2.w"), h.w2.as_slice().expect("standard layout")));
                out.push((format!("{name}.ff2.b"), h.b2.as_slice().expect("standard layout")));
            }
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in [&mut self.forward, &mut self.backward] {
            out.push(l.w_ih.as_slice_mut().expect("standard layout"));
            out.push(l.w_hh.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for h in std::iter::once(&mut self.speech).chain(self.noise.as_mut()) {
            out.push(h.w1.as_slice_mut().expect("standard layout"));
            out.push(h.b1.as_slice_mut().expect("standard layout"));
            out.push(h.w2.as_slice_mut().expect("standard layout"));
            out.push(h.b2.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (dir, l) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            out.push((format!("blstm.{dir}.w_ih"), l.w_ih.shape().to_vec()));
            out.push((format!("blstm.{dir}.w_hh"), l.w_hh.shape().to_vec()));
            out.push((format!("blstm.{dir}.bias"), l.bias.shape().to_vec()));
        }
        for (name, h) in [("speech", Some(&self.speech)), ("noise", self.noise.as_ref())] {
            if let Some(h) = h {
                out.push((format!("{name}.ff1.w"), h.w1.shape().to_vec()));
                out.push((format!("{name}.ff1.b"), h.b1.shape().to_vec()));
                out.push((format!("{name}.ff2.w"), h.w2.shape().to_vec()));
                out.push((format!("{name}.ff2.b"), h.b2.shape().to_vec()));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every parameter into one vector in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, network has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MaskNetParams, scale: f64) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(d, v)| *d += scale * v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
