//! Short-time Fourier analysis and synthesis.
//!
//! Framing is centered: the signal is reflect-padded by `fft_size / 2` on
//! both sides, and frame `t` covers padded samples `[t * hop, t * hop + fft_size)`.
//! For a signal of `len` samples this yields
//!
//! ```text
//! T = 1 + floor(len / hop)
//! ```
//!
//! frames. Synthesis overlap-adds `window * ifft(frame)` and divides every
//! output sample by the accumulated squared-window sum at that position, so
//! unmodified spectrograms reconstruct exactly wherever that sum is nonzero
//! (which holds everywhere inside the original signal for Hann with
//! `hop <= fft_size / 2`).

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            fft_size: 1024,
            hop: 256,
            window: WindowKind::Hann,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of centered frames for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop {} must divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        if self.hop > self.fft_size / 2 {
            return Err(Error::Config(
                "hop larger than fft_size / 2 leaves gaps in the overlap-add".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_periodic(self.fft_size),
        }
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex STFT data indexed `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
    signal_len: usize,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig, signal_len: usize) -> Result<Self> {
        let (m, _, b) = data.dim();
        if m == 0 {
            return Err(Error::Shape("spectrogram needs at least one channel".into()));
        }
        if b != config.num_bins() {
            return Err(Error::Shape(format!(
                "expected {} bins for fft_size {}, got {b}",
                config.num_bins(),
                config.fft_size
            )));
        }
        Ok(Spectrogram {
            data,
            config,
            signal_len,
        })
    }

    /// Single-channel spectrogram from a `frames × bins` plane.
    pub fn from_plane(plane: Array2<Complex64>, config: StftConfig, signal_len: usize) -> Result<Self> {
        Spectrogram::new(plane.insert_axis(Axis(0)), config, signal_len)
    }

    pub fn zeros(channels: usize, frames: usize, config: StftConfig, signal_len: usize) -> Self {
        Spectrogram {
            data: Array3::zeros((channels, frames, config.num_bins())),
            config,
            signal_len,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Length in samples of the signal this spectrogram was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn channel(&self, m: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), m)
    }

    pub fn select_channel(&self, m: usize) -> Spectrogram {
        Spectrogram {
            data: self.channel(m).to_owned().insert_axis(Axis(0)),
            config: self.config,
            signal_len: self.signal_len,
        }
    }

    /// Frame/bin shape shared by every channel.
    pub fn plane_dim(&self) -> (usize, usize) {
        (self.num_frames(), self.num_bins())
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.data.dim() == other.data.dim()
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// Maps an index of the padded signal back into `[0, len)` by mirror
/// reflection without repeating the edge sample. Handles pads longer than
/// the signal by reflecting repeatedly.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

fn stft_plane(samples: &[f64], cfg: &StftConfig, window: &[f64], fft: &FftPair) -> Array2<Complex64> {
    let n = cfg.fft_size;
    let pad = (n / 2) as isize;
    let frames = cfg.num_frames(samples.len());
    let bins = cfg.num_bins();
    let mut out = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + k as isize, samples.len());
            *slot = Complex64::new(samples[idx] * window[k], 0.0);
        }
        fft.forward.process(&mut buf);
        for (dst, src) in out.row_mut(t).iter_mut().zip(&buf[..bins]) {
            *dst = *src;
        }
    }
    out
}

/// Single-channel STFT.
pub fn stft(samples: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    stft_multichannel(&[samples], cfg)
}

/// STFT of each channel; all channels must share one length.
pub fn stft_multichannel<S: AsRef<[f64]>>(channels: &[S], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let Some(first) = channels.first() else {
        return Err(Error::InvalidInput("no channels".into()));
    };
    let len = first.as_ref().len();
    if len == 0 {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(Error::Shape("channels differ in length".into()));
    }
    let window = cfg.window();
    let fft = FftPair::new(cfg.fft_size);
    let mut data = Array3::zeros((channels.len(), cfg.num_frames(len), cfg.num_bins()));
    for (m, ch) in channels.iter().enumerate() {
        data.index_axis_mut(Axis(0), m)
            .assign(&stft_plane(ch.as_ref(), cfg, &window, &fft));
    }
    Spectrogram::new(data, *cfg, len)
}

/// Inverse STFT of a single-channel spectrogram, returning `spec.signal_len()` samples.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    if spec.num_channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "istft needs a single channel, got {} (select or beamform first)",
            spec.num_channels()
        )));
    }
    let cfg = spec.config();
    cfg.validate()?;
    let n = cfg.fft_size;
    let pad = n / 2;
    let frames = spec.num_frames();
    let len = spec.signal_len();
    let padded_len = (frames - 1) * cfg.hop + n;
    let window = cfg.window();
    let fft = FftPair::new(n);

    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let plane = spec.channel(0);
    let scale = 1.0 / n as f64;
    for t in 0..frames {
        let row = plane.row(t);
        // Rebuild the Hermitian-symmetric full spectrum of a real frame.
        for k in 0..=n / 2 {
            buf[k] = row[k];
        }
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        fft.inverse.process(&mut buf);
        let start = t * cfg.hop;
        for k in 0..n {
            acc[start + k] += buf[k].re * scale * window[k];
            norm[start + k] += window[k] * window[k];
        }
    }
    let out = (0..len)
        .map(|i| {
            let p = i + pad;
            if p < padded_len && norm[p] > 1e-10 {
                acc[p] / norm[p]
            } else {
                0.0
            }
        })
        .collect();
    Ok(out)
}

/// Elementwise modulus, shaped `(channel, frame, bin)`.
pub fn magnitude(spec: &Spectrogram) -> Array3<f64> {
    spec.data().mapv(|c| c.norm())
}

/// Elementwise squared modulus.
pub fn power(spec: &Spectrogram) -> Array3<f64> {
    spec.data().mapv(|c| c.norm_sqr())
}

/// Blackman-windowed sinc kernel evaluated at offset `x` (in samples), with
/// support `|x| < half_width` and normalized cutoff `cutoff` (1.0 = Nyquist).
pub fn windowed_sinc(x: f64, half_width: f64, cutoff: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let arg = PI * cutoff * x;
    let sinc = if x == 0.0 { 1.0 } else { arg.sin() / arg };
    let u = (x + half_width) / (2.0 * half_width);
    let w = 0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos();
    cutoff * sinc * w
}
