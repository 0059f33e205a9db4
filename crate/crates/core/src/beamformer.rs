//! Mask-driven spatial covariance estimation and generalized-eigenvector
//! (max-SNR) beamforming.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;

use crate::audio_io::AudioClip;
use crate::dsp::{istft, magnitude, stft_multichannel, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, hermitian_part, principal_eigenpair, solve_lower, solve_lower_adjoint};
use crate::masks::{apply_mask, median_fuse, MaskKind, MaskPlane};
use crate::nn::{forward, normalize_features, MaskNetParams};
use crate::par;

type C = Complex64;

/// Default diagonal loading factor.
pub const DEFAULT_EPS: f64 = 1e-6;
/// Absolute floor added to the loading so all-zero matrices become invertible.
pub const LOADING_FLOOR: f64 = 1e-10;

/// One `M × M` Hermitian matrix per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdSet {
    mats: Vec<Array2<C>>,
}

impl PsdSet {
    pub fn new(mats: Vec<Array2<C>>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::Shape("PSD set needs at least one bin".into()));
        };
        let m = first.nrows();
        if m == 0 || mats.iter().any(|a| a.dim() != (m, m)) {
            return Err(Error::Shape("PSD matrices must all be square and equally sized".into()));
        }
        Ok(PsdSet { mats })
    }

    pub fn num_bins(&self) -> usize {
        self.mats.len()
    }

    pub fn num_channels(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn bin(&self, b: usize) -> &Array2<C> {
        &self.mats[b]
    }

    pub fn matrices(&self) -> &[Array2<C>] {
        &self.mats
    }
}

/// `Φ(b) = Σ_t w(t,b) y(t,b) y(t,b)^H`, Hermitian-symmetrized.
pub fn estimate_psd(mask: &MaskPlane, spec: &Spectrogram) -> Result<PsdSet> {
    if mask.dim() != spec.plane_dim() {
        return Err(Error::Shape(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.dim(),
            spec.plane_dim()
        )));
    }
    let m = spec.num_channels();
    let (t_len, _) = spec.plane_dim();
    let data = spec.data();
    let w = mask.values();
    let mats = par::map_range(spec.num_bins(), |b| {
        let mut phi = Array2::<C>::zeros((m, m));
        for t in 0..t_len {
            let wt = w[[t, b]];
            if wt == 0.0 {
                continue;
            }
            for i in 0..m {
                let yi = data[[i, t, b]] * wt;
                for j in 0..m {
                    phi[[i, j]] += yi * data[[j, t, b]].conj();
                }
            }
        }
        hermitian_part(&phi)
    });
    PsdSet::new(mats)
}

/// `Φ + ε (tr Φ / M + floor) I`.
pub fn condition_matrix(phi: &Array2<C>, eps: f64) -> Array2<C> {
    let m = phi.nrows();
    let tr: f64 = (0..m).map(|i| phi[[i, i]].re).sum();
    let load = eps * (tr / m as f64 + LOADING_FLOOR);
    let mut out = phi.clone();
    for i in 0..m {
        out[[i, i]] += load;
    }
    out
}

pub fn condition_psd(psd: &PsdSet, eps: f64) -> Result<PsdSet> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("loading factor must be positive, got {eps}")));
    }
    PsdSet::new(psd.mats.iter().map(|a| condition_matrix(a, eps)).collect())
}

/// How filter vectors are scaled and phased.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Unit Euclidean norm, first significant component real and nonnegative.
    UnitNormRealLead,
    /// Unit Euclidean norm, component of the given channel real and
    /// nonnegative wherever it is significant (first significant component
    /// otherwise).
    UnitNormRealAt(usize),
}

/// Per-bin spatial filters.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerFilter {
    /// `B × M`.
    pub weights: Array2<C>,
    /// Principal generalized eigenvalue per bin (an SNR proxy).
    pub eigenvalues: Vec<f64>,
    pub normalization: Normalization,
}

impl BeamformerFilter {
    pub fn num_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.weights.ncols()
    }

    pub fn bin(&self, b: usize) -> Array1<C> {
        self.weights.row(b).to_owned()
    }

    /// Writes `bin,lambda` rows.
    pub fn write_eigenvalue_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("bin,lambda\n");
        for (b, l) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{b},{l:.9e}").expect("string write");
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Unit norm with the first component above `1e-8 ‖v‖` rotated onto the
/// nonnegative real axis.
pub fn canonicalize(v: &Array1<C>) -> Array1<C> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.clone();
    }
    let lead = v.iter().find(|c| c.norm() > 1e-8 * norm).copied().unwrap_or(C::new(1.0, 0.0));
    let phase = lead.conj() / lead.norm();
    v.mapv(|c| c * phase / norm)
}

/// Rotates every bin's filter so that its `channel` component is real and
/// nonnegative. Norms are unchanged; bins whose `channel` component is below
/// `1e-8 ‖f‖` keep their phase.
pub fn anchor_phase(filter: &BeamformerFilter, channel: usize) -> Result<BeamformerFilter> {
    if channel >= filter.num_channels() {
        return Err(Error::InvalidInput(format!(
            "reference channel {channel} out of range for {} channels",
            filter.num_channels()
        )));
    }
    let mut weights = filter.weights.clone();
    for mut row in weights.rows_mut() {
        let norm = row.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let lead = row[channel];
        if norm > 0.0 && lead.norm() > 1e-8 * norm {
            let phase = lead.conj() / lead.norm();
            row.mapv_inplace(|c| c * phase);
        }
    }
    Ok(BeamformerFilter {
        weights,
        eigenvalues: filter.eigenvalues.clone(),
        normalization: Normalization::UnitNormRealAt(channel),
    })
}

/// Principal generalized eigenpair of `(Φx, Φn)` for one bin, or `None` if
/// `Φn` is not positive definite.
pub fn gev_bin(phi_x: &Array2<C>, phi_n: &Array2<C>) -> Option<(f64, Array1<C>)> {
    let l = cholesky(phi_n)?;
    let m = phi_x.nrows();
    // W = L⁻¹ Φx L⁻ᴴ = L⁻¹ (L⁻¹ Φx)^H since Φx is Hermitian.
    let mut a = Array2::<C>::zeros((m, m));
    for j in 0..m {
        a.column_mut(j).assign(&solve_lower(&l, &phi_x.column(j).to_owned()));
    }
    let ah = a.t().mapv(|c| c.conj());
    let mut w = Array2::<C>::zeros((m, m));
    for j in 0..m {
        w.column_mut(j).assign(&solve_lower(&l, &ah.column(j).to_owned()));
    }
    let (lambda, u) = principal_eigenpair(&hermitian_part(&w));
    let f = solve_lower_adjoint(&l, &u);
    Some((lambda, canonicalize(&f)))
}

/// Max-SNR filter per bin. `phi_n` is expected to be conditioned already.
pub fn gev_filter(phi_x: &PsdSet, phi_n: &PsdSet) -> Result<BeamformerFilter> {
    if phi_x.num_bins() != phi_n.num_bins() || phi_x.num_channels() != phi_n.num_channels() {
        return Err(Error::Shape("speech and noise PSD sets differ in shape".into()));
    }
    let finite = |p: &PsdSet| p.mats.iter().all(|a| a.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
    if !finite(phi_x) || !finite(phi_n) {
        return Err(Error::NonFinite("PSD matrices".into()));
    }
    let solved = par::map_range(phi_x.num_bins(), |b| gev_bin(&phi_x.mats[b], &phi_n.mats[b]));
    let failed: Vec<usize> = solved.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(b, _)| b).collect();
    if !failed.is_empty() {
        return Err(Error::Cholesky { bins: failed });
    }
    let m = phi_x.num_channels();
    let mut weights = Array2::zeros((solved.len(), m));
    let mut eigenvalues = Vec::with_capacity(solved.len());
    for (b, s) in solved.into_iter().enumerate() {
        let (l, f) = s.expect("failures handled");
        weights.row_mut(b).assign(&f);
        eigenvalues.push(l);
    }
    Ok(BeamformerFilter {
        weights,
        eigenvalues,
        normalization: Normalization::UnitNormRealLead,
    })
}

/// `x(t,b) = f(b)^H y(t,b)`.
pub fn apply_beamformer(filter: &BeamformerFilter, spec: &Spectrogram) -> Result<Spectrogram> {
    if filter.num_channels() != spec.num_channels() || filter.num_bins() != spec.num_bins() {
        return Err(Error::Shape(format!(
            "filter is {} bins × {} channels, spectrogram is {} bins × {} channels",
            filter.num_bins(),
            filter.num_channels(),
            spec.num_bins(),
            spec.num_channels()
        )));
    }
    let (t_len, b_len) = spec.plane_dim();
    let data = spec.data();
    let plane = Array2::from_shape_fn((t_len, b_len), |(t, b)| {
        (0..spec.num_channels()).map(|m| filter.weights[[b, m]].conj() * data[[m, t, b]]).sum::<C>()
    });
    Spectrogram::from_plane(plane, *spec.config(), spec.signal_len())
}

/// PSD estimation, conditioning of the noise PSD, GEV, phase anchoring to
/// `ref_channel` and filtering.
pub fn beamform_with_masks(
    spec: &Spectrogram,
    speech: &MaskPlane,
    noise: &MaskPlane,
    eps: f64,
    ref_channel: usize,
) -> Result<(Spectrogram, BeamformerFilter)> {
    let phi_x = estimate_psd(speech, spec)?;
    let phi_n = condition_psd(&estimate_psd(noise, spec)?, eps)?;
    let filter = anchor_phase(&gev_filter(&phi_x, &phi_n)?, ref_channel)?;
    Ok((apply_beamformer(&filter, spec)?, filter))
}

/// Runs the network on every channel of `spec`; returns per-channel speech
/// masks and, for two-head networks, noise masks.
pub fn predict_channel_masks(
    params: &MaskNetParams,
    spec: &Spectrogram,
) -> Result<(Vec<MaskPlane>, Option<Vec<MaskPlane>>)> {
    let mag = magnitude(spec);
    let outs = par::try_map_range(spec.num_channels(), |m| {
        forward(params, normalize_features(mag.index_axis(Axis(0), m)).view())
    })?;
    let mut speech = Vec::with_capacity(outs.len());
    let mut noise = Vec::with_capacity(outs.len());
    for o in outs {
        speech.push(MaskPlane::soft(o.speech, MaskKind::Speech)?);
        if let Some(n) = o.noise {
            noise.push(MaskPlane::soft(n, MaskKind::Noise)?);
        }
    }
    let noise = (!noise.is_empty()).then_some(noise);
    Ok((speech, noise))
}

/// Single-channel enhancement: the network's speech mask for channel
/// `channel` applied to that channel's spectrum.
pub fn mask_enhance(mix: &AudioClip, params: &MaskNetParams, channel: usize, stft_cfg: &StftConfig) -> Result<Vec<f64>> {
    if channel >= mix.num_channels() {
        return Err(Error::InvalidInput(format!(
            "channel {channel} out of range for {} channels",
            mix.num_channels()
        )));
    }
    let spec = crate::dsp::stft(mix.channel(channel), stft_cfg)?;
    let mag = magnitude(&spec);
    let out = forward(params, normalize_features(mag.index_axis(Axis(0), 0)).view())?;
    let mask = MaskPlane::soft(out.speech, MaskKind::Speech)?;
    istft(&apply_mask(&mask, &spec)?)
}

#[derive(Debug, Clone)]
pub struct BeamformOutput {
    pub signal: Vec<f64>,
    pub spectrogram: Spectrogram,
    pub speech_mask: MaskPlane,
    pub noise_mask: MaskPlane,
    pub filter: BeamformerFilter,
}

/// Per-channel masks from `params`, median fusion, GEV beamforming and resynthesis.
pub fn beamform_utterance(
    mix: &AudioClip,
    params: &MaskNetParams,
    stft_cfg: &StftConfig,
    eps: f64,
    ref_channel: usize,
) -> Result<BeamformOutput> {
    let spec = stft_multichannel(mix.channels(), stft_cfg)?;
    let (speech, noise) = predict_channel_masks(params, &spec)?;
    let noise = noise.ok_or_else(|| Error::InvalidInput("beamforming needs a network with a noise head".into()))?;
    let speech_mask = median_fuse(&speech)?;
    let noise_mask = median_fuse(&noise)?;
    beamform_fused(&spec, speech_mask, noise_mask, eps, ref_channel)
}

/// GEV beamforming of `spec` driven by already fused masks.
pub fn beamform_fused(
    spec: &Spectrogram,
    speech_mask: MaskPlane,
    noise_mask: MaskPlane,
    eps: f64,
    ref_channel: usize,
) -> Result<BeamformOutput> {
    let (out, filter) = beamform_with_masks(spec, &speech_mask, &noise_mask, eps, ref_channel)?;
    Ok(BeamformOutput {
        signal: istft(&out)?,
        spectrogram: out,
        speech_mask,
        noise_mask,
        filter,
    })
}
