//! Objective enhancement scores: STOI, eSTOI and scale-invariant SDR, plus
//! corpus-level CSV reports.
//!
//! STOI and eSTOI follow the reference implementation conventions: signals
//! are resampled to 10 kHz, silent frames more than 40 dB below the loudest
//! frame are dropped, 256-sample Hann frames with a 128-sample hop feed a
//! 512-point FFT, energy is pooled into 15 one-third-octave bands from
//! 150 Hz, and 30-frame segments are compared.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio_io::{AudioClip, EntryKind, Manifest, Split};
use crate::dsp::windowed_sinc;
use crate::error::{Error, Result};
use crate::par;

pub mod constants {
    /// Internal analysis rate of STOI.
    pub const STOI_RATE: u32 = 10_000;
    pub const FRAME_LEN: usize = 256;
    pub const HOP: usize = 128;
    pub const NFFT: usize = 512;
    pub const NUM_BANDS: usize = 15;
    /// Centre frequency of the lowest one-third-octave band.
    pub const MIN_FREQ: f64 = 150.0;
    /// Frames per segment (384 ms).
    pub const SEGMENT: usize = 30;
    /// Lower signal-to-distortion bound of the clipping step, in dB.
    pub const BETA_DB: f64 = -15.0;
    /// Frames this far below the loudest frame are discarded.
    pub const DYN_RANGE_DB: f64 = 40.0;
    /// Upper bound reported by [`si_sdr`](super::si_sdr).
    pub const SI_SDR_CAP_DB: f64 = 100.0;
}

use constants::*;

const EPS: f64 = f64::EPSILON;

/// Symmetric Hann window without its zero end points.
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Band-limited rational resampling by direct windowed-sinc interpolation.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let cutoff = 0.95 * (to as f64 / from as f64).min(1.0);
    let half_width = 32.0 / cutoff;
    let out_len = ((x.len() as f64) / ratio).floor() as usize;
    (0..out_len)
        .map(|n| {
            let t = n as f64 * ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            (lo..=hi).map(|k| x[k] * windowed_sinc(t - k as f64, half_width, cutoff)).sum()
        })
        .collect()
}

fn frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    let n = window.len();
    if x.len() < n {
        return Vec::new();
    }
    (0..=(x.len() - n) / HOP)
        .map(|f| x[f * HOP..f * HOP + n].iter().zip(window).map(|(a, w)| a * w).collect())
        .collect()
}

fn overlap_add(frames: &[&Vec<f64>]) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let n = frames[0].len();
    let mut out = vec![0.0; (frames.len() - 1) * HOP + n];
    for (f, fr) in frames.iter().enumerate() {
        for (o, v) in out[f * HOP..].iter_mut().zip(fr.iter()) {
            *o += v;
        }
    }
    out
}

/// Drops frames of `x` (and the matching frames of `y`) whose energy is more
/// than [`DYN_RANGE_DB`] below the loudest frame of `x`.
pub fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(FRAME_LEN);
    let fx = frames(x, &w);
    let fy = frames(y, &w);
    let energy: Vec<f64> = fx
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..fx.len()).filter(|&i| energy[i] > max - DYN_RANGE_DB).collect();
    let kx: Vec<&Vec<f64>> = keep.iter().map(|&i| &fx[i]).collect();
    let ky: Vec<&Vec<f64>> = keep.iter().map(|&i| &fy[i]).collect();
    (overlap_add(&kx), overlap_add(&ky))
}

/// `NUM_BANDS × (NFFT/2+1)` 0/1 matrix pooling FFT bins into one-third-octave bands.
pub fn third_octave_bands() -> Array2<f64> {
    let nbins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..nbins).map(|i| i as f64 * STOI_RATE as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..nbins)
            .min_by(|&a, &b| (f[a] - target).abs().total_cmp(&(f[b] - target).abs()))
            .expect("nonempty")
    };
    let mut obm = Array2::zeros((NUM_BANDS, nbins));
    for k in 0..NUM_BANDS {
        let lo = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 - 1.0 / 6.0);
        let hi = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 + 1.0 / 6.0);
        obm.slice_mut(s![k, nearest(lo)..nearest(hi)]).fill(1.0);
    }
    obm
}

/// One-third-octave band envelopes, `NUM_BANDS × frames`.
fn band_envelopes(x: &[f64]) -> Array2<f64> {
    let w = hann_inner(FRAME_LEN);
    let fr = frames(x, &w);
    let obm = third_octave_bands();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let nbins = NFFT / 2 + 1;
    let mut pow = Array2::zeros((nbins, fr.len()));
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for (j, f) in fr.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (c, &v) in buf.iter_mut().zip(f) {
            c.re = v;
        }
        fft.process(&mut buf);
        for b in 0..nbins {
            pow[[b, j]] = buf[b].norm_sqr();
        }
    }
    obm.dot(&pow).mapv(f64::sqrt)
}

fn check_pair(reference: &[f64], degraded: &[f64], rate: u32) -> Result<()> {
    if reference.len() != degraded.len() {
        return Err(Error::InvalidInput(format!(
            "reference has {} samples, degraded has {}",
            reference.len(),
            degraded.len()
        )));
    }
    if rate != 16_000 && rate != STOI_RATE {
        return Err(Error::InvalidInput(format!("intelligibility metrics need 16 kHz input, got {rate} Hz")));
    }
    Ok(())
}

/// Band envelopes of both signals after resampling and silence removal.
pub fn envelope_pair(reference: &[f64], degraded: &[f64], rate: u32) -> Result<(Array2<f64>, Array2<f64>)> {
    check_pair(reference, degraded, rate)?;
    let x = resample(reference, rate, STOI_RATE);
    let y = resample(degraded, rate, STOI_RATE);
    let (x, y) = remove_silent_frames(&x, &y);
    let ex = band_envelopes(&x);
    let ey = band_envelopes(&y);
    if ex.ncols() < SEGMENT {
        return Err(Error::InvalidInput(format!(
            "only {} non-silent frames, intelligibility metrics need {SEGMENT}",
            ex.ncols()
        )));
    }
    Ok((ex, ey))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let da: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let db: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = da.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
    let nb = db.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
    da.iter().zip(&db).map(|(p, q)| p * q).sum::<f64>() / (na * nb)
}

/// Clipped normalized correlation per segment and band, `segments × NUM_BANDS`.
pub fn stoi_correlations(x_env: ArrayView2<f64>, y_env: ArrayView2<f64>) -> Array2<f64> {
    let nseg = x_env.ncols() + 1 - SEGMENT;
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut out = Array2::zeros((nseg, x_env.nrows()));
    for m in 0..nseg {
        for j in 0..x_env.nrows() {
            let xs: Vec<f64> = x_env.slice(s![j, m..m + SEGMENT]).to_vec();
            let ys: Vec<f64> = y_env.slice(s![j, m..m + SEGMENT]).to_vec();
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + EPS);
            let yc: Vec<f64> = ys.iter().zip(&xs).map(|(y, x)| (y * alpha).min(x * clip)).collect();
            out[[m, j]] = pearson(&xs, &yc);
        }
    }
    out
}

/// Mean spectro-temporal correlation of row- then column-normalized segments.
pub fn estoi_from_envelopes(x_env: ArrayView2<f64>, y_env: ArrayView2<f64>) -> f64 {
    let nseg = x_env.ncols() + 1 - SEGMENT;
    let normalize = |seg: ArrayView2<f64>| {
        let mut a = seg.to_owned();
        for mut row in a.rows_mut() {
            let mean = row.mean().expect("nonempty");
            row.mapv_inplace(|v| v - mean);
            let norm = row.dot(&row).sqrt() + EPS;
            row.mapv_inplace(|v| v / norm);
        }
        for mut col in a.columns_mut() {
            let mean = col.mean().expect("nonempty");
            col.mapv_inplace(|v| v - mean);
            let norm = col.dot(&col).sqrt() + EPS;
            col.mapv_inplace(|v| v / norm);
        }
        a
    };
    let total: f64 = (0..nseg)
        .map(|m| {
            let xn = normalize(x_env.slice(s![.., m..m + SEGMENT]));
            let yn = normalize(y_env.slice(s![.., m..m + SEGMENT]));
            (&xn * &yn).sum() / SEGMENT as f64
        })
        .sum();
    total / nseg as f64
}

/// Short-time objective intelligibility of `degraded` against `reference`.
pub fn stoi(reference: &[f64], degraded: &[f64], rate: u32) -> Result<f64> {
    let (x, y) = envelope_pair(reference, degraded, rate)?;
    Ok(stoi_correlations(x.view(), y.view()).mean().expect("nonempty"))
}

/// Extended STOI.
pub fn estoi(reference: &[f64], degraded: &[f64], rate: u32) -> Result<f64> {
    let (x, y) = envelope_pair(reference, degraded, rate)?;
    Ok(estoi_from_envelopes(x.view(), y.view()))
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &[f64], degraded: &[f64]) -> Result<f64> {
    if reference.len() != degraded.len() {
        return Err(Error::InvalidInput(format!(
            "reference has {} samples, degraded has {}",
            reference.len(),
            degraded.len()
        )));
    }
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::InvalidInput("reference signal is all zeros".into()));
    }
    let dr: f64 = reference.iter().zip(degraded).map(|(r, d)| r * d).sum();
    let a = dr / rr;
    let target: f64 = a * a * rr;
    let err: f64 = reference.iter().zip(degraded).map(|(r, d)| (d - a * r).powi(2)).sum();
    if err == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    let v = 10.0 * (target / err).log10();
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v.min(SI_SDR_CAP_DB) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub condition: String,
    pub stoi: f64,
    pub estoi: f64,
    pub si_sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// One row per condition, id `__mean__`, in first-appearance order.
    pub means: Vec<MetricRow>,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut conditions: Vec<String> = Vec::new();
        for r in &rows {
            if !conditions.contains(&r.condition) {
                conditions.push(r.condition.clone());
            }
        }
        let means = conditions
            .into_iter()
            .map(|c| {
                let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.condition == c).collect();
                let n = sel.len() as f64;
                MetricRow {
                    id: "__mean__".into(),
                    condition: c,
                    stoi: sel.iter().map(|r| r.stoi).sum::<f64>() / n,
                    estoi: sel.iter().map(|r| r.estoi).sum::<f64>() / n,
                    si_sdr_db: sel.iter().map(|r| r.si_sdr_db).sum::<f64>() / n,
                }
            })
            .collect();
        MetricReport { rows, means }
    }

    pub fn mean(&self, condition: &str) -> Option<&MetricRow> {
        self.means.iter().find(|r| r.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,condition,stoi,estoi,si_sdr_db\n");
        for r in self.rows.iter().chain(&self.means) {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.id, r.condition, r.stoi, r.estoi, r.si_sdr_db
            )
            .expect("string write");
        }
        out
    }
}

/// Maps a mixture and its reference channel index to an enhanced signal.
pub type EnhanceFn<'a> = dyn Fn(&AudioClip, usize) -> Result<Vec<f64>> + Sync + 'a;

/// A named enhancement system scored by [`evaluate_corpus`].
pub struct System<'a> {
    pub name: String,
    pub enhance: Box<EnhanceFn<'a>>,
}

impl<'a> System<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(&AudioClip, usize) -> Result<Vec<f64>> + Sync + 'a) -> Self {
        System {
            name: name.into(),
            enhance: Box::new(f),
        }
    }
}

fn score(id: &str, condition: &str, reference: &[f64], degraded: &[f64], rate: u32) -> Result<MetricRow> {
    Ok(MetricRow {
        id: id.to_string(),
        condition: condition.to_string(),
        stoi: stoi(reference, degraded, rate)?,
        estoi: estoi(reference, degraded, rate)?,
        si_sdr_db: si_sdr(reference, degraded)?,
    })
}

/// Scores the noisy reference channel and every system on all simulated
/// entries of `manifest` (restricted to `split` if given), against the
/// clean reference channel. Writes the CSV to `out_csv` when given.
pub fn evaluate_corpus(
    manifest: &Manifest,
    split: Option<Split>,
    systems: &[System],
    out_csv: Option<&Path>,
) -> Result<MetricReport> {
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.kind == EntryKind::Simu && split.map_or(true, |s| e.split == s))
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidInput("no simulated entries to score".into()));
    }
    let per_utt = par::try_map_range(entries.len(), |i| -> Result<Vec<MetricRow>> {
        let e = entries[i];
        let (clean, _) = manifest
            .read_clean_noise(e)?
            .ok_or_else(|| Error::InvalidInput(format!("{}: no clean reference", e.id)))?;
        let mix = manifest.read_mix(e)?;
        let rate = mix.sample_rate();
        let reference = clean.channel(e.ref_channel);
        let mut rows = vec![score(&e.id, "noisy", reference, mix.channel(e.ref_channel), rate)?];
        for sys in systems {
            let out = (sys.enhance)(&mix, e.ref_channel)?;
            rows.push(score(&e.id, &sys.name, reference, &out, rate)?);
        }
        Ok(rows)
    })?;
    let mut rows = Vec::new();
    let mut order: Vec<String> = vec!["noisy".into()];
    order.extend(systems.iter().map(|s| s.name.clone()));
    for cond in &order {
        for utt in &per_utt {
            rows.extend(utt.iter().filter(|r| &r.condition == cond).cloned());
        }
    }
    let report = MetricReport::from_rows(rows);
    if let Some(path) = out_csv {
        std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}
