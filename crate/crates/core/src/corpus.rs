//! Synthetic multichannel corpus: speech-like sources, an anechoic
//! delay-and-attenuate array model, additive noise at a controlled SNR.
//!
//! Each utterance is generated from a seed derived from `(cfg.seed, id)`, so
//! the output does not depend on generation order or on which other
//! utterances exist in the corpus.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{write_manifest, write_wav, AudioClip, Codec, EntryKind, ManifestEntry, Split};
use crate::dsp::windowed_sinc;
use crate::error::{Error, Result};
use crate::par;

/// Half-width in samples of the fractional-delay interpolation kernel.
const DELAY_KERNEL_HALF_WIDTH: f64 = 32.0;

/// Clean and noise images are rounded to this grid before mixing, which keeps
/// `mix == clean + noise` exact once all three are stored as float32.
const STORAGE_GRID: f64 = 1.0 / 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    White,
    Pink,
    BabbleLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mic {
    /// Propagation delay relative to the reference microphone, in samples.
    pub delay: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_channels: usize,
    pub sample_rate: u32,
    pub utterance_seconds: f64,
    pub snr_range_db: [f64; 2],
    pub array: Vec<Mic>,
    /// Largest allowed `|delay|`, in samples.
    pub max_delay: f64,
    pub noise_kind: NoiseKind,
    /// Fraction of noise power shared by all channels (0 = spatially white).
    pub common_noise_fraction: f64,
    pub ref_channel: usize,
    pub seed: u64,
    /// Simulated utterances with clean/noise images.
    pub counts: SplitCounts,
    /// Utterances written without clean/noise images.
    pub real_counts: SplitCounts,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_channels: 6,
            sample_rate: 16_000,
            utterance_seconds: 1.5,
            snr_range_db: [0.0, 0.0],
            array: default_array(),
            max_delay: 256.0,
            noise_kind: NoiseKind::White,
            common_noise_fraction: 0.0,
            ref_channel: 4,
            seed: 1,
            counts: SplitCounts {
                train: 20,
                dev: 5,
                test: 5,
            },
            real_counts: SplitCounts::default(),
        }
    }
}

/// Six microphones; the fifth (index 4) is the reference.
fn default_array() -> Vec<Mic> {
    [
        (2.5, 0.90),
        (1.25, 0.95),
        (3.0, 0.85),
        (0.75, 1.05),
        (0.0, 1.00),
        (1.75, 0.92),
    ]
    .into_iter()
    .map(|(delay, gain)| Mic { delay, gain })
    .collect()
}

impl SimConfig {
    pub fn utterance_len(&self) -> usize {
        (self.utterance_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_channels == 0 {
            return bad("num_channels must be at least 1".into());
        }
        if self.array.len() != self.num_channels {
            return bad(format!(
                "array describes {} microphones but num_channels = {}",
                self.array.len(),
                self.num_channels
            ));
        }
        if self.ref_channel >= self.num_channels {
            return bad(format!("ref_channel {} out of range", self.ref_channel));
        }
        let r = self.array[self.ref_channel];
        if r.delay != 0.0 || r.gain != 1.0 {
            return bad("reference microphone must have delay 0 and gain 1".into());
        }
        for (m, mic) in self.array.iter().enumerate() {
            if mic.delay.abs() > self.max_delay {
                return bad(format!(
                    "mic {m}: delay {} exceeds bound {}",
                    mic.delay, self.max_delay
                ));
            }
            if !(mic.gain > 0.0 && mic.gain.is_finite()) {
                return bad(format!("mic {m}: gain must be positive"));
            }
        }
        if self.utterance_len() == 0 {
            return bad("utterance_seconds too short".into());
        }
        if self.snr_range_db[0] > self.snr_range_db[1] {
            return bad("snr_range_db must be [low, high]".into());
        }
        if !(0.0..=1.0).contains(&self.common_noise_fraction) {
            return bad("common_noise_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-utterance seed: first eight bytes of SHA-256 over the corpus seed and id.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Harmonic source with a wandering pitch contour in 80–300 Hz, three moving
/// formant resonances and a syllabic amplitude envelope (2–8 Hz) that drops
/// to silence between syllables. Peak-normalized to 0.5.
pub fn synth_speech_like(seed: u64, length: usize, sample_rate: u32) -> Vec<f64> {
    assert!(length > 0, "length must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;

    let base_f0: f64 = rng.gen_range(95.0..220.0);
    let vib_rate: f64 = rng.gen_range(0.3..1.5);
    let vib_depth: f64 = rng.gen_range(0.08..0.25);
    let vib_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let syl_rate: f64 = rng.gen_range(2.0..8.0);
    let syl_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    // Formant centers and how far each one sweeps per syllable.
    let formants: [(f64, f64, f64); 3] = [
        (rng.gen_range(350.0..800.0), rng.gen_range(50.0..250.0), 90.0),
        (rng.gen_range(900.0..2200.0), rng.gen_range(100.0..500.0), 140.0),
        (rng.gen_range(2400.0..3200.0), rng.gen_range(50.0..300.0), 200.0),
    ];
    let formant_phase: [f64; 3] = [
        rng.gen_range(0.0..2.0 * PI),
        rng.gen_range(0.0..2.0 * PI),
        rng.gen_range(0.0..2.0 * PI),
    ];

    let mut out = Vec::with_capacity(length);
    let mut phase = 0.0f64;
    for n in 0..length {
        let t = n as f64 / fs;
        let f0 = (base_f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin()))
            .clamp(80.0, 300.0);
        phase += 2.0 * PI * f0 / fs;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let env = (2.0 * PI * syl_rate * t + syl_phase).sin().max(0.0).powf(1.5);
        if env == 0.0 {
            out.push(0.0);
            continue;
        }
        let centers: Vec<(f64, f64)> = formants
            .iter()
            .zip(formant_phase)
            .map(|(&(c, sweep, bw), ph)| (c + sweep * (PI * syl_rate * t + ph).sin(), bw))
            .collect();
        let mut s = 0.0;
        let mut k = 1usize;
        while (k as f64) * f0 < nyquist * 0.9 {
            let fk = k as f64 * f0;
            let shape: f64 = centers
                .iter()
                .map(|&(c, bw)| (-(fk - c).powi(2) / (2.0 * bw * bw)).exp())
                .sum();
            let amp = (shape + 0.05) / (k as f64).sqrt();
            s += amp * (k as f64 * phase).sin();
            k += 1;
        }
        out.push(env * s);
    }
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        let g = 0.5 / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

/// Delays `x` by `delay` samples (zero-filled outside the signal). Integer
/// delays are exact shifts; fractional delays use windowed-sinc interpolation.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let n = x.len();
    if delay.fract() == 0.0 {
        let d = delay as isize;
        return (0..n as isize)
            .map(|i| {
                let j = i - d;
                if j >= 0 && (j as usize) < n {
                    x[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
    }
    let hw = DELAY_KERNEL_HALF_WIDTH;
    (0..n)
        .map(|i| {
            let center = i as f64 - delay;
            let lo = (center - hw).ceil().max(0.0) as usize;
            let hi = ((center + hw).floor() as isize).min(n as isize - 1);
            if hi < lo as isize {
                return 0.0;
            }
            (lo..=hi as usize)
                .map(|k| x[k] * windowed_sinc(center - k as f64, hw, 1.0))
                .sum()
        })
        .collect()
}

/// Places a source at the array: channel `m` is `gain_m` times the source
/// delayed by `delay_m`.
pub fn spatialize(source: &[f64], cfg: &SimConfig) -> Result<AudioClip> {
    cfg.validate()?;
    let channels = cfg
        .array
        .iter()
        .map(|mic| {
            fractional_delay(source, mic.delay)
                .into_iter()
                .map(|v| v * mic.gain)
                .collect()
        })
        .collect();
    AudioClip::new(channels, cfg.sample_rate)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Scales `noise` so that the clean-to-noise energy ratio on `ref_channel`
/// equals `snr_db`, and returns `(clean + scaled_noise, scaled_noise)`.
pub fn mix_at_snr(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    ref_channel: usize,
) -> Result<(AudioClip, AudioClip)> {
    if clean.num_channels() != noise.num_channels() || clean.len() != noise.len() {
        return Err(Error::Shape("clean and noise clips differ in shape".into()));
    }
    if ref_channel >= clean.num_channels() {
        return Err(Error::InvalidInput(format!("ref_channel {ref_channel} out of range")));
    }
    let ec = energy(clean.channel(ref_channel));
    let en = energy(noise.channel(ref_channel));
    if ec == 0.0 {
        return Err(Error::InvalidInput("clean signal is silent".into()));
    }
    if en == 0.0 {
        return Err(Error::InvalidInput("noise signal is silent".into()));
    }
    let scale = (ec / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<Vec<f64>> = noise
        .channels()
        .iter()
        .map(|c| c.iter().map(|v| v * scale).collect())
        .collect();
    let mix: Vec<Vec<f64>> = clean
        .channels()
        .iter()
        .zip(&scaled)
        .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok((
        AudioClip::new(mix, clean.sample_rate())?,
        AudioClip::new(scaled, clean.sample_rate())?,
    ))
}

fn white(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Paul Kellet's refined pink filter applied to white noise.
fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    white(rng, len)
        .into_iter()
        .map(|w| {
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

fn babble(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    const TALKERS: usize = 5;
    let mut out = vec![0.0; len];
    for _ in 0..TALKERS {
        let s = synth_speech_like(rng.gen(), len, sample_rate);
        out.iter_mut().zip(s).for_each(|(o, v)| *o += v);
    }
    out
}

/// Multichannel noise of the configured kind, with an optional component
/// shared across channels.
pub fn synth_noise(cfg: &SimConfig, seed: u64, len: usize) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| match cfg.noise_kind {
        NoiseKind::White => white(rng, len),
        NoiseKind::Pink => pink(rng, len),
        NoiseKind::BabbleLike => babble(rng, len, cfg.sample_rate),
    };
    let common = draw(&mut rng);
    let a = cfg.common_noise_fraction;
    let channels = (0..cfg.num_channels)
        .map(|_| {
            let own = draw(&mut rng);
            own.iter()
                .zip(&common)
                .map(|(o, c)| (1.0 - a).sqrt() * o + a.sqrt() * c)
                .collect()
        })
        .collect();
    AudioClip::new(channels, cfg.sample_rate)
}

/// One generated utterance with its images.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub clean: AudioClip,
    pub noise: AudioClip,
    pub mix: AudioClip,
    pub snr_db: f64,
}

fn quantize(clip: &AudioClip) -> Result<AudioClip> {
    let channels = clip
        .channels()
        .iter()
        .map(|c| c.iter().map(|v| (v / STORAGE_GRID).round() * STORAGE_GRID).collect())
        .collect();
    AudioClip::new(channels, clip.sample_rate())
}

/// Generates the utterance named `id`. Clean and noise images are rounded to
/// the 16-bit grid and the mix is their exact sum.
pub fn generate_utterance(cfg: &SimConfig, id: &str) -> Result<Utterance> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.utterance_len();
    let source = synth_speech_like(rng.gen(), len, cfg.sample_rate);
    let clean = spatialize(&source, cfg)?;
    let noise = synth_noise(cfg, rng.gen(), len)?;
    let [lo, hi] = cfg.snr_range_db;
    let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let (_, scaled) = mix_at_snr(&clean, &noise, snr_db, cfg.ref_channel)?;
    let clean = quantize(&clean)?;
    let noise = quantize(&scaled)?;
    let mix = AudioClip::new(
        clean
            .channels()
            .iter()
            .zip(noise.channels())
            .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect(),
        cfg.sample_rate,
    )?;
    Ok(Utterance {
        id: id.to_string(),
        clean,
        noise,
        mix,
        snr_db,
    })
}

/// Ids of every utterance in manifest order: splits in train/dev/test order,
/// simulated before real within each split.
pub fn corpus_ids(cfg: &SimConfig) -> Vec<(String, Split, EntryKind)> {
    let mut ids = Vec::new();
    for split in Split::ALL {
        for (kind, counts, tag) in [
            (EntryKind::Simu, &cfg.counts, "simu"),
            (EntryKind::Real, &cfg.real_counts, "real"),
        ] {
            for i in 0..counts.get(split) {
                ids.push((format!("{}_{tag}_{i:04}", split.as_str()), split, kind));
            }
        }
    }
    ids
}

/// Writes every utterance as float32 WAVs under `out_dir` plus
/// `out_dir/manifest.jsonl`, returning the manifest path.
pub fn build_corpus(cfg: &SimConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["mix", "clean", "noise"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let ids = corpus_ids(cfg);
    let entries = par::try_map_range(ids.len(), |i| -> Result<ManifestEntry> {
        let (id, split, kind) = &ids[i];
        let utt = generate_utterance(cfg, id)?;
        let mix_path = PathBuf::from(format!("mix/{id}.wav"));
        write_wav(out_dir.join(&mix_path), &utt.mix, Codec::F32)?;
        let (clean_path, noise_path) = match kind {
            EntryKind::Simu => {
                let c = PathBuf::from(format!("clean/{id}.wav"));
                let n = PathBuf::from(format!("noise/{id}.wav"));
                write_wav(out_dir.join(&c), &utt.clean, Codec::F32)?;
                write_wav(out_dir.join(&n), &utt.noise, Codec::F32)?;
                (Some(c), Some(n))
            }
            EntryKind::Real => (None, None),
        };
        Ok(ManifestEntry {
            id: id.clone(),
            kind: *kind,
            split: *split,
            mix_path,
            clean_path,
            noise_path,
            ref_channel: cfg.ref_channel,
        })
    })?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
