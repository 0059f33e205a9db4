//! WAV reading/writing and the JSON-lines dataset manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel audio held as `channels × length` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Audio("zero channels".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        Ok(AudioClip {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        AudioClip::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Pcm16,
    F32,
}

/// Outcome of a write: how many samples had to be clamped into range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteReport {
    pub clipped: usize,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    if m == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported codec {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    if interleaved.len() % m != 0 {
        return Err(Error::Audio(format!(
            "{}: truncated data chunk ({} samples for {m} channels)",
            path.display(),
            interleaved.len()
        )));
    }
    let frames = interleaved.len() / m;
    let channels = (0..m)
        .map(|c| (0..frames).map(|i| interleaved[i * m + c]).collect())
        .collect();
    AudioClip::new(channels, spec.sample_rate)
}

fn to_pcm16(v: f64, clipped: &mut usize) -> i16 {
    if !(-1.0..=1.0).contains(&v) {
        *clipped += 1;
    }
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, codec: Codec) -> Result<WriteReport> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: match codec {
            Codec::Pcm16 => 16,
            Codec::F32 => 32,
        },
        sample_format: match codec {
            Codec::Pcm16 => hound::SampleFormat::Int,
            Codec::F32 => hound::SampleFormat::Float,
        },
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = hound::WavWriter::new(BufWriter::new(file), spec)?;
    let mut report = WriteReport::default();
    for i in 0..clip.len() {
        for ch in clip.channels() {
            match codec {
                Codec::Pcm16 => writer.write_sample(to_pcm16(ch[i], &mut report.clipped))?,
                Codec::F32 => writer.write_sample(ch[i] as f32)?,
            }
        }
    }
    writer.finalize()?;
    if report.clipped > 0 {
        log::warn!("{}: clamped {} samples", path.display(), report.clipped);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Simu,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// One utterance of a corpus. Paths are stored as written in the manifest;
/// relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: EntryKind,
    pub split: Split,
    pub mix_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_path: Option<PathBuf>,
    pub ref_channel: usize,
}

impl ManifestEntry {
    /// Checks the kind/path invariants; the channel bound is checked once audio is loaded.
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            EntryKind::Simu => {
                if self.clean_path.is_none() {
                    return Err("simu entry missing clean_path".into());
                }
                if self.noise_path.is_none() {
                    return Err("simu entry missing noise_path".into());
                }
            }
            EntryKind::Real => {
                if self.clean_path.is_some() {
                    return Err("real entry must not carry clean_path".into());
                }
                if self.noise_path.is_some() {
                    return Err("real entry must not carry noise_path".into());
                }
            }
        }
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        Ok(())
    }

    pub fn check_channels(&self, num_channels: usize) -> Result<()> {
        if self.ref_channel >= num_channels {
            return Err(Error::InvalidInput(format!(
                "{}: ref_channel {} out of range for {num_channels} channels",
                self.id, self.ref_channel
            )));
        }
        Ok(())
    }
}

/// A loaded manifest: its entries plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn read_mix(&self, e: &ManifestEntry) -> Result<AudioClip> {
        let clip = read_wav(self.resolve(&e.mix_path))?;
        e.check_channels(clip.num_channels())?;
        Ok(clip)
    }

    /// Clean and noise images for a simu entry; `None` for real entries.
    pub fn read_clean_noise(&self, e: &ManifestEntry) -> Result<Option<(AudioClip, AudioClip)>> {
        match (&e.clean_path, &e.noise_path) {
            (Some(c), Some(n)) => Ok(Some((
                read_wav(self.resolve(c))?,
                read_wav(self.resolve(n))?,
            ))),
            _ => Ok(None),
        }
    }
}

/// Parses a JSON-lines manifest. Blank lines are skipped; any malformed or
/// invalid line aborts the load with its 1-based line number.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        entry.validate().map_err(err)?;
        entries.push(entry);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, entries })
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(m: usize, len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = (0..m)
            .map(|_| (0..len).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect())
            .collect();
        AudioClip::new(channels, 16000).unwrap()
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let clip = random_clip(2, 1000, 1);
        write_wav(&p, &clip, Codec::F32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), clip);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut clip = random_clip(3, 500, 2);
        clip.channels[0][0] = 1.0;
        clip.channels[1][0] = -1.0;
        write_wav(&p, &clip, Codec::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        for (a, b) in clip.channels().iter().flatten().zip(back.channels().iter().flatten()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn pcm16_min_value_reads_as_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().channel(0), &[-1.0]);
    }

    #[test]
    fn six_channel_deinterleave_matches_index_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("six.wav");
        let spec = hound::WavSpec {
            channels: 6,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        // Sample value = its interleaved position.
        for i in 0..18i16 {
            w.write_sample(i).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.num_channels(), 6);
        assert_eq!(clip.len(), 3);
        assert_eq!(clip.channel(4)[2], (2 * 6 + 4) as f64 / 32768.0);
    }

    #[test]
    fn pcm16_clamps_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let clip = AudioClip::mono(vec![1.5, 0.25, -3.0, 1.5, 0.0], 16000).unwrap();
        let report = write_wav(&p, &clip, Codec::Pcm16).unwrap();
        assert_eq!(report.clipped, 3);
        let mut r = hound::WavReader::open(&p).unwrap();
        let raw: Vec<i16> = r.samples::<i16>().map(|s| s.unwrap()).collect();
        assert_eq!(raw[0], 32767);
        assert_eq!(raw[2], -32768);
    }

    #[test]
    fn rejects_unsupported_codec() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Audio(_))));
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(&p, &random_clip(2, 100, 3), Codec::F32).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 6]).unwrap();
        assert!(read_wav(&p).is_err());
    }

    fn line(id: &str, kind: &str, with_paths: bool) -> String {
        let mut s = format!(
            r#"{{"id":"{id}","kind":"{kind}","split":"train","mix_path":"mix/{id}.wav","ref_channel":0"#
        );
        if with_paths {
            s.push_str(&format!(r#","clean_path":"c/{id}.wav","noise_path":"n/{id}.wav""#));
        }
        s.push('}');
        s
    }

    #[test]
    fn manifest_simu_line_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, line("u1", "simu", true) + "\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].kind, EntryKind::Simu);
        assert_eq!(m.resolve(&m.entries[0].mix_path), dir.path().join("mix/u1.wav"));
    }

    #[test]
    fn manifest_real_with_clean_path_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, line("r1", "real", true) + "\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("clean_path"), "{err}");
    }

    #[test]
    fn manifest_reports_bad_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let bad = 57;
        let text: String = (1..=100)
            .map(|i| {
                if i == bad {
                    "{\"id\": \"broken\",\n".replace('\n', "") + "\n"
                } else {
                    line(&format!("u{i}"), "simu", true) + "\n"
                }
            })
            .collect();
        std::fs::write(&p, text).unwrap();
        match load_manifest(&p) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, bad),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let entries: Vec<ManifestEntry> = (0..10)
            .map(|i| serde_json::from_str(&line(&format!("u{}", 9 - i), "simu", true)).unwrap())
            .collect();
        write_manifest(&p, &entries).unwrap();
        assert_eq!(load_manifest(&p).unwrap().entries, entries);
    }
}
