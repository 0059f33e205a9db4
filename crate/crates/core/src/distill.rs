//! Training of the noise-aware baseline, the teacher on beamformed input and
//! the student distilled from the teacher's soft masks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{EntryKind, Manifest, ManifestEntry, Split};
use crate::beamformer::{beamform_fused, beamform_utterance};
use crate::corpus::derive_seed;
use crate::dsp::{magnitude, stft, stft_multichannel, StftConfig};
use crate::error::{Error, Result};
use crate::masks::{ideal_binary_masks, IbmConfig, MaskKind, MaskPlane};
use crate::nn::loss::PRED_CLAMP;
use crate::nn::{
    adam_step, forward, loss, loss_and_grad, normalize_features, AdamConfig, AdamState, Checkpoint, HeadSet,
    LossTerm, LossWeights, MaskNetParams, NetDims, OutputActivation,
};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Baseline,
    Teacher,
    Student,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Teacher => "teacher",
            TrainMode::Student => "student",
        }
    }

    pub fn heads(&self) -> HeadSet {
        match self {
            TrainMode::Teacher => HeadSet::Speech,
            _ => HeadSet::SpeechNoise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StopPolicy {
    /// Stop once the dev loss has not improved for `patience` epochs; keep
    /// the parameters of the best dev epoch.
    #[default]
    EarlyStopping,
    /// Run exactly `max_epochs` epochs and keep the last parameters.
    FixedEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub stop: StopPolicy,
    pub dims: NetDims,
    pub activation: OutputActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 30,
            patience: 5,
            seed: 1,
            loss_weights: LossWeights::default(),
            stop: StopPolicy::EarlyStopping,
            dims: NetDims::default(),
            activation: OutputActivation::Sigmoid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.dims.input == 0 || self.dims.hidden == 0 || self.dims.ff == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        self.loss_weights.validate()
    }
}

/// Signal-processing settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub stft: StftConfig,
    pub ibm: IbmConfig,
    /// Diagonal loading of the noise PSD.
    pub gev_eps: f64,
    /// Beamform the teacher's input with ideal masks instead of the baseline network's.
    pub oracle_teacher_input: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            stft: StftConfig::default(),
            ibm: IbmConfig::default(),
            gev_eps: crate::beamformer::DEFAULT_EPS,
            oracle_teacher_input: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping rule over dev losses of epochs `1..=history.len()`.
/// Returns the decision and the (1-based) epoch of the first minimum; stops
/// once `patience` epochs have passed without a strict improvement.
pub fn early_stop(history: &[f64], patience: usize) -> (StopDecision, usize) {
    if history.is_empty() {
        return (StopDecision::Continue, 0);
    }
    let mut best = 0;
    for (i, &v) in history.iter().enumerate() {
        if v < history[best] {
            best = i;
        }
    }
    let since = history.len() - 1 - best;
    let decision = if since >= patience.max(1) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    };
    (decision, best + 1)
}

/// One training or evaluation sequence set for an utterance.
#[derive(Debug, Clone)]
pub struct TrainUtt {
    pub id: String,
    pub split: Split,
    pub kind: EntryKind,
    /// Normalized `T × B` features, one per input sequence.
    pub inputs: Vec<Array2<f64>>,
    pub ibm_speech: Option<Array2<f64>>,
    pub ibm_noise: Option<Array2<f64>>,
    pub soft: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub utts: Vec<TrainUtt>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrainUtt> {
        self.utts.iter().filter(move |u| u.split == split)
    }

    /// Drops every real utterance.
    pub fn simu_only(&self) -> Dataset {
        Dataset {
            utts: self.utts.iter().filter(|u| u.kind == EntryKind::Simu).cloned().collect(),
        }
    }
}

/// Loss of one utterance, averaged over its input sequences. Component
/// terms are unweighted cross-entropies; absent terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UttLoss {
    pub total: f64,
    pub st: Option<f64>,
    pub x: Option<f64>,
    pub n: Option<f64>,
}

#[derive(Clone, Copy)]
enum Term {
    St,
    X,
    N,
}

fn utt_terms<'a>(mode: TrainMode, utt: &'a TrainUtt, w: &LossWeights) -> Result<Vec<(Term, LossTerm<'a>)>> {
    let need = |a: &'a Option<Array2<f64>>, what: &str| {
        a.as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing {what} target", utt.id)))
    };
    let t = |kind, target: &'a Array2<f64>, weight| LossTerm {
        head: kind,
        target: target.view(),
        weight,
    };
    Ok(match (mode, utt.kind) {
        (TrainMode::Baseline, _) => vec![
            (Term::X, t(MaskKind::Speech, need(&utt.ibm_speech, "speech IBM")?, 1.0)),
            (Term::N, t(MaskKind::Noise, need(&utt.ibm_noise, "noise IBM")?, 1.0)),
        ],
        (TrainMode::Teacher, _) => vec![(Term::X, t(MaskKind::Speech, need(&utt.ibm_speech, "speech IBM")?, 1.0))],
        (TrainMode::Student, EntryKind::Simu) => vec![
            (Term::St, t(MaskKind::Speech, need(&utt.soft, "soft")?, w.distill)),
            (Term::X, t(MaskKind::Speech, need(&utt.ibm_speech, "speech IBM")?, w.speech)),
            (Term::N, t(MaskKind::Noise, need(&utt.ibm_noise, "noise IBM")?, w.noise)),
        ],
        // Real recordings have no clean reference: distillation term only, unweighted.
        (TrainMode::Student, EntryKind::Real) => vec![(Term::St, t(MaskKind::Speech, need(&utt.soft, "soft")?, 1.0))],
    })
}

fn summarize(tags: &[Term], per_seq: &[(f64, Vec<f64>)]) -> UttLoss {
    let k = per_seq.len() as f64;
    let total = per_seq.iter().map(|(t, _)| t).sum::<f64>() / k;
    let mut out = UttLoss {
        total,
        st: None,
        x: None,
        n: None,
    };
    for (i, tag) in tags.iter().enumerate() {
        let v = per_seq.iter().map(|(_, terms)| terms[i]).sum::<f64>() / k;
        match tag {
            Term::St => out.st = Some(v),
            Term::X => out.x = Some(v),
            Term::N => out.n = Some(v),
        }
    }
    out
}

/// Loss of `utt` under `mode`, without gradients.
pub fn utterance_loss(params: &MaskNetParams, utt: &TrainUtt, mode: TrainMode, w: &LossWeights) -> Result<UttLoss> {
    let tagged = utt_terms(mode, utt, w)?;
    let tags: Vec<Term> = tagged.iter().map(|(t, _)| *t).collect();
    let terms: Vec<LossTerm> = tagged.into_iter().map(|(_, t)| t).collect();
    let per_seq = par::try_map_range(utt.inputs.len(), |m| {
        loss(params, utt.inputs[m].view(), &terms).map(|v| (v.total, v.terms))
    })?;
    Ok(summarize(&tags, &per_seq))
}

/// Loss and gradient of `utt`, both averaged over its input sequences. The
/// per-sequence gradients are summed in sequence order.
pub fn utterance_loss_and_grad(
    params: &MaskNetParams,
    utt: &TrainUtt,
    mode: TrainMode,
    w: &LossWeights,
) -> Result<(UttLoss, MaskNetParams)> {
    let tagged = utt_terms(mode, utt, w)?;
    let tags: Vec<Term> = tagged.iter().map(|(t, _)| *t).collect();
    let terms: Vec<LossTerm> = tagged.into_iter().map(|(_, t)| t).collect();
    let results = par::try_map_range(utt.inputs.len(), |m| loss_and_grad(params, utt.inputs[m].view(), &terms))?;
    let mut grad = params.zeros_like();
    let mut per_seq = Vec::with_capacity(results.len());
    for (value, g) in results {
        grad.add_scaled(&g, 1.0);
        per_seq.push((value.total, value.terms));
    }
    grad.scale(1.0 / per_seq.len() as f64);
    Ok((summarize(&tags, &per_seq), grad))
}

/// Per-utterance losses of every utterance in `split`, in dataset order.
pub fn utterance_losses(
    params: &MaskNetParams,
    data: &Dataset,
    split: Split,
    mode: TrainMode,
    w: &LossWeights,
) -> Result<Vec<(String, UttLoss)>> {
    data.split(split)
        .map(|u| utterance_loss(params, u, mode, w).map(|l| (u.id.clone(), l)))
        .collect()
}

fn mean_loss(losses: &[(String, UttLoss)]) -> UttLoss {
    let k = losses.len() as f64;
    let avg = |f: &dyn Fn(&UttLoss) -> Option<f64>| {
        let vals: Vec<f64> = losses.iter().filter_map(|(_, l)| f(l)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    UttLoss {
        total: losses.iter().map(|(_, l)| l.total).sum::<f64>() / k,
        st: avg(&|l| l.st),
        x: avg(&|l| l.x),
        n: avg(&|l| l.n),
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub mode: TrainMode,
    pub epoch: usize,
    pub split: Split,
    /// Mean per-utterance loss. For the train split of epochs ≥ 1 this is the
    /// running mean over the epoch's updates; otherwise it is evaluated at
    /// the parameters reached at the end of the epoch.
    pub loss: f64,
    pub loss_st: Option<f64>,
    pub loss_x: Option<f64>,
    pub loss_n: Option<f64>,
    pub weights: LossWeights,
    pub wall_time_s: f64,
}

pub fn write_log(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?).expect("string write");
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    /// Dev loss per trained epoch, epoch 1 first.
    pub dev_history: Vec<f64>,
    /// Dev loss of the initial parameters.
    pub initial_dev_loss: f64,
    /// Train-split per-utterance losses of the initial parameters.
    pub initial_train_losses: Vec<(String, UttLoss)>,
    pub best_epoch: usize,
    /// Best (or, for fixed-epoch runs, final) parameters at checkpoint precision.
    pub checkpoint: Checkpoint,
    /// Parameters after the last epoch, full precision.
    pub final_params: MaskNetParams,
}

/// Trains a fresh network on `data`. The minibatch is one utterance; its
/// loss and gradient are means over the utterance's input sequences.
pub fn train(mode: TrainMode, data: &Dataset, cfg: &TrainConfig, config_digest: &str) -> Result<TrainRun> {
    cfg.validate()?;
    let w = cfg.loss_weights;
    let train_idx: Vec<usize> = (0..data.utts.len()).filter(|&i| data.utts[i].split == Split::Train).collect();
    if train_idx.is_empty() {
        return Err(Error::InvalidInput(format!("no train utterances usable for {} training", mode.as_str())));
    }
    if data.split(Split::Dev).next().is_none() {
        return Err(Error::InvalidInput("no dev utterances for validation".into()));
    }
    if let Some(u) = data.utts.iter().find(|u| u.inputs.iter().any(|x| x.ncols() != cfg.dims.input)) {
        return Err(Error::Shape(format!(
            "{}: features have {} bins, network expects {}",
            u.id,
            u.inputs[0].ncols(),
            cfg.dims.input
        )));
    }
    let mut params = MaskNetParams::init(cfg.dims, mode.heads(), cfg.activation, cfg.seed);
    let record = |epoch, split, l: &UttLoss, secs| EpochRecord {
        mode,
        epoch,
        split,
        loss: l.total,
        loss_st: l.st,
        loss_x: l.x,
        loss_n: l.n,
        weights: w,
        wall_time_s: secs,
    };

    let start = Instant::now();
    let initial_train_losses = utterance_losses(&params, data, Split::Train, mode, &w)?;
    let initial_dev = mean_loss(&utterance_losses(&params, data, Split::Dev, mode, &w)?);
    let secs = start.elapsed().as_secs_f64();
    let mut records = vec![
        record(0, Split::Train, &mean_loss(&initial_train_losses), secs),
        record(0, Split::Dev, &initial_dev, secs),
    ];

    let mut adam = AdamState::new(params.num_params());
    let mut dev_history = Vec::new();
    let mut best: Option<(usize, f64, MaskNetParams)> = None;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch{epoch}"))));
        let mut losses = Vec::with_capacity(order.len());
        for &i in &order {
            let utt = &data.utts[i];
            let (l, g) = utterance_loss_and_grad(&params, utt, mode, &w)?;
            adam_step(&mut params, &g, &mut adam, &cfg.adam);
            losses.push((utt.id.clone(), l));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let dev = mean_loss(&utterance_losses(&params, data, Split::Dev, mode, &w)?);
        let secs = start.elapsed().as_secs_f64();
        records.push(record(epoch, Split::Train, &mean_loss(&losses), secs));
        records.push(record(epoch, Split::Dev, &dev, secs));
        log::info!(
            "{} epoch {epoch}: train {:.5} dev {:.5} ({secs:.1}s)",
            mode.as_str(),
            mean_loss(&losses).total,
            dev.total
        );
        dev_history.push(dev.total);
        if best.as_ref().map_or(true, |(_, b, _)| dev.total < *b) {
            best = Some((epoch, dev.total, params.clone()));
        }
        if cfg.stop == StopPolicy::EarlyStopping && early_stop(&dev_history, cfg.patience).0 == StopDecision::Stop {
            break;
        }
    }
    let (best_epoch, chosen) = match cfg.stop {
        StopPolicy::FixedEpochs => (dev_history.len(), params.clone()),
        StopPolicy::EarlyStopping => {
            let (e, _, p) = best.expect("at least one epoch");
            (e, p)
        }
    };
    Ok(TrainRun {
        mode,
        config: cfg.clone(),
        records,
        dev_history,
        initial_dev_loss: initial_dev.total,
        initial_train_losses,
        best_epoch,
        checkpoint: Checkpoint::new(&chosen, best_epoch, config_digest),
        final_params: params,
    })
}

fn check_rate(manifest: &Manifest, e: &ManifestEntry, rate: u32, clip_rate: u32) -> Result<()> {
    if clip_rate != rate {
        return Err(Error::InvalidInput(format!(
            "{}: {} Hz audio, pipeline runs at {rate} Hz ({})",
            e.id,
            clip_rate,
            manifest.resolve(&e.mix_path).display()
        )));
    }
    Ok(())
}

fn channel_features(spec: &crate::dsp::Spectrogram) -> Vec<Array2<f64>> {
    let mag = magnitude(spec);
    (0..spec.num_channels())
        .map(|m| normalize_features(mag.index_axis(Axis(0), m)))
        .collect()
}

/// Ideal speech and noise masks of a simulated entry from its reference
/// channel's clean and noise signals.
pub fn reference_ibms(manifest: &Manifest, e: &ManifestEntry, data: &DataConfig) -> Result<(MaskPlane, MaskPlane)> {
    let (clean, noise) = manifest
        .read_clean_noise(e)?
        .ok_or_else(|| Error::InvalidInput(format!("{}: simulated entry without clean/noise", e.id)))?;
    check_rate(manifest, e, data.stft.sample_rate, clean.sample_rate())?;
    let cs = stft(clean.channel(e.ref_channel), &data.stft)?;
    let ns = stft(noise.channel(e.ref_channel), &data.stft)?;
    ideal_binary_masks(&cs, &ns, &data.ibm)
}

fn train_dev_entries(manifest: &Manifest, kinds: &[EntryKind]) -> Vec<ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split != Split::Test && kinds.contains(&e.kind))
        .cloned()
        .collect()
}

/// Per-channel noisy features with reference-channel IBM targets for every
/// simulated train and dev entry.
pub fn prepare_baseline(manifest: &Manifest, data: &DataConfig) -> Result<Dataset> {
    let entries = train_dev_entries(manifest, &[EntryKind::Simu]);
    let utts = par::try_map_range(entries.len(), |i| {
        let e = &entries[i];
        let mix = manifest.read_mix(e)?;
        check_rate(manifest, e, data.stft.sample_rate, mix.sample_rate())?;
        let spec = stft_multichannel(mix.channels(), &data.stft)?;
        let (ix, in_) = reference_ibms(manifest, e, data)?;
        Ok::<_, Error>(TrainUtt {
            id: e.id.clone(),
            split: e.split,
            kind: e.kind,
            inputs: channel_features(&spec),
            ibm_speech: Some(ix.into_values()),
            ibm_noise: Some(in_.into_values()),
            soft: None,
        })
    })?;
    Ok(Dataset { utts })
}

/// Beamformed single-channel features with reference-channel speech IBM
/// targets. The beamformer is driven by `baseline`'s masks, or by the ideal
/// masks when `data.oracle_teacher_input` is set.
pub fn prepare_teacher(manifest: &Manifest, data: &DataConfig, baseline: Option<&MaskNetParams>) -> Result<Dataset> {
    if baseline.is_none() && !data.oracle_teacher_input {
        return Err(Error::InvalidInput("teacher training needs a baseline checkpoint".into()));
    }
    let entries = train_dev_entries(manifest, &[EntryKind::Simu]);
    let utts = par::try_map_range(entries.len(), |i| {
        let e = &entries[i];
        let mix = manifest.read_mix(e)?;
        check_rate(manifest, e, data.stft.sample_rate, mix.sample_rate())?;
        let (ix, in_) = reference_ibms(manifest, e, data)?;
        let out = match (data.oracle_teacher_input, baseline) {
            (false, Some(p)) => beamform_utterance(&mix, p, &data.stft, data.gev_eps, e.ref_channel)?,
            _ => {
                let spec = stft_multichannel(mix.channels(), &data.stft)?;
                beamform_fused(&spec, ix.clone(), in_, data.gev_eps, e.ref_channel)?
            }
        };
        Ok::<_, Error>(TrainUtt {
            id: e.id.clone(),
            split: e.split,
            kind: e.kind,
            inputs: channel_features(&out.spectrogram),
            ibm_speech: Some(ix.into_values()),
            ibm_noise: None,
            soft: None,
        })
    })?;
    Ok(Dataset { utts })
}

/// Per-channel noisy features for every train and dev entry (simulated and
/// real), soft targets from `cache`, and IBM targets for simulated entries.
pub fn prepare_student(manifest: &Manifest, data: &DataConfig, cache: &SoftTargetCache) -> Result<Dataset> {
    let entries = train_dev_entries(manifest, &[EntryKind::Simu, EntryKind::Real]);
    let utts = par::try_map_range(entries.len(), |i| {
        let e = &entries[i];
        let soft = cache
            .get(&e.id)
            .ok_or_else(|| Error::InvalidInput(format!("{}: no soft target cached", e.id)))?;
        let mix = manifest.read_mix(e)?;
        check_rate(manifest, e, data.stft.sample_rate, mix.sample_rate())?;
        let spec = stft_multichannel(mix.channels(), &data.stft)?;
        if soft.dim() != spec.plane_dim() {
            return Err(Error::Shape(format!(
                "{}: soft target {:?} vs spectrogram {:?}",
                e.id,
                soft.dim(),
                spec.plane_dim()
            )));
        }
        let (ibm_speech, ibm_noise) = match e.kind {
            EntryKind::Simu => {
                let (ix, in_) = reference_ibms(manifest, e, data)?;
                (Some(ix.into_values()), Some(in_.into_values()))
            }
            EntryKind::Real => (None, None),
        };
        Ok::<_, Error>(TrainUtt {
            id: e.id.clone(),
            split: e.split,
            kind: e.kind,
            inputs: channel_features(&spec),
            ibm_speech,
            ibm_noise,
            soft: Some(soft.values().clone()),
        })
    })?;
    Ok(Dataset { utts })
}

/// Teacher speech masks on beamformed input, keyed by utterance id. Values
/// are stored at single precision, clamped into `[1e-7, 1 - 1e-7]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoftTargetCache {
    targets: BTreeMap<String, MaskPlane>,
}

impl SoftTargetCache {
    pub fn get(&self, id: &str) -> Option<&MaskPlane> {
        self.targets.get(id)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn insert(&mut self, id: impl Into<String>, mask: &MaskPlane) -> Result<()> {
        let v = mask
            .values()
            .mapv(|x| (x.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP) as f32) as f64);
        self.targets.insert(id.into(), MaskPlane::soft(v, MaskKind::Speech)?);
        Ok(())
    }

    /// Writes one `<id>.mask` file per utterance into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, m) in &self.targets {
            m.save(dir.join(format!("{id}.mask")))?;
        }
        Ok(())
    }

    /// Reads every `*.mask` file in `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut targets = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "mask") {
                let id = path.file_stem().expect("has stem").to_string_lossy().into_owned();
                targets.insert(id, MaskPlane::load(&path)?);
            }
        }
        Ok(SoftTargetCache { targets })
    }

    /// True if every train and dev entry of `manifest` has a target.
    pub fn covers(&self, manifest: &Manifest) -> bool {
        manifest
            .entries
            .iter()
            .filter(|e| e.split != Split::Test)
            .all(|e| self.targets.contains_key(&e.id))
    }
}

/// Teacher mask for one multichannel mixture: beamform with the baseline's
/// masks, then run the teacher on the beamformed magnitude.
pub fn teacher_mask(
    mix: &crate::audio_io::AudioClip,
    baseline: &MaskNetParams,
    teacher: &MaskNetParams,
    data: &DataConfig,
    ref_channel: usize,
) -> Result<MaskPlane> {
    let out = beamform_utterance(mix, baseline, &data.stft, data.gev_eps, ref_channel)?;
    let feats = channel_features(&out.spectrogram);
    let o = forward(teacher, feats[0].view())?;
    MaskPlane::soft(o.speech, MaskKind::Speech)
}

/// Soft targets for every train and dev entry, simulated and real.
pub fn build_soft_targets(
    manifest: &Manifest,
    data: &DataConfig,
    baseline: &MaskNetParams,
    teacher: &MaskNetParams,
) -> Result<SoftTargetCache> {
    let entries = train_dev_entries(manifest, &[EntryKind::Simu, EntryKind::Real]);
    let masks = par::try_map_range(entries.len(), |i| {
        let e = &entries[i];
        let mix = manifest.read_mix(e)?;
        check_rate(manifest, e, data.stft.sample_rate, mix.sample_rate())?;
        if mix.num_channels() < 2 {
            return Err(Error::InvalidInput(format!("{}: beamforming needs at least 2 channels", e.id)));
        }
        teacher_mask(&mix, baseline, teacher, data, e.ref_channel)
    })?;
    let mut cache = SoftTargetCache::default();
    for (e, m) in entries.iter().zip(&masks) {
        cache.insert(e.id.clone(), m)?;
    }
    Ok(cache)
}

fn require_input_dims(cfg: &TrainConfig, data: &DataConfig) -> Result<()> {
    if cfg.dims.input != data.stft.num_bins() {
        return Err(Error::Config(format!(
            "network input {} does not match the {} STFT bins",
            cfg.dims.input,
            data.stft.num_bins()
        )));
    }
    Ok(())
}

pub fn train_baseline(manifest: &Manifest, data: &DataConfig, cfg: &TrainConfig, digest: &str) -> Result<TrainRun> {
    require_input_dims(cfg, data)?;
    train(TrainMode::Baseline, &prepare_baseline(manifest, data)?, cfg, digest)
}

pub fn train_teacher(
    manifest: &Manifest,
    data: &DataConfig,
    cfg: &TrainConfig,
    baseline: Option<&MaskNetParams>,
    digest: &str,
) -> Result<TrainRun> {
    require_input_dims(cfg, data)?;
    train(TrainMode::Teacher, &prepare_teacher(manifest, data, baseline)?, cfg, digest)
}

pub fn train_student(
    manifest: &Manifest,
    data: &DataConfig,
    cfg: &TrainConfig,
    cache: &SoftTargetCache,
    digest: &str,
) -> Result<TrainRun> {
    require_input_dims(cfg, data)?;
    train(TrainMode::Student, &prepare_student(manifest, data, cache)?, cfg, digest)
}
