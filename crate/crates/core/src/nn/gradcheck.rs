//! Central finite-difference verification of [`backward`](super::model::backward).

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossTerm, LossWeights};
use super::model::{loss, loss_and_grad};
use super::params::{HeadSet, MaskNetParams, NetDims, OutputActivation};
use crate::error::{Error, Result};
use crate::masks::MaskKind;

/// Networks larger than this are refused; every coordinate costs two forward passes.
pub const MAX_GRAD_CHECK_PARAMS: usize = 20_000;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Below this magnitude a coordinate is judged on absolute error: central
/// differences of a loss near 1 carry round-off of order 1e-11 at step 1e-5.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a| + |n|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRADIENT_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name and offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the analytic gradient with central differences on up to
/// `max_coords` coordinates (all of them if the network is small enough,
/// otherwise an even stride through the flat parameter vector).
pub fn grad_check(
    params: &MaskNetParams,
    features: ArrayView2<f64>,
    terms: &[LossTerm],
    step: f64,
    max_coords: usize,
) -> Result<GradCheckReport> {
    let n = params.num_params();
    if n > MAX_GRAD_CHECK_PARAMS {
        return Err(Error::Config(format!(
            "grad_check is limited to {MAX_GRAD_CHECK_PARAMS} parameters, network has {n}"
        )));
    }
    let (_, grads) = loss_and_grad(params, features, terms)?;
    let analytic = grads.to_flat();
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    let stride = n.div_ceil(max_coords.max(1)).max(1);

    let mut probe = params.clone();
    let mut flat = params.to_flat();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for i in (0..n).step_by(stride) {
        let orig = flat[i];
        flat[i] = orig + step;
        probe.set_flat(&flat)?;
        let plus = loss(&probe, features, terms)?.total;
        flat[i] = orig - step;
        probe.set_flat(&flat)?;
        let minus = loss(&probe, features, terms)?.total;
        flat[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(names[i].clone());
        }
        report.checked += 1;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradCheckPreset {
    /// 4 bins, 3 units per direction, 5 feedforward units, 5 frames.
    Tiny,
    /// 12 bins, 6 units per direction, 10 feedforward units, 9 frames.
    Small,
}

impl GradCheckPreset {
    pub fn dims(&self) -> (NetDims, usize) {
        match self {
            GradCheckPreset::Tiny => (NetDims { input: 4, hidden: 3, ff: 5 }, 5),
            GradCheckPreset::Small => (NetDims { input: 12, hidden: 6, ff: 10 }, 9),
        }
    }
}

/// The loss configurations the trainers use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSetup {
    /// Speech + noise heads against hard targets.
    Baseline,
    /// Speech head only against a hard target.
    Teacher,
    /// Speech head against a soft target only.
    Distill,
    /// Weighted soft-target, speech and noise terms.
    Combined(LossWeights),
}

impl LossSetup {
    pub fn heads(&self) -> HeadSet {
        match self {
            LossSetup::Teacher => HeadSet::Speech,
            _ => HeadSet::SpeechNoise,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSetup::Baseline => "baseline",
            LossSetup::Teacher => "teacher",
            LossSetup::Distill => "distill",
            LossSetup::Combined(_) => "combined",
        }
    }
}

fn term(head: MaskKind, target: &Array2<f64>, weight: f64) -> LossTerm<'_> {
    LossTerm {
        head,
        target: target.view(),
        weight,
    }
}

/// Gradient check of a random network of the preset size under `setup`.
pub fn run_preset(
    preset: GradCheckPreset,
    setup: LossSetup,
    activation: OutputActivation,
    seed: u64,
) -> Result<GradCheckReport> {
    let (dims, frames) = preset.dims();
    let params = MaskNetParams::init(dims, setup.heads(), activation, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let features = Array2::from_shape_simple_fn((frames, dims.input), || rng.gen_range(-2.0..2.0));
    let hard = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_simple_fn((frames, dims.input), || if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
    };
    let ibm_x = hard(&mut rng);
    let ibm_n = hard(&mut rng);
    let soft = Array2::from_shape_simple_fn((frames, dims.input), || rng.gen_range(0.02..0.98));
    let terms: Vec<LossTerm> = match setup {
        LossSetup::Baseline => vec![term(MaskKind::Speech, &ibm_x, 1.0), term(MaskKind::Noise, &ibm_n, 1.0)],
        LossSetup::Teacher => vec![term(MaskKind::Speech, &ibm_x, 1.0)],
        LossSetup::Distill => vec![term(MaskKind::Speech, &soft, 1.0)],
        LossSetup::Combined(w) => vec![
            term(MaskKind::Speech, &soft, w.distill),
            term(MaskKind::Speech, &ibm_x, w.speech),
            term(MaskKind::Noise, &ibm_n, w.noise),
        ],
    };
    grad_check(&params, features.view(), &terms, DEFAULT_STEP, usize::MAX)
}
