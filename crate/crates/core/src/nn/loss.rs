use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{MaskKind, MaskPlane};

/// Predictions are clamped into `[PRED_CLAMP, 1 - PRED_CLAMP]` before the logarithms.
pub const PRED_CLAMP: f64 = 1e-7;

/// Interpolation weights of the distillation, speech-target and noise-target
/// cross-entropies. Stored as given; they need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub distill: f64,
    pub speech: f64,
    pub noise: f64,
}

impl Default for LossWeights {
    /// 0.35 / 0.15 / 0.50, the best-performing setting reported for this scheme.
    fn default() -> Self {
        LossWeights {
            distill: 0.35,
            speech: 0.15,
            noise: 0.50,
        }
    }
}

impl LossWeights {
    pub fn new(distill: f64, speech: f64, noise: f64) -> Result<Self> {
        let w = LossWeights {
            distill,
            speech,
            noise,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.distill, self.speech, self.noise]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `weights.distill * st + weights.speech * x + weights.noise * n`.
pub fn combined_loss(st: f64, x: f64, n: f64, weights: &LossWeights) -> f64 {
    weights.distill * st + weights.speech * x + weights.noise * n
}

/// Mean binary cross-entropy `-(a ln p + (1 - a) ln(1 - p))` over all bins.
/// Targets may be hard (0/1) or soft.
pub fn bce(target: ArrayView2<f64>, predicted: ArrayView2<f64>) -> f64 {
    let mut sum = 0.0;
    Zip::from(&target).and(&predicted).for_each(|&a, &p| {
        let p = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
        sum -= a * p.ln() + (1.0 - a) * (1.0 - p).ln();
    });
    sum / target.len() as f64
}

pub fn bce_loss(target: &MaskPlane, predicted: &MaskPlane) -> Result<f64> {
    if target.dim() != predicted.dim() {
        return Err(Error::Shape(format!(
            "target {:?} vs prediction {:?}",
            target.dim(),
            predicted.dim()
        )));
    }
    Ok(bce(target.values().view(), predicted.values().view()))
}

/// One weighted cross-entropy term: the output of `head` against `target`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'a> {
    pub head: MaskKind,
    pub target: ArrayView2<'a, f64>,
    pub weight: f64,
}

impl<'a> LossTerm<'a> {
    pub fn new(head: MaskKind, target: &'a MaskPlane, weight: f64) -> Self {
        LossTerm {
            head,
            target: target.values().view(),
            weight,
        }
    }
}

/// Weighted total plus every term's unweighted value, in term order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub terms: Vec<f64>,
}
