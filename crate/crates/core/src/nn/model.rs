//! Forward pass and exact backpropagation through time for the mask network:
//! a bidirectional LSTM trunk feeding one or two feedforward mask heads.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::loss::{bce, LossTerm, LossValue, PRED_CLAMP};
use super::params::{HeadParams, LstmParams, MaskNetParams, OutputActivation};
use crate::error::{Error, Result};
use crate::masks::MaskKind;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Activations of one LSTM direction, rows in that direction's time order.
#[derive(Debug, Clone)]
struct LstmTrace {
    /// Post-activation gates `[i, f, g, o]`, `T × 4H`.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    kind: MaskKind,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    out: Array2<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// `[h_fwd(t); h_bwd(t)]`, `T × 2H`.
    hcat: Array2<f64>,
    heads: Vec<HeadTrace>,
}

impl ForwardTrace {
    pub fn output(&self, kind: MaskKind) -> Option<&Array2<f64>> {
        self.heads.iter().find(|h| h.kind == kind).map(|h| &h.out)
    }

    pub fn num_frames(&self) -> usize {
        self.hcat.nrows()
    }
}

/// Per-head masks, `T × D` each.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutputs {
    pub speech: Array2<f64>,
    pub noise: Option<Array2<f64>>,
}

fn lstm_forward(p: &LstmParams, x: ArrayView2<f64>) -> LstmTrace {
    let t_len = x.nrows();
    let h = p.w_hh.ncols();
    let mut pre = x.dot(&p.w_ih.t());
    pre += &p.bias;
    let mut gates = Array2::zeros((t_len, 4 * h));
    let mut c = Array2::zeros((t_len, h));
    let mut tanh_c = Array2::zeros((t_len, h));
    let mut hs = Array2::zeros((t_len, h));
    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    let mut z = Array1::<f64>::zeros(4 * h);
    for t in 0..t_len {
        z.assign(&pre.row(t));
        general_mat_vec_mul(1.0, &p.w_hh, &h_prev, 1.0, &mut z);
        let mut g_row = gates.row_mut(t);
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            let cj = f * c_prev[j] + i * g;
            let tc = cj.tanh();
            g_row[j] = i;
            g_row[h + j] = f;
            g_row[2 * h + j] = g;
            g_row[3 * h + j] = o;
            c[[t, j]] = cj;
            tanh_c[[t, j]] = tc;
            hs[[t, j]] = o * tc;
            c_prev[j] = cj;
            h_prev[j] = o * tc;
        }
    }
    LstmTrace {
        gates,
        c,
        tanh_c,
        h: hs,
    }
}

/// Gradient of one LSTM direction given `dh` (loss gradient w.r.t. each
/// hidden output, same time order as `x`).
fn lstm_backward(p: &LstmParams, x: ArrayView2<f64>, tr: &LstmTrace, dh: ArrayView2<f64>) -> LstmParams {
    let t_len = x.nrows();
    let h = p.w_hh.ncols();
    let w_hh_t = p.w_hh.t().as_standard_layout().into_owned();
    let mut dgates = Array2::<f64>::zeros((t_len, 4 * h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    for t in (0..t_len).rev() {
        let g_row = tr.gates.row(t);
        let mut d_row = dgates.row_mut(t);
        for j in 0..h {
            let (i, f, g, o) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
            let tc = tr.tanh_c[[t, j]];
            let c_prev = if t > 0 { tr.c[[t - 1, j]] } else { 0.0 };
            let dhj = dh[[t, j]] + dh_next[j];
            let dc = dhj * o * (1.0 - tc * tc) + dc_next[j];
            d_row[j] = dc * g * i * (1.0 - i);
            d_row[h + j] = dc * c_prev * f * (1.0 - f);
            d_row[2 * h + j] = dc * i * (1.0 - g * g);
            d_row[3 * h + j] = dhj * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        general_mat_vec_mul(1.0, &w_hh_t, &dgates.row(t), 0.0, &mut dh_next);
    }
    let w_ih = dgates.t().dot(&x);
    let mut w_hh = Array2::zeros((4 * h, h));
    if t_len > 1 {
        w_hh = dgates.slice(s![1.., ..]).t().dot(&tr.h.slice(s![..t_len - 1, ..]));
    }
    LstmParams {
        w_ih,
        w_hh,
        bias: dgates.sum_axis(Axis(0)),
    }
}

fn head_forward(p: &HeadParams, kind: MaskKind, act: OutputActivation, hcat: &Array2<f64>) -> HeadTrace {
    let mut z1 = hcat.dot(&p.w1.t());
    z1 += &p.b1;
    let a1 = z1.mapv(|v| v.max(0.0));
    let mut z2 = a1.dot(&p.w2.t());
    z2 += &p.b2;
    let out = match act {
        OutputActivation::Sigmoid => z2.mapv(sigmoid),
        OutputActivation::ClippedRelu => z2.mapv(|v| v.clamp(0.0, 1.0)),
    };
    HeadTrace { kind, z1, a1, z2, out }
}

fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(layer.to_string()))
    }
}

fn kind_name(kind: MaskKind) -> &'static str {
    match kind {
        MaskKind::Speech => "speech",
        MaskKind::Noise => "noise",
    }
}

/// Runs the network on a `T × D` feature sequence, keeping intermediate activations.
pub fn forward_trace(params: &MaskNetParams, features: ArrayView2<f64>) -> Result<ForwardTrace> {
    let d = params.dims.input;
    if features.ncols() != d {
        return Err(Error::Shape(format!("features have {} columns, network expects {d}", features.ncols())));
    }
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("empty feature sequence".into()));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("input features".into()));
    }
    let h = params.dims.hidden;
    let t_len = features.nrows();
    let fwd = lstm_forward(&params.forward, features);
    let bwd = lstm_forward(&params.backward, features.slice(s![..;-1, ..]));
    let mut hcat = Array2::zeros((t_len, 2 * h));
    hcat.slice_mut(s![.., ..h]).assign(&fwd.h);
    hcat.slice_mut(s![.., h..]).assign(&bwd.h.slice(s![..;-1, ..]));
    check_finite(&hcat, "blstm")?;

    let mut heads = Vec::new();
    for &kind in params.heads().kinds() {
        let p = params.head(kind).expect("head listed in head set");
        let tr = head_forward(p, kind, params.activation, &hcat);
        check_finite(&tr.z1, &format!("{}.ff1", kind_name(kind)))?;
        check_finite(&tr.z2, &format!("{}.ff2", kind_name(kind)))?;
        heads.push(tr);
    }
    Ok(ForwardTrace { fwd, bwd, hcat, heads })
}

pub fn forward(params: &MaskNetParams, features: ArrayView2<f64>) -> Result<MaskOutputs> {
    let tr = forward_trace(params, features)?;
    let mut heads = tr.heads.into_iter();
    let speech = heads.next().expect("speech head always present").out;
    let noise = heads.next().map(|h| h.out);
    Ok(MaskOutputs { speech, noise })
}

fn check_terms(params: &MaskNetParams, t_len: usize, terms: &[LossTerm]) -> Result<()> {
    for term in terms {
        if params.head(term.head).is_none() {
            return Err(Error::InvalidInput(format!(
                "loss term on the {} head, which this network lacks",
                kind_name(term.head)
            )));
        }
        if term.target.dim() != (t_len, params.dims.input) {
            return Err(Error::Shape(format!(
                "target {:?} vs output {:?}",
                term.target.dim(),
                (t_len, params.dims.input)
            )));
        }
    }
    Ok(())
}

/// Weighted cross-entropy of an existing forward pass.
pub fn loss_from_trace(trace: &ForwardTrace, terms: &[LossTerm]) -> LossValue {
    let values: Vec<f64> = terms
        .iter()
        .map(|term| bce(term.target, trace.output(term.head).expect("checked head").view()))
        .collect();
    let total = terms.iter().zip(&values).map(|(t, v)| t.weight * v).sum();
    LossValue { total, terms: values }
}

pub fn loss(params: &MaskNetParams, features: ArrayView2<f64>, terms: &[LossTerm]) -> Result<LossValue> {
    check_terms(params, features.nrows(), terms)?;
    let tr = forward_trace(params, features)?;
    Ok(loss_from_trace(&tr, terms))
}

/// d(mean BCE)/d(pre-activation) for one output head, summed over its terms.
fn output_grad(trace: &HeadTrace, act: OutputActivation, terms: &[LossTerm]) -> Array2<f64> {
    let mut dz = Array2::<f64>::zeros(trace.z2.dim());
    let n = trace.z2.len() as f64;
    for term in terms.iter().filter(|t| t.head == trace.kind) {
        let w = term.weight / n;
        match act {
            // Sigmoid and cross-entropy combine to (p - a).
            OutputActivation::Sigmoid => {
                ndarray::Zip::from(&mut dz)
                    .and(&trace.out)
                    .and(&term.target)
                    .for_each(|d, &p, &a| *d += w * (p - a));
            }
            OutputActivation::ClippedRelu => {
                ndarray::Zip::from(&mut dz)
                    .and(&trace.out)
                    .and(&trace.z2)
                    .and(&term.target)
                    .for_each(|d, &p, &z, &a| {
                        if z > 0.0 && z < 1.0 {
                            let p = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
                            *d += w * (-(a / p) + (1.0 - a) / (1.0 - p));
                        }
                    });
            }
        }
    }
    dz
}

/// Exact gradient of `Σ weight · BCE(target, head output)` with respect to every parameter.
pub fn backward(
    params: &MaskNetParams,
    features: ArrayView2<f64>,
    trace: &ForwardTrace,
    terms: &[LossTerm],
) -> MaskNetParams {
    let h = params.dims.hidden;
    let mut grads = params.zeros_like();
    let mut dhcat = Array2::<f64>::zeros(trace.hcat.dim());
    for ht in &trace.heads {
        let p = params.head(ht.kind).expect("trace head exists in params");
        let dz2 = output_grad(ht, params.activation, terms);
        let g = match ht.kind {
            MaskKind::Speech => &mut grads.speech,
            MaskKind::Noise => grads.noise.as_mut().expect("noise head"),
        };
        g.w2 = dz2.t().dot(&ht.a1);
        g.b2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&p.w2);
        ndarray::Zip::from(&mut dz1).and(&ht.z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        g.w1 = dz1.t().dot(&trace.hcat);
        g.b1 = dz1.sum_axis(Axis(0));
        dhcat += &dz1.dot(&p.w1);
    }
    grads.forward = lstm_backward(&params.forward, features, &trace.fwd, dhcat.slice(s![.., ..h]));
    grads.backward = lstm_backward(
        &params.backward,
        features.slice(s![..;-1, ..]),
        &trace.bwd,
        dhcat.slice(s![..;-1, h..]),
    );
    grads
}

pub fn loss_and_grad(
    params: &MaskNetParams,
    features: ArrayView2<f64>,
    terms: &[LossTerm],
) -> Result<(LossValue, MaskNetParams)> {
    check_terms(params, features.nrows(), terms)?;
    let tr = forward_trace(params, features)?;
    let value = loss_from_trace(&tr, terms);
    if !value.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = backward(params, features, &tr, terms);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{HeadSet, NetDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> NetDims {
        NetDims { input: 4, hidden: 3, ff: 5 }
    }

    fn random_features(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((t, d), || rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = MaskNetParams::zeros(tiny_dims(), HeadSet::SpeechNoise, OutputActivation::Sigmoid);
        let out = forward(&p, random_features(6, 4, 1).view()).unwrap();
        assert!(out.speech.iter().all(|&v| v == 0.5));
        assert!(out.noise.unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_is_deterministic_and_in_range() {
        let p = MaskNetParams::init(tiny_dims(), HeadSet::SpeechNoise, OutputActivation::Sigmoid, 3);
        let x = random_features(8, 4, 2);
        let a = forward(&p, x.view()).unwrap();
        let b = forward(&p, x.view()).unwrap();
        assert_eq!(a, b);
        assert!(a.speech.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn time_reversal_symmetry() {
        let dims = tiny_dims();
        let p = MaskNetParams::init(dims, HeadSet::SpeechNoise, OutputActivation::Sigmoid, 5);
        let mut swapped = p.clone();
        std::mem::swap(&mut swapped.forward, &mut swapped.backward);
        // The trunk concatenates [forward; backward], so the heads' input
        // columns swap halves as well.
        let h = dims.hidden;
        for head in std::iter::once(&mut swapped.speech).chain(swapped.noise.as_mut()) {
            let w1 = head.w1.clone();
            head.w1.slice_mut(s![.., ..h]).assign(&w1.slice(s![.., h..]));
            head.w1.slice_mut(s![.., h..]).assign(&w1.slice(s![.., ..h]));
        }
        let x = random_features(7, 4, 6);
        let rev = x.slice(s![..;-1, ..]).to_owned();
        let a = forward(&p, x.view()).unwrap();
        let b = forward(&swapped, rev.view()).unwrap();
        let a_rev = a.speech.slice(s![..;-1, ..]);
        for (u, v) in a_rev.iter().zip(b.speech.iter()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_features() {
        let p = MaskNetParams::zeros(tiny_dims(), HeadSet::Speech, OutputActivation::Sigmoid);
        assert!(matches!(forward(&p, random_features(3, 5, 1).view()), Err(Error::Shape(_))));
        let mut x = random_features(3, 4, 1);
        x[[1, 1]] = f64::NAN;
        assert!(matches!(forward(&p, x.view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reports_layer_of_non_finite_activation() {
        let mut p = MaskNetParams::zeros(tiny_dims(), HeadSet::Speech, OutputActivation::Sigmoid);
        p.speech.b1[0] = f64::INFINITY;
        match forward(&p, random_features(3, 4, 1).view()) {
            Err(Error::NonFinite(layer)) => assert_eq!(layer, "speech.ff1"),
            other => panic!("{other:?}"),
        }
    }

    /// Straight-line LSTM recurrence, one scalar at a time.
    fn oracle_lstm(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = p.w_hh.ncols();
        let d = p.w_ih.ncols();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        let mut out = Vec::new();
        for x in xs {
            let pre = |gate: usize, j: usize, hp: &[f64]| {
                let r = gate * h + j;
                let mut s = p.bias[r];
                for k in 0..d {
                    s += p.w_ih[[r, k]] * x[k];
                }
                for k in 0..h {
                    s += p.w_hh[[r, k]] * hp[k];
                }
                s
            };
            let mut hn = vec![0.0; h];
            let mut cn = vec![0.0; h];
            for j in 0..h {
                let i = sig(pre(0, j, &hp));
                let f = sig(pre(1, j, &hp));
                let g = pre(2, j, &hp).tanh();
                let o = sig(pre(3, j, &hp));
                cn[j] = f * cp[j] + i * g;
                hn[j] = o * cn[j].tanh();
            }
            hp = hn.clone();
            cp = cn;
            out.push(hn);
        }
        out
    }

    #[test]
    fn matches_hand_rolled_oracle() {
        let dims = NetDims { input: 4, hidden: 3, ff: 6 };
        let p = MaskNetParams::init(dims, HeadSet::SpeechNoise, OutputActivation::Sigmoid, 11);
        let x = random_features(5, 4, 12);
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let hf = oracle_lstm(&p.forward, &rows);
        let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let mut hb = oracle_lstm(&p.backward, &rev);
        hb.reverse();
        let out = forward(&p, x.view()).unwrap();
        for (kind, head) in [(MaskKind::Speech, &p.speech), (MaskKind::Noise, p.noise.as_ref().unwrap())] {
            let got = if kind == MaskKind::Speech { &out.speech } else { out.noise.as_ref().unwrap() };
            for t in 0..5 {
                let hc: Vec<f64> = hf[t].iter().chain(&hb[t]).copied().collect();
                let a1: Vec<f64> = (0..6)
                    .map(|r| (head.b1[r] + (0..6).map(|k| head.w1[[r, k]] * hc[k]).sum::<f64>()).max(0.0))
                    .collect();
                for b in 0..4 {
                    let z = head.b2[b] + (0..6).map(|k| head.w2[[b, k]] * a1[k]).sum::<f64>();
                    let m = 1.0 / (1.0 + (-z).exp());
                    assert!((got[[t, b]] - m).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn output_bias_gradient_vanishes_at_own_prediction() {
        let p = MaskNetParams::init(tiny_dims(), HeadSet::SpeechNoise, OutputActivation::Sigmoid, 2);
        let x = random_features(6, 4, 3);
        let own = forward(&p, x.view()).unwrap().speech;
        let terms = [LossTerm { head: MaskKind::Speech, target: own.view(), weight: 1.0 }];
        let (_, g) = loss_and_grad(&p, x.view(), &terms).unwrap();
        assert!(g.speech.b2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_path_gradient_matches_hand_derivation() {
        // Only the output bias and one ff1 bias are nonzero, so
        // mask = sigmoid(b2 + w2 * relu(b1)) independent of the input.
        let dims = NetDims { input: 1, hidden: 1, ff: 1 };
        let mut p = MaskNetParams::zeros(dims, HeadSet::Speech, OutputActivation::Sigmoid);
        p.speech.b1[0] = 0.8;
        p.speech.w2[[0, 0]] = -0.6;
        p.speech.b2[0] = 0.3;
        let x = Array2::from_shape_vec((3, 1), vec![0.1, -0.2, 0.5]).unwrap();
        let target = Array2::from_shape_vec((3, 1), vec![1.0, 0.0, 1.0]).unwrap();
        let terms = [LossTerm { head: MaskKind::Speech, target: target.view(), weight: 1.0 }];
        let (_, g) = loss_and_grad(&p, x.view(), &terms).unwrap();
        let z: f64 = 0.3 - 0.6 * 0.8;
        let m = 1.0 / (1.0 + (-z).exp());
        // d/db2 of mean over three frames of -(a ln m + (1-a) ln(1-m))
        let d_b2 = ((m - 1.0) + m + (m - 1.0)) / 3.0;
        assert!((g.speech.b2[0] - d_b2).abs() < 1e-15);
        assert!((g.speech.w2[[0, 0]] - d_b2 * 0.8).abs() < 1e-15);
        assert!((g.speech.b1[0] - d_b2 * -0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_term_on_missing_head() {
        let p = MaskNetParams::zeros(tiny_dims(), HeadSet::Speech, OutputActivation::Sigmoid);
        let x = random_features(3, 4, 1);
        let tgt = Array2::zeros((3, 4));
        let terms = [LossTerm { head: MaskKind::Noise, target: tgt.view(), weight: 1.0 }];
        assert!(loss(&p, x.view(), &terms).is_err());
    }
}
