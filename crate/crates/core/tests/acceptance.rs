//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 3 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use maskteach::audio_io::{load_manifest, AudioClip, Manifest, Split};
use maskteach::beamformer::{
    apply_beamformer, beamform_fused, beamform_utterance, estimate_psd, gev_filter, mask_enhance, BeamformerFilter,
    Normalization, PsdSet,
};
use maskteach::corpus::{build_corpus, corpus_ids, generate_utterance, SimConfig, SplitCounts};
use maskteach::distill::{
    build_soft_targets, early_stop, prepare_baseline, prepare_student, train, train_baseline, train_student,
    train_teacher, utterance_loss, utterance_loss_and_grad, utterance_losses, DataConfig, Dataset, StopDecision,
    TrainConfig, TrainMode,
};
use maskteach::dsp::{istft, stft, stft_multichannel, StftConfig};
use maskteach::linalg::{cholesky, quadratic_form};
use maskteach::masks::{ideal_binary_masks, median_fuse, Hardness, IbmConfig, MaskKind, MaskPlane};
use maskteach::metrics::{estoi, evaluate_corpus, si_sdr, stoi, System};
use maskteach::nn::gradcheck::{run_preset, GradCheckPreset, LossSetup, DEFAULT_STEP};
use maskteach::nn::{adam_step, bce_loss, AdamState, LossWeights, MaskNetParams, OutputActivation};
use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rand_c(rng: &mut ChaCha8Rng) -> C {
    C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_psd(m: usize, rank: usize, rng: &mut ChaCha8Rng) -> Array2<C> {
    let a = Array2::from_shape_simple_fn((m, rank), || rand_c(rng));
    let mut p = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            p[[i, j]] = (0..rank).map(|k| a[[i, k]] * a[[j, k]].conj()).sum::<C>();
        }
    }
    p
}

fn mat_vec(a: &Array2<C>, x: &Array1<C>) -> Array1<C> {
    Array1::from_shape_fn(a.nrows(), |i| (0..a.ncols()).map(|j| a[[i, j]] * x[j]).sum())
}

fn frob(a: &Array2<C>) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// Solves Φn z = v by Cholesky; used only to form residuals.
fn solve_hpd(phi_n: &Array2<C>, v: &Array1<C>) -> Array1<C> {
    let l = cholesky(phi_n).expect("positive definite");
    let m = v.len();
    let mut y = Array1::<C>::zeros(m);
    for i in 0..m {
        let s: C = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (v[i] - s) / l[[i, i]];
    }
    let mut z = Array1::<C>::zeros(m);
    for i in (0..m).rev() {
        let s: C = (i + 1..m).map(|k| l[[k, i]].conj() * z[k]).sum();
        z[i] = (y[i] - s) / l[[i, i]].conj();
    }
    z
}

fn criterion_1() -> Outcome {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(2000..24_000);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(err / norm);
    }
    outcome(worst < 1e-6, format!("max relative L2 error {worst:.2e} over 100 signals (< 1e-6)"))
}

fn criterion_2() -> Outcome {
    let setups = [
        LossSetup::Baseline,
        LossSetup::Teacher,
        LossSetup::Combined(LossWeights::new(0.35, 0.15, 0.50).unwrap()),
    ];
    let mut parts = Vec::new();
    let mut pass = DEFAULT_STEP == 1e-5;
    for setup in setups {
        let r = run_preset(GradCheckPreset::Small, setup, OutputActivation::Sigmoid, 7).unwrap();
        pass &= r.max_rel_error < 1e-4;
        parts.push(format!("{} {:.2e}", setup.name(), r.max_rel_error));
    }
    outcome(pass, format!("max relative error: {} (< 1e-4, step 1e-5)", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let m = 4;
    let mut worst_residual = 0.0f64;
    let mut probe_violations = 0usize;
    let mut xs = Vec::new();
    let mut ns = Vec::new();
    for _ in 0..1000 {
        let rank = rng.gen_range(1..=m);
        xs.push(random_psd(m, rank, &mut rng));
        let mut n = random_psd(m, m, &mut rng);
        for i in 0..m {
            n[[i, i]] += C::new(0.1, 0.0);
        }
        ns.push(n);
    }
    let filter = gev_filter(&PsdSet::new(xs.clone()).unwrap(), &PsdSet::new(ns.clone()).unwrap()).unwrap();
    for b in 0..xs.len() {
        let f = filter.bin(b);
        let lambda = filter.eigenvalues[b];
        let lhs = solve_hpd(&ns[b], &mat_vec(&xs[b], &f));
        let res = lhs.iter().zip(f.iter()).map(|(a, c)| (a - c * lambda).norm_sqr()).sum::<f64>().sqrt();
        worst_residual = worst_residual.max(res / frob(&xs[b]));
        let q = quadratic_form(&xs[b], &f) / quadratic_form(&ns[b], &f);
        for _ in 0..100 {
            let v = Array1::from_shape_simple_fn(m, || rand_c(&mut rng));
            let qv = quadratic_form(&xs[b], &v) / quadratic_form(&ns[b], &v);
            if qv > q * (1.0 + 1e-12) {
                probe_violations += 1;
            }
        }
    }
    let eye = Array2::from_shape_fn((2, 2), |(i, j)| C::new(if i == j { 1.0 } else { 0.0 }, 0.0));
    let mut diag = Array2::zeros((2, 2));
    diag[[0, 0]] = C::new(2.0, 0.0);
    diag[[1, 1]] = C::new(1.0, 0.0);
    let d = gev_filter(&PsdSet::new(vec![diag]).unwrap(), &PsdSet::new(vec![eye]).unwrap()).unwrap();
    let e1_ok = d.bin(0)[0] == C::new(1.0, 0.0) && d.bin(0)[1] == C::new(0.0, 0.0) && (d.eigenvalues[0] - 2.0).abs() < 1e-12;
    outcome(
        worst_residual < 1e-8 && probe_violations == 0 && e1_ok,
        format!(
            "max residual/‖Φx‖_F {worst_residual:.2e} (< 1e-8), probe violations {probe_violations}/100000, diagonal case e1: {e1_ok}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = StftConfig {
        fft_size: 16,
        hop: 4,
        ..StftConfig::default()
    };
    let (m, t, b) = (3, 8, cfg.num_bins());
    let spec = maskteach::dsp::Spectrogram::new(Array3::from_shape_simple_fn((m, t, b), || rand_c(&mut rng)), cfg, 28).unwrap();
    let w = MaskPlane::soft(Array2::from_shape_simple_fn((t, b), || rng.gen_range(0.0..1.0)), MaskKind::Speech).unwrap();

    let psd = estimate_psd(&w, &spec).unwrap();
    let mut psd_err = 0.0f64;
    for bin in 0..b {
        for i in 0..m {
            for j in 0..m {
                let mut acc = C::new(0.0, 0.0);
                for f in 0..t {
                    acc += w.values()[[f, bin]] * spec.data()[[i, f, bin]] * spec.data()[[j, f, bin]].conj();
                }
                psd_err = psd_err.max((psd.bin(bin)[[i, j]] - acc).norm());
            }
        }
    }

    let planes: Vec<MaskPlane> = (0..6)
        .map(|_| MaskPlane::soft(Array2::from_shape_simple_fn((t, b), || rng.gen_range(0.0..1.0)), MaskKind::Speech).unwrap())
        .collect();
    let mut median_err = 0.0f64;
    for k in [5usize, 6] {
        let fused = median_fuse(&planes[..k]).unwrap();
        for f in 0..t {
            for bin in 0..b {
                let mut v: Vec<f64> = planes[..k].iter().map(|p| p.values()[[f, bin]]).collect();
                // Insertion sort keeps the oracle independent of library sorting.
                for i in 1..v.len() {
                    let mut j = i;
                    while j > 0 && v[j - 1] > v[j] {
                        v.swap(j - 1, j);
                        j -= 1;
                    }
                }
                let med = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
                median_err = median_err.max((fused.values()[[f, bin]] - med).abs());
            }
        }
    }

    let target = MaskPlane::new(
        Array2::from_shape_simple_fn((t, b), || if rng.gen_bool(0.5) { 1.0 } else { 0.0 }),
        MaskKind::Speech,
        Hardness::Binary,
    )
    .unwrap();
    let pred = MaskPlane::soft(Array2::from_shape_simple_fn((t, b), || rng.gen_range(0.01..0.99)), MaskKind::Speech).unwrap();
    let mut acc = 0.0;
    for f in 0..t {
        for bin in 0..b {
            let (a, p) = (target.values()[[f, bin]], pred.values()[[f, bin]]);
            acc -= a * p.ln() + (1.0 - a) * (1.0 - p).ln();
        }
    }
    let bce_err = (bce_loss(&target, &pred).unwrap() - acc / (t * b) as f64).abs();

    let filter = BeamformerFilter {
        weights: Array2::from_shape_simple_fn((b, m), || rand_c(&mut rng)),
        eigenvalues: vec![1.0; b],
        normalization: Normalization::UnitNormRealLead,
    };
    let out = apply_beamformer(&filter, &spec).unwrap();
    let mut bf_err = 0.0f64;
    for f in 0..t {
        for bin in 0..b {
            let mut acc = C::new(0.0, 0.0);
            for ch in 0..m {
                acc += filter.weights[[bin, ch]].conj() * spec.data()[[ch, f, bin]];
            }
            bf_err = bf_err.max((out.data()[[0, f, bin]] - acc).norm());
        }
    }
    let worst = psd_err.max(median_err).max(bce_err).max(bf_err);
    outcome(
        worst < 1e-10,
        format!(
            "max deviation: psd {psd_err:.1e}, median {median_err:.1e}, bce {bce_err:.1e}, beamformer {bf_err:.1e} (< 1e-10)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let sim = SimConfig::default();
    let stft_cfg = StftConfig::default();
    let r = sim.ref_channel;
    let ids = corpus_ids(&sim);
    let per_utt = maskteach::par::map_range(ids.len(), |i| {
        let u = generate_utterance(&sim, &ids[i].0).unwrap();
        let reference = u.clean.channel(r);
        let cs = stft(reference, &stft_cfg).unwrap();
        let ns = stft(u.noise.channel(r), &stft_cfg).unwrap();
        let (ix, in_) = ideal_binary_masks(&cs, &ns, &IbmConfig::default()).unwrap();
        let spec = stft_multichannel(u.mix.channels(), &stft_cfg).unwrap();
        let out = beamform_fused(&spec, ix, in_, maskteach::beamformer::DEFAULT_EPS, r).unwrap();
        // Best channel under either reference: the shared one or the channel's own clean image.
        let best_noisy = (0..u.mix.num_channels())
            .map(|m| {
                let shared = si_sdr(reference, u.mix.channel(m)).unwrap();
                let own = si_sdr(u.clean.channel(m), u.mix.channel(m)).unwrap();
                shared.max(own)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        (si_sdr(reference, &out.signal).unwrap(), best_noisy)
    });
    let out_mean = mean(&per_utt.iter().map(|p| p.0).collect::<Vec<_>>());
    let noisy_mean = mean(&per_utt.iter().map(|p| p.1).collect::<Vec<_>>());
    let gain = out_mean - noisy_mean;
    outcome(
        gain >= 3.0,
        format!(
            "{} utterances: oracle GEV {out_mean:.2} dB, best noisy channel {noisy_mean:.2} dB, gain {gain:.2} dB (≥ 3 dB)",
            per_utt.len()
        ),
    )
}

/// Criterion 6 trains twice and overfits within its budget, so its runs
/// stop after this many epochs.
fn capped_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    }
}

fn default_corpus() -> (tempfile::TempDir, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let path = build_corpus(&SimConfig::default(), dir.path().join("corpus")).unwrap();
    let manifest = load_manifest(path).unwrap();
    (dir, manifest)
}

fn overfit_two(data: &Dataset) -> (f64, usize) {
    let cfg = TrainConfig::default();
    let w = cfg.loss_weights;
    let two: Vec<_> = data.split(Split::Train).take(2).cloned().collect();
    let mut params = MaskNetParams::init(cfg.dims, TrainMode::Baseline.heads(), cfg.activation, cfg.seed);
    let mut adam = AdamState::new(params.num_params());
    let eval = |p: &MaskNetParams| mean(&two.iter().map(|u| utterance_loss(p, u, TrainMode::Baseline, &w).unwrap().total).collect::<Vec<_>>());
    for epoch in 1..=200 {
        for u in &two {
            let (_, g) = utterance_loss_and_grad(&params, u, TrainMode::Baseline, &w).unwrap();
            adam_step(&mut params, &g, &mut adam, &cfg.adam);
        }
        let l = eval(&params);
        if l < 0.05 {
            return (l, epoch);
        }
    }
    (eval(&params), 200)
}

fn criterion_6() -> Outcome {
    let (_dir, manifest) = default_corpus();
    let data = DataConfig::default();
    let cfg = capped_train_config();
    let run = train_baseline(&manifest, &data, &cfg, "acceptance").unwrap();
    let rerun = train_baseline(&manifest, &data, &cfg, "acceptance").unwrap();
    let identical = run.checkpoint.to_bytes() == rerun.checkpoint.to_bytes();
    let best = run.dev_history[run.best_epoch - 1];
    let reduction = 1.0 - best / run.initial_dev_loss;
    let dataset = prepare_baseline(&manifest, &data).unwrap();
    let (overfit_loss, overfit_epochs) = overfit_two(&dataset);
    let pass = overfit_loss < 0.05 && reduction >= 0.30 && identical;
    let detail = format!(
        "overfit 2 utterances: loss {overfit_loss:.4} after {overfit_epochs} epochs (< 0.05 within 200); \
         dev loss {:.4} → {best:.4} at epoch {} ({:.1}% reduction, ≥ 30%); rerun checkpoints bitwise equal: {identical}",
        run.initial_dev_loss,
        run.best_epoch,
        100.0 * reduction
    );
    outcome(pass, detail)
}

fn criterion_7() -> Outcome {
    // Every network uses the default schedule: early stopping, patience 5, at most 30 epochs.
    let (_dir, manifest) = default_corpus();
    let data = DataConfig::default();
    let cfg = TrainConfig::default();
    let baseline_run = train_baseline(&manifest, &data, &cfg, "acceptance").unwrap();
    let baseline = &baseline_run.checkpoint.params;
    let teacher = train_teacher(&manifest, &data, &cfg, Some(baseline), "acceptance").unwrap();
    let cache = build_soft_targets(&manifest, &data, baseline, &teacher.checkpoint.params).unwrap();
    let student_cfg = TrainConfig {
        loss_weights: LossWeights::new(0.35, 0.15, 0.50).unwrap(),
        ..cfg
    };
    let student = train_student(&manifest, &data, &student_cfg, &cache, "acceptance").unwrap();
    let dev_st = |epoch: usize| {
        student
            .records
            .iter()
            .find(|r| r.epoch == epoch && r.split == Split::Dev)
            .and_then(|r| r.loss_st)
            .unwrap()
    };
    let (st0, st_best) = (dev_st(0), dev_st(student.best_epoch));
    let st_reduction = 1.0 - st_best / st0;

    let stft_cfg = data.stft;
    let eps = data.gev_eps;
    let sp = &student.checkpoint.params;
    let systems = [
        System::new("baseline-mask", |c: &AudioClip, r: usize| mask_enhance(c, baseline, r, &stft_cfg)),
        System::new("baseline-beamform", |c: &AudioClip, r: usize| Ok(beamform_utterance(c, baseline, &stft_cfg, eps, r)?.signal)),
        System::new("student-beamform", |c: &AudioClip, r: usize| Ok(beamform_utterance(c, sp, &stft_cfg, eps, r)?.signal)),
    ];
    let report = evaluate_corpus(&manifest, Some(Split::Dev), &systems, None).unwrap();
    let sdr = |name: &str| report.mean(name).unwrap().si_sdr_db;
    let (noisy, mask, base_bf, stud_bf) = (sdr("noisy"), sdr("baseline-mask"), sdr("baseline-beamform"), sdr("student-beamform"));
    let pass = st_reduction >= 0.50 && stud_bf >= base_bf - 0.5;
    outcome(
        pass,
        format!(
            "dev soft-target CE {st0:.4} → {st_best:.4} ({:.1}% reduction, ≥ 50%); dev mean SI-SDR student {stud_bf:.2} dB vs baseline {base_bf:.2} dB (≥ baseline − 0.5); \
             noisy {noisy:.2} dB, baseline mask {mask:.2} dB; epochs baseline {} teacher {} student {}",
            100.0 * st_reduction,
            baseline_run.best_epoch,
            teacher.best_epoch,
            student.best_epoch
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig {
        counts: SplitCounts { train: 4, dev: 2, test: 0 },
        real_counts: SplitCounts { train: 3, dev: 1, test: 0 },
        ..SimConfig::default()
    };
    let manifest = load_manifest(build_corpus(&sim, dir.path()).unwrap()).unwrap();
    let data = DataConfig::default();
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let baseline = MaskNetParams::init(cfg.dims, TrainMode::Baseline.heads(), cfg.activation, 11);
    let teacher = MaskNetParams::init(cfg.dims, TrainMode::Teacher.heads(), cfg.activation, 12);
    let cache = build_soft_targets(&manifest, &data, &baseline, &teacher).unwrap();
    let mixed = prepare_student(&manifest, &data, &cache).unwrap();
    let simu = mixed.simu_only();
    let w = cfg.loss_weights;
    let with_real = train(TrainMode::Student, &mixed, &cfg, "acceptance").unwrap();
    let simu_run = train(TrainMode::Student, &simu, &cfg, "acceptance").unwrap();
    let keyed = |v: &[(String, maskteach::distill::UttLoss)]| -> Vec<(String, u64)> {
        v.iter()
            .filter(|(id, _)| id.contains("_simu_"))
            .map(|(id, l)| (id.clone(), l.total.to_bits()))
            .collect()
    };
    let a = keyed(&with_real.initial_train_losses);
    let b = keyed(&simu_run.initial_train_losses);
    let initial_equal = !a.is_empty() && a == b;
    // The same comparison at trained parameters.
    let p = &simu_run.final_params;
    let a2 = keyed(&utterance_losses(p, &mixed, Split::Train, TrainMode::Student, &w).unwrap());
    let b2 = keyed(&utterance_losses(p, &simu, Split::Train, TrainMode::Student, &w).unwrap());
    let trained_equal = a2 == b2;
    let real_st_only = mixed
        .utts
        .iter()
        .filter(|u| u.kind == maskteach::audio_io::EntryKind::Real)
        .all(|u| {
            let l = utterance_loss(p, u, TrainMode::Student, &w).unwrap();
            l.x.is_none() && l.n.is_none() && l.st.map(f64::to_bits) == Some(l.total.to_bits())
        });
    outcome(
        initial_equal && trained_equal && real_st_only,
        format!(
            "{} simulated train utterances bitwise equal at epoch-1 parameters: {initial_equal}; at trained parameters: {trained_equal}; \
             real utterances use the soft-target term only: {real_st_only}",
            a.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let rate = 16_000;
    let x = maskteach::corpus::synth_speech_like(5, 3 * rate as usize, rate);
    let s = stoi(&x, &x, rate).unwrap();
    let e = estoi(&x, &x, rate).unwrap();
    let y: Vec<f64> = x.iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    let base = si_sdr(&x, &y).unwrap();
    let scaled: Vec<f64> = y.iter().map(|v| v * 7.5).collect();
    let scale_dev = (si_sdr(&x, &scaled).unwrap() - base).abs();
    // Noise orthogonal to the reference, scaled to 1/100 of its energy.
    let mut n: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let proj = x.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() / xx;
    n.iter_mut().zip(&x).for_each(|(v, a)| *v -= proj * a);
    let nn: f64 = n.iter().map(|v| v * v).sum();
    let g = (xx / (100.0 * nn)).sqrt();
    let z: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    let twenty = si_sdr(&x, &z).unwrap();
    let pass = (s - 1.0).abs() <= 1e-6 && (e - 1.0).abs() <= 1e-6 && scale_dev < 1e-9 && (twenty - 20.0).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "stoi(x,x) {s:.9}, estoi(x,x) {e:.9} (1 ± 1e-6); SI-SDR change under ×7.5 scaling {scale_dev:.1e}; orthogonal 20 dB case {twenty:.4} dB (± 0.01)"
        ),
    )
}

fn scan_oracle(history: &[f64], patience: usize) -> (StopDecision, usize) {
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    for (i, &v) in history.iter().enumerate() {
        if v < best {
            best = v;
            best_epoch = i + 1;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let decision = if stale >= patience { StopDecision::Stop } else { StopDecision::Continue };
    (decision, best_epoch)
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..40);
        let history: Vec<f64> = (0..len).map(|_| (rng.gen_range(0..20) as f64) * 0.05).collect();
        if early_stop(&history, 5) != scan_oracle(&history, 5) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches against the scan oracle over 1000 histories, patience 5"))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let budgets = [
        (1, Duration::from_secs(1)),
        (2, Duration::from_secs(30)),
        (3, Duration::from_secs(10)),
        (4, Duration::from_secs(5)),
        (5, Duration::from_secs(120)),
        (6, Duration::from_secs(15 * 60)),
        (7, Duration::from_secs(30 * 60)),
        (8, Duration::from_secs(5 * 60)),
        (9, Duration::from_secs(10)),
        (10, Duration::from_secs(1)),
    ];
    let mut failures = 0;
    for (n, budget) in budgets {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        }));
        let elapsed = start.elapsed();
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let in_time = elapsed <= budget;
        let pass = o.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {n}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
