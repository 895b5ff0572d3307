//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use echomap_core::clustering::kmeans;
use echomap_core::groundtruth::{iou, precision_recall_f1, BinaryMask};
use echomap_core::neural::{evaluate, loss, DropoutMasks, Model, ModelConfig};
use echomap_core::pipeline::{run_lab, PipelineConfig};
use echomap_core::seqdata::{train_test_split, LabeledSequence, SequenceDataset, Split};
use echomap_core::spectral::{fft_in_place, peak_frequency, spectrum_with, Complex, Window};
use echomap_core::synthlab::Waveform;
use echomap_core::DefectClass;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn naive_dft(x: &[f64]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * ((f * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            Complex::new(re, im)
        })
        .collect()
}

fn dft_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 1usize << rng.random_range(1..=9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft_in_place(&mut buf);
        let want = naive_dft(&x);
        let scale = want
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            .max(1e-300);
        for (a, b) in buf.iter().zip(&want) {
            worst = worst.max(Complex::new(a.re - b.re, a.im - b.im).norm() / scale);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("max relative deviation {worst:.2e}, {secs:.2}s"),
    )
}

fn tone(f_khz: f64, noise_rms: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let fs = 200_000.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, noise_rms.max(1e-300)).unwrap();
    let samples = (0..1024)
        .map(|t| {
            let s = (2.0 * PI * f_khz * 1e3 * t as f64 / fs + phase).sin();
            if noise_rms > 0.0 {
                s + noise.sample(rng)
            } else {
                s
            }
        })
        .collect();
    Waveform {
        point_id: 0,
        x_in: 0.0,
        y_in: 0.0,
        sample_rate_hz: fs,
        samples,
    }
}

fn peak_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bin_khz = 200.0 / 1024.0;
    let mut hits = [0usize; 2];
    for (slot, noise) in [0.0, 0.2].into_iter().enumerate() {
        for _ in 0..100 {
            let f = rng.random_range(2.0..15.0);
            let s = spectrum_with(&tone(f, noise, &mut rng), Window::None).unwrap();
            let p = peak_frequency(&s, 0.3);
            hits[slot] += ((p.f_peak_khz - f).abs() <= bin_khz) as usize;
        }
    }
    outcome(
        hits[0] == 100 && hits[1] >= 95,
        format!("noise-free {}/100, noise 0.2 {}/100", hits[0], hits[1]),
    )
}

fn sse(values: &[f64], mask: u32) -> f64 {
    let mut total = 0.0;
    for side in [true, false] {
        let part: Vec<f64> = values
            .iter()
            .enumerate()
            .filter(|(i, _)| (mask >> i & 1 == 1) == side)
            .map(|(_, &v)| v)
            .collect();
        let m = part.iter().sum::<f64>() / part.len() as f64;
        total += part.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    total
}

fn kmeans_optimality() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut misses = 0;
    for case in 0..200u64 {
        let n = rng.random_range(2..=10);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let best = (1..(1u32 << n) - 1)
            .map(|m| sse(&values, m))
            .fold(f64::INFINITY, f64::min);
        let got = kmeans(&values, 2, case, 100, 1e-9).unwrap();
        if got.cost > best + 1e-9 {
            misses += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        misses == 0 && secs < 30.0,
        format!("{} of 200 instances optimal, {secs:.2}s", 200 - misses),
    )
}

fn mask_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (rows, cols) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let dens = rng.random_range(0.0..1.0);
        let a: Vec<bool> = (0..rows * cols)
            .map(|_| rng.random::<f64>() < dens)
            .collect();
        let b: Vec<bool> = (0..rows * cols)
            .map(|_| rng.random::<f64>() < dens)
            .collect();
        let pred = BinaryMask::from_fn(rows, cols, |r, c| a[r * cols + c]);
        let gt = BinaryMask::from_fn(rows, cols, |r, c| b[r * cols + c]);
        let (mut tp, mut fp, mut fn_, mut union) = (0, 0, 0, 0);
        for i in 0..rows * cols {
            tp += (a[i] && b[i]) as usize;
            fp += (a[i] && !b[i]) as usize;
            fn_ += (!a[i] && b[i]) as usize;
            union += (a[i] || b[i]) as usize;
        }
        let div = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let prf = precision_recall_f1(&pred, &gt).unwrap();
        let ok = iou(&pred, &gt).unwrap() == div(tp, union)
            && prf.precision == div(tp, tp + fp)
            && prf.recall == div(tp, tp + fn_)
            && (prf.tp, prf.fp, prf.fn_) == (tp, fp, fn_);
        mismatches += (!ok) as usize;
    }
    let a = BinaryMask::from_fn(10, 15, |_, c| c < 10);
    let b = BinaryMask::from_fn(10, 15, |_, c| c >= 5);
    let rect = iou(&a, &b).unwrap();
    outcome(
        mismatches == 0 && rect == 1.0 / 3.0,
        format!("{mismatches} mismatches in 100 pairs, rectangle IoU {rect}"),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig {
        layer1_units: 4,
        layer2_units: 4,
        dense_units: 4,
        seq_len: 5,
        ..ModelConfig::default()
    };
    let mut m = Model::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    m.params
        .iter_mut()
        .for_each(|p| *p = rng.random_range(-0.8..0.8));
    let seqs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = [0, 1, 2, 3];
    let masks: Vec<Option<DropoutMasks>> =
        vec![Some(DropoutMasks::draw(&cfg, &mut rng)), None, None, None];
    let mean_loss = |m: &Model| {
        seqs.iter()
            .zip(&labels)
            .zip(&masks)
            .map(|((s, &l), mk)| loss(&m.forward_with_cache(s, mk.clone()).unwrap().probs, l))
            .sum::<f64>()
            / seqs.len() as f64
    };
    let caches: Vec<_> = seqs
        .iter()
        .zip(&masks)
        .map(|(s, mk)| m.forward_with_cache(s, mk.clone()).unwrap())
        .collect();
    let grad = m.backward(&caches, &labels).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let count = m.param_count();
    for i in 0..count {
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = mean_loss(&m);
        m.params[i] = orig - h;
        let down = mean_loss(&m);
        m.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs());
        let err = if denom < 1e-7 {
            (grad[i] - numeric).abs()
        } else {
            (grad[i] - numeric).abs() / denom
        };
        worst = worst.max(err);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && count >= 200 && secs < 60.0,
        format!("max relative error {worst:.2e} over {count} parameters, {secs:.2}s"),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn lab_and_determinism() -> (Outcome, Outcome) {
    let t0 = Instant::now();
    let first = tempfile::tempdir().unwrap();
    let stress = tempfile::tempdir().unwrap();
    let base = run_lab(&PipelineConfig::default(), first.path());
    let widened = run_lab(&PipelineConfig::stress(), stress.path());
    let secs = t0.elapsed().as_secs_f64();
    let lab = match (&base, &widened) {
        (Ok(b), Ok(w)) => {
            let (s, sw) = (&b.summary, &w.summary);
            let acc = s.test_accuracy.unwrap_or(0.0);
            let acc_w = sw.test_accuracy.unwrap_or(0.0);
            outcome(
                s.mean_precision >= 0.78 && s.mean_iou >= 0.70 && acc >= 0.90 && acc_w >= 0.60 && secs <= 300.0,
                format!(
                    "precision {:.3}, IoU {:.3} ± {:.3}, accuracy {acc:.3}, stress accuracy {acc_w:.3}, {secs:.1}s",
                    s.mean_precision, s.mean_iou, s.std_iou
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("run failed: {e}")),
    };

    let second = tempfile::tempdir().unwrap();
    let det = match run_lab(&PipelineConfig::default(), second.path()) {
        Ok(_) if base.is_ok() => {
            let (a, b) = (files_under(first.path()), files_under(second.path()));
            let differing: Vec<String> = a
                .keys()
                .chain(b.keys())
                .filter(|k| a.get(*k) != b.get(*k))
                .map(|k| k.display().to_string())
                .collect();
            outcome(
                differing.is_empty(),
                if differing.is_empty() {
                    format!("{} files byte-identical", a.len())
                } else {
                    format!("differing: {}", differing.join(", "))
                },
            )
        }
        Ok(_) => outcome(false, "first run failed".into()),
        Err(e) => outcome(false, format!("run failed: {e}")),
    };
    (lab, det)
}

fn sequence(values: Vec<f64>, label: usize) -> LabeledSequence {
    LabeledSequence {
        values,
        label,
        slab_id: 0,
        zone: DefectClass::from_label(label),
        anchor_x_in: 0.0,
        anchor_y_in: 0.0,
        padded: false,
    }
}

fn baseline_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seqs: Vec<LabeledSequence> = (0..400)
        .map(|i| {
            sequence(
                (0..20).map(|_| rng.random_range(-1.5..1.5)).collect(),
                i % 4,
            )
        })
        .collect();
    let ds = SequenceDataset::new(seqs);
    let model = Model::init(ModelConfig::default()).unwrap();
    let (initial, _) = evaluate(&model, &ds, None).unwrap();

    let mut flat = model.clone();
    flat.tensor_mut("dense2.w").unwrap().fill(0.0);
    flat.tensor_mut("dense2.b").unwrap().fill(0.0);
    let worst = ds
        .sequences
        .iter()
        .take(50)
        .flat_map(|s| flat.infer(&s.values).unwrap())
        .map(|p| (p - 0.25).abs())
        .fold(0.0, f64::max);
    let ln4 = 4f64.ln();
    outcome(
        (initial - ln4).abs() <= 0.05 && worst <= 1e-9,
        format!("epoch-0 loss {initial:.4} (ln 4 = {ln4:.4}), uniform deviation {worst:.1e}"),
    )
}

fn split_contract() -> Outcome {
    let counts = [9_001, 7_203, 6_514, 5_202];
    let seqs: Vec<LabeledSequence> = counts
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| (0..n).map(move |i| sequence(vec![i as f64; 20], label)))
        .collect();
    let total = seqs.len();
    let ds = train_test_split(SequenceDataset::new(seqs), 0.8, 9, true).unwrap();
    let (train, test) = (ds.count(Split::Train), ds.count(Split::Test));
    let mut worst: f64 = 0.0;
    for split in [Split::Train, Split::Test] {
        let n = ds.count(split) as f64;
        for (label, &c) in counts.iter().enumerate() {
            let share = ds.part(split).filter(|s| s.label == label).count() as f64 / n;
            worst = worst.max((share - c as f64 / total as f64).abs());
        }
    }
    outcome(
        total == 27_920 && train == 22_336 && test == 5_584 && worst <= 0.01,
        format!("{total} -> {train}/{test}, worst class share deviation {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 fft matches naive dft", dft_oracle()),
        ("2 peak extraction", peak_recovery()),
        ("3 k-means global optimum", kmeans_optimality()),
        ("4 mask metrics oracle", mask_oracle()),
        ("5 bptt gradient check", gradient_check()),
    ];
    let (lab, det) = lab_and_determinism();
    results.push(("6 synthetic lab run", lab));
    results.push(("7 determinism", det));
    results.push(("8 baseline sanity", baseline_sanity()));
    results.push(("9 dataset split contract", split_contract()));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
