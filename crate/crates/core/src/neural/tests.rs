use super::*;
use crate::defect::DefectClass;
use crate::seqdata::{normalize, train_test_split, LabeledSequence, Split};
use rand::{Rng, SeedableRng};

fn tiny(units: usize, seq_len: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        layer1_units: units,
        layer2_units: units,
        dense_units: units,
        seq_len,
        seed,
        ..ModelConfig::default()
    }
}

fn randomize(m: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.params
        .iter_mut()
        .for_each(|p| *p = rng.random_range(-scale..scale));
}

fn random_seq(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn mean_loss(
    m: &Model,
    seqs: &[Vec<f64>],
    labels: &[usize],
    masks: &[Option<DropoutMasks>],
) -> f64 {
    seqs.iter()
        .zip(labels)
        .zip(masks)
        .map(|((s, &l), mk)| loss(&m.forward_with_cache(s, mk.clone()).unwrap().probs, l))
        .sum::<f64>()
        / seqs.len() as f64
}

#[test]
fn zero_output_layer_is_uniform() {
    let mut m = Model::init(ModelConfig::default()).unwrap();
    m.tensor_mut("dense2.w").unwrap().fill(0.0);
    m.tensor_mut("dense2.b").unwrap().fill(0.0);
    let p = m.infer(&[0.3; 20]).unwrap();
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    assert!((loss(&p, 2) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn default_parameter_count() {
    let m = Model::init(ModelConfig::default()).unwrap();
    let expect = 4 * 64 * (1 + 64 + 1) + 4 * 32 * (64 + 32 + 1) + 16 * (32 + 1) + 4 * (16 + 1);
    assert_eq!(m.param_count(), expect);
    let l = m.layout();
    let b1 = &m.params[l.tensors[2].2.clone()];
    assert!(b1[64..128].iter().all(|&b| b == 1.0));
    assert!(b1[..64].iter().all(|&b| b == 0.0));
}

#[test]
fn inference_is_deterministic() {
    let m = Model::init(ModelConfig::default()).unwrap();
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
    assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
}

#[test]
fn probabilities_form_a_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..1000u64 {
        let mut m = Model::init(tiny(3, 5, trial)).unwrap();
        randomize(&mut m, 3.0, trial);
        let p = m.infer(&random_seq(5, &mut rng)).unwrap();
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn softmax_shift_invariance() {
    let z = [0.5, -1.0, 3.0, 2.2];
    let shifted: Vec<f64> = z.iter().map(|v| v + 123.0).collect();
    for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn loss_values() {
    assert_eq!(loss(&[0.0, 1.0, 0.0, 0.0], 1), 0.0);
    assert!((loss(&[0.25; 4], 0) - 1.3862943611198906).abs() < 1e-12);
    assert!((loss(&[0.0, 1.0, 0.0, 0.0], 0) - 12.0 * 10f64.ln()).abs() < 1e-9);
    let probs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]];
    let mean = (loss(&probs[0], 3) + loss(&probs[1], 1)) / 2.0;
    assert!((batch_loss(&probs, &[3, 1]) - mean).abs() < 1e-15);
}

#[test]
fn rejects_bad_inputs() {
    let m = Model::init(tiny(2, 4, 0)).unwrap();
    assert!(matches!(
        m.infer(&[0.0; 3]),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(m.infer(&[0.0, f64::NAN, 0.0, 0.0]).is_err());
    assert!(matches!(m.backward(&[], &[]), Err(Error::MissingCache)));
    assert!(Model::init(ModelConfig {
        dropout_rates: [0.3, 1.0, 0.2],
        ..ModelConfig::default()
    })
    .is_err());
    assert!(Model::init(ModelConfig {
        classes: 3,
        ..ModelConfig::default()
    })
    .is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = ModelConfig {
        dropout_rates: [0.3, 0.3, 0.2],
        ..tiny(4, 20, 1)
    };
    let mut m = Model::init(cfg.clone()).unwrap();
    randomize(&mut m, 0.8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seqs: Vec<Vec<f64>> = (0..3).map(|_| random_seq(20, &mut rng)).collect();
    let labels = [0, 3, 1];
    // One sample with fixed dropout masks, the rest in inference mode.
    let masks = vec![Some(DropoutMasks::draw(&cfg, &mut rng)), None, None];
    let caches: Vec<ForwardCache> = seqs
        .iter()
        .zip(&masks)
        .map(|(s, mk)| m.forward_with_cache(s, mk.clone()).unwrap())
        .collect();
    let grad = m.backward(&caches, &labels).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let i = rng.random_range(0..m.param_count());
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = mean_loss(&m, &seqs, &labels, &masks);
        m.params[i] = orig - h;
        let down = mean_loss(&m, &seqs, &labels, &masks);
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
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn output_bias_gradient_is_mean_residual() {
    let mut m = Model::init(tiny(3, 6, 2)).unwrap();
    randomize(&mut m, 0.5, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seqs: Vec<Vec<f64>> = (0..5).map(|_| random_seq(6, &mut rng)).collect();
    let labels = [0, 1, 2, 3, 1];
    let caches: Vec<ForwardCache> = seqs
        .iter()
        .map(|s| m.forward_with_cache(s, None).unwrap())
        .collect();
    let grad = m.backward(&caches, &labels).unwrap();
    let r = m.layout().tensors[9].2.clone();
    for j in 0..4 {
        let want = caches
            .iter()
            .zip(&labels)
            .map(|(c, &l)| c.probs[j] - (j == l) as u8 as f64)
            .sum::<f64>()
            / 5.0;
        assert!((grad[r.start + j] - want).abs() < 1e-12);
    }
}

#[test]
fn confident_correct_batch_has_zero_gradient() {
    let mut m = Model::init(tiny(3, 6, 2)).unwrap();
    m.tensor_mut("dense2.w").unwrap().fill(0.0);
    m.tensor_mut("dense2.b")
        .unwrap()
        .copy_from_slice(&[0.0, 60.0, 0.0, 0.0]);
    let x = vec![0.4; 6];
    let caches: Vec<ForwardCache> = (0..4)
        .map(|_| m.forward_with_cache(&x, None).unwrap())
        .collect();
    let grad = m.backward(&caches, &[1; 4]).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-9));
}

#[test]
fn zero_rate_dropout_equals_inference() {
    let cfg = ModelConfig {
        dropout_rates: [0.0; 3],
        ..tiny(5, 8, 3)
    };
    let m = Model::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_seq(8, &mut rng);
    let train = m.forward(&x, Mode::Train(&mut rng)).unwrap();
    assert_eq!(train, m.infer(&x).unwrap());
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sum = 0.0;
    let mut n = 0;
    for _ in 0..200 {
        let m = DropoutMasks::draw(&cfg, &mut rng);
        for v in &m.after_lstm1 {
            assert!(*v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-15);
            sum += v;
            n += 1;
        }
    }
    assert!((sum / n as f64 - 1.0).abs() < 0.01);
}

fn toy_dataset(levels: &[f64], per_class: usize, seed: u64) -> SequenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::new();
    for (label, &level) in levels.iter().enumerate() {
        for _ in 0..per_class {
            seqs.push(LabeledSequence {
                values: (0..20)
                    .map(|_| level + rng.random_range(-0.5..0.5))
                    .collect(),
                label,
                slab_id: 0,
                zone: DefectClass::from_label(label),
                anchor_x_in: 0.0,
                anchor_y_in: 0.0,
                padded: false,
            });
        }
    }
    normalize(train_test_split(SequenceDataset::new(seqs), 0.8, seed, true).unwrap()).unwrap()
}

#[test]
fn separable_two_band_toy_is_learned() {
    let ds = toy_dataset(&[5.0, 12.0], 60, 1);
    let cfg = ModelConfig {
        epochs: 20,
        batch_size: 16,
        learning_rate: 0.01,
        ..tiny(8, 20, 5)
    };
    let (model, hist) = train(&cfg, &ds).unwrap();
    let (_, acc) = evaluate(&model, &ds, Some(Split::Train)).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert_eq!(hist.epochs.len(), 20);
    assert!(hist.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn initial_loss_is_near_uniform() {
    let ds = toy_dataset(&[3.0, 5.0, 7.0, 9.0], 20, 2);
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::default()
    };
    let (_, hist) = train(&cfg, &ds).unwrap();
    assert!(
        (hist.initial.train_loss - 4f64.ln()).abs() < 0.1,
        "{}",
        hist.initial.train_loss
    );
}

#[test]
fn training_is_bit_reproducible() {
    let ds = toy_dataset(&[3.0, 5.0, 7.0, 9.0], 10, 3);
    let cfg = ModelConfig {
        epochs: 2,
        batch_size: 8,
        ..tiny(6, 20, 9)
    };
    let (a, ha) = train(&cfg, &ds).unwrap();
    let (b, hb) = train(&cfg, &ds).unwrap();
    assert!(a
        .params
        .iter()
        .zip(&b.params)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(ha.epochs, hb.epochs);
    let (c, _) = train(&ModelConfig { seed: 10, ..cfg }, &ds).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn overfit_model_memorizes() {
    let ds = toy_dataset(&[2.0, 6.0, 10.0, 14.0], 3, 4);
    let cfg = ModelConfig {
        epochs: 150,
        batch_size: 4,
        learning_rate: 0.01,
        dropout_rates: [0.0; 3],
        ..tiny(8, 20, 1)
    };
    let (model, _) = train(&cfg, &ds).unwrap();
    for s in ds.part(Split::Train) {
        assert_eq!(model.predict_one(&s.values).unwrap().label, s.label);
    }
}

#[test]
fn batch_prediction_matches_single() {
    let ds = toy_dataset(&[3.0, 5.0, 7.0, 9.0], 5, 5);
    let mut m = Model::init(tiny(4, 20, 2)).unwrap();
    m.normalization = ds.normalization;
    let batch = m.predict(&ds).unwrap();
    for (p, s) in batch.iter().zip(&ds.sequences) {
        let one = m.predict_one(&s.values).unwrap();
        assert_eq!(*p, one);
        assert_eq!(p.confidence, p.probs[p.label]);
        assert!(p.probs.iter().all(|&q| q <= p.confidence));
    }
}

#[test]
fn fingerprint_mismatch_is_rejected() {
    let ds = toy_dataset(&[3.0, 5.0, 7.0, 9.0], 5, 5);
    let mut m = Model::init(tiny(4, 20, 2)).unwrap();
    m.normalization = Some(Normalization::new(1.0, 2.0));
    assert!(matches!(
        m.predict(&ds),
        Err(Error::FingerprintMismatch { .. })
    ));
    let raw = SequenceDataset::new(ds.sequences.clone());
    assert!(m.predict(&raw).is_err());
}

#[test]
fn diverging_training_reports() {
    let ds = toy_dataset(&[3.0, 5.0, 7.0, 9.0], 10, 6);
    let cfg = ModelConfig {
        epochs: 3,
        learning_rate: 1e308,
        clip_norm: 0.0,
        ..tiny(4, 20, 2)
    };
    match train(&cfg, &ds) {
        Err(Error::Diverged { learning_rate, .. }) => assert_eq!(learning_rate, 1e308),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1.epochs)),
    }
}

#[test]
fn training_needs_prepared_data() {
    let ds = toy_dataset(&[3.0, 5.0], 10, 6);
    let unsplit = SequenceDataset::new(ds.sequences.clone());
    assert!(train(&tiny(2, 20, 0), &unsplit).is_err());
    let unnormalized = SequenceDataset {
        normalization: None,
        ..ds
    };
    assert!(train(&tiny(2, 20, 0), &unnormalized).is_err());
}

#[test]
fn model_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut m = Model::init(ModelConfig::default()).unwrap();
    m.normalization = Some(Normalization::new(9.1, 3.3));
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back, m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"version\": 1"));
    assert!(text.contains("\"lstm1.w\""));

    let bumped = text.replace("\"version\": 1", "\"version\": 7");
    std::fs::write(&path, bumped).unwrap();
    assert!(matches!(Model::load(&path), Err(Error::ModelVersion(7))));
}
