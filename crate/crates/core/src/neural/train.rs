use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::axpy;
use super::{adam_step, loss, AdamState, DropoutMasks, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::seqdata::{SequenceDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Inference-mode metrics of the freshly initialized model.
    pub initial: EpochStats,
    pub epochs: Vec<EpochStats>,
    /// Not persisted, so saved histories stay byte-stable.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Mean loss and accuracy in inference mode over one split (or everything).
pub fn evaluate(model: &Model, ds: &SequenceDataset, split: Option<Split>) -> Result<(f64, f64)> {
    let items: Vec<(&[f64], usize)> = match split {
        Some(s) => ds.part(s).map(|q| (q.values.as_slice(), q.label)).collect(),
        None => ds
            .sequences
            .iter()
            .map(|q| (q.values.as_slice(), q.label))
            .collect(),
    };
    if items.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scored: Vec<(f64, bool)> = items
        .par_iter()
        .map(|(x, label)| {
            let p = model.predict_one(x)?;
            Ok((loss(&p.probs, *label), p.label == *label))
        })
        .collect::<Result<_>>()?;
    let n = scored.len() as f64;
    Ok((
        scored.iter().map(|s| s.0).sum::<f64>() / n,
        scored.iter().filter(|s| s.1).count() as f64 / n,
    ))
}

fn stats(
    model: &Model,
    ds: &SequenceDataset,
    epoch: usize,
    train: (f64, f64),
) -> Result<EpochStats> {
    let test = if ds.count(Split::Test) > 0 {
        Some(evaluate(model, ds, Some(Split::Test))?)
    } else {
        None
    };
    Ok(EpochStats {
        epoch,
        train_loss: train.0,
        train_accuracy: train.1,
        test_loss: test.map(|t| t.0),
        test_accuracy: test.map(|t| t.1),
    })
}

/// Mini-batch Adam with shuffling, dropout and gradient clipping.
///
/// The dataset must be split and normalized. Everything random (initial
/// weights, shuffle order, dropout masks) derives from `config.seed`.
pub fn train(config: &ModelConfig, ds: &SequenceDataset) -> Result<(Model, TrainHistory)> {
    let started = Instant::now();
    config.validate()?;
    if ds.splits.len() != ds.len() {
        return Err(Error::InvalidInput("training needs a split dataset".into()));
    }
    let Some(norm) = ds.normalization else {
        return Err(Error::InvalidInput(
            "training needs a normalized dataset".into(),
        ));
    };
    let train_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.splits[i] == Split::Train)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::InvalidInput("train split is empty".into()));
    }

    let mut model = Model::init(config.clone())?;
    model.normalization = Some(norm);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = AdamState::new(model.param_count());
    let adam = config.adam();

    let initial = stats(&model, ds, 0, evaluate(&model, ds, Some(Split::Train))?)?;
    log::info!(
        "initial: loss {:.4}, train acc {:.3}",
        initial.train_loss,
        initial.train_accuracy
    );
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order = train_idx;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let masks: Vec<DropoutMasks> = batch
                .iter()
                .map(|_| DropoutMasks::draw(config, &mut rng))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let n = model.param_count();
            let results: Vec<(Vec<f64>, f64, bool)> = batch
                .par_iter()
                .zip(masks)
                .map(|(&i, m)| {
                    let s = &ds.sequences[i];
                    let cache = model.forward_with_cache(&s.values, Some(m))?;
                    let mut g = vec![0.0; n];
                    model.backward_one(&cache, s.label, scale, &mut g);
                    let argmax = (0..cache.probs.len()).fold(0, |b, j| {
                        if cache.probs[j] > cache.probs[b] {
                            j
                        } else {
                            b
                        }
                    });
                    Ok((g, loss(&cache.probs, s.label), argmax == s.label))
                })
                .collect::<Result<_>>()?;

            let mut grad = vec![0.0; n];
            let mut batch_loss = 0.0;
            for (g, l, ok) in &results {
                axpy(&mut grad, 1.0, g);
                batch_loss += l;
                correct += *ok as usize;
            }
            loss_sum += batch_loss;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss * scale,
                    grad_norm: norm,
                    learning_rate: config.learning_rate,
                });
            }
            if config.clip_norm > 0.0 && norm > config.clip_norm {
                let k = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam_step(&mut model.params, &grad, &mut opt, &adam);
        }
        let n = order.len() as f64;
        let s = stats(&model, ds, epoch, (loss_sum / n, correct as f64 / n))?;
        log::info!(
            "epoch {epoch}: loss {:.4}, train acc {:.3}, test acc {}",
            s.train_loss,
            s.train_accuracy,
            s.test_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
        );
        epochs.push(s);
    }
    Ok((
        model,
        TrainHistory {
            initial,
            epochs,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    ))
}
