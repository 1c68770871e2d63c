use log::info;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mix_seed, AdamW, CandaceConfig, CandaceModel, FeatureNorm};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, MetricsReport};
use crate::scorer::FeatureMatrix;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy (earliest on ties).
    pub model: CandaceModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn check_widths(data: &[(FeatureMatrix, Label)], width: usize, split: &str) -> Result<()> {
    match data.iter().position(|(fm, _)| fm.n_cols() != width) {
        Some(i) => Err(Error::Config(format!(
            "{split} document {i} has {} feature columns, expected {width}",
            data[i].0.n_cols()
        ))),
        None => Ok(()),
    }
}

/// Accuracy and F1 of `model` on labeled feature matrices.
pub fn evaluate(model: &CandaceModel, data: &[(FeatureMatrix, Label)]) -> Result<MetricsReport> {
    let matrices: Vec<&FeatureMatrix> = data.iter().map(|(fm, _)| fm).collect();
    let gold: Vec<Label> = data.iter().map(|(_, l)| *l).collect();
    let pred = model.predict_all(&matrices)?;
    Ok(metrics(&confusion(&pred, &gold)?))
}

/// Mean cross-entropy with dropout disabled.
pub fn mean_loss(model: &CandaceModel, data: &[(FeatureMatrix, Label)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("mean loss of an empty set".into()));
    }
    check_widths(data, model.config().input_dim, "evaluation")?;
    let losses: Vec<f64> = data
        .par_iter()
        .map(|(fm, label)| {
            let x = model.norm().apply(fm, model.config().max_seq_len);
            let logits = model.sequence_logits(x.view());
            super::network::cross_entropy_item(logits.view(), label.encode() as usize).0
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Trains with seeded shuffling, mini-batches and AdamW, then returns the
/// parameters that scored best on `dev`.
pub fn train(
    train: &[(FeatureMatrix, Label)],
    dev: &[(FeatureMatrix, Label)],
    cfg: &CandaceConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Usage("training and dev sets must be nonempty".into()));
    }
    check_widths(train, cfg.input_dim, "train")?;
    check_widths(dev, cfg.input_dim, "dev")?;

    let norm = FeatureNorm::fit(train.iter().map(|(fm, _)| fm), cfg.input_dim);
    let mut model = CandaceModel::new(cfg.clone(), norm)?;
    let sequences: Vec<(Array2<f64>, Vec<usize>, Label)> = train
        .iter()
        .map(|(fm, label)| {
            let x = model.norm().apply(fm, cfg.max_seq_len);
            let positions = (0..x.nrows()).collect();
            (x, positions, *label)
        })
        .collect();

    let mut optimizer = AdamW::new(cfg.optimizer(), model.params().tensors().iter().map(|t| t.len()));
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, SHUFFLE_STREAM]));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, CandaceModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<(ArrayView2<f64>, &[usize], Label)> = chunk
                .iter()
                .map(|&i| (sequences[i].0.view(), sequences[i].1.as_slice(), sequences[i].2))
                .collect();
            let seed = mix_seed(&[cfg.seed, DROPOUT_STREAM, epoch as u64, b as u64]);
            let (loss, grads) = model.batch_gradients(&items, Some(seed));
            loss_sum += loss * chunk.len() as f64;
            optimizer.step(model.params_mut().tensors_mut(), grads.tensors());
            if !model.params().all_finite() {
                return Err(Error::Validation(format!("non-finite parameters after epoch {epoch} batch {b}")));
            }
        }
        let report = evaluate(&model, dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / sequences.len() as f64,
            dev_accuracy: report.accuracy,
            dev_f1: report.f1,
        };
        info!(
            "epoch {epoch}: train loss {:.6}, dev accuracy {:.4}, dev f1 {:.4}",
            record.train_loss, record.dev_accuracy, record.dev_f1
        );
        if best.as_ref().map_or(true, |(acc, _, _)| report.accuracy > *acc) {
            best = Some((report.accuracy, epoch, model.clone()));
        }
        history.push(record);
    }

    match best {
        Some((_, best_epoch, model)) => Ok(TrainOutcome { model, history, best_epoch }),
        None => Ok(TrainOutcome { model, history, best_epoch: 0 }),
    }
}
