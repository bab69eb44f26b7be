use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss_and_grads, forward_example, mix_seed, probabilities};
use super::optim::{adamw_step, lr_schedule, AdamState};
use super::{init_params, EncoderConfig, TrainConfig, TransformerParams};
use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tokenizer::{encode, Encoding, TokenizerConfig, Vocabulary};

// Stream tags that keep init, shuffling and dropout draws independent.
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub encodings: &'a [Encoding],
    pub labels: &'a [SentimentLabel],
}

impl<'a> Dataset<'a> {
    pub fn new(encodings: &'a [Encoding], labels: &'a [SentimentLabel]) -> Result<Self> {
        if encodings.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} encodings but {} labels",
                encodings.len(),
                labels.len()
            )));
        }
        Ok(Dataset { encodings, labels })
    }

    pub fn len(&self) -> usize {
        self.encodings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encodings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean training cross-entropy with dropout active.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_weighted_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: TransformerParams,
    /// Parameters after the epoch with the highest validation weighted F1
    /// (earliest on ties); the final parameters when there is no validation set.
    pub best_params: TransformerParams,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

/// Mini-batch AdamW training from a seeded initialization.
///
/// Each epoch reshuffles the training set; every update uses the scheduled
/// learning rate for its 0-based step. Dropout masks for an example depend on
/// `(seed, step, example index)`, so runs are reproducible bit for bit.
pub fn train(
    cfg: &EncoderConfig,
    tc: &TrainConfig,
    train_set: Dataset<'_>,
    val_set: Option<Dataset<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    let mut params = init_params(cfg, tc.seed)?;
    let mut best = (f64::NEG_INFINITY, params.clone(), None);
    let mut log = Vec::with_capacity(tc.epochs);
    let mut state = AdamState::new(&params);
    let mut grads = TransformerParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, SHUFFLE_STREAM, 0));
    let dropout_seed = mix_seed(tc.seed, DROPOUT_STREAM, 0);
    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(tc.batch_size);
    let total_steps = tc.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let items: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    (
                        &train_set.encodings[i],
                        train_set.labels[i],
                        Some(mix_seed(dropout_seed, step as u64, i as u64)),
                    )
                })
                .collect();
            let loss = batch_loss_and_grads(&params, cfg, &items, &mut grads)
                .map_err(|e| Error::Divergence(format!("step {step}: {e}")))?;
            let lr = lr_schedule(step, tc, total_steps);
            adamw_step(&mut params, &grads, &mut state, tc, lr)
                .map_err(|e| Error::Divergence(format!("step {step}: {e}")))?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / n as f64;

        let (val_accuracy, val_weighted_f1) = match val_set.filter(|v| !v.is_empty()) {
            Some(v) => {
                let pred: Vec<SentimentLabel> = predict_encodings(&params, cfg, v.encodings)?
                    .into_iter()
                    .map(|(l, _)| l)
                    .collect();
                let r = metrics::evaluate(v.labels, &pred)?;
                (Some(r.accuracy), Some(r.weighted.f1))
            }
            None => (None, None),
        };
        log::info!(
            "epoch {epoch}/{}: train loss {train_loss:.4}, val weighted F1 {}",
            tc.epochs,
            val_weighted_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
        );
        let score = val_weighted_f1.unwrap_or(f64::INFINITY);
        if score > best.0 || val_weighted_f1.is_none() {
            best = (score, params.clone(), Some(epoch));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
            val_weighted_f1,
        });
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params: best.1,
        best_epoch: best.2,
        log,
    })
}

/// Eval-mode class probabilities; the label is the argmax with ties going to
/// the lowest label id.
pub fn predict_encodings(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    encodings: &[Encoding],
) -> Result<Vec<(SentimentLabel, [f64; 3])>> {
    encodings
        .par_iter()
        .map(|e| {
            let cache = forward_example(params, cfg, e, None)?;
            let p = probabilities(cache.logits());
            let probs = [p[0], p[1], p[2]];
            let mut best = 0;
            for c in 1..3 {
                if probs[c] > probs[best] {
                    best = c;
                }
            }
            Ok((SentimentLabel::ALL[best], probs))
        })
        .collect()
}

/// Tokenizes `texts` and predicts each one.
pub fn predict(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    vocab: &Vocabulary,
    tok: &TokenizerConfig,
    texts: &[&str],
) -> Result<Vec<(SentimentLabel, [f64; 3])>> {
    if tok.max_len != cfg.max_len {
        return Err(Error::InvalidConfig(format!(
            "tokenizer max_len {} differs from model max_len {}",
            tok.max_len, cfg.max_len
        )));
    }
    if vocab.len() != cfg.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    let encodings: Vec<Encoding> = texts.iter().map(|t| encode(t, vocab, tok)).collect();
    predict_encodings(params, cfg, &encodings)
}
