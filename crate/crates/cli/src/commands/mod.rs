//! Subcommand implementations and the model loading they share.

pub mod evaluate;
pub mod predict;
pub mod prepare;
pub mod report;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use codemix_core::baselines::{BaselineFile, BaselineModel};
use codemix_core::corpus::{load_corpus, InputFormat, LabelMap};
use codemix_core::features::{transform, FeatureWeighting, TermIndex};
use codemix_core::tokenizer::{encode, Vocabulary};
use codemix_core::transformer::{load_model, predict_encodings, ModelFile};
use codemix_core::{Corpus, SentimentLabel};

use crate::config::Checkpoint;
use crate::manifest::verify_ref;
use crate::{ModelKind, UsageError};

pub fn model_file_name(kind: ModelKind, checkpoint: Checkpoint) -> String {
    match (kind, checkpoint) {
        (ModelKind::Transformer, Checkpoint::Final) => "model_transformer.bin".into(),
        (ModelKind::Transformer, Checkpoint::Best) => "model_transformer.best.bin".into(),
        (k, _) => format!("model_{}.json", k.as_str()),
    }
}

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

/// Reads a split written by `prepare`.
pub fn read_split(dir: &Path, split: &str) -> Result<Corpus> {
    let path = split_path(dir, split);
    if !path.is_file() {
        return Err(UsageError(format!(
            "missing split file {}; run `codemix prepare` first",
            path.display()
        ))
        .into());
    }
    Ok(load_corpus(
        &path,
        InputFormat::Jsonl,
        &LabelMap::canonical(),
    )?)
}

/// What a classifier returns per text: the label and either probabilities
/// (NB, transformer) or decision scores (SVM).
pub struct Scored {
    pub label: SentimentLabel,
    pub values: [f64; 3],
}

pub enum Classifier {
    Baseline {
        model: BaselineModel,
        index: TermIndex,
        weighting: FeatureWeighting,
    },
    Transformer {
        file: Box<ModelFile>,
        vocab: Vocabulary,
    },
}

impl Classifier {
    /// Loads a model from the run directory, checking the digest of the
    /// term index or vocabulary it references.
    pub fn load(dir: &Path, kind: ModelKind, checkpoint: Checkpoint) -> Result<(Self, PathBuf)> {
        let path = dir.join(model_file_name(kind, checkpoint));
        if !path.is_file() {
            return Err(UsageError(format!(
                "model file {} not found; run `codemix train --model {}` first",
                path.display(),
                kind.as_str()
            ))
            .into());
        }
        let classifier = if kind == ModelKind::Transformer {
            let file = load_model(&path)?;
            verify_ref(dir, &file.vocab_ref, "vocabulary")?;
            let vocab = Vocabulary::load(&dir.join(&file.vocab_ref.path))?;
            if vocab.len() != file.encoder_config.vocab_size {
                return Err(UsageError(format!(
                    "vocabulary has {} tokens but the model expects {}",
                    vocab.len(),
                    file.encoder_config.vocab_size
                ))
                .into());
            }
            Classifier::Transformer {
                file: Box::new(file),
                vocab,
            }
        } else {
            let raw =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let bf = BaselineFile::from_json(&raw)
                .with_context(|| format!("parsing {}", path.display()))?;
            if bf.model.kind().as_str() != kind.as_str() {
                return Err(UsageError(format!(
                    "{} holds a {} model, not {}",
                    path.display(),
                    bf.model.kind().as_str(),
                    kind.as_str()
                ))
                .into());
            }
            verify_ref(dir, &bf.term_index_ref, "term index")?;
            let index = TermIndex::load(&dir.join(&bf.term_index_ref.path))?;
            if index.len() != bf.model.num_features() {
                return Err(UsageError(format!(
                    "term index has {} terms but the model expects {}",
                    index.len(),
                    bf.model.num_features()
                ))
                .into());
            }
            Classifier::Baseline {
                model: bf.model,
                index,
                weighting: bf.weighting,
            }
        };
        Ok((classifier, path))
    }

    /// True when `values` are decision scores rather than probabilities.
    pub fn emits_scores(&self) -> bool {
        matches!(
            self,
            Classifier::Baseline {
                model: BaselineModel::LinearSvm(_),
                ..
            }
        )
    }

    /// Classifies already-cleaned texts.
    pub fn classify(&self, texts: &[&str]) -> Result<Vec<Scored>> {
        Ok(match self {
            Classifier::Baseline {
                model,
                index,
                weighting,
            } => texts
                .iter()
                .map(|t| {
                    let p = model.predict(&transform(t, index, *weighting));
                    let values = match model {
                        BaselineModel::NaiveBayes(_) => p.scores.map(f64::exp),
                        BaselineModel::LinearSvm(_) => p.scores,
                    };
                    Scored {
                        label: p.label,
                        values,
                    }
                })
                .collect(),
            Classifier::Transformer { file, vocab } => {
                let encs: Vec<_> = texts
                    .iter()
                    .map(|t| encode(t, vocab, &file.tokenizer_config))
                    .collect();
                predict_encodings(&file.params, &file.encoder_config, &encs)?
                    .into_iter()
                    .map(|(label, values)| Scored { label, values })
                    .collect()
            }
        })
    }
}
