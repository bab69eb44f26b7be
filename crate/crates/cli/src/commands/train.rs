use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use codemix_core::baselines::{nb_train, svm_train, BaselineFile, BaselineModel};
use codemix_core::features::{fit_term_index, transform, SparseVector};
use codemix_core::tokenizer::{encode, train_vocabulary, Encoding};
use codemix_core::transformer::{save_model, train, Dataset, EpochLog, ModelFile};
use codemix_core::Corpus;
use log::info;
use serde::Serialize;

use super::{model_file_name, read_split, split_path};
use crate::config::{Checkpoint, RunConfig};
use crate::manifest::ManifestBuilder;
use crate::{ModelKind, TrainArgs};

#[derive(Serialize)]
struct BaselineLog {
    model: &'static str,
    train_examples: usize,
    num_features: usize,
    train_accuracy: f64,
}

#[derive(Serialize)]
struct TransformerLog<'a> {
    model: &'static str,
    train_examples: usize,
    val_examples: usize,
    vocab_size: usize,
    num_parameters: usize,
    best_epoch: Option<usize>,
    epochs: &'a [EpochLog],
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let c = &args.common;
    let cfg = RunConfig::resolve(c.config.as_deref(), c.seed, &c.flags)?;
    let out = &c.out_dir;
    let data = args.data_dir.as_ref().unwrap_or(out);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut manifest =
        ManifestBuilder::new(format!("train {}", args.model.as_str()), c.seed, &cfg, out)?;
    if let Some(p) = &c.config {
        manifest.input(p)?;
    }
    let train_set = read_split(data, "train")?;
    manifest.input(&split_path(data, "train"))?;
    if train_set.is_empty() {
        return Err(crate::UsageError("the train split is empty".into()).into());
    }

    let started = Instant::now();
    let log_json = match args.model {
        ModelKind::Nb | ModelKind::Svm => {
            train_baseline(args.model, &cfg, &train_set, &mut manifest, out)?
        }
        ModelKind::Transformer => {
            let val_path = split_path(data, "val");
            let val_set = if val_path.is_file() {
                manifest.input(&val_path)?;
                Some(read_split(data, "val")?)
            } else {
                None
            };
            train_transformer(&cfg, &train_set, val_set.as_ref(), &mut manifest, out)?
        }
    };
    let log_name = format!("train_{}_log.json", args.model.as_str());
    manifest.write_output(out, &log_name, log_json.as_bytes())?;
    manifest.finish(out, &format!("manifest_train_{}.json", args.model.as_str()))?;
    info!("training took {:.1?}", started.elapsed());
    print!("{log_json}");
    Ok(())
}

fn train_baseline(
    kind: ModelKind,
    cfg: &RunConfig,
    train_set: &Corpus,
    manifest: &mut ManifestBuilder,
    out: &std::path::Path,
) -> Result<String> {
    let texts = train_set.texts();
    let labels = train_set.labels();
    let index = fit_term_index(&texts, cfg.features.min_df)?;
    let weighting = cfg.features.weighting;
    let x: Vec<SparseVector> = texts
        .iter()
        .map(|t| transform(t, &index, weighting))
        .collect();
    info!("{} documents, {} features", x.len(), index.len());

    let model = match kind {
        ModelKind::Nb => {
            BaselineModel::NaiveBayes(nb_train(&x, &labels, index.len(), cfg.nb.alpha)?)
        }
        _ => BaselineModel::LinearSvm(svm_train(&x, &labels, index.len(), &cfg.svm)?),
    };
    let correct = x
        .iter()
        .zip(&labels)
        .filter(|(v, &y)| model.predict(v).label == y)
        .count();

    let term_index_ref =
        manifest.write_output(out, "term_index.json", index.to_json()?.as_bytes())?;
    let file = BaselineFile {
        model,
        term_index_ref,
        weighting,
    };
    manifest.write_output(
        out,
        &model_file_name(kind, Checkpoint::Final),
        file.to_json()?.as_bytes(),
    )?;

    let log = BaselineLog {
        model: kind.as_str(),
        train_examples: x.len(),
        num_features: index.len(),
        train_accuracy: correct as f64 / x.len() as f64,
    };
    Ok(serde_json::to_string_pretty(&log)? + "\n")
}

fn train_transformer(
    cfg: &RunConfig,
    train_set: &Corpus,
    val_set: Option<&Corpus>,
    manifest: &mut ManifestBuilder,
    out: &std::path::Path,
) -> Result<String> {
    let tok = cfg.tokenizer;
    tok.validate()?;
    let vocab = train_vocabulary(&train_set.texts(), cfg.vocab_size, &tok)?;
    let vocab_ref = manifest.write_output(out, "vocab.txt", vocab.to_text().as_bytes())?;
    info!("vocabulary of {} tokens", vocab.len());

    let encode_all = |c: &Corpus| -> Vec<Encoding> {
        c.texts().iter().map(|t| encode(t, &vocab, &tok)).collect()
    };
    let (train_enc, train_labels) = (encode_all(train_set), train_set.labels());
    let val = val_set
        .filter(|v| !v.is_empty())
        .map(|v| (encode_all(v), v.labels()));
    let train_data = Dataset::new(&train_enc, &train_labels)?;
    let val_data = match &val {
        Some((e, l)) => Some(Dataset::new(e, l)?),
        None => None,
    };

    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.vocab_size = vocab.len();
    enc_cfg.max_len = tok.max_len;
    let tc = cfg.train.clone();
    info!(
        "transformer: lr {} epochs {} batch {} weight decay {} warmup {}",
        tc.learning_rate, tc.epochs, tc.batch_size, tc.weight_decay, tc.warmup_steps
    );
    let outcome = train(&enc_cfg, &tc, train_data, val_data)?;

    let num_parameters = outcome.final_params.num_parameters();
    for (checkpoint, params) in [
        (Checkpoint::Final, outcome.final_params),
        (Checkpoint::Best, outcome.best_params),
    ] {
        let name = model_file_name(ModelKind::Transformer, checkpoint);
        let file = ModelFile {
            encoder_config: enc_cfg.clone(),
            train_config: tc.clone(),
            tokenizer_config: tok,
            vocab_ref: vocab_ref.clone(),
            params,
        };
        save_model(&out.join(&name), &file)?;
        manifest.record_output(out, &name)?;
    }

    let log = TransformerLog {
        model: "transformer",
        train_examples: train_enc.len(),
        val_examples: val.as_ref().map_or(0, |(e, _)| e.len()),
        vocab_size: vocab.len(),
        num_parameters,
        best_epoch: outcome.best_epoch,
        epochs: &outcome.log,
    };
    Ok(serde_json::to_string_pretty(&log)? + "\n")
}
