use std::fs;

use anyhow::{Context, Result};
use codemix_core::metrics::{evaluate, format_report, per_class_f1_report, EvalReport};
use serde::{Deserialize, Serialize};

use super::{read_split, split_path, Classifier};
use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::{EvaluateArgs, UsageError};

/// Contents of `eval_<model>_<split>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub model: String,
    pub split: String,
    pub model_file: String,
    pub num_examples: usize,
    pub report: EvalReport,
}

pub fn eval_file_name(model: &str, split: &str) -> String {
    format!("eval_{model}_{split}.json")
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let c = &args.common;
    let cfg = RunConfig::resolve(c.config.as_deref(), c.seed, &c.flags)?;
    let out = &c.out_dir;
    let data = args.data_dir.as_ref().unwrap_or(out);
    let split = args.split.as_str();

    let (classifier, model_path) = Classifier::load(out, args.model, args.checkpoint)?;
    let corpus = read_split(data, split)?;
    if corpus.is_empty() {
        return Err(UsageError(format!("the {split} split is empty")).into());
    }

    let mut manifest = ManifestBuilder::new(
        format!("evaluate {} {split}", args.model.as_str()),
        c.seed,
        &cfg,
        out,
    )?;
    manifest.input(&model_path)?;
    manifest.input(&split_path(data, split))?;

    let predicted = classifier.classify(&corpus.texts())?;
    let y_pred: Vec<_> = predicted.iter().map(|s| s.label).collect();
    let report = evaluate(&corpus.labels(), &y_pred)?;
    let file = EvalFile {
        model: args.model.as_str().into(),
        split: split.into(),
        model_file: model_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        num_examples: corpus.len(),
        report,
    };
    let json = serde_json::to_string_pretty(&file)? + "\n";
    let name = eval_file_name(args.model.as_str(), split);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    manifest.write_output(out, &name, json.as_bytes())?;
    manifest.finish(
        out,
        &format!("manifest_eval_{}_{split}.json", args.model.as_str()),
    )?;

    if args.json {
        print!("{json}");
    } else {
        println!(
            "{} on {split} ({} examples)",
            args.model.display_name(),
            corpus.len()
        );
        print!("{}", format_report(&file.report));
        print!("{}", per_class_f1_report(&file.report));
    }
    Ok(())
}
