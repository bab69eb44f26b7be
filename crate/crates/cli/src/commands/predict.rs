use std::fs;
use std::io::{self, BufWriter, Read, Write};

use anyhow::{Context, Result};
use codemix_core::preprocess::clean_text;
use codemix_core::SentimentLabel;
use serde_json::json;

use super::Classifier;
use crate::config::RunConfig;
use crate::{PredictArgs, UsageError};

pub fn run(args: &PredictArgs) -> Result<()> {
    let c = &args.common;
    if args.text.is_empty() && args.input.is_none() {
        return Err(UsageError(
            "nothing to predict: pass --text or --input (use `-` for stdin)".into(),
        )
        .into());
    }
    let cfg = RunConfig::resolve(c.config.as_deref(), c.seed, &c.flags)?;
    let pcfg = cfg.preprocess_config()?;

    let mut raw: Vec<String> = args.text.clone();
    if let Some(path) = &args.input {
        let mut buf = String::new();
        if path.as_os_str() == "-" {
            io::stdin()
                .read_to_string(&mut buf)
                .context("reading stdin")?;
        } else {
            buf =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        }
        raw.extend(
            buf.lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string),
        );
    }
    if raw.is_empty() {
        return Ok(());
    }

    let (classifier, _) = Classifier::load(&c.out_dir, args.model, args.checkpoint)?;
    let cleaned: Vec<String> = raw.iter().map(|t| clean_text(t, &pcfg)).collect();
    let refs: Vec<&str> = cleaned.iter().map(String::as_str).collect();
    let scored = classifier.classify(&refs)?;

    let key = if classifier.emits_scores() {
        "scores"
    } else {
        "probabilities"
    };
    let mut stdout = BufWriter::new(io::stdout().lock());
    for (text, s) in raw.iter().zip(&scored) {
        if args.json {
            let values: serde_json::Map<_, _> = SentimentLabel::ALL
                .iter()
                .map(|l| (l.as_str().to_string(), json!(s.values[l.id()])))
                .collect();
            writeln!(
                stdout,
                "{}",
                json!({ "text": text, "label": s.label.as_str(), key: values })
            )?;
        } else {
            writeln!(
                stdout,
                "{}\t{:.4}\t{:.4}\t{:.4}",
                s.label.as_str(),
                s.values[0],
                s.values[1],
                s.values[2]
            )?;
        }
    }
    stdout.flush()?;
    Ok(())
}
