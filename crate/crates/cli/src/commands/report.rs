use std::fs;

use anyhow::{Context, Result};
use codemix_core::metrics::compare_models;

use super::evaluate::{eval_file_name, EvalFile};
use crate::{ModelKind, ReportArgs, UsageError};

pub fn run(args: &ReportArgs) -> Result<()> {
    let out = &args.out_dir;
    let split = args.split.as_str();
    let mut reports = Vec::new();
    for kind in [ModelKind::Nb, ModelKind::Svm, ModelKind::Transformer] {
        let path = out.join(eval_file_name(kind.as_str(), split));
        if !path.is_file() {
            continue;
        }
        let raw =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: EvalFile =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        reports.push((kind.display_name().to_string(), file.report));
    }
    if reports.is_empty() {
        return Err(UsageError(format!(
            "no evaluations of the {split} split in {}; run `codemix evaluate` first",
            out.display()
        ))
        .into());
    }
    let cmp = compare_models(&reports)?;
    fs::write(out.join("comparison.txt"), &cmp.table).context("writing comparison.txt")?;
    fs::write(out.join("comparison.csv"), &cmp.csv).context("writing comparison.csv")?;
    if args.json {
        let rows: Vec<_> = reports
            .iter()
            .map(|(name, r)| {
                serde_json::json!({
                    "model": name,
                    "accuracy": r.accuracy,
                    "weighted_precision": r.weighted.precision,
                    "weighted_recall": r.weighted.recall,
                    "weighted_f1": r.weighted.f1,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", cmp.table);
    }
    Ok(())
}
