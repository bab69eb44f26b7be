use std::fs;

use anyhow::{Context, Result};
use codemix_core::corpus::{
    class_distribution, dedup, load_corpus, merge, split, InputFormat, LabelMap,
};
use codemix_core::preprocess::preprocess_corpus;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{ManifestBuilder, SplitSizes};
use crate::{PrepareArgs, UsageError};

#[derive(Serialize)]
struct DropSummary {
    raw_duplicate: usize,
    empty: usize,
    no_alpha: usize,
    filler: usize,
    duplicate: usize,
    total: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    records: usize,
    counts: [usize; 3],
    percentages: [f64; 3],
    drops: &'a DropSummary,
    split_sizes: SplitSizes,
}

pub fn run(args: &PrepareArgs) -> Result<()> {
    let c = &args.common;
    let cfg = RunConfig::resolve(c.config.as_deref(), c.seed, &c.flags)?;
    let pcfg = cfg.preprocess_config()?;
    let spec = cfg.split_spec(c.seed)?;
    let out = &c.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut manifest = ManifestBuilder::new("prepare", c.seed, &cfg, out)?;
    let label_map = match &args.label_map {
        Some(p) => {
            manifest.input(p)?;
            LabelMap::load(p)?
        }
        None => LabelMap::canonical(),
    };
    if let Some(p) = &c.config {
        manifest.input(p)?;
    }
    for p in cfg.list_files() {
        manifest.input(p)?;
    }

    let mut raw = None;
    for path in &args.input {
        manifest.input(path)?;
        let corpus = load_corpus(path, InputFormat::from_path(path), &label_map)?;
        info!("{}: {} records", path.display(), corpus.len());
        raw = Some(match raw {
            None => corpus,
            Some(acc) => merge(&acc, &corpus),
        });
    }
    let raw = raw.expect("clap requires at least one --input");
    let deduped = dedup(&raw, cfg.dedup);
    let (clean, drops) = preprocess_corpus(&deduped, &pcfg);
    if clean.is_empty() {
        return Err(UsageError("no records left after preprocessing".into()).into());
    }
    let dist = class_distribution(&clean)?;
    let (train, val, test) = split(&clean, &spec)?;
    let sizes = SplitSizes {
        train: train.len(),
        val: val.len(),
        test: test.len(),
    };
    info!("split sizes {}/{}/{}", sizes.train, sizes.val, sizes.test);

    for (name, corpus) in [
        ("clean.jsonl", &clean),
        ("train.jsonl", &train),
        ("val.jsonl", &val),
        ("test.jsonl", &test),
    ] {
        corpus.write_jsonl(&out.join(name))?;
        manifest.record_output(out, name)?;
    }
    let table = dist.to_table();
    manifest.write_output(out, "distribution.txt", table.as_bytes())?;
    manifest.write_output(out, "distribution.csv", dist.to_csv().as_bytes())?;
    let drop_summary = DropSummary {
        raw_duplicate: raw.len() - deduped.len(),
        empty: drops.empty,
        no_alpha: drops.no_alpha,
        filler: drops.filler,
        duplicate: drops.duplicate,
        total: raw.len() - deduped.len() + drops.total(),
    };
    let mut drops_json = serde_json::to_string_pretty(&drop_summary)?;
    drops_json.push('\n');
    manifest.write_output(out, "drops.json", drops_json.as_bytes())?;
    manifest.split_sizes(sizes);
    manifest.finish(out, "manifest_prepare.json")?;

    if args.json {
        let summary = Summary {
            records: clean.len(),
            counts: dist.counts,
            percentages: dist.percentages,
            drops: &drop_summary,
            split_sizes: sizes,
        };
        println!("{}", serde_json::to_string(&summary)?);
    } else {
        print!("{table}");
        println!(
            "dropped {} records; split train/val/test = {}/{}/{}",
            drop_summary.total, sizes.train, sizes.val, sizes.test
        );
    }
    Ok(())
}
