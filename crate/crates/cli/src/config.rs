//! JSON overrides accepted by `--config`. Every field is optional.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use codemix_core::baselines::SvmHyper;
use codemix_core::corpus::{DedupKey, SplitSpec};
use codemix_core::features::FeatureWeighting;
use codemix_core::preprocess::{EmojiLexicon, FillerList, PreprocessConfig, StopWordList};
use codemix_core::tokenizer::TokenizerConfig;
use codemix_core::transformer::{EncoderConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOverrides {
    pub emoji_lexicon: Option<PathBuf>,
    pub stop_words: Option<PathBuf>,
    pub fillers: Option<PathBuf>,
    pub keep_hashtag_text: Option<bool>,
    pub remove_stop_words: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOverrides {
    /// Fractions as "n/d".
    pub train: String,
    pub val: String,
}

impl Default for SplitOverrides {
    fn default() -> Self {
        SplitOverrides {
            train: "8/10".into(),
            val: "1/10".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOverrides {
    pub min_df: u64,
    pub weighting: FeatureWeighting,
}

impl Default for FeatureOverrides {
    fn default() -> Self {
        FeatureOverrides {
            min_df: 1,
            weighting: FeatureWeighting::Tfidf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbOverrides {
    pub alpha: f64,
}

impl Default for NbOverrides {
    fn default() -> Self {
        NbOverrides { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    #[default]
    Final,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preprocess: PreprocessOverrides,
    pub dedup: DedupKey,
    pub split: SplitOverrides,
    pub features: FeatureOverrides,
    pub nb: NbOverrides,
    pub svm: SvmHyper,
    pub tokenizer: TokenizerConfig,
    /// Target WordPiece vocabulary size, special tokens included.
    pub vocab_size: usize,
    /// `vocab_size` and `max_len` are filled in from the vocabulary and the
    /// tokenizer settings.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preprocess: PreprocessOverrides::default(),
            dedup: DedupKey::default(),
            split: SplitOverrides::default(),
            features: FeatureOverrides::default(),
            nb: NbOverrides::default(),
            svm: SvmHyper::default(),
            tokenizer: TokenizerConfig::default(),
            vocab_size: 8000,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads overrides (if any), then applies the command-line seed and
    /// preprocessing flags, which take precedence over the file.
    pub fn resolve(path: Option<&Path>, seed: u64, flags: &PreprocessFlags) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let raw = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&raw)
                    .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.svm.seed = seed;
        cfg.train.seed = seed;
        if flags.keep_hashtag_text {
            cfg.preprocess.keep_hashtag_text = Some(true);
        }
        if flags.no_stop_words {
            cfg.preprocess.remove_stop_words = Some(false);
        }
        cfg.encoder.max_len = cfg.tokenizer.max_len;
        Ok(cfg)
    }

    pub fn split_spec(&self, seed: u64) -> Result<SplitSpec> {
        let parse = |s: &str| {
            s.parse()
                .map_err(|_| UsageError(format!("split fraction {s:?} is not of the form n/d")))
        };
        Ok(SplitSpec::new(
            parse(&self.split.train)?,
            parse(&self.split.val)?,
            seed,
        )?)
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig> {
        let p = &self.preprocess;
        let mut cfg = PreprocessConfig::default();
        if let Some(path) = &p.emoji_lexicon {
            cfg.emoji_lexicon = EmojiLexicon::load(path)?;
        }
        if let Some(path) = &p.stop_words {
            cfg.stop_words = StopWordList::load(path)?;
        }
        if let Some(path) = &p.fillers {
            cfg.fillers = FillerList::load(path)?;
        }
        if let Some(v) = p.keep_hashtag_text {
            cfg.keep_hashtag_text = v;
        }
        if let Some(v) = p.remove_stop_words {
            cfg.remove_stop_words = v;
        }
        Ok(cfg)
    }

    /// Files the configuration reads, for manifest digests.
    pub fn list_files(&self) -> Vec<&Path> {
        let p = &self.preprocess;
        [&p.emoji_lexicon, &p.stop_words, &p.fillers]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, clap::Args)]
pub struct PreprocessFlags {
    /// Keep hashtag words (`#sale` becomes `sale`) instead of dropping them.
    #[arg(long)]
    pub keep_hashtag_text: bool,
    /// Skip stop-word removal.
    #[arg(long)]
    pub no_stop_words: bool,
}
