//! Sentiment classification for code-mixed (Hinglish-style) social-media text.
//!
//! The crate covers the whole pipeline:
//!
//! * [`corpus`]: ingestion, label harmonization, deduplication, class
//!   statistics and stratified splits.
//! * [`preprocess`]: noisy-text cleaning (links, mentions, hashtags, emoji
//!   affect tokens, case and stop words, noise filtering).
//! * [`tokenizer`]: WordPiece vocabulary, greedy longest-match encoding and a
//!   desk-scale vocabulary trainer.
//! * [`features`]: TF-IDF term index and sparse vectors.
//! * [`baselines`]: multinomial Naive Bayes and a one-vs-rest linear SVM.
//! * [`transformer`]: a compact encoder classifier trained with AdamW.
//! * [`metrics`]: confusion matrix, per-class and support-weighted scores.

mod artifact;
pub mod baselines;
pub mod corpus;
mod error;
pub mod features;
pub mod metrics;
pub mod preprocess;
pub mod tokenizer;
pub mod transformer;

pub use artifact::ArtifactRef;
pub use corpus::{Corpus, LabeledTweet, SentimentLabel};
pub use error::{Error, Result};
