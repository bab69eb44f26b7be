//! Labeled text corpora: ingestion, label harmonization, deduplication,
//! class statistics and stratified splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::round_half_up;
use crate::preprocess;

/// Three-way sentiment label. Numeric ids are fixed: Negative 0, Neutral 1, Positive 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];
    pub const COUNT: usize = 3;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
        }
    }

    /// Lowercase form used in files.
    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            "positive" => Ok(SentimentLabel::Positive),
            other => Err(Error::InvalidInput(format!(
                "unknown sentiment label {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<LabeledTweet>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and empty texts.
    pub fn new(records: Vec<LabeledTweet>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.text.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "record {:?} has empty text",
                    r.id
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate record id {:?}",
                    r.id
                )));
            }
        }
        Ok(Corpus { records })
    }

    /// Builds a corpus from `(text, label)` pairs with sequential ids.
    pub fn from_pairs<S: Into<String>>(
        pairs: impl IntoIterator<Item = (S, SentimentLabel)>,
        source: &str,
    ) -> Self {
        let records = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (text, label))| LabeledTweet {
                id: i.to_string(),
                text: text.into(),
                label,
                source: source.to_string(),
            })
            .collect();
        Corpus { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<SentimentLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Writes the corpus as JSON lines using the canonical lowercase label names.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Raw label string to harmonized label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap(HashMap<String, SentimentLabel>);

impl LabelMap {
    pub fn new(map: HashMap<String, SentimentLabel>) -> Self {
        LabelMap(map)
    }

    /// Identity map over the lowercase label names, for reading files this crate wrote.
    pub fn canonical() -> Self {
        LabelMap(
            SentimentLabel::ALL
                .iter()
                .map(|l| (l.as_str().to_string(), *l))
                .collect(),
        )
    }

    /// Reads a JSON object of raw label to `"negative"|"neutral"|"positive"`.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| match e {
            Error::Json(j) => Error::parse(path, j.line(), j.to_string()),
            other => other,
        })
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let entries: HashMap<String, String> = serde_json::from_str(raw)?;
        let mut map = HashMap::with_capacity(entries.len());
        for (k, v) in entries {
            map.insert(k, v.parse()?);
        }
        Ok(LabelMap(map))
    }

    pub fn get(&self, raw: &str) -> Option<SentimentLabel> {
        self.0.get(raw).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// `.csv` is CSV; everything else is treated as JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    label: serde_json::Value,
    #[serde(default)]
    source: Option<String>,
}

struct RawRow {
    line: usize,
    id: Option<String>,
    text: String,
    label: String,
    source: Option<String>,
}

fn json_scalar(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let label = json_scalar(rec.label)
            .ok_or_else(|| Error::parse(path, line_no, "label must be a string or number"))?;
        let id = match rec.id {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                json_scalar(v)
                    .ok_or_else(|| Error::parse(path, line_no, "id must be a string or number"))?,
            ),
        };
        rows.push(RawRow {
            line: line_no,
            id,
            text: rec.text,
            label,
            source: rec.source,
        });
    }
    Ok(rows)
}

fn read_csv(path: &Path) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, 1, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = column("text").ok_or_else(|| Error::parse(path, 1, "missing `text` column"))?;
    let label_col =
        column("label").ok_or_else(|| Error::parse(path, 1, "missing `label` column"))?;
    let id_col = column("id");
    let source_col = column("source");

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |col: usize| {
            rec.get(col)
                .map(str::to_string)
                .ok_or_else(|| Error::parse(path, line, format!("missing column {}", col + 1)))
        };
        let optional = |col: Option<usize>| {
            col.and_then(|c| rec.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        rows.push(RawRow {
            line,
            id: optional(id_col),
            text: field(text_col)?,
            label: field(label_col)?,
            source: optional(source_col),
        });
    }
    Ok(rows)
}

/// Loads a labeled corpus, harmonizing every raw label through `label_map`.
///
/// Records keep file order. Missing ids become the record's zero-based
/// position; a missing source becomes the file stem.
pub fn load_corpus(path: &Path, format: InputFormat, label_map: &LabelMap) -> Result<Corpus> {
    let rows = match format {
        InputFormat::Jsonl => read_jsonl(path)?,
        InputFormat::Csv => read_csv(path)?,
    };
    let default_source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut unmapped = BTreeSet::new();
    let mut seen_ids = HashSet::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for (pos, row) in rows.into_iter().enumerate() {
        if row.text.trim().is_empty() {
            return Err(Error::parse(path, row.line, "empty text field"));
        }
        let id = row.id.unwrap_or_else(|| pos.to_string());
        if !seen_ids.insert(id.clone()) {
            return Err(Error::parse(path, row.line, format!("duplicate id {id:?}")));
        }
        let Some(label) = label_map.get(&row.label) else {
            unmapped.insert(row.label);
            continue;
        };
        records.push(LabeledTweet {
            id,
            text: row.text,
            label,
            source: row.source.unwrap_or_else(|| default_source.clone()),
        });
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedLabels(unmapped.into_iter().collect()));
    }
    Ok(Corpus { records })
}

/// Concatenates two corpora. Ids are re-assigned to `0..|a|+|b|` so they stay unique.
pub fn merge(a: &Corpus, b: &Corpus) -> Corpus {
    let records = a
        .records
        .iter()
        .chain(&b.records)
        .enumerate()
        .map(|(i, r)| LabeledTweet {
            id: i.to_string(),
            ..r.clone()
        })
        .collect();
    Corpus { records }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupKey {
    #[default]
    ExactText,
    NormalizedText,
}

/// Key used by [`DedupKey::NormalizedText`]: link/mention/hashtag removal,
/// lowercasing, and punctuation trimmed from token edges.
pub fn normalized_key(text: &str) -> String {
    let cleaned = preprocess::normalize_text(text, false).to_lowercase();
    cleaned
        .split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|tok| !tok.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the first record for each key, preserving order.
pub fn dedup(c: &Corpus, key: DedupKey) -> Corpus {
    let mut seen = HashSet::with_capacity(c.len());
    let records = c
        .records
        .iter()
        .filter(|r| {
            let k = match key {
                DedupKey::ExactText => r.text.clone(),
                DedupKey::NormalizedText => normalized_key(&r.text),
            };
            seen.insert(k)
        })
        .cloned()
        .collect();
    Corpus { records }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub counts: [usize; SentimentLabel::COUNT],
    pub percentages: [f64; SentimentLabel::COUNT],
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Labels ordered by count, largest first; ties by label id.
    fn ordered(&self) -> Vec<SentimentLabel> {
        let mut labels = SentimentLabel::ALL.to_vec();
        labels.sort_by(|a, b| self.counts[b.id()].cmp(&self.counts[a.id()]).then(a.cmp(b)));
        labels
    }

    /// Percentage display at one decimal, round-half-up.
    pub fn percent_display(&self, label: SentimentLabel) -> String {
        format!(
            "{:.1}%",
            round_half_up(self.percentages[label.id()] * 100.0, 1)
        )
    }

    /// Tab-separated table: class, label id, count, percentage, plus a total row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("Sentiment Class\tLabel ID\tTweet Count\tPercentage\n");
        for label in self.ordered() {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                label.name(),
                label.id(),
                self.counts[label.id()],
                self.percent_display(label)
            ));
        }
        s.push_str(&format!("Total\t\t{}\t100.0%\n", self.total()));
        s
    }

    /// `label,label_id,count,fraction` rows for external plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,label_id,count,fraction\n");
        for label in SentimentLabel::ALL {
            s.push_str(&format!(
                "{},{},{},{}\n",
                label.as_str(),
                label.id(),
                self.counts[label.id()],
                self.percentages[label.id()]
            ));
        }
        s
    }
}

pub fn class_distribution(c: &Corpus) -> Result<ClassDistribution> {
    if c.is_empty() {
        return Err(Error::InvalidInput(
            "class distribution of an empty corpus".into(),
        ));
    }
    let mut counts = [0usize; SentimentLabel::COUNT];
    for r in &c.records {
        counts[r.label.id()] += 1;
    }
    let total = c.len() as f64;
    let percentages = counts.map(|n| n as f64 / total);
    Ok(ClassDistribution {
        counts,
        percentages,
    })
}

/// Train and validation fractions plus shuffle seed; the test fraction is the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(with = "ratio_str")]
    pub train_frac: Ratio<u64>,
    #[serde(with = "ratio_str")]
    pub val_frac: Ratio<u64>,
    pub seed: u64,
}

mod ratio_str {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl SplitSpec {
    pub fn new(train_frac: Ratio<u64>, val_frac: Ratio<u64>, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            val_frac,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 80% / 10% / 10%.
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            train_frac: Ratio::new(8, 10),
            val_frac: Ratio::new(1, 10),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = Ratio::from_integer(0);
        if self.train_frac <= zero
            || self.val_frac <= zero
            || self.train_frac + self.val_frac >= Ratio::from_integer(1)
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions must satisfy 0 < train, 0 < val, train + val < 1 (got {} and {})",
                self.train_frac, self.val_frac
            )));
        }
        Ok(())
    }

    /// Global `(train, val, test)` sizes for a corpus of `n` records.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = floor_frac(self.train_frac, n as u64).0 as usize;
        let val = floor_frac(self.val_frac, n as u64).0 as usize;
        (train, val, n - train - val)
    }
}

/// `floor(frac * n)` and the numerator of the fractional remainder over `frac.denom()`.
fn floor_frac(frac: Ratio<u64>, n: u64) -> (u64, u64) {
    let num = *frac.numer() as u128 * n as u128;
    let den = *frac.denom() as u128;
    ((num / den) as u64, (num % den) as u64)
}

/// Classes smaller than this go wholly to the training partition.
pub const MIN_SPLIT_CLASS_SIZE: usize = 3;

/// Distributes `deficit` extra slots over classes ordered by largest fractional
/// remainder (ties by label id), skipping classes already at capacity.
fn assign_remainders(
    alloc: &mut [u64; SentimentLabel::COUNT],
    remainders: &[u64; SentimentLabel::COUNT],
    capacity: &[u64; SentimentLabel::COUNT],
    eligible: &[bool; SentimentLabel::COUNT],
    mut deficit: u64,
) {
    let mut order: Vec<usize> = (0..SentimentLabel::COUNT)
        .filter(|&c| eligible[c])
        .collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    while deficit > 0 {
        let mut progressed = false;
        for &c in &order {
            if deficit == 0 {
                break;
            }
            if alloc[c] < capacity[c] {
                alloc[c] += 1;
                deficit -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
}

/// Per-class `(train, val, test)` counts for the stratified split.
fn stratified_counts(
    class_sizes: &[usize; SentimentLabel::COUNT],
    spec: &SplitSpec,
) -> [[u64; 3]; SentimentLabel::COUNT] {
    let n: usize = class_sizes.iter().sum();
    let (target_train, target_val, _) = spec.sizes(n);
    let sizes = class_sizes.map(|s| s as u64);
    let small = sizes.map(|s| s > 0 && (s as usize) < MIN_SPLIT_CLASS_SIZE);
    let eligible = std::array::from_fn(|c| sizes[c] > 0 && !small[c]);

    let mut train = [0u64; SentimentLabel::COUNT];
    let mut val = [0u64; SentimentLabel::COUNT];
    let mut train_rem = [0u64; SentimentLabel::COUNT];
    let mut val_rem = [0u64; SentimentLabel::COUNT];
    for c in 0..SentimentLabel::COUNT {
        if small[c] {
            train[c] = sizes[c];
        } else if eligible[c] {
            (train[c], train_rem[c]) = floor_frac(spec.train_frac, sizes[c]);
            (val[c], val_rem[c]) = floor_frac(spec.val_frac, sizes[c]);
        }
    }

    let assigned_train: u64 = train.iter().sum();
    let train_cap = std::array::from_fn(|c| sizes[c] - val[c]);
    assign_remainders(
        &mut train,
        &train_rem,
        &train_cap,
        &eligible,
        (target_train as u64).saturating_sub(assigned_train),
    );

    let assigned_val: u64 = val.iter().sum();
    let val_cap = std::array::from_fn(|c| sizes[c] - train[c]);
    assign_remainders(
        &mut val,
        &val_rem,
        &val_cap,
        &eligible,
        (target_val as u64).saturating_sub(assigned_val),
    );

    std::array::from_fn(|c| [train[c], val[c], sizes[c] - train[c] - val[c]])
}

/// Deterministic stratified split into `(train, val, test)`.
///
/// Each class is shuffled independently with a ChaCha8 generator seeded via
/// `seed_from_u64(spec.seed)` (classes processed in label-id order, one shared
/// stream), then cut into consecutive train/val/test runs. Output partitions
/// keep the input's relative order.
pub fn split(c: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus)> {
    spec.validate()?;
    if c.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty corpus".into()));
    }

    let mut by_class: [Vec<usize>; SentimentLabel::COUNT] = Default::default();
    for (i, r) in c.records.iter().enumerate() {
        by_class[r.label.id()].push(i);
    }
    let class_sizes = std::array::from_fn(|k| by_class[k].len());
    for label in SentimentLabel::ALL {
        let n = class_sizes[label.id()];
        if n > 0 && n < MIN_SPLIT_CLASS_SIZE {
            log::warn!("class {label} has only {n} record(s); assigning all of them to train");
        }
    }
    let counts = stratified_counts(&class_sizes, spec);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // 0 = train, 1 = val, 2 = test
    let mut part = vec![0u8; c.len()];
    for (k, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = counts[k].map(|x| x as usize);
        for (j, &idx) in members.iter().enumerate() {
            part[idx] = if j < n_train {
                0
            } else if j < n_train + n_val {
                1
            } else {
                2
            };
        }
    }

    let mut out: [Vec<LabeledTweet>; 3] = Default::default();
    for (r, &p) in c.records.iter().zip(&part) {
        out[p as usize].push(r.clone());
    }
    let [train, val, test] = out;
    Ok((
        Corpus { records: train },
        Corpus { records: val },
        Corpus { records: test },
    ))
}
