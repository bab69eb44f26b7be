//! Bag-of-words TF-IDF features over whitespace tokens.
//!
//! `weight(t, d) = tf(t, d) * (ln((1 + N) / (1 + df(t))) + 1)` with raw counts
//! for `tf`, followed by L2 normalization of the document vector.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Term vocabulary with document frequencies. Feature ids follow lexicographic term order.
#[derive(Debug, Clone, PartialEq)]
pub struct TermIndex {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
    document_frequency: Vec<u64>,
    num_docs: u64,
}

#[derive(Serialize, Deserialize)]
struct TermIndexFile {
    terms: Vec<String>,
    df: Vec<u64>,
    num_docs: u64,
}

impl TermIndex {
    pub fn from_parts(
        terms: Vec<String>,
        document_frequency: Vec<u64>,
        num_docs: u64,
    ) -> Result<Self> {
        if terms.len() != document_frequency.len() {
            return Err(Error::InvalidInput(format!(
                "term index has {} terms but {} document frequencies",
                terms.len(),
                document_frequency.len()
            )));
        }
        let mut ids = HashMap::with_capacity(terms.len());
        for (i, (t, &df)) in terms.iter().zip(&document_frequency).enumerate() {
            if df == 0 || df > num_docs {
                return Err(Error::InvalidInput(format!(
                    "term {t:?} has document frequency {df} outside 1..={num_docs}"
                )));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate term {t:?}")));
            }
        }
        Ok(TermIndex {
            terms,
            ids,
            document_frequency,
            num_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn document_frequency(&self, id: u32) -> u64 {
        self.document_frequency[id as usize]
    }

    /// Smoothed inverse document frequency; always ≥ 1.
    pub fn idf(&self, id: u32) -> f64 {
        let n = self.num_docs as f64;
        let df = self.document_frequency[id as usize] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TermIndexFile {
            terms: self.terms.clone(),
            df: self.document_frequency.clone(),
            num_docs: self.num_docs,
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let f: TermIndexFile = serde_json::from_str(raw)?;
        Self::from_parts(f.terms, f.df, f.num_docs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}

/// Indexes every whitespace token found in at least `min_df` documents.
pub fn fit_term_index(texts: &[&str], min_df: u64) -> Result<TermIndex> {
    if texts.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit a term index on zero documents".into(),
        ));
    }
    let mut df: BTreeMap<&str, u64> = BTreeMap::new();
    for text in texts {
        let unique: BTreeSet<&str> = text.split_whitespace().collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::InvalidInput("all documents are empty".into()));
    }
    let min_df = min_df.max(1);
    let (terms, freqs): (Vec<String>, Vec<u64>) = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df)
        .map(|(t, n)| (t.to_string(), n))
        .unzip();
    TermIndex::from_parts(terms, freqs, texts.len() as u64)
}

/// Sorted `(feature id, weight)` pairs with no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Sorts, sums duplicate ids and drops zeros.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Result<Self> {
        if let Some(&(id, w)) = entries.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite weight {w} at feature {id}"
            )));
        }
        entries.sort_by_key(|&(id, _)| id);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => merged.push((id, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Ok(SparseVector { entries: merged })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        dot(self, self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> SparseVector {
        let entries = self
            .entries
            .iter()
            .map(|&(i, w)| (i, w * s))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        SparseVector { entries }
    }

    /// Largest feature id + 1, or 0 for the empty vector.
    pub fn dim_hint(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i as usize + 1)
    }
}

pub fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.entries.len() && j < b.entries.len() {
        let (ia, wa) = a.entries[i];
        let (ib, wb) = b.entries[j];
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += wa * wb;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// `a + s * b`, eliding zero entries.
pub fn add_scaled(a: &SparseVector, b: &SparseVector, s: f64) -> SparseVector {
    let mut out = Vec::with_capacity(a.entries.len() + b.entries.len());
    let (mut i, mut j) = (0, 0);
    while i < a.entries.len() || j < b.entries.len() {
        let next = match (a.entries.get(i), b.entries.get(j)) {
            (Some(&(ia, wa)), Some(&(ib, wb))) => match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    i += 1;
                    (ia, wa)
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    (ib, s * wb)
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    (ia, wa + s * wb)
                }
            },
            (Some(&(ia, wa)), None) => {
                i += 1;
                (ia, wa)
            }
            (None, Some(&(ib, wb))) => {
                j += 1;
                (ib, s * wb)
            }
            (None, None) => unreachable!(),
        };
        if next.1 != 0.0 {
            out.push(next);
        }
    }
    SparseVector { entries: out }
}

/// Raw term counts over the index, without idf weighting or normalization.
pub fn count_transform(text: &str, idx: &TermIndex) -> SparseVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in text.split_whitespace() {
        if let Some(id) = idx.id(t) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    SparseVector {
        entries: counts.into_iter().collect(),
    }
}

/// How documents become vectors over a [`TermIndex`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureWeighting {
    /// L2-normalized TF-IDF.
    #[default]
    Tfidf,
    /// Raw term counts.
    Counts,
}

pub fn transform(text: &str, idx: &TermIndex, weighting: FeatureWeighting) -> SparseVector {
    match weighting {
        FeatureWeighting::Tfidf => tfidf_transform(text, idx),
        FeatureWeighting::Counts => count_transform(text, idx),
    }
}

/// L2-normalized TF-IDF vector; terms outside the index are ignored.
pub fn tfidf_transform(text: &str, idx: &TermIndex) -> SparseVector {
    let mut v = count_transform(text, idx);
    for (id, w) in v.entries.iter_mut() {
        *w *= idx.idf(*id);
    }
    let norm = v.norm();
    if norm > 0.0 {
        for (_, w) in v.entries.iter_mut() {
            *w /= norm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_counts_document_frequency() {
        let idx = fit_term_index(&["a b", "a"], 1).unwrap();
        assert_eq!(idx.terms(), &["a", "b"]);
        assert_eq!(idx.document_frequency(0), 2);
        assert_eq!(idx.document_frequency(1), 1);
        assert_eq!(idx.num_docs(), 2);

        let idx = fit_term_index(&["a b", "a"], 2).unwrap();
        assert_eq!(idx.terms(), &["a"]);

        let idx = fit_term_index(&["a a a", "b"], 1).unwrap();
        assert_eq!(idx.document_frequency(idx.id("a").unwrap()), 1);
    }

    #[test]
    fn fit_rejects_empty_input() {
        assert!(fit_term_index(&[], 1).is_err());
        assert!(fit_term_index(&["", "   "], 1).is_err());
    }

    #[test]
    fn hand_computed_tfidf() {
        let idx = fit_term_index(&["a b", "a"], 1).unwrap();
        assert_eq!(idx.idf(0), 1.0);
        let idf_b = (3.0f64 / 2.0).ln() + 1.0;
        assert!((idx.idf(1) - idf_b).abs() < 1e-15);
        let v = tfidf_transform("a b", &idx);
        let norm = (1.0 + idf_b * idf_b).sqrt();
        assert_eq!(v.entries().len(), 2);
        assert!((v.entries()[0].1 - 1.0 / norm).abs() < 1e-12);
        assert!((v.entries()[1].1 - idf_b / norm).abs() < 1e-12);
        assert!((v.entries()[0].1 - 0.580).abs() < 1e-3);
        assert!((v.entries()[1].1 - 0.815).abs() < 1e-3);
    }

    #[test]
    fn transform_edge_cases() {
        let idx = fit_term_index(&["a b", "a"], 1).unwrap();
        assert!(tfidf_transform("zzz qqq", &idx).is_empty());
        let v = tfidf_transform("a a", &idx);
        assert_eq!(v.entries(), &[(0, 1.0)]);
    }

    #[test]
    fn sparse_ops() {
        let idx = fit_term_index(&["a b c", "a", "c d"], 1).unwrap();
        let v = tfidf_transform("a b c", &idx);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
        let w = tfidf_transform("d", &idx);
        assert_eq!(
            dot(&v, &SparseVector::from_entries(vec![(3, 1.0)]).unwrap()),
            0.0
        );
        assert_eq!(dot(&v, &w), 0.0);
        assert!(add_scaled(&v, &v, -1.0).is_empty());
        let sum = add_scaled(&v, &w, 2.0);
        assert_eq!(sum.nnz(), 4);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let idx = fit_term_index(&["x y", "y z", "z"], 1).unwrap();
        let raw = idx.to_json().unwrap();
        assert!(raw.starts_with("{\"terms\":[\"x\",\"y\",\"z\"],\"df\":[1,2,2],\"num_docs\":3}"));
        assert_eq!(TermIndex::from_json(&raw).unwrap(), idx);
        assert!(TermIndex::from_json(r#"{"terms":["a"],"df":[3],"num_docs":2}"#).is_err());
        assert!(TermIndex::from_json(r#"{"terms":["a","a"],"df":[1,1],"num_docs":2}"#).is_err());
    }

    #[test]
    fn sparse_vector_rejects_non_finite() {
        assert!(SparseVector::from_entries(vec![(0, f64::NAN)]).is_err());
        let v = SparseVector::from_entries(vec![(3, 1.0), (1, 0.0), (3, 1.0), (2, -1.0)]).unwrap();
        assert_eq!(v.entries(), &[(2, -1.0), (3, 2.0)]);
    }

    fn docs() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,6}", 1..20)
    }

    fn arb_sparse() -> impl Strategy<Value = SparseVector> {
        proptest::collection::vec((0u32..50, -3.0f64..3.0), 0..20)
            .prop_map(|e| SparseVector::from_entries(e).unwrap())
    }

    fn check_invariants(v: &SparseVector) -> bool {
        v.entries().windows(2).all(|w| w[0].0 < w[1].0)
            && v.entries().iter().all(|&(_, w)| w != 0.0 && w.is_finite())
    }

    proptest! {
        #[test]
        fn unit_norm_and_idf_bounds(texts in docs(), probe in "[a-g]{1,3}( [a-g]{1,3}){0,4}") {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let idx = fit_term_index(&refs, 1).unwrap();
            for id in 0..idx.len() as u32 {
                prop_assert!(idx.idf(id) >= 1.0);
                prop_assert!(idx.document_frequency(id) >= 1 && idx.document_frequency(id) <= idx.num_docs());
            }
            let v = tfidf_transform(&probe, &idx);
            prop_assert!(check_invariants(&v));
            if !v.is_empty() {
                prop_assert!((v.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn fit_is_order_independent(mut texts in docs()) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let a = fit_term_index(&refs, 1).unwrap();
            texts.reverse();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            prop_assert_eq!(fit_term_index(&refs, 1).unwrap(), a);
        }

        #[test]
        fn dot_symmetric_and_add_scaled_valid(a in arb_sparse(), b in arb_sparse(), s in -2.0f64..2.0) {
            prop_assert_eq!(dot(&a, &b), dot(&b, &a));
            let c = add_scaled(&a, &b, s);
            prop_assert!(check_invariants(&c));
        }
    }
}
