//! Word n-gram TF-IDF features.
//!
//! Term weights are `count(t, d) * idf(t)` with the smoothed inverse document
//! frequency `ln((1 + N) / (1 + df(t))) + 1`, and every row is scaled to unit
//! L2 norm.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_FEATURES: usize = 5000;
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (2, 3);
const FORMAT_TAG: &str = "mgtd-tfidf";
const FORMAT_VERSION: u32 = 1;

/// Lowercased runs of two or more alphanumeric characters; everything else separates.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut run = 0usize;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            run += 1;
        } else {
            if run >= 2 {
                tokens.push(std::mem::take(&mut current));
            }
            current.clear();
            run = 0;
        }
    }
    if run >= 2 {
        tokens.push(current);
    }
    tokens
}

/// Contiguous n-grams for every n in `range` (inclusive), grouped by n and
/// in positional order within each group.
pub fn extract_ngrams(tokens: &[String], range: (usize, usize)) -> Vec<String> {
    let (lo, hi) = range;
    let mut grams = Vec::new();
    for n in lo.max(1)..=hi {
        if tokens.len() < n {
            break;
        }
        grams.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    grams
}

/// Sorted `(index, value)` pairs over a fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    /// Builds a vector from pairs; indices must be strictly increasing and below `dim`.
    /// Zero values are dropped.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (idx, value) in entries {
            if idx >= dim {
                return Err(Error::Index { index: idx, len: dim });
            }
            if indices.last().is_some_and(|&last| last >= idx) {
                return Err(Error::Format("sparse indices must be strictly increasing".into()));
            }
            if !value.is_finite() {
                return Err(Error::Format(format!("non-finite value at index {idx}")));
            }
            if value != 0.0 {
                indices.push(idx);
                values.push(value);
            }
        }
        Ok(SparseVector { indices, values, dim })
    }

    pub fn from_dense(values: &[f64]) -> Result<Self> {
        SparseVector::new(values.len(), values.iter().copied().enumerate().collect())
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector { indices: Vec::new(), values: Vec::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Fitted n-gram vocabulary with document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    document_frequency: Vec<usize>,
    total_documents: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    pub fn total_documents(&self) -> usize {
        self.total_documents
    }
}

pub fn smoothed_idf(total_documents: usize, document_frequency: usize) -> f64 {
    ((1.0 + total_documents as f64) / (1.0 + document_frequency as f64)).ln() + 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: Vocabulary,
    idf: Vec<f64>,
    ngram_range: (usize, usize),
    lowercase: bool,
}

impl TfidfModel {
    /// Fits on raw texts, keeping the `max_features` n-grams with the largest
    /// corpus-wide counts (ties go to the lexicographically smaller term).
    pub fn fit<'a, I>(texts: I, max_features: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::fit_with_range(texts, max_features, DEFAULT_NGRAM_RANGE)
    }

    pub fn fit_with_range<'a, I>(texts: I, max_features: usize, ngram_range: (usize, usize)) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if ngram_range.0 == 0 || ngram_range.0 > ngram_range.1 {
            return Err(Error::Usage(format!("invalid n-gram range {ngram_range:?}")));
        }
        let mut totals: HashMap<String, (usize, usize)> = HashMap::new();
        let mut n_docs = 0usize;
        for text in texts {
            n_docs += 1;
            let grams = extract_ngrams(&tokenize_words(text), ngram_range);
            let mut local: HashMap<String, usize> = HashMap::new();
            for gram in grams {
                *local.entry(gram).or_default() += 1;
            }
            for (gram, count) in local {
                let entry = totals.entry(gram).or_default();
                entry.0 += count;
                entry.1 += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Usage("cannot fit TF-IDF on an empty corpus".into()));
        }

        let mut ranked: Vec<(String, usize, usize)> =
            totals.into_iter().map(|(t, (count, df))| (t, count, df)).collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        ranked.sort_unstable_by(|a, b| a.0.cmp(&b.0));

        let mut terms = Vec::with_capacity(ranked.len());
        let mut document_frequency = Vec::with_capacity(ranked.len());
        for (term, _, df) in ranked {
            terms.push(term);
            document_frequency.push(df);
        }
        let idf = document_frequency.iter().map(|&df| smoothed_idf(n_docs, df)).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(TfidfModel {
            vocabulary: Vocabulary { terms, index, document_frequency, total_documents: n_docs },
            idf,
            ngram_range,
            lowercase: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        self.ngram_range
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// L2-normalized TF-IDF vector; out-of-vocabulary n-grams are dropped.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for gram in extract_ngrams(&tokenize_words(text), self.ngram_range) {
            if let Some(idx) = self.vocabulary.index_of(&gram) {
                *counts.entry(idx).or_default() += 1;
            }
        }
        let mut entries: Vec<(usize, f64)> =
            counts.into_iter().map(|(i, c)| (i, c as f64 * self.idf[i])).collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut entries {
                *v /= norm;
            }
        }
        SparseVector { indices: entries.iter().map(|e| e.0).collect(), values: entries.iter().map(|e| e.1).collect(), dim: self.dim() }
    }

    pub fn transform_all<'a, I>(&self, texts: I) -> Vec<SparseVector>
    where
        I: IntoIterator<Item = &'a str>,
    {
        texts.into_iter().map(|t| self.transform(t)).collect()
    }

    pub(crate) fn to_record(&self) -> TfidfRecord {
        TfidfRecord {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            ngram_range: self.ngram_range,
            lowercase: self.lowercase,
            total_documents: self.vocabulary.total_documents,
            terms: (0..self.dim())
                .map(|i| TermRecord {
                    term: self.vocabulary.terms[i].clone(),
                    index: i,
                    df: self.vocabulary.document_frequency[i],
                    idf: self.idf[i],
                })
                .collect(),
        }
    }

    pub(crate) fn from_record(record: TfidfRecord) -> Result<Self> {
        if record.format != FORMAT_TAG || record.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                record.format, record.version
            )));
        }
        let mut terms = Vec::with_capacity(record.terms.len());
        let mut document_frequency = Vec::with_capacity(record.terms.len());
        let mut idf = Vec::with_capacity(record.terms.len());
        for (i, t) in record.terms.into_iter().enumerate() {
            if t.index != i {
                return Err(Error::Format(format!("term record {i} carries index {}", t.index)));
            }
            if t.df == 0 || t.df > record.total_documents {
                return Err(Error::Format(format!("term `{}` has document frequency {}", t.term, t.df)));
            }
            terms.push(t.term);
            document_frequency.push(t.df);
            idf.push(t.idf);
        }
        let index: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != terms.len() {
            return Err(Error::Format("duplicate vocabulary term".into()));
        }
        Ok(TfidfModel {
            vocabulary: Vocabulary { terms, index, document_frequency, total_documents: record.total_documents },
            idf,
            ngram_range: record.ngram_range,
            lowercase: record.lowercase,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_record())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let record: TfidfRecord = serde_json::from_slice(&fs::read(path)?)?;
        Self::from_record(record)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TfidfRecord {
    format: String,
    version: u32,
    ngram_range: (usize, usize),
    lowercase: bool,
    total_documents: usize,
    terms: Vec<TermRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TermRecord {
    term: String,
    index: usize,
    df: usize,
    idf: f64,
}
