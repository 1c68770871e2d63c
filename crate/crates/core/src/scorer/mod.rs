//! Per-token probabilistic features from causal scorers.
//!
//! For each observed token a scorer yields three numbers computed from its
//! next-token distribution given the prefix:
//!
//! * `alpha`: the largest log-probability over the vocabulary,
//! * `beta`: the entropy of the distribution (nats),
//! * `gamma`: the log-probability of the token actually observed.
//!
//! Several scorers sharing one tokenizer are concatenated column-wise into a
//! [`FeatureMatrix`] with `3 · M` columns.

mod features;
mod ngram;
mod tokenizer;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use features::{read_features, write_features, FeatureMatrix, FeatureReader, FeatureWriter};
pub use ngram::{NgramLmConfig, NgramScorer};
pub use tokenizer::{TokenId, Tokenizer, BOS, UNK};

/// Longest token sequence scored per document.
pub const MAX_SEQ_LEN: usize = 256;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Log-probabilities over a vocabulary. Entries may be `-inf` for zero mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    log_probs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn from_log_probs(log_probs: Vec<f64>) -> Result<Self> {
        if log_probs.is_empty() {
            return Err(Error::Validation("empty distribution".into()));
        }
        if log_probs.iter().any(|lp| lp.is_nan() || *lp == f64::INFINITY) {
            return Err(Error::Validation("log-probabilities must be finite or -inf".into()));
        }
        let total: f64 = log_probs.iter().map(|lp| lp.exp()).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        Ok(NextTokenDistribution { log_probs })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
        }
        Self::from_log_probs(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Index of the most probable token; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &lp) in self.log_probs.iter().enumerate() {
            if lp > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_log_prob(&self) -> f64 {
        self.log_probs[self.argmax()]
    }
}

/// Shannon entropy in nats, clamped to its exact range `[0, ln n]`.
pub fn entropy(dist: &NextTokenDistribution) -> f64 {
    let h: f64 = -dist
        .log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|&lp| lp.exp() * lp)
        .sum::<f64>();
    if h <= 0.0 {
        0.0
    } else {
        h.min((dist.len() as f64).ln())
    }
}

/// Checked entropy for caller-supplied log-probabilities.
pub fn entropy_of(log_probs: &[f64]) -> Result<f64> {
    Ok(entropy(&NextTokenDistribution::from_log_probs(log_probs.to_vec())?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenFeatureVector {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TokenFeatureVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

pub fn token_features(dist: &NextTokenDistribution, observed: TokenId) -> Result<TokenFeatureVector> {
    let gamma = *dist
        .log_probs
        .get(observed as usize)
        .ok_or(Error::Index { index: observed as usize, len: dist.len() })?;
    Ok(TokenFeatureVector { alpha: dist.max_log_prob(), beta: entropy(dist), gamma })
}

/// A language model that exposes a normalized next-token distribution for any prefix.
pub trait CausalScorer: Send + Sync {
    fn scorer_id(&self) -> &str;

    fn tokenizer(&self) -> &Tokenizer;

    /// Distribution over the next token; `prefix` starts with [`BOS`].
    fn next_token_distribution(&self, prefix: &[TokenId]) -> NextTokenDistribution;
}

/// Tokenizes, truncates to [`MAX_SEQ_LEN`], prepends BOS and scores every position.
pub fn score_document<S: CausalScorer + ?Sized>(scorer: &S, text: &str) -> Vec<TokenFeatureVector> {
    let mut ids = scorer.tokenizer().encode(text);
    ids.truncate(MAX_SEQ_LEN);
    score_tokens(scorer, &ids)
}

pub fn score_tokens<S: CausalScorer + ?Sized>(scorer: &S, ids: &[TokenId]) -> Vec<TokenFeatureVector> {
    let mut history = Vec::with_capacity(ids.len() + 1);
    history.push(BOS);
    let mut rows = Vec::with_capacity(ids.len());
    for &id in ids {
        let dist = scorer.next_token_distribution(&history);
        rows.push(token_features(&dist, id).expect("tokenizer ids lie inside the scorer vocabulary"));
        history.push(id);
    }
    rows
}

fn check_shared_tokenizer(scorers: &[&dyn CausalScorer]) -> Result<()> {
    let first = scorers.first().ok_or_else(|| Error::Usage("at least one scorer is required".into()))?;
    for other in &scorers[1..] {
        if other.tokenizer() != first.tokenizer() {
            return Err(Error::Config(format!(
                "scorers `{}` and `{}` use different tokenizers",
                first.scorer_id(),
                other.scorer_id()
            )));
        }
    }
    Ok(())
}

/// Concatenates each scorer's (alpha, beta, gamma) per token, in scorer order.
pub fn ensemble_extract(scorers: &[&dyn CausalScorer], text: &str) -> Result<FeatureMatrix> {
    check_shared_tokenizer(scorers)?;
    Ok(extract_unchecked(scorers, text))
}

fn extract_unchecked(scorers: &[&dyn CausalScorer], text: &str) -> FeatureMatrix {
    let per_scorer: Vec<Vec<TokenFeatureVector>> = scorers.iter().map(|s| score_document(*s, text)).collect();
    let n_rows = per_scorer[0].len();
    let mut data = Vec::with_capacity(n_rows * 3 * scorers.len());
    for t in 0..n_rows {
        for rows in &per_scorer {
            data.extend(rows[t].to_array());
        }
    }
    let ids = scorers.iter().map(|s| s.scorer_id().to_string()).collect();
    FeatureMatrix::from_flat(ids, data).expect("extracted features are well formed")
}

/// Extracts features for many documents in parallel; output follows input order.
pub fn extract_corpus(scorers: &[&dyn CausalScorer], texts: &[&str]) -> Result<Vec<FeatureMatrix>> {
    check_shared_tokenizer(scorers)?;
    Ok(texts.par_iter().map(|text| extract_unchecked(scorers, text)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(probs: &[f64]) -> NextTokenDistribution {
        NextTokenDistribution::from_probs(probs).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&dist(&[0.25; 4])) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&dist(&[0.0, 1.0, 0.0])), 0.0);
        let h = entropy(&dist(&[0.5, 0.25, 0.25]));
        let direct = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((h - direct).abs() < 1e-15);
        assert!((h - 1.03972).abs() < 1e-5);
    }

    #[test]
    fn entropy_rejects_unnormalized() {
        assert!(matches!(entropy_of(&[0.5f64.ln(), 0.4f64.ln()]), Err(Error::Validation(_))));
        assert!(matches!(NextTokenDistribution::from_log_probs(vec![f64::NAN]), Err(Error::Validation(_))));
    }

    #[test]
    fn token_feature_examples() {
        let d = dist(&[0.7, 0.2, 0.1]);
        let f = token_features(&d, 1).unwrap();
        assert!((f.alpha - 0.7f64.ln()).abs() < 1e-15);
        assert!((f.alpha - -0.35667).abs() < 1e-5);
        assert!((f.beta - 0.80182).abs() < 1e-5);
        assert!((f.gamma - -1.60944).abs() < 1e-5);

        let one_hot = token_features(&dist(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(one_hot.to_array(), [0.0, 0.0, 0.0]);

        let at_max = token_features(&d, 0).unwrap();
        assert_eq!(at_max.alpha, at_max.gamma);
    }

    #[test]
    fn token_features_rejects_bad_index() {
        assert!(matches!(token_features(&dist(&[0.5, 0.5]), 2), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(dist(&[0.4, 0.4, 0.2]).argmax(), 0);
    }
}
