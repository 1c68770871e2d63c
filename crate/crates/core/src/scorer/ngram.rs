//! Add-α smoothed n-gram language model used as a stand-in causal scorer.
//!
//! `P(t | ctx) = (count(ctx, t) + α) / (count(ctx, ·) + α·|V|)`, where `ctx`
//! is the longest suffix of the history (at most `context_len` tokens) that
//! was seen during fitting. The empty context is always available.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenId, Tokenizer, TokenizerRecord, BOS};
use super::{CausalScorer, NextTokenDistribution};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "mgtd-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramLmConfig {
    /// Number of conditioning tokens (order − 1).
    pub context_len: usize,
    pub smoothing_alpha: f64,
}

impl Default for NgramLmConfig {
    fn default() -> Self {
        NgramLmConfig { context_len: 2, smoothing_alpha: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramScorer {
    id: String,
    config: NgramLmConfig,
    tokenizer: Tokenizer,
    /// `tables[k]` holds contexts of exactly `k` tokens.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NgramScorer {
    /// Counts every (context suffix, next token) pair in `corpus`. Each sequence
    /// is scored as if preceded by BOS.
    pub fn fit(id: impl Into<String>, tokenizer: Tokenizer, corpus: &[Vec<TokenId>], config: NgramLmConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Usage("cannot fit an n-gram model on an empty corpus".into()));
        }
        if !(config.smoothing_alpha > 0.0 && config.smoothing_alpha.is_finite()) {
            return Err(Error::Usage(format!("smoothing alpha must be positive, got {}", config.smoothing_alpha)));
        }
        let vocab = tokenizer.vocab_size();
        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); config.context_len + 1];
        // the empty context always exists so that fallback terminates
        tables[0].insert(Vec::new(), ContextCounts::default());
        for seq in corpus {
            if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab) {
                return Err(Error::Index { index: bad as usize, len: vocab });
            }
            let mut history = Vec::with_capacity(seq.len() + 1);
            history.push(BOS);
            for &token in seq {
                for k in 0..=config.context_len.min(history.len()) {
                    let ctx = history[history.len() - k..].to_vec();
                    let entry = tables[k].entry(ctx).or_default();
                    entry.total += 1;
                    *entry.next.entry(token).or_default() += 1;
                }
                history.push(token);
            }
        }
        Ok(NgramScorer { id: id.into(), config, tokenizer, tables })
    }

    /// Builds the corpus from raw texts with `tokenizer`, truncating nothing.
    pub fn fit_texts<'a, I>(id: impl Into<String>, tokenizer: Tokenizer, texts: I, config: NgramLmConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let corpus: Vec<Vec<TokenId>> = texts.into_iter().map(|t| tokenizer.encode(t)).collect();
        Self::fit(id, tokenizer, &corpus, config)
    }

    pub fn config(&self) -> &NgramLmConfig {
        &self.config
    }

    fn context_for<'h>(&self, history: &'h [TokenId]) -> &ContextCounts {
        let longest = self.config.context_len.min(history.len());
        for k in (0..=longest).rev() {
            if let Some(counts) = self.tables[k].get(&history[history.len() - k..]) {
                if counts.total > 0 {
                    return counts;
                }
            }
        }
        &self.tables[0][&Vec::new()]
    }

    /// Probability vector for the next token given `history` (BOS included).
    pub fn probabilities(&self, history: &[TokenId]) -> Vec<f64> {
        let counts = self.context_for(history);
        let alpha = self.config.smoothing_alpha;
        let denom = counts.total as f64 + alpha * self.tokenizer.vocab_size() as f64;
        let mut probs = vec![alpha / denom; self.tokenizer.vocab_size()];
        for (&tok, &c) in &counts.next {
            probs[tok as usize] = (c as f64 + alpha) / denom;
        }
        probs
    }

    /// Samples `len` tokens at the given temperature, never emitting BOS or UNK.
    pub fn sample_tokens<R: Rng + ?Sized>(&self, rng: &mut R, len: usize, temperature: f64) -> Vec<TokenId> {
        let mut history = vec![BOS];
        for _ in 0..len {
            let probs = self.probabilities(&history);
            let weights: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| if Tokenizer::is_special(i as TokenId) { 0.0 } else { p.powf(1.0 / temperature) })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut choice = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 && target < w {
                    choice = i;
                    break;
                }
                target -= w;
            }
            history.push(choice as TokenId);
        }
        history.split_off(1)
    }

    /// Extends `prompt` with argmax tokens until it holds `len` tokens.
    pub fn greedy_tokens(&self, prompt: &[TokenId], len: usize) -> Vec<TokenId> {
        let mut history = Vec::with_capacity(len + 1);
        history.push(BOS);
        history.extend_from_slice(prompt);
        while history.len() <= len {
            let probs = self.probabilities(&history);
            let mut best = None::<(usize, f64)>;
            for (i, &p) in probs.iter().enumerate() {
                if !Tokenizer::is_special(i as TokenId) && best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((i, p));
                }
            }
            history.push(best.map_or(BOS, |(i, _)| i as TokenId));
        }
        history.split_off(1)
    }

    fn to_record(&self) -> NgramRecord {
        let mut contexts = Vec::new();
        for table in &self.tables {
            let mut entries: Vec<_> = table.iter().collect();
            entries.sort_unstable_by(|a, b| a.0.cmp(b.0));
            for (ctx, counts) in entries {
                let mut next: Vec<(TokenId, u64)> = counts.next.iter().map(|(&t, &c)| (t, c)).collect();
                next.sort_unstable();
                contexts.push(ContextRecord { context: ctx.clone(), next });
            }
        }
        NgramRecord {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            id: self.id.clone(),
            config: self.config,
            tokenizer: TokenizerRecord { tokens: self.tokenizer.tokens().to_vec() },
            contexts,
        }
    }

    fn from_record(record: NgramRecord) -> Result<Self> {
        if record.format != FORMAT_TAG || record.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                record.format, record.version
            )));
        }
        let tokenizer = Tokenizer::from_tokens(record.tokenizer.tokens)?;
        let vocab = tokenizer.vocab_size();
        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> =
            vec![HashMap::new(); record.config.context_len + 1];
        for ctx in record.contexts {
            let k = ctx.context.len();
            if k > record.config.context_len {
                return Err(Error::Format(format!("context of length {k} exceeds context_len")));
            }
            if let Some(&(bad, _)) = ctx.next.iter().find(|(t, _)| *t as usize >= vocab) {
                return Err(Error::Index { index: bad as usize, len: vocab });
            }
            let total = ctx.next.iter().map(|(_, c)| c).sum();
            tables[k].insert(ctx.context, ContextCounts { total, next: ctx.next.into_iter().collect() });
        }
        tables[0].entry(Vec::new()).or_default();
        Ok(NgramScorer { id: record.id, config: record.config, tokenizer, tables })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_record())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_record(serde_json::from_slice(&fs::read(path)?)?)
    }
}

impl CausalScorer for NgramScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn next_token_distribution(&self, prefix: &[TokenId]) -> NextTokenDistribution {
        let log_probs = self.probabilities(prefix).into_iter().map(f64::ln).collect();
        NextTokenDistribution::from_log_probs(log_probs).expect("smoothed counts form a normalized distribution")
    }
}

#[derive(Serialize, Deserialize)]
struct NgramRecord {
    format: String,
    version: u32,
    id: String,
    config: NgramLmConfig,
    tokenizer: TokenizerRecord,
    contexts: Vec<ContextRecord>,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}
