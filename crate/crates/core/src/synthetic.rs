//! Seeded synthetic corpora for desk-scale detection experiments.
//!
//! Two source texts are drawn from unrelated random Markov chains over a
//! shared pseudo-word vocabulary. An order-3 n-gram model is fitted to each.
//! "Human" documents are temperature-1 samples from the first model and
//! "machine" documents are greedy continuations from the second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Label, LabeledDocument};
use crate::error::Result;
use crate::scorer::{NgramLmConfig, NgramScorer, Tokenizer};

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "po", "de", "va", "gu", "fe", "zo", "bi", "cha", "tre", "qua", "sel", "mon",
    "dar",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub vocab_words: usize,
    pub source_tokens: usize,
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lm: NgramLmConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 42,
            vocab_words: 400,
            source_tokens: 30_000,
            train_per_class: 400,
            dev_per_class: 100,
            min_len: 30,
            max_len: 60,
            lm: NgramLmConfig { context_len: 2, smoothing_alpha: 0.1 },
        }
    }
}

pub struct SyntheticCorpus {
    pub tokenizer: Tokenizer,
    /// Generator of the human class.
    pub lm_a: NgramScorer,
    /// Generator of the machine class.
    pub lm_b: NgramScorer,
    pub source_a: String,
    pub source_b: String,
    pub train: Dataset,
    pub dev: Dataset,
}

fn vocabulary(n: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(n);
    let s = SYLLABLES.len();
    'outer: for len in 1.. {
        let total = s.pow(len as u32);
        for mut code in 0..total {
            let mut word = String::new();
            for _ in 0..len {
                word.push_str(SYLLABLES[code % s]);
                code /= s;
            }
            words.push(word);
            if words.len() == n {
                break 'outer;
            }
        }
    }
    words
}

/// Text from a random first-order chain where each word has a few preferred successors.
fn markov_source(rng: &mut ChaCha8Rng, words: &[String], n_tokens: usize) -> String {
    let fanout = 6;
    let successors: Vec<Vec<usize>> =
        (0..words.len()).map(|_| (0..fanout).map(|_| rng.random_range(0..words.len())).collect()).collect();
    let mut out = Vec::with_capacity(n_tokens);
    let mut current = rng.random_range(0..words.len());
    let mut since_break = 0;
    for _ in 0..n_tokens {
        out.push(words[current].as_str());
        since_break += 1;
        if since_break > 4 && rng.random::<f64>() < 0.12 {
            out.push(if rng.random::<f64>() < 0.7 { "." } else { "," });
            since_break = 0;
        }
        current = if rng.random::<f64>() < 0.9 {
            // Zipf-like preference among successors
            let r = rng.random::<f64>();
            let slot = ((r * r) * fanout as f64) as usize;
            successors[current][slot.min(fanout - 1)]
        } else {
            rng.random_range(0..words.len())
        };
    }
    out.join(" ")
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let words = vocabulary(cfg.vocab_words);
        let source_a = markov_source(&mut rng, &words, cfg.source_tokens);
        let source_b = markov_source(&mut rng, &words, cfg.source_tokens);
        let tokenizer = Tokenizer::build([source_a.as_str(), source_b.as_str()]);
        let lm_a = NgramScorer::fit_texts("lm-a", tokenizer.clone(), [source_a.as_str()], cfg.lm)?;
        let lm_b = NgramScorer::fit_texts("lm-b", tokenizer.clone(), [source_b.as_str()], cfg.lm)?;

        let mut make_split = |prefix: &str, n: usize| -> Result<Dataset> {
            let mut docs = Vec::with_capacity(2 * n);
            for i in 0..n {
                let len = rng.random_range(cfg.min_len..=cfg.max_len);
                let human = lm_a.sample_tokens(&mut rng, len, 1.0);
                docs.push(LabeledDocument {
                    id: format!("{prefix}-h{i:04}"),
                    text: tokenizer.decode(&human),
                    label: Some(Label::Human),
                });
                let len = rng.random_range(cfg.min_len..=cfg.max_len);
                let prompt = lm_b.sample_tokens(&mut rng, 1, 1.0);
                let machine = lm_b.greedy_tokens(&prompt, len);
                docs.push(LabeledDocument {
                    id: format!("{prefix}-m{i:04}"),
                    text: tokenizer.decode(&machine),
                    label: Some(Label::Machine),
                });
            }
            Dataset::new(docs)
        };
        let train = make_split("train", cfg.train_per_class)?;
        let dev = make_split("dev", cfg.dev_per_class)?;
        Ok(SyntheticCorpus { tokenizer, lm_a, lm_b, source_a, source_b, train, dev })
    }
}
