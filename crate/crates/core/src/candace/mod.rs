//! Transformer-encoder classifier over per-token feature sequences.
//!
//! Token features are standardized, projected to `d_model`, offset by a fixed
//! sinusoidal position table, passed through pre-norm encoder blocks
//! (multi-head self-attention and a GELU feed-forward, each residual), pooled
//! over the unmasked positions and mapped to two logits (human, machine).
//! Gradients are computed analytically; training uses AdamW and cross-entropy.

mod adamw;
mod network;
mod params;
mod train;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scorer::{FeatureMatrix, MAX_SEQ_LEN};

pub use adamw::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use params::{EncoderLayer, LayerNorm, Linear, Params};
pub use train::{evaluate, mean_loss, train, EpochRecord, TrainOutcome};

use network::{backward_sequence, cross_entropy_item, forward_sequence, Dropout};

const FORMAT_TAG: &str = "mgtd-candace";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandaceConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub pooling: Pooling,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl CandaceConfig {
    /// Defaults for `input_dim` features per token (3 per scorer).
    pub fn new(input_dim: usize) -> Self {
        CandaceConfig {
            input_dim,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            dropout: 0.1,
            max_seq_len: MAX_SEQ_LEN,
            pooling: Pooling::Mean,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 10,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_dim == 0 || self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_seq_len == 0 || self.max_seq_len > MAX_SEQ_LEN {
            return fail(format!("max_seq_len must lie in 1..={MAX_SEQ_LEN}"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return fail("learning rate must be positive and weight decay non-negative".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

/// Per-column mean and standard deviation of the training token features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population statistics over every token row; near-constant columns keep unit scale.
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a FeatureMatrix>, dim: usize) -> Self {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let matrices: Vec<&FeatureMatrix> = matrices.into_iter().collect();
        for fm in &matrices {
            for row in fm.rows() {
                count += 1;
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for fm in &matrices {
            for row in fm.rows() {
                for ((q, &v), &m) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|q| {
                let sd = (q / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        FeatureNorm { mean, std }
    }

    /// Standardized rows of `fm`, truncated to `max_len`.
    pub fn apply(&self, fm: &FeatureMatrix, max_len: usize) -> Array2<f64> {
        let rows = fm.n_rows().min(max_len);
        let dim = fm.n_cols();
        let mut out = Array2::zeros((rows, dim));
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (fm.row(t)[j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Fixed sinusoidal table: `sin(p / 10000^(2i/d))` on even columns, `cos` on odd.
pub fn sinusoidal_positions(max_len: usize, d_model: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d_model), |(pos, j)| {
        let exponent = (2 * (j / 2)) as f64 / d_model as f64;
        let angle = pos as f64 / 10_000f64.powf(exponent);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Zero-padded batch of feature sequences with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    /// `batch × max_len × input_dim`.
    pub features: Array3<f64>,
    /// `batch × max_len`, true on real tokens.
    pub mask: Array2<bool>,
    pub labels: Option<Vec<Label>>,
}

impl PaddedBatch {
    /// Packs already-standardized sequences left-aligned into a padded batch.
    pub fn from_sequences(sequences: &[ArrayView2<f64>], labels: Option<Vec<Label>>) -> Result<Self> {
        let dim = sequences.first().map_or(0, |s| s.ncols());
        if let Some(bad) = sequences.iter().find(|s| s.ncols() != dim) {
            return Err(Error::Shape { expected: dim, found: bad.ncols(), context: "padded batch width" });
        }
        if let Some(l) = &labels {
            if l.len() != sequences.len() {
                return Err(Error::Shape { expected: sequences.len(), found: l.len(), context: "batch labels" });
            }
        }
        let max_len = sequences.iter().map(|s| s.nrows()).max().unwrap_or(0);
        let mut features = Array3::zeros((sequences.len(), max_len, dim));
        let mut mask = Array2::from_elem((sequences.len(), max_len), false);
        for (b, seq) in sequences.iter().enumerate() {
            features.index_axis_mut(Axis(0), b).slice_mut(ndarray::s![..seq.nrows(), ..]).assign(seq);
            mask.row_mut(b).slice_mut(ndarray::s![..seq.nrows()]).fill(true);
        }
        Ok(PaddedBatch { features, mask, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unmasked rows of item `b` and their positions.
    fn item(&self, b: usize) -> (Array2<f64>, Vec<usize>) {
        let positions: Vec<usize> =
            self.mask.row(b).iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let rows = self.features.index_axis(Axis(0), b).select(Axis(0), &positions);
        (rows, positions)
    }
}

/// Mean cross-entropy of `logits` (`batch × 2`) against class indices.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Shape { expected: logits.nrows(), found: labels.len(), context: "cross-entropy labels" });
    }
    if logits.nrows() == 0 {
        return Err(Error::Usage("cross-entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Index { index: label, len: row.len() });
        }
        total += cross_entropy_item(row, label).0;
    }
    Ok(total / labels.len() as f64)
}

/// Machine only when its logit is strictly larger.
pub fn label_for_logits(logits: &[f64]) -> Label {
    if logits[1] > logits[0] {
        Label::Machine
    } else {
        Label::Human
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandaceModel {
    config: CandaceConfig,
    norm: FeatureNorm,
    positional: Array2<f64>,
    params: Params,
}

impl CandaceModel {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: CandaceConfig, norm: FeatureNorm) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != config.input_dim || norm.std.len() != config.input_dim {
            return Err(Error::Shape { expected: config.input_dim, found: norm.mean.len(), context: "feature norm" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &mut rng);
        let positional = sinusoidal_positions(config.max_seq_len, config.d_model);
        Ok(CandaceModel { config, norm, positional, params })
    }

    pub fn config(&self) -> &CandaceConfig {
        &self.config
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.norm
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn positional_table(&self) -> &Array2<f64> {
        &self.positional
    }

    /// Replaces the position table; it must keep its `max_seq_len × d_model` shape.
    pub fn set_positional_table(&mut self, table: Array2<f64>) -> Result<()> {
        if table.dim() != self.positional.dim() {
            return Err(Error::Shape {
                expected: self.positional.len(),
                found: table.len(),
                context: "positional table",
            });
        }
        self.positional = table;
        Ok(())
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.config.input_dim {
            return Err(Error::Shape { expected: self.config.input_dim, found: width, context: "feature width" });
        }
        Ok(())
    }

    /// Standardizes, truncates and pads feature matrices into a batch.
    pub fn batch(&self, matrices: &[&FeatureMatrix], labels: Option<Vec<Label>>) -> Result<PaddedBatch> {
        let mut seqs = Vec::with_capacity(matrices.len());
        for fm in matrices {
            self.check_width(fm.n_cols())?;
            seqs.push(self.norm.apply(fm, self.config.max_seq_len));
        }
        let views: Vec<ArrayView2<f64>> = seqs.iter().map(|s| s.view()).collect();
        PaddedBatch::from_sequences(&views, labels)
    }

    fn check_batch(&self, batch: &PaddedBatch) -> Result<()> {
        self.check_width(batch.features.len_of(Axis(2)))?;
        let len = batch.features.len_of(Axis(1));
        if len > self.config.max_seq_len {
            return Err(Error::Shape { expected: self.config.max_seq_len, found: len, context: "sequence length" });
        }
        Ok(())
    }

    /// Logits (`batch × 2`) with dropout disabled.
    pub fn forward(&self, batch: &PaddedBatch) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let rows: Vec<Array1<f64>> = (0..batch.len())
            .into_par_iter()
            .map(|b| {
                let (x, pos) = batch.item(b);
                forward_sequence(&self.params, &self.positional, &self.config, x.view(), &pos, None).0
            })
            .collect();
        let mut logits = Array2::zeros((batch.len(), 2));
        for (mut out, row) in logits.rows_mut().into_iter().zip(rows) {
            out.assign(&row);
        }
        Ok(logits)
    }

    pub(crate) fn sequence_logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let positions: Vec<usize> = (0..x.nrows()).collect();
        forward_sequence(&self.params, &self.positional, &self.config, x, &positions, None).0
    }

    /// Mean cross-entropy over the batch and its exact gradient. With
    /// `dropout_seed` set, dropout is active and its masks are drawn from that seed.
    pub fn loss_and_gradients(&self, batch: &PaddedBatch, dropout_seed: Option<u64>) -> Result<(f64, Params)> {
        self.check_batch(batch)?;
        let labels = batch.labels.as_ref().ok_or_else(|| Error::Usage("batch has no labels".into()))?;
        let items: Vec<(Array2<f64>, Vec<usize>)> = (0..batch.len()).map(|b| batch.item(b)).collect();
        let views: Vec<(ArrayView2<f64>, &[usize], Label)> =
            items.iter().zip(labels).map(|((x, p), &l)| (x.view(), p.as_slice(), l)).collect();
        Ok(self.batch_gradients(&views, dropout_seed))
    }

    pub(crate) fn batch_gradients(
        &self,
        items: &[(ArrayView2<f64>, &[usize], Label)],
        dropout_seed: Option<u64>,
    ) -> (f64, Params) {
        let n = items.len() as f64;
        let per_item: Vec<(f64, Params)> = items
            .par_iter()
            .enumerate()
            .map(|(i, (x, positions, label))| {
                let mut dropout = match dropout_seed {
                    Some(seed) if self.config.dropout > 0.0 => Some(Dropout {
                        rate: self.config.dropout,
                        rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64])),
                    }),
                    _ => None,
                };
                let (logits, cache) =
                    forward_sequence(&self.params, &self.positional, &self.config, *x, positions, dropout.as_mut());
                let (loss, dlogits) = cross_entropy_item(logits.view(), label.encode() as usize);
                let mut grads = Params::zeros(&self.config);
                backward_sequence(&self.params, &self.config, &cache, (dlogits / n).view(), &mut grads);
                (loss, grads)
            })
            .collect();
        // reduce in item order so the sum does not depend on scheduling
        let mut total = Params::zeros(&self.config);
        let mut loss = 0.0;
        for (l, g) in &per_item {
            loss += l;
            total.add_assign(g);
        }
        (loss / n, total)
    }

    pub fn logits(&self, fm: &FeatureMatrix) -> Result<[f64; 2]> {
        self.check_width(fm.n_cols())?;
        let x = self.norm.apply(fm, self.config.max_seq_len);
        let l = self.sequence_logits(x.view());
        Ok([l[0], l[1]])
    }

    pub fn predict(&self, fm: &FeatureMatrix) -> Result<Label> {
        Ok(label_for_logits(&self.logits(fm)?))
    }

    pub fn predict_all(&self, matrices: &[&FeatureMatrix]) -> Result<Vec<Label>> {
        for fm in matrices {
            self.check_width(fm.n_cols())?;
        }
        Ok(matrices.par_iter().map(|fm| self.predict(fm).expect("width checked")).collect())
    }

    fn to_record(&self) -> ModelRecord {
        let tensors = self
            .params
            .names()
            .into_iter()
            .zip(self.params.shapes())
            .zip(self.params.tensors())
            .map(|((name, shape), values)| TensorRecord { name, shape, values: values.to_vec() })
            .collect();
        ModelRecord {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            config: self.config.clone(),
            norm: self.norm.clone(),
            tensors,
        }
    }

    fn from_record(record: ModelRecord) -> Result<Self> {
        if record.format != FORMAT_TAG || record.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                record.format, record.version
            )));
        }
        let mut model = CandaceModel::new(record.config, record.norm)?;
        let names = model.params.names();
        let shapes = model.params.shapes();
        if record.tensors.len() != names.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), record.tensors.len())));
        }
        for (((dst, tensor), name), shape) in
            model.params.tensors_mut().into_iter().zip(&record.tensors).zip(&names).zip(&shapes)
        {
            if &tensor.name != name || &tensor.shape != shape || tensor.values.len() != dst.len() {
                return Err(Error::Format(format!("tensor `{}` does not match `{name}` {shape:?}", tensor.name)));
            }
            dst.copy_from_slice(&tensor.values);
        }
        if !model.params.all_finite() {
            return Err(Error::Format("model contains non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_record(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    config: CandaceConfig,
    norm: FeatureNorm,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}
