use ndarray::{Array1, Array2};
use rand::Rng;

use super::CandaceConfig;

/// Affine map `x · w + b` with `w` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
        Linear { w, b: Array1::zeros(fan_out) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn identity(dim: usize) -> Self {
        LayerNorm { gain: Array1::ones(dim), bias: Array1::zeros(dim) }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm { gain: Array1::zeros(dim), bias: Array1::zeros(dim) }
    }
}

/// Pre-norm encoder block: attention sublayer then feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Every trainable tensor of the classifier. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub projection: Linear,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1.gain",
    "ln1.bias",
    "query.weight",
    "query.bias",
    "key.weight",
    "key.bias",
    "value.weight",
    "value.bias",
    "output.weight",
    "output.bias",
    "ln2.gain",
    "ln2.bias",
    "ff1.weight",
    "ff1.bias",
    "ff2.weight",
    "ff2.bias",
];

impl Params {
    pub fn init<R: Rng + ?Sized>(cfg: &CandaceConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let projection = Linear::glorot(rng, cfg.input_dim, d);
        let layers = (0..cfg.n_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::identity(d),
                query: Linear::glorot(rng, d, d),
                key: Linear::glorot(rng, d, d),
                value: Linear::glorot(rng, d, d),
                output: Linear::glorot(rng, d, d),
                ln2: LayerNorm::identity(d),
                ff1: Linear::glorot(rng, d, cfg.ffn_dim),
                ff2: Linear::glorot(rng, cfg.ffn_dim, d),
            })
            .collect();
        let head = Linear::glorot(rng, d, 2);
        Params { projection, layers, head }
    }

    pub fn zeros(cfg: &CandaceConfig) -> Self {
        let d = cfg.d_model;
        Params {
            projection: Linear::zeros(cfg.input_dim, d),
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::zeros(d),
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    ln2: LayerNorm::zeros(d),
                    ff1: Linear::zeros(d, cfg.ffn_dim),
                    ff2: Linear::zeros(cfg.ffn_dim, d),
                })
                .collect(),
            head: Linear::zeros(d, 2),
        }
    }

    /// Tensor names in declared order, matching [`Params::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["projection.weight".to_string(), "projection.bias".to_string()];
        for i in 0..self.layers.len() {
            names.extend(LAYER_TENSORS.iter().map(|part| format!("layers.{i}.{part}")));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.projection.w.shape().to_vec(), vec![self.projection.b.len()]];
        for layer in &self.layers {
            shapes.push(vec![layer.ln1.gain.len()]);
            shapes.push(vec![layer.ln1.bias.len()]);
            for l in [&layer.query, &layer.key, &layer.value, &layer.output] {
                shapes.push(l.w.shape().to_vec());
                shapes.push(vec![l.b.len()]);
            }
            shapes.push(vec![layer.ln2.gain.len()]);
            shapes.push(vec![layer.ln2.bias.len()]);
            for l in [&layer.ff1, &layer.ff2] {
                shapes.push(l.w.shape().to_vec());
                shapes.push(vec![l.b.len()]);
            }
        }
        shapes.push(self.head.w.shape().to_vec());
        shapes.push(vec![self.head.b.len()]);
        shapes
    }

    /// Flat views of every tensor in declared order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.push(slice(&self.projection.w));
        out.push(slice(&self.projection.b));
        for layer in &self.layers {
            out.push(slice(&layer.ln1.gain));
            out.push(slice(&layer.ln1.bias));
            for l in [&layer.query, &layer.key, &layer.value, &layer.output] {
                out.push(slice(&l.w));
                out.push(slice(&l.b));
            }
            out.push(slice(&layer.ln2.gain));
            out.push(slice(&layer.ln2.bias));
            for l in [&layer.ff1, &layer.ff2] {
                out.push(slice(&l.w));
                out.push(slice(&l.b));
            }
        }
        out.push(slice(&self.head.w));
        out.push(slice(&self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(slice_mut(&mut self.projection.w));
        out.push(slice_mut(&mut self.projection.b));
        for layer in &mut self.layers {
            out.push(slice_mut(&mut layer.ln1.gain));
            out.push(slice_mut(&mut layer.ln1.bias));
            for l in [&mut layer.query, &mut layer.key, &mut layer.value, &mut layer.output] {
                out.push(slice_mut(&mut l.w));
                out.push(slice_mut(&mut l.b));
            }
            out.push(slice_mut(&mut layer.ln2.gain));
            out.push(slice_mut(&mut layer.ln2.bias));
            for l in [&mut layer.ff1, &mut layer.ff2] {
                out.push(slice_mut(&mut l.w));
                out.push(slice_mut(&mut l.b));
            }
        }
        out.push(slice_mut(&mut self.head.w));
        out.push(slice_mut(&mut self.head.b));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}
