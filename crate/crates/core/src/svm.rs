//! Primal linear SVM with squared hinge loss and balanced class weights.
//!
//! Minimizes `F(w, b) = ½‖w‖² + C Σᵢ cᵢ max(0, 1 − yᵢ(w·xᵢ + b))²` with
//! `yᵢ ∈ {−1, +1}` by full-batch gradient descent and Armijo backtracking.
//! The intercept is not regularized.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::textfeat::SparseVector;

const FORMAT_TAG: &str = "mgtd-svm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeightMode {
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub class_weight: ClassWeightMode,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 0.5, class_weight: ClassWeightMode::Balanced, max_iter: 5000, tol: 1e-6 }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Usage(format!("C must be positive, got {}", self.c)));
        }
        if self.max_iter == 0 {
            return Err(Error::Usage("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Usage(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// `n / (2 · n_c)` for each class, so both classes carry equal total weight.
pub fn balanced_class_weights(count0: usize, count1: usize) -> Result<(f64, f64)> {
    if count0 == 0 || count1 == 0 {
        return Err(Error::DegenerateClass(format!("class counts ({count0}, {count1})")));
    }
    let n = (count0 + count1) as f64;
    Ok((n / (2.0 * count0 as f64), n / (2.0 * count1 as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    weights: Vec<f64>,
    intercept: f64,
}

impl SvmModel {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
            return Err(Error::Validation("SVM parameters must be finite".into()));
        }
        Ok(SvmModel { weights, intercept })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_function(&self, x: &SparseVector) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), found: x.dim(), context: "svm decision function" });
        }
        Ok(x.dot_dense(&self.weights) + self.intercept)
    }

    /// Machine when the score is strictly positive; ties go to human.
    pub fn predict(&self, x: &SparseVector) -> Result<Label> {
        Ok(label_for_score(self.decision_function(x)?))
    }

    pub(crate) fn to_record(&self) -> SvmRecord {
        SvmRecord {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            dim: self.dim(),
            weights: self.weights.clone(),
            intercept: self.intercept,
        }
    }

    pub(crate) fn from_record(record: SvmRecord) -> Result<Self> {
        if record.format != FORMAT_TAG || record.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                record.format, record.version
            )));
        }
        if record.weights.len() != record.dim {
            return Err(Error::Shape { expected: record.dim, found: record.weights.len(), context: "svm weights" });
        }
        SvmModel::new(record.weights, record.intercept)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_record())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_record(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn label_for_score(score: f64) -> Label {
    if score > 0.0 {
        Label::Machine
    } else {
        Label::Human
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SvmRecord {
    format: String,
    version: u32,
    dim: usize,
    weights: Vec<f64>,
    intercept: f64,
}

/// The weighted squared-hinge objective over a fixed training set.
pub struct SquaredHingeObjective<'a> {
    xs: &'a [SparseVector],
    targets: Vec<f64>,
    sample_weights: Vec<f64>,
    c: f64,
    dim: usize,
}

impl<'a> SquaredHingeObjective<'a> {
    pub fn new(xs: &'a [SparseVector], ys: &[Label], cfg: &SvmConfig) -> Result<Self> {
        cfg.validate()?;
        if xs.len() != ys.len() {
            return Err(Error::Shape { expected: xs.len(), found: ys.len(), context: "svm labels" });
        }
        let dim = xs.first().map_or(0, SparseVector::dim);
        if let Some(bad) = xs.iter().find(|x| x.dim() != dim) {
            return Err(Error::Shape { expected: dim, found: bad.dim(), context: "svm training rows" });
        }
        let count1 = ys.iter().filter(|&&y| y == Label::Machine).count();
        let count0 = ys.len() - count1;
        let (w0, w1) = match cfg.class_weight {
            ClassWeightMode::Balanced => balanced_class_weights(count0, count1)?,
            ClassWeightMode::Uniform if count0 == 0 || count1 == 0 => {
                return Err(Error::DegenerateClass(format!("class counts ({count0}, {count1})")))
            }
            ClassWeightMode::Uniform => (1.0, 1.0),
        };
        let targets = ys.iter().map(|&y| if y == Label::Machine { 1.0 } else { -1.0 }).collect();
        let sample_weights = ys.iter().map(|&y| if y == Label::Machine { w1 } else { w0 }).collect();
        Ok(SquaredHingeObjective { xs, targets, sample_weights, c: cfg.c, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, w: &[f64], b: f64) -> f64 {
        let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let loss: f64 = self
            .xs
            .iter()
            .zip(&self.targets)
            .zip(&self.sample_weights)
            .map(|((x, &y), &cw)| {
                let slack = (1.0 - y * (x.dot_dense(w) + b)).max(0.0);
                cw * slack * slack
            })
            .sum();
        reg + self.c * loss
    }

    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut grad_w = w.to_vec();
        let mut grad_b = 0.0;
        for ((x, &y), &cw) in self.xs.iter().zip(&self.targets).zip(&self.sample_weights) {
            let slack = 1.0 - y * (x.dot_dense(w) + b);
            if slack > 0.0 {
                let scale = -2.0 * self.c * cw * slack * y;
                for (i, v) in x.iter() {
                    grad_w[i] += scale * v;
                }
                grad_b += scale;
            }
        }
        (grad_w, grad_b)
    }
}

/// Objective value after each accepted step, starting from the origin.
#[derive(Debug, Clone)]
pub struct SvmTrace {
    pub objective: Vec<f64>,
    pub converged: bool,
}

pub fn fit(xs: &[SparseVector], ys: &[Label], cfg: &SvmConfig) -> Result<SvmModel> {
    fit_with_trace(xs, ys, cfg).map(|(model, _)| model)
}

pub fn fit_with_trace(xs: &[SparseVector], ys: &[Label], cfg: &SvmConfig) -> Result<(SvmModel, SvmTrace)> {
    if xs.len() < 2 {
        return Err(Error::Usage(format!("need at least two training rows, got {}", xs.len())));
    }
    let objective = SquaredHingeObjective::new(xs, ys, cfg)?;
    let mut w = vec![0.0; objective.dim()];
    let mut b = 0.0;
    let mut value = objective.value(&w, b);
    let mut trace = vec![value];
    let mut step = 1.0;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let (gw, gb) = objective.gradient(&w, b);
        let grad_sq = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if grad_sq == 0.0 {
            converged = true;
            break;
        }
        // Armijo backtracking, restarting from twice the last accepted step.
        step *= 2.0;
        let (next_w, next_b, next_value) = loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let cand_b = b - step * gb;
            let cand_value = objective.value(&cand_w, cand_b);
            if cand_value <= value - 0.5 * step * grad_sq {
                break (cand_w, cand_b, cand_value);
            }
            step *= 0.5;
            if step < 1e-30 {
                break (w.clone(), b, value);
            }
        };
        let decrease = value - next_value;
        w = next_w;
        b = next_b;
        value = next_value;
        trace.push(value);
        if decrease <= cfg.tol * value.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok((SvmModel::new(w, b)?, SvmTrace { objective: trace, converged }))
}
