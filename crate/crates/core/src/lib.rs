//! Machine-generated text detection.
//!
//! Two detectors share the corpus and evaluation plumbing:
//!
//! * [`pipeline::SvmPipeline`]: word 2–3-gram TF-IDF features ([`textfeat`]) fed to a
//!   primal squared-hinge linear SVM ([`svm`]).
//! * [`candace`]: per-token `(alpha, beta, gamma)` features from an ensemble of causal
//!   scorers ([`scorer`]) classified by a small Transformer encoder.

pub mod candace;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod scorer;
pub mod svm;
pub mod synthetic;
pub mod textfeat;

pub use error::{Error, Result};
