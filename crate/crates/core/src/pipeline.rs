//! TF-IDF + linear SVM detector as one persisted unit, and model-file sniffing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::svm::{self, SvmConfig, SvmModel, SvmRecord};
use crate::textfeat::{TfidfModel, TfidfRecord};

const FORMAT_TAG: &str = "mgtd-tfidf-svm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPipeline {
    pub tfidf: TfidfModel,
    pub svm: SvmModel,
}

impl SvmPipeline {
    pub fn fit(train: &Dataset, max_features: usize, cfg: &SvmConfig) -> Result<Self> {
        let labels = train.labels()?;
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let tfidf = TfidfModel::fit(train.texts(), max_features)?;
        let xs = tfidf.transform_all(train.texts());
        let svm = svm::fit(&xs, &labels, cfg)?;
        Ok(SvmPipeline { tfidf, svm })
    }

    pub fn predict(&self, text: &str) -> Label {
        self.svm.predict(&self.tfidf.transform(text)).expect("pipeline dimensions agree")
    }

    pub fn predict_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vec<Label> {
        texts.into_iter().map(|t| self.predict(t)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let record = PipelineRecord {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            tfidf: self.tfidf.to_record(),
            svm: self.svm.to_record(),
        };
        fs::write(path, serde_json::to_string(&record)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let record: PipelineRecord = serde_json::from_slice(&fs::read(path)?)?;
        if record.format != FORMAT_TAG || record.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                record.format, record.version
            )));
        }
        let tfidf = TfidfModel::from_record(record.tfidf)?;
        let svm = SvmModel::from_record(record.svm)?;
        if tfidf.dim() != svm.dim() {
            return Err(Error::Shape { expected: tfidf.dim(), found: svm.dim(), context: "pipeline model" });
        }
        Ok(SvmPipeline { tfidf, svm })
    }
}

#[derive(Serialize, Deserialize)]
struct PipelineRecord {
    format: String,
    version: u32,
    tfidf: TfidfRecord,
    svm: SvmRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TfidfSvm,
    Candace,
    Ngram,
}

/// Reads the `format` tag at the head of a model file.
pub fn detect_model_kind(path: impl AsRef<Path>) -> Result<ModelKind> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
    }
    let path = path.as_ref();
    let header: Header = serde_json::from_slice(&fs::read(path)?)?;
    match header.format.as_str() {
        FORMAT_TAG => Ok(ModelKind::TfidfSvm),
        "mgtd-candace" => Ok(ModelKind::Candace),
        "mgtd-ngram" => Ok(ModelKind::Ngram),
        other => Err(Error::Format(format!("{}: unknown model format `{other}`", path.display()))),
    }
}
