//! End-to-end run on a generated corpus: both detectors, dev metrics table.

use std::time::Instant;

use mgtd::candace::{self, CandaceConfig};
use mgtd::corpus::Label;
use mgtd::eval::{confusion, metrics, render_table};
use mgtd::pipeline::SvmPipeline;
use mgtd::scorer::{extract_corpus, CausalScorer, FeatureMatrix};
use mgtd::svm::SvmConfig;
use mgtd::synthetic::{SyntheticConfig, SyntheticCorpus};

fn main() -> mgtd::Result<()> {
    let start = Instant::now();
    let corpus = SyntheticCorpus::generate(&SyntheticConfig::default())?;
    println!("corpus generated in {:.1?}", start.elapsed());

    let svm = SvmPipeline::fit(&corpus.train, 5000, &SvmConfig::default())?;
    let gold = corpus.dev.labels()?;
    let svm_report = metrics(&confusion(&svm.predict_all(corpus.dev.texts()), &gold)?);
    println!("svm done in {:.1?}", start.elapsed());

    let scorers: [&dyn CausalScorer; 2] = [&corpus.lm_a, &corpus.lm_b];
    let featurize = |ds: &mgtd::corpus::Dataset| -> mgtd::Result<Vec<(FeatureMatrix, Label)>> {
        let texts: Vec<&str> = ds.texts().collect();
        let fms = extract_corpus(&scorers, &texts)?;
        Ok(fms.into_iter().zip(ds.labels()?).collect())
    };
    let train = featurize(&corpus.train)?;
    let dev = featurize(&corpus.dev)?;
    println!("features extracted in {:.1?}", start.elapsed());

    let outcome = candace::train(&train, &dev, &CandaceConfig::new(6))?;
    for rec in &outcome.history {
        println!("{}", serde_json::to_string(rec).unwrap());
    }
    println!("candace trained in {:.1?}; best epoch {}", start.elapsed(), outcome.best_epoch);
    let candace_report = candace::evaluate(&outcome.model, &dev)?;

    print!("{}", render_table(&[("TF-IDF + SVM".into(), svm_report), ("Candace".into(), candace_report)]));
    Ok(())
}
