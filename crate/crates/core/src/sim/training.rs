//! Trains the full scoring bundle for a scenario from its own workload and
//! the constructed tasks.

use serde::{Deserialize, Serialize};

use super::tasks::{burst_task, doc_corpus};
use super::{SimError, Workload};
use crate::doc::{train_doc_classifier, DocClassifier, DocTrainConfig};
use crate::domain::GroundTruth;
use crate::dqn::{train_dqn, DqnConfig};
use crate::engine::{ModelBundle, STEP_DIM};
use crate::features::{FeaturePipeline, DEFAULT_COMPONENTS};
use crate::linalg::Matrix;
use crate::sequence::{train_sequence_model, SeqModelConfig, SequenceModel, TrainHistory};
use crate::svm::{train_with_config, SvmConfig, SvmModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Workload events used to fit the feature pipeline.
    pub feature_rows: usize,
    /// Compliant events used to fit the SVM.
    pub svm_rows: usize,
    pub svm_nu: f64,
    pub seq_train: usize,
    pub seq_valid: usize,
    pub seq_len: usize,
    pub seq: SeqModelConfig,
    pub doc_train: usize,
    pub doc_test: usize,
    pub doc: DocTrainConfig,
    pub dqn: DqnConfig,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            feature_rows: 4_000,
            svm_rows: 1_000,
            svm_nu: 0.05,
            seq_train: 2_000,
            seq_valid: 500,
            seq_len: 20,
            seq: SeqModelConfig::new(STEP_DIM),
            doc_train: 800,
            doc_test: 200,
            doc: DocTrainConfig::default(),
            dqn: DqnConfig::default(),
            seed: 1,
        }
    }
}

impl TrainOptions {
    /// Small budgets for smoke tests; model quality is not a goal.
    pub fn quick() -> Self {
        let mut seq = SeqModelConfig::new(STEP_DIM);
        seq.conv_channels = [4, 4, 8];
        seq.lstm_hidden = [8, 8];
        seq.epochs = 2;
        let dqn = DqnConfig { episodes: 200, learning_starts: 2_000, ..DqnConfig::default() };
        Self {
            feature_rows: 600,
            svm_rows: 200,
            seq_train: 100,
            seq_valid: 50,
            seq,
            doc_train: 200,
            doc_test: 40,
            doc: DocTrainConfig { epochs: 5, ..DocTrainConfig::default() },
            dqn,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pca_components: usize,
    pub pca_coverage: f64,
    pub svm_support_vectors: usize,
    pub seq_valid_accuracy: f64,
    pub doc_test_accuracy: f64,
    pub dqn_final_return: f64,
}

fn fail(what: &str, e: &dyn std::fmt::Display) -> SimError {
    SimError::Training(format!("{what}: {e}"))
}

/// Feature pipeline on the first `feature_rows` events, then the one-class
/// SVM on the first `svm_rows` compliant events in the projected space.
pub fn train_anomaly(workload: &Workload, options: &TrainOptions) -> Result<(FeaturePipeline, SvmModel), SimError> {
    let raw: Vec<&[f64]> = workload.events.iter().filter_map(|e| e.features.as_deref()).take(options.feature_rows).collect();
    if raw.is_empty() {
        return Err(SimError::Training("workload has no feature vectors".into()));
    }
    let k = DEFAULT_COMPONENTS.min(raw[0].len());
    let features = FeaturePipeline::fit(&Matrix::from_rows(&raw).ok_or_else(|| fail("features", &"ragged rows"))?, k)
        .map_err(|e| fail("features", &e))?;

    let compliant: Vec<Vec<f64>> = workload
        .events
        .iter()
        .zip(&workload.labels)
        .filter(|(_, l)| l.ground_truth == GroundTruth::Compliant)
        .filter_map(|(e, _)| e.features.as_deref())
        .take(options.svm_rows)
        .map(|x| features.transform(x))
        .collect::<Result<_, _>>()
        .map_err(|e| fail("features", &e))?;
    let svm_data = Matrix::from_rows(&compliant).ok_or_else(|| fail("svm", &"no compliant rows"))?;
    let svm = train_with_config(&svm_data, &SvmConfig { nu: options.svm_nu, ..SvmConfig::default() })
        .map_err(|e| fail("svm", &e))?;
    Ok((features, svm))
}

/// Sequence model on the burst task.
pub fn train_sequence(options: &TrainOptions) -> Result<(SequenceModel, TrainHistory), SimError> {
    let train = burst_task(options.seq_train, options.seq_len, options.seed);
    let valid = burst_task(options.seq_valid, options.seq_len, options.seed + 1);
    let mut seq_cfg = options.seq.clone();
    seq_cfg.input_dim = STEP_DIM;
    train_sequence_model(seq_cfg, &train, &valid).map_err(|e| fail("sequence", &e))
}

/// Document classifier on the keyword corpus, with its held-out accuracy.
pub fn train_doc(options: &TrainOptions) -> Result<(DocClassifier, f64), SimError> {
    let (doc_train, doc_test) = doc_corpus(options.doc_train, options.doc_test, options.seed + 2);
    let doc = train_doc_classifier(&doc_train, &options.doc).map_err(|e| fail("doc", &e))?;
    let acc = doc.accuracy(&doc_test);
    Ok((doc, acc))
}

pub fn train_bundle(workload: &Workload, options: &TrainOptions) -> Result<(ModelBundle, TrainSummary), SimError> {
    let (features, svm) = train_anomaly(workload, options)?;
    let (sequence, history) = train_sequence(options)?;
    let (doc, doc_acc) = train_doc(options)?;
    let (policy, dqn_history) = train_dqn(&options.dqn).map_err(|e| fail("dqn", &e))?;

    let summary = TrainSummary {
        pca_components: features.output_dim(),
        pca_coverage: features.pca.coverage(),
        svm_support_vectors: svm.alphas.len(),
        seq_valid_accuracy: history.best().map_or(0.0, |e| e.valid_accuracy),
        doc_test_accuracy: doc_acc,
        dqn_final_return: dqn_history.episode_returns.last().copied().unwrap_or(0.0),
    };
    let bundle = ModelBundle {
        features: Some(features),
        svm: Some(svm),
        sequence: Some(sequence),
        doc: Some(doc),
        policy: Some(policy),
    };
    Ok((bundle, summary))
}
