//! Natively trained classifiers over TF-IDF vectors: multinomial naive Bayes,
//! logistic regression and a calibrated linear SVM.

pub mod calibration;
pub mod linear;
pub mod nb;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::ensemble::ProbabilityDistribution;
use crate::error::{Error, Result};
use crate::features::SparseVector;

pub use calibration::{fit_platt, Calibrator};
pub use linear::{
    hinge_objective, logistic_gradient, logistic_objective, sigmoid, train_logistic,
    train_logistic_traced, train_svm, train_svm_margins, CalibratedSvm, LinearKind, LinearModel,
    TrainTrace,
};
pub use nb::{train_nb, NbModel};

/// Anything that maps a feature vector to a `[negative, positive]`
/// distribution.
pub trait ProbabilisticClassifier: Send + Sync {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityDistribution>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch cap for logistic regression.
    pub lr_iterations: usize,
    /// Epoch cap for the SVM.
    pub svm_iterations: usize,
    /// Initial SGD step size.
    pub learning_rate: f64,
    /// Strength of the `l2 / 2 * |w|^2` penalty on the per-example mean loss.
    pub l2: f64,
    pub nb_alpha: f64,
    pub seed: u64,
    /// Relative objective improvement below which the step size is halved.
    pub tolerance: f64,
    /// Folds used to collect out-of-fold SVM margins for calibration.
    pub calibration_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_iterations: 1000,
            svm_iterations: 2000,
            learning_rate: 0.5,
            l2: 4e-5,
            nb_alpha: 1.0,
            seed: 42,
            tolerance: 1e-4,
            calibration_folds: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_iterations == 0 || self.svm_iterations == 0 {
            return Err(Error::Config(
                "train.lr_iterations and train.svm_iterations must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!(
                "train.l2 must be non-negative, got {}",
                self.l2
            )));
        }
        if self.learning_rate * self.l2 >= 1.0 {
            return Err(Error::Config(format!(
                "train.learning_rate * train.l2 must be below 1, got {}",
                self.learning_rate * self.l2
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("train.tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_training_set(train: &[(SparseVector, Label)], n_features: usize) -> Result<()> {
    for label in Label::ALL {
        if !train.iter().any(|(_, y)| *y == label) {
            return Err(Error::InvalidInput(format!(
                "training data has no {label} examples"
            )));
        }
    }
    if let Some((x, _)) = train.iter().find(|(x, _)| x.dimension_bound() > n_features) {
        return Err(Error::IndexOutOfBounds {
            index: x.dimension_bound() - 1,
            size: n_features,
        });
    }
    Ok(())
}

/// Any native model, tagged by kind in its artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NativeModel {
    NaiveBayes(NbModel),
    Logistic(LinearModel),
    Svm(CalibratedSvm),
}

impl NativeModel {
    pub fn n_features(&self) -> usize {
        match self {
            NativeModel::NaiveBayes(m) => m.n_features(),
            NativeModel::Logistic(m) => m.n_features(),
            NativeModel::Svm(m) => m.model.n_features(),
        }
    }

    /// The underlying linear model, if any.
    pub fn linear(&self) -> Option<&LinearModel> {
        match self {
            NativeModel::NaiveBayes(_) => None,
            NativeModel::Logistic(m) => Some(m),
            NativeModel::Svm(m) => Some(&m.model),
        }
    }
}

impl ProbabilisticClassifier for NativeModel {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityDistribution> {
        match self {
            NativeModel::NaiveBayes(m) => m.predict_proba(x),
            NativeModel::Logistic(m) => m.predict_proba(x),
            NativeModel::Svm(m) => m.predict_proba(x),
        }
    }
}

const MODEL_FORMAT: &str = "sentivote.model";
const MODEL_VERSION: u32 = 1;

/// On-disk form of a trained model, bound to one vocabulary by hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub vocabulary_hash: String,
    pub model: NativeModel,
    /// Mean training feature vector, the reference point for linear
    /// attributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<SparseVector>,
}

impl ModelArtifact {
    pub fn new(model_id: impl Into<String>, vocabulary_hash: impl Into<String>, model: NativeModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model_id: model_id.into(),
            vocabulary_hash: vocabulary_hash.into(),
            model,
            background: None,
        }
    }

    pub fn with_background(mut self, background: SparseVector) -> Self {
        self.background = Some(background);
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(self).map_err(|e| Error::json("model artifact", e))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads an artifact and refuses it unless it was trained against the
    /// vocabulary with `expected_vocabulary_hash`.
    pub fn load(path: impl AsRef<Path>, expected_vocabulary_hash: &str) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact =
            serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
                path: path.to_path_buf(),
                message: format!("not a readable model artifact: {e}"),
            })?;
        if artifact.format != MODEL_FORMAT || artifact.version != MODEL_VERSION {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported artifact {} v{}",
                    artifact.format, artifact.version
                ),
            });
        }
        if artifact.vocabulary_hash != expected_vocabulary_hash {
            return Err(Error::VocabularyMismatch {
                expected: artifact.vocabulary_hash,
                actual: expected_vocabulary_hash.to_string(),
            });
        }
        Ok(artifact)
    }
}
