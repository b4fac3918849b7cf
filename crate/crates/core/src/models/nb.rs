//! Multinomial naive Bayes with additive smoothing over fractional counts.

use serde::{Deserialize, Serialize};

use super::{check_training_set, ProbabilisticClassifier, TrainConfig};
use crate::corpus::Label;
use crate::ensemble::ProbabilityDistribution;
use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub alpha: f64,
    /// `ln P(c)`, indexed by class slot.
    pub log_prior: [f64; 2],
    /// `ln P(t | c)` per class slot, per feature.
    pub log_likelihood: [Vec<f64>; 2],
}

impl NbModel {
    pub fn n_features(&self) -> usize {
        self.log_likelihood[0].len()
    }

    /// Unnormalized log-posterior per class.
    pub fn joint_log_likelihood(&self, x: &SparseVector) -> Result<[f64; 2]> {
        let size = self.n_features();
        if x.dimension_bound() > size {
            return Err(Error::IndexOutOfBounds {
                index: x.dimension_bound() - 1,
                size,
            });
        }
        let mut scores = self.log_prior;
        for (c, score) in scores.iter_mut().enumerate() {
            *score += x.dot(&self.log_likelihood[c]);
        }
        Ok(scores)
    }
}

impl ProbabilisticClassifier for NbModel {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityDistribution> {
        Ok(ProbabilityDistribution::from_log_scores(
            self.joint_log_likelihood(x)?,
        ))
    }
}

/// `P(t | c) = (sum of t's weight in class c + alpha) / (total weight in c + alpha * V)`,
/// priors from class frequencies.
pub fn train_nb(
    train: &[(SparseVector, Label)],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<NbModel> {
    if !(cfg.nb_alpha > 0.0 && cfg.nb_alpha.is_finite()) {
        return Err(Error::Config(format!(
            "train.nb_alpha must be positive, got {}",
            cfg.nb_alpha
        )));
    }
    check_training_set(train, n_features)?;
    let mut feature_weight = [vec![0.0; n_features], vec![0.0; n_features]];
    let mut class_count = [0usize; 2];
    for (x, label) in train {
        let c = label.index();
        class_count[c] += 1;
        for (j, w) in x.iter() {
            if w < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "naive Bayes needs non-negative feature weights, got {w} at feature {j}"
                )));
            }
            feature_weight[c][j] += w;
        }
    }
    let n = train.len() as f64;
    let alpha = cfg.nb_alpha;
    let v = n_features as f64;
    let log_likelihood = feature_weight.map(|weights| {
        let total: f64 = weights.iter().sum();
        let denominator = (total + alpha * v).ln();
        weights
            .iter()
            .map(|w| (w + alpha).ln() - denominator)
            .collect()
    });
    Ok(NbModel {
        alpha,
        log_prior: class_count.map(|c| (c as f64 / n).ln()),
        log_likelihood,
    })
}
