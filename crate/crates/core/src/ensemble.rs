//! Weighted soft voting over per-model class distributions.
//!
//! Each model contributes a distribution `p_m = [P(negative), P(positive)]`.
//! The combined distribution is `sum_i w_i * p_i` with non-negative weights
//! normalized to sum to one, and the verdict is its argmax. Equal weights
//! `1 / N` give the plain mean of the members.
//!
//! The combiner deliberately applies no extra `1 / N` factor on top of
//! normalized weights: that would scale the total mass to `1 / N` without
//! changing the argmax.
//!
//! Argmax ties resolve to the lower class index, i.e. `negative`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Tolerance on `sum(p) = 1` for distributions built from exact arithmetic.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Class probabilities in the fixed order `[negative, positive]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ProbabilityDistribution([f64; 2]);

impl ProbabilityDistribution {
    /// Validates entries are finite, non-negative and sum to 1 within
    /// [`DISTRIBUTION_TOLERANCE`].
    pub fn new(negative: f64, positive: f64) -> Result<Self> {
        let p = [negative, positive];
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probabilities must be finite and non-negative, got {p:?}"
            )));
        }
        let sum = negative + positive;
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    /// `[1 - p, p]` for `p` in `[0, 1]`.
    pub fn from_positive(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "P(positive) must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self([1.0 - p, p]))
    }

    /// Normalizes non-negative class scores that already sum to 1 within
    /// `tolerance`.
    pub fn renormalized(p: [f64; 2], tolerance: f64) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probabilities must be finite and non-negative, got {p:?}"
            )));
        }
        let sum = p[0] + p[1];
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self([p[0] / sum, p[1] / sum]))
    }

    /// Softmax of two log-scores.
    pub fn from_log_scores(scores: [f64; 2]) -> Self {
        let max = scores[0].max(scores[1]);
        let e = [(scores[0] - max).exp(), (scores[1] - max).exp()];
        let z = e[0] + e[1];
        Self([e[0] / z, e[1] / z])
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    pub fn positive(&self) -> f64 {
        self.0[1]
    }

    pub fn negative(&self) -> f64 {
        self.0[0]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }

    /// Highest-probability class; ties go to `negative`.
    pub fn argmax(&self) -> Label {
        if self.0[1] > self.0[0] {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn max_probability(&self) -> f64 {
        self.0[0].max(self.0[1])
    }
}

impl TryFrom<[f64; 2]> for ProbabilityDistribution {
    type Error = Error;

    fn try_from(p: [f64; 2]) -> Result<Self> {
        Self::new(p[0], p[1])
    }
}

impl From<ProbabilityDistribution> for [f64; 2] {
    fn from(p: ProbabilityDistribution) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    model_ids: Vec<String>,
    weights: Vec<f64>,
}

impl EnsembleConfig {
    /// Normalizes `weights` to sum to one. Rejects negative or non-finite
    /// weights, an all-zero weight vector and an empty model list.
    pub fn new(model_ids: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if model_ids.is_empty() {
            return Err(Error::Config("ensemble needs at least one model".into()));
        }
        if model_ids.len() != weights.len() {
            return Err(Error::Config(format!(
                "ensemble has {} models but {} weights",
                model_ids.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Config(format!(
                "ensemble weights must be finite and non-negative, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("ensemble weights sum to zero".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { model_ids, weights })
    }

    /// Equal weights `1 / N`.
    pub fn equal(model_ids: Vec<String>) -> Result<Self> {
        let n = model_ids.len();
        Self::new(model_ids, vec![1.0; n])
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub combined: ProbabilityDistribution,
    pub per_model: Vec<ProbabilityDistribution>,
}

pub fn soft_vote(dists: &[ProbabilityDistribution], cfg: &EnsembleConfig) -> Result<Verdict> {
    if dists.len() != cfg.len() {
        return Err(Error::InvalidInput(format!(
            "ensemble expects {} distributions, got {}",
            cfg.len(),
            dists.len()
        )));
    }
    let mut combined = [0.0; 2];
    for (p, w) in dists.iter().zip(&cfg.weights) {
        combined[0] += w * p.0[0];
        combined[1] += w * p.0[1];
    }
    let combined = ProbabilityDistribution(combined);
    Ok(Verdict {
        label: combined.argmax(),
        combined,
        per_model: dists.to_vec(),
    })
}

/// Row-wise [`soft_vote`]; output order follows the rows.
pub fn batch_vote(
    matrix: &[Vec<ProbabilityDistribution>],
    cfg: &EnsembleConfig,
) -> Result<Vec<Verdict>> {
    use rayon::prelude::*;
    matrix.par_iter().map(|row| soft_vote(row, cfg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceAggregation {
    #[default]
    Mean,
    MaxConfidence,
}

/// Combines sentence-level distributions into one review-level distribution.
/// `MaxConfidence` keeps the first distribution with the largest max entry.
pub fn aggregate_sentences(
    sentence_dists: &[ProbabilityDistribution],
    strategy: SentenceAggregation,
) -> Result<ProbabilityDistribution> {
    let Some(first) = sentence_dists.first() else {
        return Err(Error::InvalidInput(
            "cannot aggregate an empty list of sentence distributions".into(),
        ));
    };
    match strategy {
        SentenceAggregation::Mean => {
            let n = sentence_dists.len() as f64;
            let mut sum = [0.0; 2];
            for p in sentence_dists {
                sum[0] += p.0[0];
                sum[1] += p.0[1];
            }
            let mean = [sum[0] / n, sum[1] / n];
            let z = mean[0] + mean[1];
            Ok(ProbabilityDistribution([mean[0] / z, mean[1] / z]))
        }
        SentenceAggregation::MaxConfidence => Ok(*sentence_dists
            .iter()
            .skip(1)
            .fold(first, |best, p| {
                if p.max_probability() > best.max_probability() {
                    p
                } else {
                    best
                }
            })),
    }
}

/// One line of a verdict JSON Lines export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: u64,
    pub label: Label,
    pub combined: ProbabilityDistribution,
    pub per_model: BTreeMap<String, ProbabilityDistribution>,
}

impl VerdictRecord {
    pub fn new(id: u64, verdict: &Verdict, cfg: &EnsembleConfig) -> Self {
        Self {
            id,
            label: verdict.label,
            combined: verdict.combined,
            per_model: cfg
                .model_ids
                .iter()
                .cloned()
                .zip(verdict.per_model.iter().copied())
                .collect(),
        }
    }
}
