use std::path::Path;

use super::config::{Granularity, RunConfig, ENSEMBLE_ID};
use super::run::{load_run, score_units, scoring_units, NativeModels};
use crate::ensemble::{soft_vote, EnsembleConfig, ProbabilityDistribution, SentenceAggregation, VerdictRecord};
use crate::error::{Error, Result};
use crate::explain::{self, Attribution, MaskingConfig};
use crate::features;
use crate::models::ProbabilisticClassifier;
use crate::textprep::{self, PrepConfig, TokenSequence};

/// Scores free text with the native models of a finished run.
#[derive(Debug, Clone)]
pub struct Predictor {
    run: NativeModels,
    prep: PrepConfig,
    granularity: Granularity,
    aggregation: SentenceAggregation,
    masking: MaskingConfig,
    ensemble: EnsembleConfig,
}

impl Predictor {
    /// Loads the run in `cfg.output.dir`. Preprocessing comes from the run's
    /// manifest; granularity, ensemble weights and explanation settings come
    /// from `cfg`. External models have no scores for new text, so the
    /// ensemble keeps only its native members.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Self::load_dir(&cfg.output.dir, cfg)
    }

    pub fn load_dir(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let (manifest, run) = load_run(dir)?;
        let ensemble = native_ensemble(cfg, &run.ids())?;
        Ok(Self {
            prep: manifest.config.prep,
            granularity: cfg.ensemble.granularity,
            aggregation: cfg.ensemble.aggregation,
            masking: cfg.explain.clone(),
            ensemble,
            run,
        })
    }

    pub fn ensemble(&self) -> &EnsembleConfig {
        &self.ensemble
    }

    pub fn models(&self) -> &NativeModels {
        &self.run
    }

    pub fn tokens(&self, text: &str) -> TokenSequence {
        textprep::preprocess(text, &self.prep)
    }

    /// Verdict for one text; `id` is copied into the record.
    pub fn predict(&self, id: u64, text: &str) -> Result<VerdictRecord> {
        let units = scoring_units(text, &self.prep, &self.run.vocabulary, self.granularity);
        let dists = self
            .ensemble
            .model_ids()
            .iter()
            .map(|m| score_units(self.member(m)?, &units, self.aggregation))
            .collect::<Result<Vec<_>>>()?;
        let verdict = soft_vote(&dists, &self.ensemble)?;
        Ok(VerdictRecord::new(id, &verdict, &self.ensemble))
    }

    fn member(&self, id: &str) -> Result<&dyn ProbabilisticClassifier> {
        self.run
            .get(id)
            .map(|m| m as &dyn ProbabilisticClassifier)
            .ok_or_else(|| Error::Config(format!("unknown model `{id}`")))
    }

    fn ensemble_positive(&self, tokens: &TokenSequence) -> Result<f64> {
        let x = features::transform(tokens, &self.run.vocabulary);
        let dists = self
            .ensemble
            .model_ids()
            .iter()
            .map(|m| self.member(m)?.predict_proba(&x))
            .collect::<Result<Vec<ProbabilityDistribution>>>()?;
        Ok(soft_vote(&dists, &self.ensemble)?.combined.positive())
    }

    /// Attribution for `target`, a native model id or `ensemble`. Linear
    /// models get exact attributions in margin space against the training
    /// mean; naive Bayes and the ensemble get masking attributions of
    /// `P(positive)` over the preprocessed tokens.
    pub fn explain(&self, text: &str, target: &str) -> Result<Attribution> {
        let tokens = self.tokens(text);
        if target == ENSEMBLE_ID {
            let predict = |t: &TokenSequence| self.ensemble_positive(t);
            return explain::explain_by_masking(&predict, &tokens, &self.masking);
        }
        let model = self.run.get(target).ok_or_else(|| {
            Error::Config(format!(
                "cannot explain unknown model `{target}`; choose one of {:?} or `{ENSEMBLE_ID}`",
                self.run.ids()
            ))
        })?;
        match model.linear() {
            Some(linear) => {
                let x = features::transform(&tokens, &self.run.vocabulary);
                explain::explain_linear(linear, &x, &self.run.background, Some(&self.run.vocabulary))
            }
            None => {
                let predict = |t: &TokenSequence| {
                    model
                        .predict_proba(&features::transform(t, &self.run.vocabulary))
                        .map(|p| p.positive())
                };
                explain::explain_by_masking(&predict, &tokens, &self.masking)
            }
        }
    }
}

/// The configured ensemble restricted to `natives`, keeping each member's
/// configured weight. Falls back to equal weights when no configured member
/// is native.
fn native_ensemble(cfg: &RunConfig, natives: &[String]) -> Result<EnsembleConfig> {
    let e = &cfg.ensemble;
    let weight = |i: usize| e.weights.get(i).copied().unwrap_or(1.0);
    let (members, weights): (Vec<String>, Vec<f64>) = if e.models.is_empty() {
        natives
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), weight(i)))
            .unzip()
    } else {
        e.models
            .iter()
            .enumerate()
            .filter(|(_, m)| natives.contains(m))
            .map(|(i, m)| (m.clone(), weight(i)))
            .unzip()
    };
    if members.is_empty() {
        return EnsembleConfig::equal(natives.to_vec());
    }
    EnsembleConfig::new(members, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn natives() -> Vec<String> {
        ["naive_bayes", "logistic_regression", "svm"].map(String::from).to_vec()
    }

    #[test]
    fn native_ensemble_keeps_native_weights() {
        let mut cfg = RunConfig::default();
        cfg.ensemble.models = vec!["roberta".into(), "svm".into(), "naive_bayes".into()];
        cfg.ensemble.weights = vec![5.0, 1.0, 3.0];
        let e = native_ensemble(&cfg, &natives()).unwrap();
        assert_eq!(e.model_ids(), &["svm".to_string(), "naive_bayes".to_string()]);
        assert_eq!(e.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn native_ensemble_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(native_ensemble(&cfg, &natives()).unwrap().len(), 3);
        let mut cfg = RunConfig::default();
        cfg.ensemble.models = vec!["roberta".into()];
        assert_eq!(native_ensemble(&cfg, &natives()).unwrap().len(), 3);
        let mut cfg = RunConfig::default();
        cfg.ensemble.weights = vec![2.0, 1.0, 1.0, 4.0];
        assert_eq!(native_ensemble(&cfg, &natives()).unwrap().weights(), &[0.5, 0.25, 0.25]);
    }
}
