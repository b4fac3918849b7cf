//! Run configuration.
//!
//! Config files are TOML and accept dotted keys, so a flat file such as
//!
//! ```toml
//! corpus.path = "imdb.csv"
//! vectorizer.max_features = 10000
//! ensemble.weights = [1.0, 1.0, 2.0]
//! ```
//!
//! is the usual form. Every key is optional; defaults are listed on each
//! field. Environment variables named `SENTIVOTE_<SECTION>__<KEY>` override
//! the file, e.g. `SENTIVOTE_TRAIN__SEED=7`. Their values are read as TOML
//! values, falling back to a plain string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitSpec;
use crate::ensemble::{EnsembleConfig, SentenceAggregation};
use crate::error::{Error, Result};
use crate::explain::MaskingConfig;
use crate::features::VectorizerConfig;
use crate::models::TrainConfig;
use crate::textprep::PrepConfig;

pub const ENV_PREFIX: &str = "SENTIVOTE_";
pub const ENV_SEPARATOR: &str = "__";

/// Ids of the natively trained models, in report order.
pub const NATIVE_MODELS: [&str; 3] = ["naive_bayes", "logistic_regression", "svm"];
pub const ENSEMBLE_ID: &str = "ensemble";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// One labeled CSV that is split into train and test.
    pub path: Option<PathBuf>,
    /// Pre-split corpus; used instead of `path` when both are set. Ids are
    /// row positions within each file.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

/// Unit that native models score before voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Review,
    /// Score each sentence, then aggregate per review.
    Sentence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Member ids; empty means every native model followed by every external
    /// file in the order listed.
    pub models: Vec<String>,
    /// Weights aligned with the member list; empty means equal weights.
    pub weights: Vec<f64>,
    pub granularity: Granularity,
    pub aggregation: SentenceAggregation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalSection {
    /// Probability files in the JSON Lines wire format.
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("sentivote-run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub split: SplitSpec,
    pub prep: PrepConfig,
    pub vectorizer: VectorizerConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleSection,
    pub external: ExternalSection,
    pub explain: MaskingConfig,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads a config file, applies environment overrides and resolves
    /// relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, std::env::vars(), base)
    }

    /// Defaults plus environment overrides, with relative paths left as is.
    pub fn from_env() -> Result<Self> {
        Self::from_toml_str("", std::env::vars(), Path::new(""))
    }

    pub fn from_toml_str(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
        base: &Path,
    ) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut table, &key[ENV_PREFIX.len()..], &value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus.path,
            &mut self.corpus.train_path,
            &mut self.corpus.test_path,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        self.external.files.iter_mut().for_each(resolve);
        resolve(&mut self.output.dir);
    }

    /// Uses one seed for the split, training and masking explanations.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.train.seed = seed;
        self.explain.seed = seed;
    }

    /// Checks parameters and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.prep.validate()?;
        self.vectorizer.validate()?;
        self.train.validate()?;
        let corpus = &self.corpus;
        let inputs: Vec<&PathBuf> = match (&corpus.train_path, &corpus.test_path, &corpus.path) {
            (Some(train), Some(test), _) => vec![train, test],
            (None, None, Some(path)) => vec![path],
            (None, None, None) => {
                return Err(Error::Config(
                    "no corpus configured; set corpus.path or corpus.train_path and corpus.test_path"
                        .into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "corpus.train_path and corpus.test_path must be set together".into(),
                ))
            }
        };
        for path in inputs.into_iter().chain(&self.external.files) {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        if !self.ensemble.weights.is_empty() {
            let members = if self.ensemble.models.is_empty() {
                NATIVE_MODELS.len() + self.external.files.len()
            } else {
                self.ensemble.models.len()
            };
            if members != self.ensemble.weights.len() {
                return Err(Error::Config(format!(
                    "ensemble.weights has {} entries for {members} models",
                    self.ensemble.weights.len()
                )));
            }
        }
        Ok(())
    }

    /// Ensemble over the given available model ids. Configured members must
    /// all be available.
    pub fn ensemble_config(&self, available: &[String]) -> Result<EnsembleConfig> {
        let members = if self.ensemble.models.is_empty() {
            available.to_vec()
        } else {
            for m in &self.ensemble.models {
                if !available.contains(m) {
                    return Err(Error::Config(format!(
                        "ensemble member `{m}` is not among the available models {available:?}"
                    )));
                }
            }
            self.ensemble.models.clone()
        };
        if self.ensemble.weights.is_empty() {
            EnsembleConfig::equal(members)
        } else {
            EnsembleConfig::new(members, self.ensemble.weights.clone())
        }
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key
        .split(ENV_SEPARATOR)
        .map(|part| part.to_ascii_lowercase())
        .collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!(
            "malformed override {ENV_PREFIX}{key}"
        )));
    }
    let value = parse_value(raw);
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut current = table;
    for part in parents {
        let entry = current
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {ENV_PREFIX}{key}: `{part}` is not a section"))
        })?;
    }
    current.insert(last.clone(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, env: &[(&str, &str)]) -> Result<RunConfig> {
        let env = env.iter().map(|(k, v)| (k.to_string(), v.to_string()));
        RunConfig::from_toml_str(text, env, Path::new("/base"))
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse("", &[]).unwrap();
        assert_eq!(cfg.vectorizer, VectorizerConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.output.dir, PathBuf::from("/base/sentivote-run"));
    }

    #[test]
    fn dotted_keys_and_relative_paths() {
        let cfg = parse(
            "corpus.path = \"data/imdb.csv\"\n\
             vectorizer.max_features = 500\n\
             ensemble.weights = [1, 2, 1]\n\
             external.files = [\"/abs/roberta.jsonl\"]\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.corpus.path, Some(PathBuf::from("/base/data/imdb.csv")));
        assert_eq!(cfg.vectorizer.max_features, 500);
        assert_eq!(cfg.ensemble.weights, vec![1.0, 2.0, 1.0]);
        assert_eq!(cfg.external.files, vec![PathBuf::from("/abs/roberta.jsonl")]);
    }

    #[test]
    fn environment_overrides_file() {
        let cfg = parse(
            "train.seed = 1\n",
            &[
                ("SENTIVOTE_TRAIN__SEED", "9"),
                ("SENTIVOTE_PREP__MARK_NEGATION", "false"),
                ("SENTIVOTE_ENSEMBLE__GRANULARITY", "sentence"),
                ("UNRELATED", "x"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert!(!cfg.prep.mark_negation);
        assert_eq!(cfg.ensemble.granularity, Granularity::Sentence);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["vectorizer.max_featurez = 3", "nonsense = 1"] {
            assert!(matches!(parse(text, &[]), Err(Error::Config(_))), "{text}");
        }
        assert!(matches!(
            parse("", &[("SENTIVOTE_TRAIN__BOGUS", "1")]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_corpus_is_rejected_before_work() {
        let cfg = parse("corpus.path = \"/definitely/not/here.csv\"", &[]).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("/definitely/not/here.csv"));
        assert!(matches!(parse("", &[]).unwrap().validate(), Err(Error::Config(_))));
    }

    #[test]
    fn ensemble_membership() {
        let available: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let cfg = parse("", &[]).unwrap();
        assert_eq!(cfg.ensemble_config(&available).unwrap().weights(), &[1.0 / 3.0; 3]);
        let cfg = parse("ensemble.models = [\"c\", \"a\"]\nensemble.weights = [3, 1]", &[]).unwrap();
        let ens = cfg.ensemble_config(&available).unwrap();
        assert_eq!(ens.model_ids(), &["c".to_string(), "a".to_string()]);
        assert_eq!(ens.weights(), &[0.75, 0.25]);
        let cfg = parse("ensemble.models = [\"zzz\"]", &[]).unwrap();
        assert!(cfg.ensemble_config(&available).is_err());
    }
}
