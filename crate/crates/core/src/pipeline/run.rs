use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Granularity, RunConfig, ENSEMBLE_ID, NATIVE_MODELS};
use super::manifest::{
    model_file, probability_file, OutputLock, RunManifest, SplitIds, StageTiming, ABLATION_FILE,
    REPORTS_FILE, TEST_MATRIX_FILE, TRAIN_MATRIX_FILE, VERDICTS_FILE, VOCABULARY_FILE,
};
use crate::corpus::{self, Label, LabeledDocument};
use crate::ensemble::{
    aggregate_sentences, batch_vote, EnsembleConfig, ProbabilityDistribution, SentenceAggregation,
    VerdictRecord,
};
use crate::error::{Error, Result};
use crate::external::{self, PredictionTable};
use crate::features::{self, SparseVector, Vocabulary};
use crate::metrics::{self, EvaluationReport, ReportBundle};
use crate::models::{
    self, CalibratedSvm, ModelArtifact, NativeModel, ProbabilisticClassifier,
};
use crate::textprep::{self, PrepConfig, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
}

impl Corpus {
    pub fn split_ids(&self) -> SplitIds {
        SplitIds {
            train: self.train.iter().map(|d| d.id).collect(),
            test: self.test.iter().map(|d| d.id).collect(),
        }
    }
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let c = &cfg.corpus;
    match (&c.train_path, &c.test_path, &c.path) {
        (Some(train), Some(test), _) => Ok(Corpus {
            train: corpus::load_csv(train)?.0,
            test: corpus::load_csv(test)?.0,
        }),
        (None, None, Some(path)) => {
            let (docs, _) = corpus::load_csv(path)?;
            let (train, test) = corpus::split(&docs, &cfg.split)?;
            Ok(Corpus { train, test })
        }
        _ => Err(Error::Config(
            "set corpus.path, or both corpus.train_path and corpus.test_path".into(),
        )),
    }
}

pub fn tokenize_all(docs: &[LabeledDocument], prep: &PrepConfig) -> Vec<TokenSequence> {
    docs.par_iter()
        .map(|d| textprep::preprocess(&d.text, prep))
        .collect()
}

/// Fitted vocabulary and the three native models.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeModels {
    pub vocabulary: Vocabulary,
    /// In [`NATIVE_MODELS`] order.
    pub models: Vec<(String, NativeModel)>,
    /// Mean training vector.
    pub background: SparseVector,
}

impl NativeModels {
    pub fn ids(&self) -> Vec<String> {
        self.models.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&NativeModel> {
        self.models.iter().find(|(m, _)| m == id).map(|(_, m)| m)
    }
}

#[derive(Debug, Default)]
struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Files written by a stage, removed again if the stage fails.
struct Written<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Written<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            names: Vec::new(),
        }
    }

    fn add(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn finish<T>(self, result: Result<T>) -> Result<T> {
        if result.is_err() {
            for name in &self.names {
                let _ = std::fs::remove_file(self.dir.join(name));
            }
        }
        result
    }
}

fn mean_vector(vectors: &[SparseVector], n_features: usize) -> Result<SparseVector> {
    let mut sum = vec![0.0; n_features];
    for v in vectors {
        for (j, w) in v.iter() {
            sum[j] += w;
        }
    }
    let n = vectors.len().max(1) as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    SparseVector::from_dense(&sum)
}

/// Fits the vocabulary on `train` and trains all native models.
pub fn train_native(train: &[LabeledDocument], cfg: &RunConfig) -> Result<NativeModels> {
    train_native_staged(train, cfg, &mut Stages::default())
}

fn train_native_staged(
    train: &[LabeledDocument],
    cfg: &RunConfig,
    stages: &mut Stages,
) -> Result<NativeModels> {
    let tokens = stages.run("preprocess", || Ok(tokenize_all(train, &cfg.prep)))?;
    let (vocabulary, vectors) = stages.run("vectorize", || {
        let vocabulary = features::fit(&tokens, &cfg.vectorizer)?;
        let vectors = features::transform_all(&tokens, &vocabulary);
        Ok((vocabulary, vectors))
    })?;
    let n = vocabulary.len();
    let background = mean_vector(&vectors, n)?;
    let data: Vec<(SparseVector, Label)> = vectors
        .into_iter()
        .zip(train.iter().map(|d| d.label))
        .collect();
    let tc = &cfg.train;
    let (nb, (lr, svm)) = stages.run("train", || {
        let (nb, (lr, svm)) = rayon::join(
            || models::train_nb(&data, n, tc).map_err(|e| e.in_stage("train naive_bayes")),
            || {
                rayon::join(
                    || {
                        models::train_logistic(&data, n, tc)
                            .map_err(|e| e.in_stage("train logistic_regression"))
                    },
                    || models::train_svm(&data, n, tc).map_err(|e| e.in_stage("train svm")),
                )
            },
        );
        Ok((nb?, (lr?, svm?)))
    })?;
    let (svm, calibrator) = svm;
    let models = vec![
        NativeModel::NaiveBayes(nb),
        NativeModel::Logistic(lr),
        NativeModel::Svm(CalibratedSvm {
            model: svm,
            calibrator,
        }),
    ];
    Ok(NativeModels {
        vocabulary,
        models: NATIVE_MODELS
            .iter()
            .map(|s| s.to_string())
            .zip(models)
            .collect(),
        background,
    })
}

/// Feature vectors a document is scored on: the whole review, or each
/// sentence when scoring at sentence level.
pub fn scoring_units(
    text: &str,
    prep: &PrepConfig,
    vocabulary: &Vocabulary,
    granularity: Granularity,
) -> Vec<SparseVector> {
    let review = || vec![features::transform(&textprep::preprocess(text, prep), vocabulary)];
    match granularity {
        Granularity::Review => review(),
        Granularity::Sentence => {
            let sentences: Vec<SparseVector> = textprep::split_sentences(text)
                .iter()
                .map(|s| features::transform(&textprep::preprocess(s, prep), vocabulary))
                .collect();
            if sentences.is_empty() {
                review()
            } else {
                sentences
            }
        }
    }
}

pub fn score_units(
    model: &dyn ProbabilisticClassifier,
    units: &[SparseVector],
    aggregation: SentenceAggregation,
) -> Result<ProbabilityDistribution> {
    if let [single] = units {
        return model.predict_proba(single);
    }
    let dists = units
        .iter()
        .map(|u| model.predict_proba(u))
        .collect::<Result<Vec<_>>>()?;
    aggregate_sentences(&dists, aggregation)
}

/// One column of distributions per native model, rows in document order.
pub fn predict_native(
    run: &NativeModels,
    docs: &[LabeledDocument],
    prep: &PrepConfig,
    granularity: Granularity,
    aggregation: SentenceAggregation,
) -> Result<Vec<Vec<ProbabilityDistribution>>> {
    let units: Vec<Vec<SparseVector>> = docs
        .par_iter()
        .map(|d| scoring_units(&d.text, prep, &run.vocabulary, granularity))
        .collect();
    run.models
        .iter()
        .map(|(_, model)| {
            units
                .par_iter()
                .map(|u| score_units(model, u, aggregation))
                .collect()
        })
        .collect()
}

fn evaluate_columns(
    ids: &[String],
    columns: &[Vec<ProbabilityDistribution>],
    truth: &[Label],
) -> Result<Vec<EvaluationReport>> {
    ids.iter()
        .zip(columns)
        .map(|(id, col)| metrics::evaluate(id, col, truth))
        .collect()
}

fn write_manifest(
    mut manifest: RunManifest,
    dir: &Path,
    names: &[String],
    stages: Stages,
) -> Result<RunManifest> {
    for name in names {
        manifest.record(dir, name)?;
    }
    if RunManifest::path(dir).is_file() {
        if let Ok(previous) = RunManifest::load(dir) {
            manifest.carry_over(dir, &previous);
        }
    }
    manifest.timings = stages.timings;
    manifest.save(dir)?;
    Ok(manifest)
}

/// Splits the corpus, fits the vocabulary and exports both sides as sparse
/// feature matrices for external trainers.
pub fn run_prepare(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    let _lock = OutputLock::acquire(dir)?;
    let mut stages = Stages::default();
    let corpus = stages.run("load", || load_corpus(cfg))?;
    let train_tokens = stages.run("preprocess", || Ok(tokenize_all(&corpus.train, &cfg.prep)))?;
    let vocabulary = stages.run("vectorize", || features::fit(&train_tokens, &cfg.vectorizer))?;
    let manifest = RunManifest::new(cfg.clone(), corpus.split_ids(), vocabulary.content_hash());

    let mut written = Written::new(dir);
    let result = (|| {
        stages.run("export", || {
            vocabulary.save(written.add(VOCABULARY_FILE))?;
            let test_tokens = tokenize_all(&corpus.test, &cfg.prep);
            for (name, docs, tokens) in [
                (TRAIN_MATRIX_FILE, &corpus.train, &train_tokens),
                (TEST_MATRIX_FILE, &corpus.test, &test_tokens),
            ] {
                let vectors = features::transform_all(tokens, &vocabulary);
                let rows: Vec<(u64, &SparseVector)> =
                    docs.iter().map(|d| d.id).zip(vectors.iter()).collect();
                features::write_feature_matrix(written.add(name), &rows, &vocabulary)?;
            }
            Ok(())
        })?;
        let names = written.names.clone();
        write_manifest(manifest, dir, &names, stages)
    })();
    written.finish(result)
}

/// Trains the native models and writes the vocabulary, one artifact per
/// model and the run manifest. A failed run leaves none of its artifacts
/// behind.
pub fn run_train(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    let _lock = OutputLock::acquire(dir)?;
    let mut stages = Stages::default();
    let corpus = stages.run("load", || load_corpus(cfg))?;
    let run = train_native_staged(&corpus.train, cfg, &mut stages)?;
    let hash = run.vocabulary.content_hash();
    let manifest = RunManifest::new(cfg.clone(), corpus.split_ids(), hash.clone());

    let mut written = Written::new(dir);
    let result = (|| {
        stages.run("persist", || {
            run.vocabulary.save(written.add(VOCABULARY_FILE))?;
            for (id, model) in &run.models {
                let mut artifact = ModelArtifact::new(id, &hash, model.clone());
                if model.linear().is_some() {
                    artifact = artifact.with_background(run.background.clone());
                }
                artifact.save(written.add(&model_file(id)))?;
            }
            Ok(())
        })?;
        let names = written.names.clone();
        write_manifest(manifest, dir, &names, stages)
    })();
    written.finish(result)
}

/// Loads the trained vocabulary and models of the run in `dir`, checking
/// every file against the manifest first.
pub fn load_run(dir: &Path) -> Result<(RunManifest, NativeModels)> {
    let manifest = RunManifest::load(dir)?;
    let vocab_path = manifest.verify(dir, VOCABULARY_FILE)?;
    let vocabulary = Vocabulary::load(&vocab_path)?;
    if vocabulary.content_hash() != manifest.vocabulary_hash {
        return Err(Error::Integrity {
            path: vocab_path,
            message: "vocabulary hash differs from the run manifest".into(),
        });
    }
    let mut models = Vec::new();
    let mut background = None;
    for id in NATIVE_MODELS {
        let path = manifest.verify(dir, &model_file(id))?;
        let artifact = ModelArtifact::load(&path, &manifest.vocabulary_hash)?;
        if artifact.model.n_features() != vocabulary.len() {
            return Err(Error::Integrity {
                path,
                message: format!(
                    "model has {} features but the vocabulary has {}",
                    artifact.model.n_features(),
                    vocabulary.len()
                ),
            });
        }
        background = background.or(artifact.background);
        models.push((id.to_string(), artifact.model));
    }
    Ok((
        manifest,
        NativeModels {
            vocabulary,
            models,
            background: background.unwrap_or_default(),
        },
    ))
}

/// Scores the test split with every native model and every configured
/// probability file, then with the ensemble. Writes per-model probability
/// files, `verdicts.jsonl` and `reports.json`; training artifacts are
/// re-verified afterwards.
pub fn run_evaluate(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    let _lock = OutputLock::acquire(dir)?;
    let mut stages = Stages::default();
    let (manifest, run) = stages.run("load artifacts", || load_run(dir))?;
    let corpus = stages.run("load", || load_corpus(cfg))?;
    if corpus.split_ids().test != manifest.split.test {
        return Err(Error::InvalidInput(format!(
            "the configured corpus and split yield a different test set than the run in {}; \
             retrain or restore the training-time corpus settings",
            dir.display()
        )));
    }
    let ids: Vec<u64> = corpus.test.iter().map(|d| d.id).collect();
    let truth: Vec<Label> = corpus.test.iter().map(|d| d.label).collect();

    let native_columns = stages.run("predict", || {
        predict_native(
            &run,
            &corpus.test,
            &manifest.config.prep,
            cfg.ensemble.granularity,
            cfg.ensemble.aggregation,
        )
    })?;
    stages.run("write probabilities", || {
        for ((id, _), column) in run.models.iter().zip(&native_columns) {
            let table = PredictionTable::new(id.clone(), ids.iter().copied().zip(column.iter().copied()))?;
            external::write_probability_file(dir.join(probability_file(id)), &table)?;
        }
        Ok(())
    })?;

    let mut names = run.ids();
    let mut columns = native_columns;
    stages.run("external", || {
        let tables = cfg
            .external
            .files
            .iter()
            .map(external::load_probability_file)
            .collect::<Result<Vec<_>>>()?;
        for table in &tables {
            if names.contains(&table.model) {
                return Err(Error::InvalidInput(format!(
                    "model id `{}` is used by more than one probability source",
                    table.model
                )));
            }
            names.push(table.model.clone());
        }
        let rows = external::align(&tables, &ids)?;
        for k in 0..tables.len() {
            columns.push(rows.iter().map(|row| row[k]).collect());
        }
        Ok(())
    })?;

    let mut reports = stages.run("evaluate", || evaluate_columns(&names, &columns, &truth))?;
    let ensemble = cfg.ensemble_config(&names)?;
    let verdicts = stages.run("ensemble", || {
        let member_columns: Vec<&Vec<ProbabilityDistribution>> = ensemble
            .model_ids()
            .iter()
            .map(|m| &columns[names.iter().position(|n| n == m).expect("checked member")])
            .collect();
        let matrix: Vec<Vec<ProbabilityDistribution>> = (0..ids.len())
            .map(|i| member_columns.iter().map(|c| c[i]).collect())
            .collect();
        batch_vote(&matrix, &ensemble)
    })?;
    let combined: Vec<ProbabilityDistribution> = verdicts.iter().map(|v| v.combined).collect();
    reports.push(metrics::evaluate(ENSEMBLE_ID, &combined, &truth)?);

    let records: Vec<VerdictRecord> = ids
        .iter()
        .zip(&verdicts)
        .map(|(&id, v)| VerdictRecord::new(id, v, &ensemble))
        .collect();
    write_verdicts(&dir.join(VERDICTS_FILE), &records)?;
    let bundle = ReportBundle { reports };
    bundle.save(dir.join(REPORTS_FILE))?;
    manifest.verify_all(dir)?;
    Ok(bundle)
}

pub fn write_verdicts(path: &Path, records: &[VerdictRecord]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::json("verdict", e))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Soft-votes probability files over the ids of the first file. Every other
/// file must cover those ids. `weights` follow file order; `None` means equal
/// weights.
pub fn fuse_probability_files(
    files: &[PathBuf],
    weights: Option<Vec<f64>>,
) -> Result<(EnsembleConfig, Vec<VerdictRecord>)> {
    let tables = files
        .iter()
        .map(external::load_probability_file)
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = tables.first() else {
        return Err(Error::Config("no probability files given".into()));
    };
    let models: Vec<String> = tables.iter().map(|t| t.model.clone()).collect();
    if let Some(dup) = models.iter().enumerate().find(|(i, m)| models[..*i].contains(m)) {
        return Err(Error::InvalidInput(format!(
            "model id `{}` appears in more than one file",
            dup.1
        )));
    }
    let ensemble = match weights {
        Some(w) => EnsembleConfig::new(models, w)?,
        None => EnsembleConfig::equal(models)?,
    };
    let ids: Vec<u64> = first.by_id.keys().copied().collect();
    let rows = external::align(&tables, &ids)?;
    let verdicts = batch_vote(&rows, &ensemble)?;
    let records = ids
        .iter()
        .zip(&verdicts)
        .map(|(&id, v)| VerdictRecord::new(id, v, &ensemble))
        .collect();
    Ok((ensemble, records))
}

/// Component switched off in an ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    /// Disable negation-scope marking.
    Negation,
    /// Restrict features to unigrams.
    Ngrams,
}

impl Toggle {
    pub const ALL: [Toggle; 2] = [Toggle::Negation, Toggle::Ngrams];

    pub fn variant_name(self) -> &'static str {
        match self {
            Toggle::Negation => "without_negation",
            Toggle::Ngrams => "unigrams_only",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut cfg = cfg.clone();
        match self {
            Toggle::Negation => cfg.prep.mark_negation = false,
            Toggle::Ngrams => {
                cfg.vectorizer.ngram_min = 1;
                cfg.vectorizer.ngram_max = 1;
            }
        }
        cfg
    }
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negation" => Ok(Toggle::Negation),
            "ngrams" | "n-grams" => Ok(Toggle::Ngrams),
            other => Err(Error::Config(format!(
                "unknown ablation toggle `{other}`; expected negation or ngrams"
            ))),
        }
    }
}

pub const BASELINE_VARIANT: &str = "baseline";

/// One model under one variant. Deltas are baseline minus variant, so a
/// positive delta means the disabled component helped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
    pub accuracy_delta: f64,
    pub f1_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str, model: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.model == model)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<18}  {:<20}  {:>8}  {:>9}  {:>8}  {:>9}\n",
            "Variant", "Model", "Accuracy", "Acc delta", "F1", "F1 delta"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18}  {:<20}  {:>8.4}  {:>+9.4}  {:>8.4}  {:>+9.4}\n",
                r.variant, r.model, r.accuracy, r.accuracy_delta, r.f1, r.f1_delta
            ));
        }
        out
    }
}

fn native_reports(corpus: &Corpus, cfg: &RunConfig) -> Result<Vec<EvaluationReport>> {
    let run = train_native(&corpus.train, cfg)?;
    let columns = predict_native(
        &run,
        &corpus.test,
        &cfg.prep,
        cfg.ensemble.granularity,
        cfg.ensemble.aggregation,
    )?;
    let truth: Vec<Label> = corpus.test.iter().map(|d| d.label).collect();
    evaluate_columns(&run.ids(), &columns, &truth)
}

/// Ablation on an already loaded corpus; nothing is written.
pub fn ablate(corpus: &Corpus, cfg: &RunConfig, toggles: &BTreeSet<Toggle>) -> Result<AblationReport> {
    let baseline = native_reports(corpus, cfg).map_err(|e| e.in_stage("ablation baseline"))?;
    let mut rows: Vec<AblationRow> = baseline
        .iter()
        .map(|r| AblationRow {
            variant: BASELINE_VARIANT.into(),
            model: r.model.clone(),
            accuracy: r.accuracy,
            f1: r.f1,
            accuracy_delta: 0.0,
            f1_delta: 0.0,
        })
        .collect();
    for &toggle in toggles {
        let reports = native_reports(corpus, &toggle.apply(cfg))
            .map_err(|e| e.in_stage(toggle.variant_name()))?;
        for (base, r) in baseline.iter().zip(reports) {
            rows.push(AblationRow {
                variant: toggle.variant_name().into(),
                accuracy_delta: base.accuracy - r.accuracy,
                f1_delta: base.f1 - r.f1,
                model: r.model,
                accuracy: r.accuracy,
                f1: r.f1,
            });
        }
    }
    Ok(AblationReport { rows })
}

/// Retrains with each toggled component disabled and writes
/// `ablation.json`.
pub fn run_ablation(cfg: &RunConfig, toggles: &BTreeSet<Toggle>) -> Result<AblationReport> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    let _lock = OutputLock::acquire(dir)?;
    let corpus = load_corpus(cfg).map_err(|e| e.in_stage("load"))?;
    let report = ablate(&corpus, cfg, toggles)?;
    let path = dir.join(ABLATION_FILE);
    let mut bytes =
        serde_json::to_vec_pretty(&report).map_err(|e| Error::json("ablation report", e))?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
