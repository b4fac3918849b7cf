//! End-to-end runs: split, fit features, train native models, score,
//! ensemble and evaluate. Every stage persists its outputs in the run's
//! output directory, described by a [`RunManifest`].

pub mod config;
pub mod manifest;
mod predictor;
mod run;

pub use config::{Granularity, RunConfig, ENSEMBLE_ID, ENV_PREFIX, NATIVE_MODELS};
pub use manifest::{
    model_file, probability_file, ArtifactEntry, OutputLock, RunManifest, SplitIds, StageTiming,
};
pub use predictor::Predictor;
pub use run::{
    ablate, fuse_probability_files, load_corpus, load_run, predict_native, run_ablation,
    run_evaluate, run_prepare, run_train, score_units, scoring_units, tokenize_all, train_native,
    write_verdicts, AblationReport, AblationRow, Corpus, NativeModels, Toggle, BASELINE_VARIANT,
};
