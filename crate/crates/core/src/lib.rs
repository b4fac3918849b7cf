//! Classical sentiment classification: text preprocessing, TF-IDF n-gram
//! features, naive Bayes / logistic regression / linear SVM, weighted soft
//! voting over any number of probability sources, evaluation metrics and
//! additive attributions.
//!
//! Class order is `[negative, positive]` everywhere: in probability vectors,
//! in probability files and in model outputs.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod external;
pub mod features;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod textprep;

pub use corpus::{Label, LabeledDocument};
pub use ensemble::{EnsembleConfig, ProbabilityDistribution, Verdict};
pub use error::{Error, ErrorKind, Result};
pub use features::{SparseVector, Vocabulary};
pub use textprep::TokenSequence;
