//! Static root-cause categorization of known flaky Java tests.
//!
//! The pipeline mirrors the usual offline workflow: pull the test source at
//! its pinned commit ([`corpus`]), lex and prune it down to the test method
//! ([`javalex`]), vectorize ([`embed`]), project to a low dimension
//! ([`reduce`]), rebalance training folds ([`sample`]), classify
//! ([`classify`]) and score with macro F1 and flakiness detection capacity
//! ([`metrics`]). [`tune`] drives Gaussian-process Bayesian optimization of the
//! random forest and [`harness`] orchestrates cross-validated experiments.

pub mod classify;
pub mod corpus;
pub mod embed;
pub mod harness;
pub mod javalex;
pub mod linalg;
pub mod metrics;
pub mod reduce;
pub mod sample;
pub mod tune;

pub use corpus::{CategoryLabel, Corpus, TestRecord};
pub use embed::{EmbeddingMatrix, EmbeddingSource, Vocabulary};
pub use metrics::{ConfusionMatrix, MetricPair, MetricReport};
