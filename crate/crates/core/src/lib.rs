//! Probing toolkit for implicit-causality effects in causal language models.
//!
//! The crate generates balanced referential and relative-clause stimulus sets
//! from bundled lexicons, scores them with pluggable language-model backends,
//! and measures surprisal, layer-wise representational similarity and cloze
//! singular share. A small statistics layer (OLS with item effects, post-hoc
//! t-tests) and a reporting layer (tables, figures, manifests) sit on top.
//!
//! Module map:
//!
//! * [`lexicon`] verb norms, noun pairs, RC items, vocabularies;
//! * [`stimgen`] stimulus generation;
//! * [`backend`] the language-model abstraction and built-in backends;
//! * [`measures`] surprisal, similarity and cloze measurements;
//! * [`experiments`] the four experiment drivers;
//! * [`stats`] linear models and t-tests;
//! * [`report`] tables, figures, manifests and configuration files.

pub mod backend;
pub mod experiments;
pub mod lexicon;
pub mod measures;
pub mod report;
pub mod selfcheck;
pub mod stats;
pub mod stimgen;

mod util;

use thiserror::Error;

pub const TOOLKIT_VERSION: &str = concat!("icprobe ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] lexicon::LexiconError),
    #[error(transparent)]
    Stimulus(#[from] stimgen::StimError),
    #[error(transparent)]
    Backend(#[from] backend::BackendError),
    #[error(transparent)]
    Measure(#[from] measures::MeasureError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Experiment(#[from] experiments::ExperimentError),
}

pub type Result<T> = std::result::Result<T, Error>;
