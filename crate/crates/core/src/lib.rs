//! Curation and evaluation engine for webly-annotated short-video corpora.
//!
//! The crate covers the whole offline flow: loading a video manifest with
//! precomputed sidecar annotations ([`ingest`]), automated cleaning
//! ([`clean`]), neighbor-voting preselection ([`preselect`]), the
//! event-sourced manual annotation workflow ([`annotate`]), evaluation
//! metrics for tagging, retrieval and captioning ([`metrics`]) and the
//! visual-token reduction layer ([`vtr`]).

pub mod annotate;
pub mod clean;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod preselect;
pub mod vtr;

pub use error::{Error, Result};
