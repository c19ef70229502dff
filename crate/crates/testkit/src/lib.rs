//! Test support shared by the curator crates.
//!
//! The oracles here are deliberately naive: they recompute each metric from
//! its textbook definition with plain loops and exhaustive enumeration, and
//! they do not link against `curator-core`, so agreement with the engine is
//! meaningful.

pub mod fixture;
pub mod oracle;
