//! Writer attribution from document images.
//!
//! The pipeline runs from annotated regions ([`geometry`]) through seeded,
//! augmented tile datasets ([`dataset`]) and pluggable classifiers
//! ([`harness`]) to confusion-matrix similarity ([`similarity`]) and a
//! two-step author vote ([`vote`]). [`experiment`] drives the whole grid and
//! [`report`] renders its ledger.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod jsonio;
pub mod report;
pub mod similarity;
pub mod steps;
pub mod svg;
pub mod synthetic;
pub mod vote;

pub use error::{Error, Result};
