//! Multi-contrast MRI risk stratification for intraductal papillary mucinous
//! neoplasms (IPMN).
//!
//! The crate covers the full batch pipeline: volume I/O and geometry
//! ([`volume`]), intensity cleaning and Nyul standardization ([`preprocess`]),
//! the 107-feature radiomics vector ([`radiomics`]), clinical screening
//! statistics ([`stats`]), a from-scratch multiclass gradient-boosted tree
//! classifier ([`gbt`]), confidence-gated decision fusion ([`fusion`]),
//! evaluation metrics ([`metrics`]), a synthetic multi-center study generator
//! ([`phantom`]) and the end-to-end driver ([`pipeline`]).
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results are bit-identical either way.

// Validation uses `!(x > 0.0)` on purpose: NaN must fail it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod gbt;
pub mod metrics;
pub mod par;
pub mod percentile;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod radiomics;
pub mod stats;
pub mod table;
pub mod volume;

pub use error::{Error, Result};
