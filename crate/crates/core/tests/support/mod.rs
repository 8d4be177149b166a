//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

pub mod metrics;
pub mod radiomics;
pub mod stats;
