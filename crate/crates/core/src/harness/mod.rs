//! Dataset evaluation.

pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod report;
