//! File formats and pipeline stages behind the `relseq` binary.

pub mod checkpoint;
pub mod commands;
pub mod container;
pub mod dataset;
pub mod pgm;
pub mod pipeline;
