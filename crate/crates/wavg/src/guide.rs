//! The user guide, included verbatim from the book sources
//! (`book/src/*.md`) so every example in the rendered book is compiled
//! and run by `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/averaging.md")]
pub mod averaging_schemes {}

#[doc = include_str!("../../../book/src/inference.md")]
pub mod online_inference {}

#[doc = include_str!("../../../book/src/optimal-weights.md")]
pub mod optimal_weights {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod experiment_harness {}
