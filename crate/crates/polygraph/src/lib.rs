//! Direction-aware, polynomially expressive graph learning for heterophilic
//! node classification: sparse directed graphs, homophily analytics, a small
//! reverse-mode tensor engine, GCN/GAT/directional attention layers, the
//! gated polynomial message-passing networks built on them, synthetic data
//! generation and a seeded multi-run training harness.

pub mod config;
pub mod datagen;
pub mod dataset;
pub mod gradcheck;
pub mod graph;
pub mod homophily;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod polycheck;
pub mod tensor;
pub mod train;
#[cfg(test)]
pub(crate) mod testsupport;
