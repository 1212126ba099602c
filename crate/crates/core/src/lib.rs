//! Graph-prior prediction heads for tabular data.
//!
//! Rows are embedded by a frozen backbone (or the hashed stub in [`embed`]),
//! linked to anchors for their feature values in a static bipartite graph,
//! and classified or regressed by a small attention message-passing head.
//! [`stats`] compares methods across datasets.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

pub mod dataset;
pub mod embed;
pub mod gnnhead;
pub mod graph;
pub mod pipeline;
pub mod provenance;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod tensor;
pub mod train;

pub use dataset::{ProcessedDataset, Schema, Split, TabularDataset, Task};
pub use embed::EmbeddingMatrix;
pub use gnnhead::{GraphHeadConfig, HeadOptions, HeadTask, MessageGraph};
pub use graph::{BipartiteGraph, GraphOptions};
pub use scalar::{Precision, Scalar};
pub use train::{RunResult, TrainConfig};

pub type Matrix32 = tensor::Matrix<f32>;
pub type Matrix64 = tensor::Matrix<f64>;
pub type GraphHeadParams32 = gnnhead::GraphHeadParams<f32>;
pub type GraphHeadParams64 = gnnhead::GraphHeadParams<f64>;
pub type ForwardCache32 = gnnhead::ForwardCache<f32>;
pub type ForwardCache64 = gnnhead::ForwardCache<f64>;
pub type GradientSet32 = gnnhead::GradientSet<f32>;
pub type GradientSet64 = gnnhead::GradientSet<f64>;
pub type AdamState32 = train::AdamState<f32>;
pub type AdamState64 = train::AdamState<f64>;
