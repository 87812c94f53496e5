//! Graph-induced sum-product networks.
//!
//! A hierarchy of Naive Bayes sum-product networks unfolded over the
//! computational trees of a graph. Each vertex's tree is evaluated bottom-up
//! by message passing: posteriors of the mixture states at height `l - 1`
//! are aggregated through a transition matrix into the prior of height `l`.
//! Training maximizes a vertex-wise pseudo log-likelihood by gradient ascent.
//! Missing attributes are marginalized exactly, which enables conditional
//! queries, imputation and what-if analyses on partially observed graphs.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod graph;
pub mod kmeans;
pub mod mask;
pub mod model;
pub mod queries;
pub mod readout;
pub mod sampling;
pub mod spn;
pub mod synth;

pub use error::{GspnError, Result};
pub use graph::{AttributeKind, AttributeSchema, Dataset, Graph};
