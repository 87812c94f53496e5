//! The GSPN hierarchy: parameters, vectorized message passing, pseudo
//! log-likelihood and unsupervised training.

mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::GspnConfig;
pub(crate) use forward::check_possible;
pub use forward::{
    aggregate_prior, build_forward, forward_batch, forward_pass, pseudo_log_likelihood,
    vertex_embeddings, ForwardVars, GraphBatch, LayerPosteriors, PseudoLogLikelihood,
};
pub(crate) use params::initial_emission;
pub use params::{
    random_params, shortcut_emission, shortcut_vars, GspnParams, ModelVars, MAX_INIT_VARIANCE,
    SIGMA_FLOOR,
};
pub(crate) use train::{check_trainable, optimize, split_indices, LoopSettings};
pub use train::{
    mean_pll, total_pll, train_unsupervised, EpochRecord, TrainHistory, VALIDATION_FRACTION,
};
