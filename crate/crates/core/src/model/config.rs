use serde::{Deserialize, Serialize};

use crate::error::{GspnError, Result};

/// Architecture and training hyper-parameters of a GSPN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GspnConfig {
    /// Height `L` of the computational trees (message-passing layers).
    pub layers: usize,
    /// Mixture states `C` of every sum unit.
    pub states: usize,
    /// Use the average of the emissions at heights `1..L` at height `L`.
    pub shortcut: bool,
    pub learning_rate: f64,
    /// Graphs per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for GspnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            states: 5,
            shortcut: false,
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl GspnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GspnError::InvalidParameter(m.into()));
        if self.layers < 1 {
            return bad("layers must be at least 1");
        }
        if self.states < 1 {
            return bad("states must be at least 1");
        }
        if self.shortcut && self.layers < 2 {
            return bad("shortcut emissions need at least 2 layers");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}
