use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::GspnConfig;
use super::params::GspnParams;
use crate::error::{GspnError, Result};
use crate::graph::AttributeSchema;
use crate::readout::ReadoutParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate a trained model. Stored as JSON; floats
/// round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schema: AttributeSchema,
    pub config: GspnConfig,
    pub params: GspnParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutParams>,
}

impl Checkpoint {
    pub fn new(schema: AttributeSchema, config: GspnConfig, params: GspnParams) -> Result<Self> {
        params.validate(&schema, &config)?;
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            schema,
            config,
            params,
            readout: None,
        })
    }

    pub fn with_readout(mut self, readout: ReadoutParams) -> Result<Self> {
        readout.validate(self.config.states, self.config.layers)?;
        self.readout = Some(readout);
        Ok(self)
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GspnError::Checkpoint(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(|e| GspnError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(GspnError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        ck.params.validate(&ck.schema, &ck.config)?;
        if let Some(r) = &ck.readout {
            r.validate(ck.config.states, ck.config.layers)?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|source| GspnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| GspnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&s)
    }

    /// Fails unless `schema` matches the one the model was trained on.
    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        if &self.schema != schema {
            return Err(GspnError::InvalidSchema(
                "dataset schema does not match the checkpoint".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AttributeKind;
    use crate::model::params::random_params;
    use crate::sampling::seeded;

    #[test]
    fn json_round_trip_is_exact() {
        let schema = AttributeSchema::new(vec![
            AttributeKind::Continuous,
            AttributeKind::Categorical { arity: 4 },
        ])
        .unwrap();
        let cfg = GspnConfig {
            layers: 3,
            states: 4,
            shortcut: true,
            ..Default::default()
        };
        let params = random_params(&schema, &cfg, &mut seeded(9));
        let ck = Checkpoint::new(schema, cfg, params).unwrap();
        let back = Checkpoint::from_json_str(&ck.to_json_string().unwrap()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn rejects_other_versions() {
        let schema = AttributeSchema::new(vec![AttributeKind::Continuous]).unwrap();
        let cfg = GspnConfig::default();
        let params = random_params(&schema, &cfg, &mut seeded(1));
        let mut ck = Checkpoint::new(schema, cfg, params).unwrap();
        ck.format_version = 99;
        assert!(Checkpoint::from_json_str(&ck.to_json_string().unwrap()).is_err());
    }
}
