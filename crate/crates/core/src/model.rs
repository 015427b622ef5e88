use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{NetworkConfig, NetworkParams};
use crate::pipeline::EsSettings;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub network: NetworkConfig,
    pub es: EsSettings,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.use_es != self.es.enabled {
            return Err(crate::Error::Config(
                "network.use_es and es.enabled must agree".into(),
            ));
        }
        if !(self.es.i_alpha.is_finite() && self.es.i_beta.is_finite()) {
            return Err(crate::Error::Config("initial ES logits must be finite".into()));
        }
        Ok(())
    }
}

/// A network together with the ES settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: NetworkParams,
}

impl Model {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(Model {
            config: config.clone(),
            params: NetworkParams::init(&config.network, rng)?,
        })
    }
}
