//! Run configuration loaded from JSON, with ablation switches and the
//! desk-scale schedule.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::CellVariant;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{LossConfig, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// No ES: inputs only normalised.
    Ab1,
    /// No shortcut between blocks.
    Ab2,
    Ab3,
    Ab4,
    Ab5,
    /// Plain LSTM cells.
    Ab6,
    /// No level input.
    Ab7,
    /// No level or calendar inputs.
    Ab8,
    /// Only the input window.
    Ab9,
    /// Raw calendar one-hots instead of the embedding.
    Ab10,
}

impl Ablation {
    pub const ALL: [Ablation; 10] = [
        Ablation::Ab1,
        Ablation::Ab2,
        Ablation::Ab3,
        Ablation::Ab4,
        Ablation::Ab5,
        Ablation::Ab6,
        Ablation::Ab7,
        Ablation::Ab8,
        Ablation::Ab9,
        Ablation::Ab10,
    ];

    pub fn apply(self, model: &mut ModelConfig) {
        let net = &mut model.network;
        match self {
            Ablation::Ab1 => {
                net.use_es = false;
                model.es.enabled = false;
            }
            Ablation::Ab2 => net.use_shortcut = false,
            Ablation::Ab3 => net.cell_variant = CellVariant::NoFusion,
            Ablation::Ab4 => net.cell_variant = CellVariant::NoDilation,
            Ablation::Ab5 => net.cell_variant = CellVariant::NoRecent,
            Ablation::Ab6 => net.cell_variant = CellVariant::ClassicLstm,
            Ablation::Ab7 => net.level_input = false,
            Ablation::Ab8 => {
                net.level_input = false;
                net.calendar_input = false;
            }
            Ablation::Ab9 => {
                net.level_input = false;
                net.calendar_input = false;
                net.seasonal_input = false;
            }
            Ablation::Ab10 => net.use_embedding = false,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}, expected ab1..ab10")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let i = Ablation::ALL.iter().position(|a| a == self).expect("listed") + 1;
        write!(f, "ab{i}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// Explicit schedule; when absent the desk or full-scale defaults apply.
    pub schedule: Option<TrainSchedule>,
    pub ablation: Option<Ablation>,
    /// Member seeds; defaults to `1..=ensemble_size`.
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub desk_scale: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: None,
            ablation: None,
            seeds: Vec::new(),
            data: None,
            output: None,
            desk_scale: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> TrainSchedule {
        match (&self.schedule, self.desk_scale) {
            (Some(s), _) => s.clone(),
            (None, true) => TrainSchedule::desk(),
            (None, false) => TrainSchedule::full(),
        }
    }

    /// Model configuration with the ablation applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if let Some(a) = self.ablation {
            a.apply(&mut m);
        }
        m
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (1..=self.schedule().ensemble_size as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss.validate()?;
        self.schedule().validate()?;
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("duplicate seed {d}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_desk_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.schedule(), TrainSchedule::desk());
        assert_eq!(cfg.seeds(), vec![1, 2, 3, 4, 5]);
        let full = RunConfig::from_json(r#"{"desk_scale": false}"#).unwrap();
        assert_eq!(full.schedule().l_o, 50);
        assert_eq!(full.seeds().len(), 100);
    }

    #[test]
    fn unknown_keys_and_invariant_violations_rejected() {
        assert!(RunConfig::from_json(r#"{"colour": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"network": {"s_c": 10}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"loss": {"q_lower": 0.7}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"seeds": [3, 3]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schedule": {"epochs": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ablation": "ab11"}"#).is_err());
    }

    #[test]
    fn ablations_toggle_the_right_switches() {
        let cfg = RunConfig::from_json(r#"{"ablation": "ab9"}"#).unwrap().model_config();
        assert!(!cfg.network.level_input && !cfg.network.calendar_input && !cfg.network.seasonal_input);
        assert!(cfg.network.use_es);
        let ab1 = RunConfig::from_json(r#"{"ablation": "ab1"}"#).unwrap().model_config();
        assert!(!ab1.network.use_es && !ab1.es.enabled);
        assert_eq!("AB10".parse::<Ablation>().unwrap(), Ablation::Ab10);
        for a in Ablation::ALL {
            let mut m = ModelConfig::default();
            a.apply(&mut m);
            m.validate().unwrap();
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = RunConfig {
            ablation: Some(Ablation::Ab3),
            seeds: vec![9, 4],
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
