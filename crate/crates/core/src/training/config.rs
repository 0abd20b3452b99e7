use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adafactor,
    Sgd,
}

/// Training hyperparameters. Every key is optional in a config file and
/// falls back to the default below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Initialise new label prompts from scratch instead of from similar old ones.
    pub no_transfer: bool,
    /// Always train on the full stage label set.
    pub no_subset_inv: bool,
    /// Chance the sampled subset is the whole stage label set.
    pub subset_p: f64,
    /// Soft rows per label prompt.
    pub soft_len: usize,
    /// Donors per new label for transfer.
    pub transfer_k: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 256,
            batch_size: 8,
            optimizer: OptimizerKind::Adafactor,
            no_transfer: false,
            no_subset_inv: false,
            subset_p: 0.5,
            soft_len: crate::promptstore::DEFAULT_SOFT_LEN,
            transfer_k: 3,
            patience: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for tuning every backbone weight.
    pub fn finetune() -> Self {
        Self { learning_rate: 5e-5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a positive number");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return fail("max_epochs and batch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.subset_p) {
            return fail("subset_p must lie in [0, 1]");
        }
        if self.soft_len == 0 || self.transfer_k == 0 {
            return fail("soft_len and transfer_k must be >= 1");
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = crate::corpus::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every training strategy the harness knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ModularPt,
    NoTransfer,
    NoSubsetInv,
    Pt,
    PtCl,
    Finetune,
    Multitask,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ModularPt,
        Method::NoTransfer,
        Method::NoSubsetInv,
        Method::Pt,
        Method::PtCl,
        Method::Finetune,
        Method::Multitask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ModularPt => "modular_pt",
            Method::NoTransfer => "no_transfer",
            Method::NoSubsetInv => "no_subset_inv",
            Method::Pt => "pt",
            Method::PtCl => "pt_cl",
            Method::Finetune => "finetune",
            Method::Multitask => "multitask",
        }
    }

    /// Uses a label-prompt store (the method itself or one of its ablations).
    pub fn is_modular(self) -> bool {
        matches!(self, Method::ModularPt | Method::NoTransfer | Method::NoSubsetInv)
    }

    pub fn tunes_backbone(self) -> bool {
        matches!(self, Method::Finetune | Method::Multitask)
    }

    /// `base` with this method's ablation switches applied.
    pub fn effective_config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Method::NoTransfer => c.no_transfer = true,
            Method::NoSubsetInv => c.no_subset_inv = true,
            _ => {}
        }
        c
    }

    pub fn names() -> String {
        Method::ALL.map(Method::as_str).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected one of {})", Method::names())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_uses_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"learning_rate": 0.3, "no_transfer": true}"#).unwrap();
        assert_eq!(c.learning_rate, 0.3);
        assert!(c.no_transfer);
        assert_eq!(c.max_epochs, 256);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { subset_p: 1.5, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::finetune().learning_rate, 5e-5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().unwrap_err().to_string().contains("modular_pt"));
        assert!(Method::NoSubsetInv.effective_config(&TrainConfig::default()).no_subset_inv);
    }
}
