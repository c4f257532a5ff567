use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BnMode;
use crate::optim::SgdConfig;

/// Training approach. The two `FedAvg+` variants switch on one FedBS
/// ingredient each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Centralized training on the pooled client data.
    #[serde(rename = "ct")]
    Centralized,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    /// Local batch-specific BN plus SAM.
    #[serde(rename = "fedbs")]
    FedBs,
    /// FedAvg with local batch-specific BN only.
    #[serde(rename = "fedavg+bn")]
    FedAvgBn,
    /// FedAvg with SAM only.
    #[serde(rename = "fedavg+sam")]
    FedAvgSam,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Centralized,
        Strategy::FedAvg,
        Strategy::FedProx,
        Strategy::FedBs,
        Strategy::FedAvgBn,
        Strategy::FedAvgSam,
    ];

    /// The BN/SAM ablation rows: neither, BN only, SAM only, both.
    pub const ABLATION: [Strategy; 4] = [Strategy::FedAvg, Strategy::FedAvgBn, Strategy::FedAvgSam, Strategy::FedBs];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Centralized => "ct",
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::FedBs => "fedbs",
            Strategy::FedAvgBn => "fedavg+bn",
            Strategy::FedAvgSam => "fedavg+sam",
        }
    }

    pub fn is_federated(self) -> bool {
        self != Strategy::Centralized
    }

    /// BN parameters stay local: the server never sends them back.
    pub fn local_bn(self) -> bool {
        matches!(self, Strategy::FedBs | Strategy::FedAvgBn)
    }

    pub fn bn_mode(self) -> BnMode {
        if self.local_bn() {
            BnMode::BatchSpecific
        } else {
            BnMode::RunningStats
        }
    }

    pub fn uses_sam(self) -> bool {
        matches!(self, Strategy::FedBs | Strategy::FedAvgSam)
    }

    pub fn proximal(self) -> bool {
        self == Strategy::FedProx
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown strategy `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Protocol and optimizer hyperparameters. The client count K is the number
/// of client datasets handed to the runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    /// Client selection weight P.
    pub participation: f64,
    /// Local epochs E (for centralized training: epochs per round).
    pub local_epochs: usize,
    /// Communication rounds N_t.
    pub rounds: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub mu_prox: f64,
    pub test_batch_size: usize,
    pub seed: u64,
    /// Evaluate the global model every this many rounds (and after the last).
    pub eval_every: usize,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        FederatedConfig {
            participation: 0.5,
            local_epochs: 2,
            rounds: 200,
            batch_size: 32,
            lr: 0.005,
            rho: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
            mu_prox: 1.0,
            test_batch_size: 8,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad(format!("participation {} outside (0, 1]", self.participation));
        }
        for (name, v) in [
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("test_batch_size", self.test_batch_size),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("rho", self.rho), ("weight_decay", self.weight_decay), ("mu_prox", self.mu_prox)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be a non-negative number"));
            }
        }
        self.sgd().validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    /// Clients per round: `max(⌊P·K⌋, 1)`.
    pub fn clients_per_round(&self, clients: usize) -> usize {
        // tolerance so that e.g. 0.29·100 is not floored to 28
        ((self.participation * clients as f64 + 1e-9).floor() as usize).clamp(1, clients.max(1))
    }

    /// Whether the global model is evaluated after round `t` (1-based).
    pub fn evaluates_after(&self, t: usize) -> bool {
        t % self.eval_every == 0 || t == self.rounds
    }
}
