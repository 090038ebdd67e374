//! JSON scenario files and their resolution into run configurations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AttackConfig, Strategy};
use crate::lottery::{slots_ceil, SimParams};
use crate::node::SchedulingPolicy;
use crate::sapos::SaposParams;
use crate::sim::{Protocol, RunConfig};

/// A configuration problem located by its JSON field path.
#[derive(Debug, Error, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "d_nodes")]
    pub n_nodes: u32,
    #[serde(default = "d_one")]
    pub lambda_hon: f64,
    #[serde(default)]
    pub lambda_adv: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default)]
    pub delta_h: f64,
    /// Blocks per second each node can download and process.
    pub capacity: f64,
    /// Analysis parameter; give at most one of `c_tilde` and `nu`.
    #[serde(default)]
    pub c_tilde: Option<f64>,
    #[serde(default)]
    pub nu: Option<u64>,
    /// Horizon in slots, or `duration` in seconds.
    #[serde(default)]
    pub horizon_slots: Option<u64>,
    #[serde(default)]
    pub duration: Option<f64>,
}

fn d_nodes() -> u32 {
    20
}
fn d_one() -> f64 {
    1.0
}
fn d_tau() -> f64 {
    0.1
}
fn d_repeat() -> u32 {
    1
}
fn d_true() -> bool {
    true
}
fn d_policy() -> SchedulingPolicy {
    SchedulingPolicy::LongestHeaderChain
}
fn d_protocol() -> Protocol {
    Protocol::Pow
}
fn d_per_block() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaposSection {
    pub k_cp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSection {
    /// Transactions per second.
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "d_per_block")]
    pub per_block: usize,
}

impl Default for TxSection {
    fn default() -> Self {
        TxSection { rate: 0.0, per_block: d_per_block() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Write a JSONL trace per run.
    #[serde(default = "d_true")]
    pub trace: bool,
    /// Also analyze each trace and write its pivot report.
    #[serde(default)]
    pub analyze: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { trace: true, analyze: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimSection,
    #[serde(default = "d_protocol")]
    pub protocol: Protocol,
    /// Ranking policy; SaPoS runs wrap it automatically.
    #[serde(default = "d_policy")]
    pub policy: SchedulingPolicy,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub sapos: Option<SaposSection>,
    /// Ledger confirmation depth; defaults to the SaPoS value when present.
    #[serde(default)]
    pub k_conf: Option<u64>,
    #[serde(default)]
    pub tx: TxSection,
    /// Seconds excluded from the growth-rate estimate.
    #[serde(default)]
    pub warmup: f64,
    #[serde(default = "d_repeat")]
    pub repeat: u32,
    #[serde(default = "d_repeat_stride")]
    pub seed_stride: u64,
    #[serde(default)]
    pub output: OutputSection,
}

fn d_repeat_stride() -> u64 {
    1
}

impl ScenarioConfig {
    /// Parses JSON, reporting the path of the first offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError { path: if path == "." { "<root>".into() } else { path }, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        let positive = |v: f64, p: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::at(p, format!("must be positive, got {v}")))
            }
        };
        if s.n_nodes == 0 {
            return Err(ConfigError::at("sim.n_nodes", "must be positive"));
        }
        positive(s.tau, "sim.tau")?;
        positive(s.capacity, "sim.capacity")?;
        positive(s.lambda_hon, "sim.lambda_hon")?;
        if !(s.lambda_adv >= 0.0 && s.lambda_adv.is_finite()) {
            return Err(ConfigError::at("sim.lambda_adv", "must be non-negative"));
        }
        if !(s.delta_h >= 0.0 && s.delta_h.is_finite()) {
            return Err(ConfigError::at("sim.delta_h", "must be non-negative"));
        }
        match (s.c_tilde, s.nu) {
            (Some(_), Some(_)) => return Err(ConfigError::at("sim.nu", "give either c_tilde or nu, not both")),
            (Some(c), None) if !(c >= 0.0 && c.is_finite()) => {
                return Err(ConfigError::at("sim.c_tilde", "must be non-negative"));
            }
            _ => {}
        }
        match (s.horizon_slots, s.duration) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::at("sim.duration", "give either horizon_slots or duration, not both"))
            }
            (None, None) => return Err(ConfigError::at("sim", "missing horizon_slots or duration")),
            (Some(0), None) => return Err(ConfigError::at("sim.horizon_slots", "must be positive")),
            (None, Some(d)) => positive(d, "sim.duration")?,
            _ => {}
        }
        let pos_lottery = matches!(self.protocol, Protocol::Pos | Protocol::Sapos);
        if self.sapos.is_some() && self.protocol != Protocol::Sapos {
            return Err(ConfigError::at("sapos", "only valid with protocol \"sapos\""));
        }
        if self.attack.strategy == Strategy::PosTeaser && !pos_lottery {
            return Err(ConfigError::at("attack.strategy", "pos-teaser needs protocol \"pos\" or \"sapos\""));
        }
        if matches!(self.attack.strategy, Strategy::Private | Strategy::Teaser) && pos_lottery {
            return Err(ConfigError::at("attack.strategy", "PoW attacks need protocol \"pow\""));
        }
        if self.policy.blanks() && self.protocol != Protocol::Sapos {
            return Err(ConfigError::at("policy", "sapos-wrapped policies need protocol \"sapos\""));
        }
        if self.attack.spv_rate < 0.0 {
            return Err(ConfigError::at("attack.spv_rate", "must be non-negative"));
        }
        if self.attack.strategy == Strategy::Partition {
            positive(self.attack.partition_duration, "attack.partition_duration")?;
        }
        if self.attack.run_after < 0.0 {
            return Err(ConfigError::at("attack.run_after", "must be non-negative"));
        }
        if let Some(sp) = &self.sapos {
            if sp.k_cp == 0 {
                return Err(ConfigError::at("sapos.k_cp", "must be positive"));
            }
        }
        if self.tx.rate < 0.0 {
            return Err(ConfigError::at("tx.rate", "must be non-negative"));
        }
        if self.warmup < 0.0 {
            return Err(ConfigError::at("warmup", "must be non-negative"));
        }
        if self.repeat == 0 {
            return Err(ConfigError::at("repeat", "must be positive"));
        }
        self.params(0).map(|_| ())
    }

    fn params(&self, seed: u64) -> Result<SimParams, ConfigError> {
        let s = &self.sim;
        let horizon = match (s.horizon_slots, s.duration) {
            (Some(h), _) => h,
            (None, Some(d)) => slots_ceil(d, s.tau),
            (None, None) => 0,
        };
        let (c_tilde, nu) = match (s.c_tilde, s.nu) {
            (Some(c), _) => (c, None),
            (None, nu) => {
                let nu = nu.unwrap_or(0);
                let c = s.capacity * ((nu as f64 + 1.0) * s.tau - s.delta_h);
                if c < 0.0 {
                    return Err(ConfigError::at("sim.nu", "(nu+1)*tau must be at least delta_h"));
                }
                (c, Some(nu))
            }
        };
        let mut p = SimParams::from_rates(
            s.n_nodes,
            s.lambda_hon,
            s.lambda_adv,
            s.tau,
            s.delta_h,
            s.capacity,
            c_tilde,
            horizon,
            seed,
        )
        .map_err(|e| ConfigError::at("sim", e.to_string()))?;
        if let Some(nu) = nu {
            p.nu = nu;
        }
        Ok(p)
    }

    /// Seeds of the repeated runs starting at `base`.
    pub fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.repeat as u64).map(|i| base.wrapping_add(i * self.seed_stride)).collect()
    }

    /// The run configuration for one seed.
    pub fn resolve(&self, seed: u64) -> Result<RunConfig, ConfigError> {
        let params = self.params(seed)?;
        let sapos = match self.protocol {
            Protocol::Sapos => Some(self.sapos.as_ref().map_or(SaposParams::from_k_cp(1), |s| SaposParams::from_k_cp(s.k_cp))),
            _ => None,
        };
        let policy = match self.protocol {
            Protocol::Sapos if !self.policy.blanks() => SchedulingPolicy::SaposWrapped(Box::new(self.policy.clone())),
            _ => self.policy.clone(),
        };
        let warmup_slots = slots_ceil(self.warmup, params.tau).min(params.horizon_slots);
        Ok(RunConfig {
            params,
            protocol: self.protocol,
            policy,
            attack: self.attack.clone(),
            k_conf: self.k_conf.or(sapos.map(|s| s.k_conf)),
            sapos,
            tx_rate: self.tx.rate,
            txs_per_block: self.tx.per_block,
            warmup_slots,
        })
    }
}
