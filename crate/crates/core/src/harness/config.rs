use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{AdversaryConfig, Capability, SelectionMode, Strategy};
use crate::cache::CachePolicy;
use crate::defense::DefenseConfig;
use crate::ldp::{ProtocolKind, ProtocolSpec};
use crate::netsim::{TopologyKind, TopologyParams};
use crate::{Error, Result, Tick};

mod seed_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => Repr::Int(v),
            Err(_) => Repr::Text(seed.to_string()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(serde::de::Error::custom),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Config schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Uniform,
    /// Items drawn from explicit relative `weights`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub k: u32,
    pub n: u64,
    /// Population used by `--full`.
    pub full_n: u64,
    pub weights: Vec<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Uniform,
            k: 128,
            n: 50_000,
            full_n: 500_000,
            weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub epsilon: f64,
    pub olh_range_g: Option<u32>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            kind: ProtocolKind::Krr,
            epsilon: 1.0,
            olh_range_g: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub topology: TopologyKind,
    pub params: TopologyParams,
    /// Models encrypted reports that nobody on the path can read.
    pub payload_opaque: bool,
    /// Clients emit at ticks `0..emit_spread`.
    pub emit_spread: Tick,
    /// The aggregation window is `[0, window_end]`.
    pub window_end: Tick,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            topology: TopologyKind::Star,
            params: TopologyParams::default(),
            payload_opaque: false,
            emit_spread: 10,
            window_end: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuffleConfig {
    pub enabled: bool,
    pub buffer_capacity: usize,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        ShuffleConfig {
            enabled: false,
            buffer_capacity: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Reports each client sends of its (unchanging) value.
    pub rounds: u32,
    pub round_spacing: Tick,
    pub policy: CachePolicy,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: false,
            rounds: 1,
            round_spacing: 1,
            policy: CachePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    #[default]
    Mae,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub kind: ErrorMetric,
    /// Divide gains by the clean error.
    pub normalize: bool,
}

/// Cells of a sweep. Every listed capability is crossed with its own
/// parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub protocols: Vec<ProtocolKind>,
    pub epsilons: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub capabilities: Vec<Capability>,
    pub drop: Vec<f64>,
    pub replay: Vec<u32>,
    pub delay: Vec<f64>,
    pub user_corruption: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            protocols: ProtocolKind::ALL.to_vec(),
            epsilons: vec![1.0],
            strategies: Strategy::ALL.to_vec(),
            capabilities: Capability::NETWORK.to_vec(),
            drop: vec![0.1, 0.3, 0.5],
            replay: vec![5, 10, 20],
            delay: vec![0.2, 0.5],
            user_corruption: vec![0.05],
        }
    }
}

impl GridConfig {
    pub fn params(&self, capability: Capability) -> Vec<f64> {
        match capability {
            Capability::Drop => self.drop.clone(),
            Capability::Replay => self.replay.iter().map(|&r| r as f64).collect(),
            Capability::Delay => self.delay.clone(),
            Capability::UserCorruption => self.user_corruption.clone(),
        }
    }

    /// Adversary cells per (protocol, epsilon, repetition).
    pub fn adversary_cells(&self) -> usize {
        self.strategies.len() * self.capabilities.iter().map(|&c| self.params(c).len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.protocols.is_empty() || self.epsilons.is_empty() || self.adversary_cells() == 0 {
            return Err(Error::config("sweep grid is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// TOML integers are signed, so seeds above `i64::MAX` are written as
    /// decimal strings.
    #[serde(with = "seed_repr")]
    pub root_seed: u64,
    pub repetitions: u32,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub network: NetworkConfig,
    /// Absent means no adversary: attacked and clean runs coincide.
    pub adversary: Option<AdversaryConfig>,
    pub defense: DefenseConfig,
    pub shuffle: ShuffleConfig,
    pub cache: CacheConfig,
    pub metric: MetricConfig,
    pub grid: GridConfig,
    /// Whether `adversary.selection_mode` was given explicitly; otherwise each
    /// strategy uses its own default.
    #[serde(skip)]
    pub selection_explicit: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            root_seed: 0,
            repetitions: 5,
            dataset: DatasetConfig::default(),
            protocol: ProtocolConfig::default(),
            network: NetworkConfig::default(),
            adversary: None,
            defense: DefenseConfig::default(),
            shuffle: ShuffleConfig::default(),
            cache: CacheConfig::default(),
            metric: MetricConfig::default(),
            grid: GridConfig::default(),
            selection_explicit: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e| Error::config(format!("{e}")))?;
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(Error::config(format!("unsupported schema_version {v}"))),
            None => return Err(Error::config("missing schema_version")),
        }
        let selection_explicit = raw
            .get("adversary")
            .and_then(|a| a.as_table())
            .is_some_and(|a| a.contains_key("selection_mode"));
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("{}", e.message())))?;
        cfg.selection_explicit = selection_explicit;
        if let Some(a) = cfg.adversary.as_mut() {
            if !selection_explicit {
                a.selection_mode = a.strategy.default_selection();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        let d = &self.dataset;
        if d.k < 2 || d.n < 1 || d.full_n < 1 {
            return Err(Error::config("dataset needs k >= 2 and n >= 1"));
        }
        if d.kind == DatasetKind::Custom
            && (d.weights.len() != d.k as usize
                || d.weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                || d.weights.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::config("custom dataset needs k non-negative weights with a positive sum"));
        }
        let spec = self.spec(self.protocol.kind, self.protocol.epsilon)?;
        if let Some(a) = &self.adversary {
            a.validate(&spec)?;
            if a.selection_mode == SelectionMode::Targeted && self.network.payload_opaque {
                return Err(Error::Capability("targeted selection cannot read opaque payloads".into()));
            }
        }
        if self.network.window_end == 0 {
            return Err(Error::config("window_end must be positive"));
        }
        self.network.params.access.validate()?;
        self.network.params.uplink.validate()?;
        self.defense.validate()?;
        if self.cache.rounds < 1 {
            return Err(Error::config("cache rounds must be at least 1"));
        }
        if self.cache.enabled {
            self.cache.policy.validate()?;
        }
        for &e in &self.grid.epsilons {
            self.spec(self.protocol.kind, e)?;
        }
        Ok(())
    }

    pub fn spec(&self, kind: ProtocolKind, epsilon: f64) -> Result<ProtocolSpec> {
        match (kind, self.protocol.olh_range_g) {
            (ProtocolKind::Olh, Some(g)) => ProtocolSpec::olh_with_range(self.dataset.k, epsilon, g),
            _ => ProtocolSpec::new(kind, self.dataset.k, epsilon),
        }
    }

    /// The adversary for one sweep cell, built on the `[adversary]` section.
    pub fn cell_adversary(&self, strategy: Strategy, capability: Capability, param: f64) -> Result<AdversaryConfig> {
        let mut a = self.adversary.clone().unwrap_or_default();
        a.strategy = strategy;
        a.capability = capability;
        if !self.selection_explicit {
            a.selection_mode = strategy.default_selection();
        }
        a.set_param(param)?;
        Ok(a)
    }
}
