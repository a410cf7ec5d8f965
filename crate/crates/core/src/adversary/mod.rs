//! Adversaries against decentralized frequency estimation.
//!
//! Two value strategies are modeled: the random perturbed-value attack
//! ([`Strategy::Rpa`]), whose fake reports are uniform over the protocol's
//! output space, and the random item attack ([`Strategy::Ria`]), whose fake
//! reports are honest perturbations of target items. They are realized either
//! through corrupted users or through a network adversary that can only drop,
//! replay or delay packets.

mod corrupt;
mod network;
mod sniff;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ldp::{Payload, ProtocolSpec};
use crate::{Error, Result, Tick};

pub use corrupt::corrupt_users;
pub use sniff::{sniff, Observation, ObservationLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rpa,
    Ria,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Rpa, Strategy::Ria];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Rpa => "rpa",
            Strategy::Ria => "ria",
        }
    }

    /// How a network adversary realizes this strategy when not told otherwise.
    pub fn default_selection(&self) -> SelectionMode {
        match self {
            Strategy::Rpa => SelectionMode::Colluding,
            Strategy::Ria => SelectionMode::Targeted,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    UserCorruption,
    Drop,
    Replay,
    Delay,
}

impl Capability {
    pub const NETWORK: [Capability; 3] = [Capability::Drop, Capability::Replay, Capability::Delay];

    pub fn name(&self) -> &'static str {
        match self {
            Capability::UserCorruption => "user_corruption",
            Capability::Drop => "drop",
            Capability::Replay => "replay",
            Capability::Delay => "delay",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which packets a network operation may act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Every packet is equally eligible.
    Uniform,
    /// Eligibility depends on whether the payload supports a target item;
    /// requires readable payloads.
    Targeted,
    /// The network adversary also controls a set of corrupted users: it
    /// replays their packets and drops or delays everybody else's.
    Colluding,
}

/// Items an RIA adversary promotes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetSet {
    pub items: BTreeSet<u32>,
}

impl TargetSet {
    pub fn new(items: impl IntoIterator<Item = u32>) -> Self {
        TargetSet {
            items: items.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Whether `payload` supports at least one target.
    pub fn supported_by(&self, spec: &ProtocolSpec, payload: &Payload) -> bool {
        self.items.iter().any(|&t| spec.supports_unchecked(payload, t))
    }
}

/// Full adversary description; one section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub strategy: Strategy,
    pub capability: Capability,
    /// Fraction of users corrupted (user corruption, or the colluding source).
    pub malicious_fraction_beta: f64,
    pub drop_rate: f64,
    /// Extra copies injected per replayed packet.
    pub replay_factor: u32,
    /// Fraction of packets replayed under uniform selection.
    pub replay_fraction: f64,
    /// Ticks between consecutive replayed copies.
    pub replay_spacing: Tick,
    pub delay_ratio: f64,
    pub delay_amount: Tick,
    pub targets: TargetSet,
    pub selection_mode: SelectionMode,
    pub can_read_payload: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            strategy: Strategy::Ria,
            capability: Capability::Replay,
            malicious_fraction_beta: 0.05,
            drop_rate: 0.1,
            replay_factor: 5,
            replay_fraction: 0.05,
            replay_spacing: 1,
            delay_ratio: 0.2,
            delay_amount: 1_000,
            targets: TargetSet::new([0]),
            selection_mode: SelectionMode::Targeted,
            can_read_payload: true,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {v} outside [0, 1]")))
    }
}

impl AdversaryConfig {
    pub fn new(strategy: Strategy, capability: Capability) -> Self {
        AdversaryConfig {
            strategy,
            capability,
            selection_mode: strategy.default_selection(),
            ..Default::default()
        }
    }

    /// Checks the parameters of the active capability against `spec`.
    pub fn validate(&self, spec: &ProtocolSpec) -> Result<()> {
        unit("malicious fraction", self.malicious_fraction_beta)?;
        match self.capability {
            Capability::UserCorruption => {}
            Capability::Drop => unit("drop rate", self.drop_rate)?,
            Capability::Replay => {
                if self.replay_factor < 1 {
                    return Err(Error::param("replay factor must be at least 1"));
                }
                unit("replay fraction", self.replay_fraction)?;
            }
            Capability::Delay => unit("delay ratio", self.delay_ratio)?,
        }
        if self.strategy == Strategy::Ria || self.selection_mode == SelectionMode::Targeted {
            if self.targets.is_empty() {
                return Err(Error::config("RIA needs a nonempty target set"));
            }
            for &t in &self.targets.items {
                spec.domain.check(t)?;
            }
        }
        if self.selection_mode == SelectionMode::Targeted && !self.can_read_payload {
            return Err(Error::Capability(
                "targeted selection requires an adversary that can read payloads".into(),
            ));
        }
        Ok(())
    }

    /// Whether corrupted users take part in the attack.
    pub fn uses_corrupted_users(&self) -> bool {
        self.capability == Capability::UserCorruption || self.selection_mode == SelectionMode::Colluding
    }

    /// The swept parameter of the active capability.
    pub fn param(&self) -> f64 {
        match self.capability {
            Capability::UserCorruption => self.malicious_fraction_beta,
            Capability::Drop => self.drop_rate,
            Capability::Replay => self.replay_factor as f64,
            Capability::Delay => self.delay_ratio,
        }
    }

    /// Sets the swept parameter of the active capability.
    pub fn set_param(&mut self, value: f64) -> Result<()> {
        match self.capability {
            Capability::UserCorruption => self.malicious_fraction_beta = value,
            Capability::Drop => self.drop_rate = value,
            Capability::Replay => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::param(format!("replay factor {value} is not a positive integer")));
                }
                self.replay_factor = value as u32
            }
            Capability::Delay => self.delay_ratio = value,
        }
        Ok(())
    }
}

/// An adversary bound to a protocol and, when colluding, to the set of
/// clients it has corrupted.
#[derive(Debug, Clone)]
pub struct Adversary {
    pub config: AdversaryConfig,
    pub spec: ProtocolSpec,
    pub corrupted: BTreeSet<u64>,
}

impl Adversary {
    pub fn new(config: AdversaryConfig, spec: ProtocolSpec, corrupted: BTreeSet<u64>) -> Result<Self> {
        config.validate(&spec)?;
        Ok(Adversary {
            config,
            spec,
            corrupted,
        })
    }
}
