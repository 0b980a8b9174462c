//! Interactive two-party protocols between the cloud and the target, plus
//! the agents that feed them encrypted data.
//!
//! Every protocol is split into a cloud half and a target half that run on
//! separate threads and talk only through an [`transport::Endpoint`]. All
//! element-wise steps are batched so that one message carries every
//! constraint's ciphertexts.

pub mod comparison;
pub mod iteration;
pub mod message;
pub mod mirror;
pub mod party;
pub mod solve;
pub mod transcript;
pub mod transport;
pub mod truncation;
pub mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgk::{self, DgkPrivateKey};
use crate::fixed_point::{FixedPointError, FixedPointParams, ParameterError};
use crate::math::RandomSource;
use crate::paillier::{self, CryptoError, PaillierPrivateKey};
use crate::qp::QpError;

pub use message::{Message, Tag};
pub use party::{CloudContext, TargetContext};
pub use transcript::{PartyLog, Transcript};
pub use transport::{duplex, Endpoint};

/// Serialized as `agent<i>`, `cloud` or `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Agent(usize),
    Cloud,
    Target,
}

impl std::str::FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cloud" => Ok(Party::Cloud),
            "target" => Ok(Party::Target),
            other => other
                .strip_prefix("agent")
                .and_then(|i| i.parse().ok())
                .map(Party::Agent)
                .ok_or_else(|| format!("unknown party `{other}`")),
        }
    }
}

impl Serialize for Party {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Party::Agent(i) => write!(f, "agent{i}"),
            Party::Cloud => write!(f, "cloud"),
            Party::Target => write!(f, "target"),
        }
    }
}

/// Which projection step the iteration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Randomised encrypted comparison and blinded update.
    Main,
    /// Multiplicative blinding; the target sees the sign of each iterate.
    Alternative,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Main => "main",
            Mode::Alternative => "alternative",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "main" | "encrypted" => Ok(Mode::Main),
            "alternative" | "alt" => Ok(Mode::Alternative),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Parameter(#[from] ParameterError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("channel to {peer} closed")]
    Disconnected { peer: Party },
    #[error("expected message {expected:?}, received {found:?}")]
    UnexpectedMessage { expected: Tag, found: Tag },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("no agent supplied {vector}[{index}]")]
    MissingShare { vector: char, index: usize },
    #[error("protocol aborted by {by}: {reason}")]
    Aborted { by: Party, reason: String },
    #[error("fixed-point overflow: {0}")]
    Overflow(String),
    #[error("party thread panicked: {0}")]
    Panicked(String),
}

/// DGK modulus and subgroup sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgkParams {
    pub n_bits: u64,
    pub t_bits: u64,
}

impl Default for DgkParams {
    fn default() -> Self {
        Self { n_bits: 512, t_bits: dgk::DEFAULT_T_BITS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub params: FixedPointParams,
    pub k: usize,
    pub sigma_bits: u64,
    pub dgk: DgkParams,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { params: FixedPointParams::default(), k: 30, sigma_bits: 256, dgk: DgkParams::default(), seed: 0 }
    }
}

impl ProtocolConfig {
    /// Bits needed by the largest blinded value the target decrypts.
    pub fn blinded_bits(&self, mode: Mode) -> u64 {
        let p = &self.params;
        let magnitude = match mode {
            Mode::Main => self.main_truncation_bits(),
            Mode::Alternative => self.alt_truncation_bits().max(self.main_truncation_bits()),
        };
        u64::from(magnitude + p.lambda + 1)
    }

    /// Magnitude bound of the unprojected iterate at scale `2^(2·l_f)`.
    pub fn main_truncation_bits(&self) -> u32 {
        self.params.l() + 2 * self.params.l_f
    }

    /// Magnitude bound of the rescaled iterate at scale `2^(l_f + l_f')`.
    pub fn alt_truncation_bits(&self) -> u32 {
        self.params.l() + self.params.l_f_prime
    }

    pub fn validate(&self, mode: Mode) -> Result<(), ProtocolError> {
        self.params.validate()?;
        if self.k == 0 {
            return Err(ProtocolError::Config("iteration count K must be at least 1".into()));
        }
        if self.sigma_bits % 2 != 0 || self.sigma_bits < 32 {
            return Err(ProtocolError::Config(format!("sigma_bits must be even and at least 32, got {}", self.sigma_bits)));
        }
        // a σ-bit modulus has log2 N > σ - 1
        let available = self.sigma_bits - 1;
        let comparison = u64::from(self.params.l() + self.params.lambda + 1);
        if available <= comparison {
            return Err(ProtocolError::Parameter(ParameterError::Violated {
                constraint: "log2 N > l + lambda + 1".into(),
            }));
        }
        // signed values must stay below N/2 after blinding
        if available <= self.blinded_bits(mode) + 1 {
            return Err(ProtocolError::Config(format!(
                "sigma_bits = {} cannot hold {}-bit blinded values in {mode} mode",
                self.sigma_bits,
                self.blinded_bits(mode)
            )));
        }
        let alt_scaled = u64::from(2 * self.params.l() + self.params.l_f + self.params.gamma);
        if mode == Mode::Alternative && available <= alt_scaled + 1 {
            return Err(ProtocolError::Config("modulus too small for multiplicatively blinded iterates".into()));
        }
        Ok(())
    }
}

/// Target-held key material for both cryptosystems.
#[derive(Debug, Clone)]
pub struct Keys {
    pub paillier: PaillierPrivateKey,
    pub dgk: DgkPrivateKey,
}

impl Keys {
    /// Deterministic key generation from the config's seed.
    pub fn generate(config: &ProtocolConfig) -> Result<Self, ProtocolError> {
        let mut rng = RandomSource::derive(config.seed, "keygen");
        let (_, paillier) = paillier::keygen(config.sigma_bits, &mut rng)?;
        let (_, dgk) = dgk::keygen(config.dgk.n_bits, config.dgk.t_bits, u64::from(config.params.l()), &mut rng)?;
        Ok(Self { paillier, dgk })
    }

    pub fn check_compatible(&self, config: &ProtocolConfig) -> Result<(), ProtocolError> {
        let pk = self.paillier.public_key();
        if pk.sigma_bits() != config.sigma_bits {
            return Err(ProtocolError::Config(format!(
                "Paillier key has {} bits, config asks for {}",
                pk.sigma_bits(),
                config.sigma_bits
            )));
        }
        let needed = dgk::plaintext_modulus_for(u64::from(config.params.l()));
        if self.dgk.public_key().plaintext_modulus() < needed {
            return Err(ProtocolError::Config(format!(
                "DGK plaintext modulus {} too small for l = {}",
                self.dgk.public_key().plaintext_modulus(),
                config.params.l()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_in_both_modes() {
        let config = ProtocolConfig::default();
        config.validate(Mode::Main).unwrap();
        config.validate(Mode::Alternative).unwrap();
        assert_eq!(config.params.l_f_prime, 104);
    }

    #[test]
    fn small_modulus_is_rejected() {
        let config = ProtocolConfig { sigma_bits: 128, ..ProtocolConfig::default() };
        assert!(matches!(config.validate(Mode::Main), Err(ProtocolError::Parameter(_))));
        let config = ProtocolConfig { sigma_bits: 160, ..ProtocolConfig::default() };
        assert!(matches!(config.validate(Mode::Main), Err(ProtocolError::Config(_))));
        let config = ProtocolConfig { k: 0, ..ProtocolConfig::default() };
        assert!(config.validate(Mode::Main).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("main".parse::<Mode>().unwrap(), Mode::Main);
        assert_eq!("alternative".parse::<Mode>().unwrap(), Mode::Alternative);
        assert!("plain".parse::<Mode>().is_err());
    }
}
