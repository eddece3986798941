//! Commit-then-claim exchange between the UAV and winning vehicles, run as
//! a discrete-event simulation over a simulated ledger.

pub mod crypto;
pub mod enclave;
pub mod hashchain;
pub mod ledger;
pub mod protocol;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mobility::VehicleId;

pub use enclave::{EnclaveSim, PublicOutcome};
pub use hashchain::HashChain;
pub use ledger::LedgerState;
pub use protocol::{run_protocol, AdversaryScript, ExchangeConfig, ProtocolReport, TaskVerdict};

/// Account holder on the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Uav,
    Enclave,
    Vehicle(VehicleId),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Uav => f.write_str("uav"),
            Party::Enclave => f.write_str("enclave"),
            Party::Vehicle(v) => write!(f, "vehicle-{v}"),
        }
    }
}

impl FromStr for Party {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uav" => Ok(Party::Uav),
            "enclave" => Ok(Party::Enclave),
            _ => s
                .strip_prefix("vehicle-")
                .and_then(|v| v.parse().ok())
                .map(Party::Vehicle)
                .ok_or_else(|| format!("unknown party `{s}`")),
        }
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("{0} failed attestation: program hash mismatch")]
    Attestation(Party),
    #[error("{0} has not attested the enclave")]
    NotAttested(Party),
    #[error(transparent)]
    Crypto(#[from] crypto::CryptoError),
    #[error("decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Auction(#[from] crate::Error),
}

/// Currency amounts on the ledger are whole units; prices round up.
pub fn to_units(x: f64) -> u64 {
    x.max(0.0).ceil() as u64
}
