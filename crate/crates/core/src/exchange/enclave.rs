//! In-process stand-in for the trusted processor that runs the auction on
//! sealed bids.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::crypto::{keccak256, open, seal, Digest, PublicKey, SealPublicKey, SealedBox, SealingKey, SigningKey};
use super::{to_units, ExchangeError, Party};
use crate::auction::{run_auction, Assignee};
use crate::cost::TaskId;
use crate::mobility::VehicleId;
use crate::{Bid, Env, Outcome, Task};

/// What leaves the enclave: winners and integer payments, nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicOutcome {
    pub beta: BTreeMap<TaskId, Assignee>,
    pub payments: BTreeMap<TaskId, u64>,
    /// Bidders dropped for an insufficient deposit.
    pub excluded: Vec<VehicleId>,
}

#[derive(Debug)]
pub struct EnclaveSim {
    program_hash: Digest,
    attested_by: BTreeSet<Party>,
    seal_key: SealingKey,
    signer: SigningKey,
}

/// Result of an execution. `outcome` is the full private record and must
/// not be written to the ledger.
#[derive(Debug, Clone)]
pub struct EnclaveRun {
    pub public: PublicOutcome,
    pub outcome: Outcome,
}

impl EnclaveSim {
    /// Loads a program identified by `program` (code and configuration bytes).
    pub fn new(program: &[u8], rng: &mut impl RngCore) -> Self {
        EnclaveSim {
            program_hash: keccak256(&[b"seal-enclave-program", program]),
            attested_by: BTreeSet::new(),
            seal_key: SealingKey::generate(rng),
            signer: SigningKey::generate(rng),
        }
    }

    pub fn program_hash(&self) -> Digest {
        self.program_hash
    }

    pub fn seal_public(&self) -> SealPublicKey {
        self.seal_key.public()
    }

    pub fn signer_public(&self) -> PublicKey {
        self.signer.public()
    }

    pub(crate) fn signer(&self) -> &SigningKey {
        &self.signer
    }

    /// Remote attestation: `party` checks the loaded program against the one it expects.
    pub fn attest(&mut self, party: Party, expected: &Digest) -> Result<(), ExchangeError> {
        if *expected != self.program_hash {
            return Err(ExchangeError::Attestation(party));
        }
        self.attested_by.insert(party);
        Ok(())
    }

    pub fn is_attested(&self, party: Party) -> bool {
        self.attested_by.contains(&party)
    }

    fn unseal(&self, sealed: &SealedBox) -> Result<Bid, ExchangeError> {
        let raw = open(&self.seal_key, sealed)?;
        serde_json::from_slice(&raw).map_err(|e| ExchangeError::Decode(e.to_string()))
    }

    /// Unseals the bids, drops bidders whose deposit is below
    /// `multiplier × max price`, and runs the auction.
    pub fn execute(
        &self,
        sealed: &[(VehicleId, SealedBox)],
        deposits: &BTreeMap<Party, u64>,
        tasks: &[Task],
        env: &Env,
        multiplier: f64,
    ) -> Result<EnclaveRun, ExchangeError> {
        if !self.is_attested(Party::Uav) {
            return Err(ExchangeError::NotAttested(Party::Uav));
        }
        let mut bids = Vec::with_capacity(sealed.len());
        let mut excluded = Vec::new();
        for (vid, blob) in sealed {
            let party = Party::Vehicle(*vid);
            if !self.is_attested(party) {
                return Err(ExchangeError::NotAttested(party));
            }
            let bid = self.unseal(blob)?;
            if bid.vehicle_id != *vid {
                return Err(ExchangeError::Decode(format!("bid sealed by {vid} names vehicle {}", bid.vehicle_id)));
            }
            let need = required_deposit(&bid, multiplier);
            if deposits.get(&party).copied().unwrap_or(0) < need {
                excluded.push(*vid);
            } else {
                bids.push(bid);
            }
        }
        let outcome = run_auction(tasks, &bids, env)?;
        let payments = outcome
            .critical_payment
            .iter()
            .map(|(&t, &p)| (t, to_units(p)))
            .collect();
        Ok(EnclaveRun {
            public: PublicOutcome {
                beta: outcome.winner_of.clone(),
                payments,
                excluded,
            },
            outcome,
        })
    }
}

/// Bidder deposit: `multiplier × max bid price`, rounded up to whole units.
pub fn required_deposit(bid: &Bid, multiplier: f64) -> u64 {
    to_units(bid.max_price() * multiplier)
}

/// Seals `bid` for the enclave. Refused unless `party` attested first.
pub fn seal_and_submit_bid(
    party: Party,
    bid: &Bid,
    enclave: &EnclaveSim,
    rng: &mut impl RngCore,
) -> Result<SealedBox, ExchangeError> {
    if !enclave.is_attested(party) {
        return Err(ExchangeError::NotAttested(party));
    }
    let raw = serde_json::to_vec(bid).map_err(|e| ExchangeError::Decode(e.to_string()))?;
    Ok(seal(&enclave.seal_public(), &raw, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{BidEntry, BidderContext, CombinatorialBid};
    use crate::cost::{CostWeights, EnergyParams, FlightPower};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (EnclaveSim, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let e = EnclaveSim::new(b"prog", &mut rng);
        (e, rng)
    }

    fn bid(v: VehicleId, price: f64) -> Bid {
        CombinatorialBid {
            vehicle_id: v,
            entries: vec![BidEntry { task: 1, compute: 5e8, price }],
        }
    }

    fn env() -> Env {
        Env {
            energy: EnergyParams {
                p_hover: 500.0,
                p_a2g: 0.2,
                flight: FlightPower::Constant { watts: 150.0 },
                segment_length: 500.0,
                fly_speed: 10.0,
                altitude: 50.0,
            },
            weights: CostWeights { omega: 0.5, lambda_p: 40.0 },
            bidders: (1..=2)
                .map(|v| (v, BidderContext { dwell: 10.0, link_rate: 6e6, capacity: 1e9 }))
                .collect(),
            reserve: 8e10,
        }
    }

    fn tasks() -> Vec<Task> {
        vec![Task { id: 1, size: 3e6, urgency: 0.5, deadline: 2.0, intensity: 50.0 }]
    }

    #[test]
    fn attestation_gate() {
        let (mut e, mut rng) = setup();
        let b = bid(1, 5e8);
        assert!(matches!(
            seal_and_submit_bid(Party::Vehicle(1), &b, &e, &mut rng),
            Err(ExchangeError::NotAttested(_))
        ));
        assert!(e.attest(Party::Vehicle(1), &Digest([0; 32])).is_err());
        let h = e.program_hash();
        e.attest(Party::Vehicle(1), &h).unwrap();
        assert!(seal_and_submit_bid(Party::Vehicle(1), &b, &e, &mut rng).is_ok());
    }

    #[test]
    fn seal_round_trip_and_tamper() {
        let (mut e, mut rng) = setup();
        let h = e.program_hash();
        e.attest(Party::Vehicle(1), &h).unwrap();
        let b = bid(1, 5e8 + 0.125);
        let mut blob = seal_and_submit_bid(Party::Vehicle(1), &b, &e, &mut rng).unwrap();
        assert_eq!(e.unseal(&blob).unwrap(), b);
        blob.ciphertext[3] ^= 0x10;
        assert!(e.unseal(&blob).is_err());
    }

    #[test]
    fn transparent_and_excludes_underfunded() {
        let (mut e, mut rng) = setup();
        let h = e.program_hash();
        for p in [Party::Uav, Party::Vehicle(1), Party::Vehicle(2)] {
            e.attest(p, &h).unwrap();
        }
        let bids = [bid(1, 5e8), bid(2, 7e8)];
        let sealed: Vec<_> = bids
            .iter()
            .map(|b| (b.vehicle_id, seal_and_submit_bid(Party::Vehicle(b.vehicle_id), b, &e, &mut rng).unwrap()))
            .collect();
        let full: BTreeMap<_, _> = [(Party::Vehicle(1), u64::MAX), (Party::Vehicle(2), u64::MAX)].into();
        let run = e.execute(&sealed, &full, &tasks(), &env(), 1.5).unwrap();
        assert_eq!(run.outcome, run_auction(&tasks(), &bids, &env()).unwrap());

        let short: BTreeMap<_, _> =
            [(Party::Vehicle(1), required_deposit(&bids[0], 1.5) - 1), (Party::Vehicle(2), u64::MAX)].into();
        let run = e.execute(&sealed, &short, &tasks(), &env(), 1.5).unwrap();
        assert_eq!(run.public.excluded, vec![1]);
        assert_eq!(run.outcome, run_auction(&tasks(), &bids[1..], &env()).unwrap());
    }
}
