//! Simulated escrow contract over an append-only transaction log.
//!
//! Every state change goes through [`LedgerState::apply`] (or the contract's
//! own [`LedgerState::close_exchange`]), one transaction at a time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::crypto::{keccak256, Digest, PublicKey, Signature, SigningKey};
use super::enclave::PublicOutcome;
use super::hashchain::{due_payment, verify_claim};
use super::Party;
use crate::auction::Assignee;
use crate::cost::TaskId;

const PROOF_TAG: &[u8] = b"seal-result-proof/v1";

/// Stand-in proof binding a sealed result to its key commitment.
pub fn proof_stub(sigma_digest: &Digest, h: &Digest) -> Digest {
    keccak256(&[&sigma_digest.0, &h.0, PROOF_TAG])
}

/// `H(k ‖ nonce)`.
pub fn key_commitment(key: &Digest, nonce: u64) -> Digest {
    keccak256(&[&key.0, &nonce.to_be_bytes()])
}

/// Digest a winner signs when sending a result message.
pub fn resmsg_digest(pk: &PublicKey, index: usize, nonce: u64, sigma_digest: &Digest, h: &Digest, pi: &Digest) -> Digest {
    keccak256(&[
        b"seal-resmsg",
        &pk.0,
        &(index as u64).to_be_bytes(),
        &nonce.to_be_bytes(),
        &sigma_digest.0,
        &h.0,
        &pi.0,
    ])
}

/// CA-issued binding of a public key to a validity interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pk: PublicKey,
    pub t_stamp: f64,
    pub t_exp: f64,
    pub sig: Signature,
}

impl Certificate {
    fn digest(pk: &PublicKey, t_stamp: f64, t_exp: f64) -> Digest {
        keccak256(&[b"seal-cert", &pk.0, &t_stamp.to_be_bytes(), &t_exp.to_be_bytes()])
    }

    pub fn issue(ca: &SigningKey, pk: PublicKey, t_stamp: f64, t_exp: f64) -> Self {
        let sig = ca.sign(&Self::digest(&pk, t_stamp, t_exp).0);
        Certificate { pk, t_stamp, t_exp, sig }
    }

    pub fn verify(&self, ca: &PublicKey) -> bool {
        ca.verify(&Self::digest(&self.pk, self.t_stamp, self.t_exp).0, &self.sig)
    }

    pub fn valid_at(&self, t: f64) -> bool {
        self.t_stamp <= t && t <= self.t_exp
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub root: Digest,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub meta: Meta,
    pub payments: Vec<u64>,
    /// Task ids in chain order.
    pub tasks: Vec<TaskId>,
    pub nonce0: u64,
    pub pk: PublicKey,
}

/// A winner-signed result-message header, offered as proof of a bad message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub index: usize,
    pub nonce: u64,
    pub sigma_digest: Digest,
    pub h: Digest,
    pub pi: Digest,
    pub winner_sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TxBody {
    Deposit { val: u64, depo: u64, pk: PublicKey, t_stamp: f64 },
    Outcome {
        #[serde(deserialize_with = "id_keyed")]
        beta: BTreeMap<TaskId, Assignee>,
        #[serde(deserialize_with = "id_keyed")]
        payments: BTreeMap<TaskId, u64>,
        excluded: Vec<u64>, program_hash: Digest, pk: PublicKey, t_stamp: f64 },
    Commit { entries: Vec<CommitEntry>, pk_uav: PublicKey, t_stamp: f64, t_exp: f64 },
    PublishHash { index: usize, h: Digest, pk: PublicKey, t_stamp: f64 },
    SubmitKey { index: usize, key: Digest, nonce: u64, pk: PublicKey, t_stamp: f64 },
    Misbehavior { accused: PublicKey, evidence: Evidence, pk: PublicKey, t_stamp: f64 },
    Dispute { refused: usize, cancelled: Vec<usize>, pk: PublicKey, t_stamp: f64 },
    Resolve { winner: PublicKey, index: usize, payword: Digest, pk: PublicKey, t_stamp: f64 },
    /// Written by the contract itself when a deadline passes.
    Timeout { accused: Party, winner: Party, indices: Vec<usize>, penalty: u64, t_stamp: f64 },
    Claim { payword: Digest, count: usize, p: u64, pk: PublicKey, t_stamp: f64 },
    Refund { val: u64, pk: PublicKey, t_stamp: f64 },
}

impl TxBody {
    pub fn kind(&self) -> &'static str {
        match self {
            TxBody::Deposit { .. } => "deposit",
            TxBody::Outcome { .. } => "outcome",
            TxBody::Commit { .. } => "commit",
            TxBody::PublishHash { .. } => "publish_hash",
            TxBody::SubmitKey { .. } => "submit_key",
            TxBody::Misbehavior { .. } => "misbehavior",
            TxBody::Dispute { .. } => "dispute",
            TxBody::Resolve { .. } => "resolve",
            TxBody::Timeout { .. } => "timeout",
            TxBody::Claim { .. } => "claim",
            TxBody::Refund { .. } => "refund",
        }
    }

    pub fn sender(&self) -> Option<PublicKey> {
        match self {
            TxBody::Deposit { pk, .. }
            | TxBody::Outcome { pk, .. }
            | TxBody::PublishHash { pk, .. }
            | TxBody::SubmitKey { pk, .. }
            | TxBody::Misbehavior { pk, .. }
            | TxBody::Dispute { pk, .. }
            | TxBody::Resolve { pk, .. }
            | TxBody::Claim { pk, .. }
            | TxBody::Refund { pk, .. } => Some(*pk),
            TxBody::Commit { pk_uav, .. } => Some(*pk_uav),
            TxBody::Timeout { .. } => None,
        }
    }

    pub fn t_stamp(&self) -> f64 {
        match self {
            TxBody::Deposit { t_stamp, .. }
            | TxBody::Outcome { t_stamp, .. }
            | TxBody::Commit { t_stamp, .. }
            | TxBody::PublishHash { t_stamp, .. }
            | TxBody::SubmitKey { t_stamp, .. }
            | TxBody::Misbehavior { t_stamp, .. }
            | TxBody::Dispute { t_stamp, .. }
            | TxBody::Resolve { t_stamp, .. }
            | TxBody::Timeout { t_stamp, .. }
            | TxBody::Claim { t_stamp, .. }
            | TxBody::Refund { t_stamp, .. } => *t_stamp,
        }
    }

    pub fn digest(&self) -> Digest {
        keccak256(&[&serde_json::to_vec(self).expect("tx bodies serialize")])
    }
}

/// Flattened records buffer map keys as strings; accept either form.
fn id_keyed<'de, D, V>(d: D) -> Result<BTreeMap<TaskId, V>, D::Error>
where
    D: serde::Deserializer<'de>,
    V: Deserialize<'de>,
{
    let raw = BTreeMap::<String, V>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedTx {
    #[serde(flatten)]
    pub body: TxBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig: Option<Signature>,
}

impl SignedTx {
    pub fn sign(body: TxBody, key: &SigningKey) -> Self {
        let sig = key.sign(&body.digest().0);
        SignedTx { body, sig: Some(sig) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TxStatus {
    Applied,
    /// Processed; the contract took its failure branch (e.g. fMap update).
    Failed(String),
    /// Refused; state unchanged.
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTx {
    pub seq: u64,
    pub t_confirm: f64,
    #[serde(flatten)]
    pub status: TxStatus,
    #[serde(flatten)]
    pub tx: SignedTx,
}

/// Phase boundaries in logical seconds. Each phase accepts transactions
/// stamped in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindows {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    /// End of the on-chain exchange; task timeouts fire here.
    pub exchange_close: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub entry: CommitEntry,
    /// Winner's deposit when the commit landed; base for per-task slashing.
    pub deposit_at_commit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeRecord {
    pub refused: usize,
    pub cancelled: Vec<usize>,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slash {
    pub party: Party,
    pub winner: Party,
    pub indices: Vec<usize>,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub count: usize,
    pub paid: u64,
}

#[derive(Debug, Clone)]
pub struct LedgerState {
    log: Vec<LoggedTx>,
    wallets: BTreeMap<Party, u64>,
    deposits: BTreeMap<Party, u64>,
    escrow: u64,
    penalty_sink: u64,
    supply: u128,
    conserved: bool,
    ca: PublicKey,
    registry: BTreeMap<PublicKey, (Party, Certificate)>,
    windows: PhaseWindows,
    /// Absolute deadline of every task.
    task_deadlines: BTreeMap<TaskId, f64>,
    slash_fraction: f64,
    outcome: Option<PublicOutcome>,
    t_exp: Option<f64>,
    commit_meta: BTreeMap<Party, CommitRecord>,
    published_hashes: BTreeMap<(Party, usize), Digest>,
    released_keys: BTreeMap<(Party, usize), Digest>,
    failed_tasks: BTreeMap<Party, BTreeSet<usize>>,
    misbehavior: BTreeMap<Party, Vec<usize>>,
    disputes: BTreeMap<Party, Vec<DisputeRecord>>,
    slashes: Vec<Slash>,
    claims: BTreeMap<Party, ClaimRecord>,
    refunded: BTreeSet<Party>,
    closed: bool,
    clock: f64,
}

type Verdict = Result<(), TxStatus>;

fn reject<T>(reason: impl Into<String>) -> Result<T, TxStatus> {
    Err(TxStatus::Rejected(reason.into()))
}

fn in_window(t: f64, lo: f64, hi: f64) -> bool {
    lo <= t && t < hi
}

impl LedgerState {
    pub fn new(
        ca: PublicKey,
        windows: PhaseWindows,
        task_deadlines: BTreeMap<TaskId, f64>,
        wallets: BTreeMap<Party, u64>,
        slash_fraction: f64,
    ) -> Self {
        let supply = wallets.values().map(|&w| w as u128).sum();
        LedgerState {
            log: Vec::new(),
            wallets,
            deposits: BTreeMap::new(),
            escrow: 0,
            penalty_sink: 0,
            supply,
            conserved: true,
            ca,
            registry: BTreeMap::new(),
            windows,
            task_deadlines,
            slash_fraction,
            outcome: None,
            t_exp: None,
            commit_meta: BTreeMap::new(),
            published_hashes: BTreeMap::new(),
            released_keys: BTreeMap::new(),
            failed_tasks: BTreeMap::new(),
            misbehavior: BTreeMap::new(),
            disputes: BTreeMap::new(),
            slashes: Vec::new(),
            claims: BTreeMap::new(),
            refunded: BTreeSet::new(),
            closed: false,
            clock: 0.0,
        }
    }

    /// Admits an account whose certificate the CA signed.
    pub fn register(&mut self, party: Party, cert: Certificate) -> bool {
        if !cert.verify(&self.ca) {
            return false;
        }
        self.registry.insert(cert.pk, (party, cert));
        true
    }

    pub fn log(&self) -> &[LoggedTx] {
        &self.log
    }
    pub fn wallets(&self) -> &BTreeMap<Party, u64> {
        &self.wallets
    }
    pub fn wallet(&self, p: Party) -> u64 {
        self.wallets.get(&p).copied().unwrap_or(0)
    }
    pub fn deposits(&self) -> &BTreeMap<Party, u64> {
        &self.deposits
    }
    pub fn deposit(&self, p: Party) -> u64 {
        self.deposits.get(&p).copied().unwrap_or(0)
    }
    pub fn escrow(&self) -> u64 {
        self.escrow
    }
    pub fn penalty_sink(&self) -> u64 {
        self.penalty_sink
    }
    pub fn outcome(&self) -> Option<&PublicOutcome> {
        self.outcome.as_ref()
    }
    pub fn commit_meta(&self) -> &BTreeMap<Party, CommitRecord> {
        &self.commit_meta
    }
    pub fn published_hashes(&self) -> &BTreeMap<(Party, usize), Digest> {
        &self.published_hashes
    }
    pub fn released_key(&self, winner: Party, index: usize) -> Option<Digest> {
        self.released_keys.get(&(winner, index)).copied()
    }
    pub fn failed_tasks(&self) -> &BTreeMap<Party, BTreeSet<usize>> {
        &self.failed_tasks
    }
    pub fn failed(&self, winner: Party) -> BTreeSet<usize> {
        self.failed_tasks.get(&winner).cloned().unwrap_or_default()
    }
    pub fn misbehavior(&self) -> &BTreeMap<Party, Vec<usize>> {
        &self.misbehavior
    }
    pub fn disputes(&self) -> &BTreeMap<Party, Vec<DisputeRecord>> {
        &self.disputes
    }
    pub fn slashes(&self) -> &[Slash] {
        &self.slashes
    }
    pub fn claims(&self) -> &BTreeMap<Party, ClaimRecord> {
        &self.claims
    }
    pub fn windows(&self) -> PhaseWindows {
        self.windows
    }
    pub fn t_exp(&self) -> Option<f64> {
        self.t_exp
    }
    pub fn clock(&self) -> f64 {
        self.clock
    }
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Σ wallets + escrow equals the initial supply and escrow equals
    /// Σ deposits + penalty sink, after every transaction so far.
    pub fn conserved(&self) -> bool {
        self.conserved && self.balanced()
    }

    fn balanced(&self) -> bool {
        let wallets: u128 = self.wallets.values().map(|&w| w as u128).sum();
        let deposits: u128 = self.deposits.values().map(|&d| d as u128).sum();
        wallets + self.escrow as u128 == self.supply && self.escrow as u128 == deposits + self.penalty_sink as u128
    }

    /// JSON-lines serialization of the log.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for tx in &self.log {
            out.push_str(&serde_json::to_string(tx).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    fn party_of(&self, pk: &PublicKey) -> Option<Party> {
        self.registry.get(pk).map(|(p, _)| *p)
    }

    fn authenticate(&self, tx: &SignedTx) -> Result<Party, TxStatus> {
        let Some(pk) = tx.body.sender() else {
            return reject("external transactions must name a sender");
        };
        let Some((party, cert)) = self.registry.get(&pk) else {
            return reject("unknown account");
        };
        if !cert.valid_at(tx.body.t_stamp()) {
            return reject("certificate not valid at t_stamp");
        }
        match &tx.sig {
            Some(sig) if pk.verify(&tx.body.digest().0, sig) => Ok(*party),
            _ => reject("bad signature"),
        }
    }

    fn push(&mut self, tx: SignedTx, t_confirm: f64, status: TxStatus) -> &LoggedTx {
        self.clock = self.clock.max(t_confirm);
        if !self.balanced() {
            self.conserved = false;
        }
        let seq = self.log.len() as u64;
        self.log.push(LoggedTx { seq, t_confirm, status, tx });
        self.log.last().expect("just pushed")
    }

    /// Processes one submitted transaction at its confirmation time. The
    /// transaction is logged whatever the outcome.
    pub fn apply(&mut self, tx: SignedTx, t_confirm: f64) -> &LoggedTx {
        let status = match self.authenticate(&tx).and_then(|who| self.dispatch(who, &tx.body)) {
            Ok(()) => TxStatus::Applied,
            Err(s) => s,
        };
        self.push(tx, t_confirm, status)
    }

    fn dispatch(&mut self, who: Party, body: &TxBody) -> Verdict {
        let w = self.windows;
        let t = body.t_stamp();
        match body {
            TxBody::Deposit { val, depo, .. } => {
                if !in_window(t, w.t1, w.t2) {
                    return reject("outside deposit window");
                }
                self.deposit_funds(who, *val, *depo)
            }
            TxBody::Outcome { beta, payments, excluded, .. } => {
                if who != Party::Enclave {
                    return reject("only the enclave publishes outcomes");
                }
                if !in_window(t, w.t2, w.t3) {
                    return reject("outside execution window");
                }
                if self.outcome.is_some() {
                    return reject("outcome already published");
                }
                self.outcome = Some(PublicOutcome {
                    beta: beta.clone(),
                    payments: payments.clone(),
                    excluded: excluded.clone(),
                });
                Ok(())
            }
            TxBody::Commit { entries, t_exp, .. } => {
                if who != Party::Uav {
                    return reject("only the UAV commits");
                }
                if !in_window(t, w.t3, w.t4) {
                    return reject("outside commit window");
                }
                self.commit(entries, *t_exp)
            }
            TxBody::PublishHash { index, h, .. } => {
                self.exchange_open(t)?;
                self.chain_slot(who, *index)?;
                if self.published_hashes.contains_key(&(who, *index)) {
                    return reject("hash already published");
                }
                self.published_hashes.insert((who, *index), *h);
                Ok(())
            }
            TxBody::SubmitKey { index, key, nonce, .. } => {
                self.exchange_open(t)?;
                self.submit_key(who, *index, key, *nonce, t)
            }
            TxBody::Misbehavior { accused, evidence, .. } => {
                if who != Party::Uav {
                    return reject("only the UAV reports result messages");
                }
                self.exchange_open(t)?;
                self.misbehavior_report(accused, evidence)
            }
            TxBody::Dispute { refused, cancelled, .. } => {
                self.exchange_open(t)?;
                let n = self.chain_slot(who, *refused)?;
                if self.released_keys.contains_key(&(who, *refused)) {
                    return reject("key already released for that task");
                }
                if cancelled.iter().any(|&c| c == 0 || c > n) {
                    return reject("cancelled index out of range");
                }
                self.disputes.entry(who).or_default().push(DisputeRecord {
                    refused: *refused,
                    cancelled: cancelled.clone(),
                    resolved: false,
                });
                Ok(())
            }
            TxBody::Resolve { winner, index, payword, .. } => {
                if who != Party::Uav {
                    return reject("only the UAV resolves disputes");
                }
                self.exchange_open(t)?;
                self.resolve(winner, *index, payword)
            }
            TxBody::Timeout { .. } => reject("timeouts are written by the contract"),
            TxBody::Claim { payword, count, p, .. } => self.claim(who, payword, *count, *p, t),
            TxBody::Refund { val, .. } => self.refund(who, *val, t),
        }
    }

    fn deposit_funds(&mut self, who: Party, val: u64, depo: u64) -> Verdict {
        let current = self.deposit(who);
        if current.checked_add(val) != Some(depo) {
            return reject("deposit record mismatch");
        }
        let bal = self.wallet(who);
        if bal < val {
            return reject("insufficient balance");
        }
        self.wallets.insert(who, bal - val);
        self.deposits.insert(who, depo);
        self.escrow += val;
        Ok(())
    }

    fn commit(&mut self, entries: &[CommitEntry], t_exp: f64) -> Verdict {
        let Some(outcome) = &self.outcome else {
            return reject("no outcome published");
        };
        if self.t_exp.is_some() {
            return reject("already committed");
        }
        if !(t_exp > self.windows.exchange_close) {
            return reject("expiry must follow the exchange phase");
        }
        let mut by_winner: BTreeMap<Party, BTreeSet<TaskId>> = BTreeMap::new();
        for (&task, a) in &outcome.beta {
            if let Assignee::Vehicle(v) = a {
                by_winner.entry(Party::Vehicle(*v)).or_default().insert(task);
            }
        }
        let mut records = BTreeMap::new();
        let mut total: u128 = 0;
        for e in entries {
            let Some(party) = self.party_of(&e.pk) else {
                return reject("commit names an unknown winner");
            };
            let tasks: BTreeSet<TaskId> = e.tasks.iter().copied().collect();
            if by_winner.get(&party) != Some(&tasks) || tasks.len() != e.tasks.len() {
                return reject(format!("{party}: committed tasks differ from the outcome"));
            }
            if e.meta.length != e.tasks.len() + 2 || e.payments.len() != e.tasks.len() {
                return reject(format!("{party}: chain length mismatch"));
            }
            for (task, p) in e.tasks.iter().zip(&e.payments) {
                if outcome.payments.get(task) != Some(p) {
                    return reject(format!("{party}: payment for task {task} differs from the outcome"));
                }
                total += *p as u128;
            }
            records.insert(
                party,
                CommitRecord {
                    entry: e.clone(),
                    deposit_at_commit: self.deposit(party),
                },
            );
        }
        if records.len() != by_winner.len() {
            return reject("commit does not cover every winner");
        }
        if total > self.deposit(Party::Uav) as u128 {
            return reject("UAV deposit does not cover the committed payments");
        }
        self.commit_meta = records;
        self.t_exp = Some(t_exp);
        Ok(())
    }

    fn exchange_open(&self, t: f64) -> Verdict {
        if self.t_exp.is_none() {
            return reject("nothing committed");
        }
        if self.closed || !in_window(t, self.windows.t4, self.windows.exchange_close) {
            return reject("outside exchange window");
        }
        Ok(())
    }

    /// Checks `index` addresses a committed task of `who`; returns the chain's task count.
    fn chain_slot(&self, who: Party, index: usize) -> Result<usize, TxStatus> {
        let Some(rec) = self.commit_meta.get(&who) else {
            return reject("sender has no committed chain");
        };
        let n = rec.entry.tasks.len();
        if index == 0 || index > n {
            return reject("task index out of range");
        }
        Ok(n)
    }

    fn submit_key(&mut self, who: Party, index: usize, key: &Digest, nonce: u64, t: f64) -> Verdict {
        self.chain_slot(who, index)?;
        let Some(h) = self.published_hashes.get(&(who, index)).copied() else {
            return reject("no published hash for task");
        };
        if self.released_keys.contains_key(&(who, index)) || self.failed(who).contains(&index) {
            return reject("task already settled");
        }
        let rec = &self.commit_meta[&who];
        let task = rec.entry.tasks[index - 1];
        let expected_nonce = rec.entry.nonce0 + index as u64;
        let deadline = self.task_deadlines.get(&task).copied().unwrap_or(f64::NEG_INFINITY);
        let reason = if nonce != expected_nonce {
            Some("stale nonce")
        } else if key_commitment(key, nonce) != h {
            Some("key does not match commitment")
        } else if t > deadline {
            Some("key after task deadline")
        } else {
            None
        };
        match reason {
            None => {
                self.released_keys.insert((who, index), *key);
                Ok(())
            }
            Some(r) => {
                self.fail_task(who, index);
                Err(TxStatus::Failed(r.into()))
            }
        }
    }

    /// Adds `index` to `fMap[winner]` and slashes the winner's per-task deposit share.
    fn fail_task(&mut self, winner: Party, index: usize) -> u64 {
        self.failed_tasks.entry(winner).or_default().insert(index);
        let rec = &self.commit_meta[&winner];
        let share = (rec.deposit_at_commit as f64 * self.slash_fraction / rec.entry.tasks.len() as f64).floor() as u64;
        let amount = share.min(self.deposit(winner));
        *self.deposits.entry(winner).or_insert(0) -= amount;
        self.penalty_sink += amount;
        self.slashes.push(Slash {
            party: winner,
            winner,
            indices: vec![index],
            amount,
        });
        amount
    }

    fn misbehavior_report(&mut self, accused: &PublicKey, ev: &Evidence) -> Verdict {
        let Some(party) = self.party_of(accused) else {
            return reject("unknown accused");
        };
        self.chain_slot(party, ev.index)?;
        let digest = resmsg_digest(accused, ev.index, ev.nonce, &ev.sigma_digest, &ev.h, &ev.pi);
        if !accused.verify(&digest.0, &ev.winner_sig) {
            return reject("evidence not signed by the accused");
        }
        let expected_nonce = self.commit_meta[&party].entry.nonce0 + ev.index as u64;
        let faulty = ev.nonce != expected_nonce || ev.pi != proof_stub(&ev.sigma_digest, &ev.h);
        if !faulty {
            return reject("evidence shows no fault");
        }
        self.misbehavior.entry(party).or_default().push(ev.index);
        Ok(())
    }

    fn resolve(&mut self, winner: &PublicKey, index: usize, payword: &Digest) -> Verdict {
        let Some(party) = self.party_of(winner) else {
            return reject("unknown winner");
        };
        let Some(rec) = self.commit_meta.get(&party) else {
            return reject("winner has no committed chain");
        };
        if !verify_claim(&rec.entry.meta.root, payword, index, &rec.entry.payments) {
            return reject("payword not on the committed chain");
        }
        let Some(d) = self
            .disputes
            .get_mut(&party)
            .and_then(|ds| ds.iter_mut().find(|d| d.refused == index && !d.resolved))
        else {
            return reject("no open dispute for that task");
        };
        d.resolved = true;
        Ok(())
    }

    /// End of the exchange phase: every committed task without a released
    /// key becomes a failure, unless an open dispute blames the UAV for it,
    /// in which case the UAV forfeits that task's payment into the sink.
    pub fn close_exchange(&mut self, t: f64) {
        if self.closed || self.t_exp.is_none() {
            self.closed = true;
            return;
        }
        self.closed = true;
        let winners: Vec<Party> = self.commit_meta.keys().copied().collect();
        for winner in winners {
            let n = self.commit_meta[&winner].entry.tasks.len();
            let blamed: BTreeSet<usize> = self
                .disputes
                .get(&winner)
                .map(|ds| {
                    ds.iter()
                        .filter(|d| !d.resolved)
                        .flat_map(|d| std::iter::once(d.refused).chain(d.cancelled.iter().copied()))
                        .collect()
                })
                .unwrap_or_default();
            let mut uav_fault = Vec::new();
            for index in 1..=n {
                if self.released_keys.contains_key(&(winner, index)) || self.failed(winner).contains(&index) {
                    continue;
                }
                if blamed.contains(&index) {
                    uav_fault.push(index);
                    continue;
                }
                let penalty = self.fail_task(winner, index);
                let body = TxBody::Timeout {
                    accused: winner,
                    winner,
                    indices: vec![index],
                    penalty,
                    t_stamp: t,
                };
                self.push(SignedTx { body, sig: None }, t, TxStatus::Applied);
            }
            if !uav_fault.is_empty() {
                let payments = &self.commit_meta[&winner].entry.payments;
                let owed: u64 = uav_fault.iter().map(|&i| payments[i - 1]).sum();
                let amount = owed.min(self.deposit(Party::Uav));
                *self.deposits.entry(Party::Uav).or_insert(0) -= amount;
                self.penalty_sink += amount;
                self.slashes.push(Slash {
                    party: Party::Uav,
                    winner,
                    indices: uav_fault.clone(),
                    amount,
                });
                let body = TxBody::Timeout {
                    accused: Party::Uav,
                    winner,
                    indices: uav_fault,
                    penalty: amount,
                    t_stamp: t,
                };
                self.push(SignedTx { body, sig: None }, t, TxStatus::Applied);
            }
        }
    }

    fn claim(&mut self, who: Party, payword: &Digest, count: usize, p: u64, t: f64) -> Verdict {
        let Some(t_exp) = self.t_exp else {
            return reject("nothing committed");
        };
        if !self.closed || !(t >= self.windows.exchange_close && t < t_exp) {
            return reject("outside claim window");
        }
        if self.claims.contains_key(&who) {
            return reject("already claimed");
        }
        let Some(rec) = self.commit_meta.get(&who) else {
            return reject("no committed chain");
        };
        if count > rec.entry.tasks.len() {
            return reject("count exceeds chain");
        }
        if !verify_claim(&rec.entry.meta.root, payword, count, &rec.entry.payments) {
            return reject("payword does not fold to the committed root");
        }
        let due = due_payment(&rec.entry.payments, count, &self.failed(who));
        if p != due {
            return reject(format!("claimed {p}, due {due}"));
        }
        let uav = self.deposit(Party::Uav);
        if uav < due {
            return reject("UAV deposit exhausted");
        }
        self.deposits.insert(Party::Uav, uav - due);
        self.escrow -= due;
        *self.wallets.entry(who).or_insert(0) += due;
        self.claims.insert(who, ClaimRecord { count, paid: due });
        Ok(())
    }

    fn refund(&mut self, who: Party, val: u64, t: f64) -> Verdict {
        let after = self.t_exp.unwrap_or(self.windows.t2);
        if t < after || (self.t_exp.is_some() && !self.closed) {
            return reject("refunds open after settlement");
        }
        if self.refunded.contains(&who) {
            return reject("already refunded");
        }
        let depo = self.deposit(who);
        if val != depo {
            return reject(format!("refund {val} != deposit {depo}"));
        }
        self.deposits.insert(who, 0);
        self.escrow -= val;
        *self.wallets.entry(who).or_insert(0) += val;
        self.refunded.insert(who);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::hashchain::HashChain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const V: Party = Party::Vehicle(7);

    struct Fixture {
        ledger: LedgerState,
        uav: SigningKey,
        enclave: SigningKey,
        veh: SigningKey,
        chain: HashChain,
        key: Digest,
    }

    fn windows() -> PhaseWindows {
        PhaseWindows { t0: 0.0, t1: 1.0, t2: 2.0, t3: 3.0, t4: 4.0, exchange_close: 8.0 }
    }

    fn fresh() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ca = SigningKey::generate(&mut rng);
        let uav = SigningKey::generate(&mut rng);
        let enclave = SigningKey::generate(&mut rng);
        let veh = SigningKey::generate(&mut rng);
        let wallets: BTreeMap<_, _> = [(Party::Uav, 1_000), (V, 100)].into();
        let deadlines = [(1, 6.0), (2, 7.0)].into();
        let mut ledger = LedgerState::new(ca.public(), windows(), deadlines, wallets, 1.0);
        for (p, k) in [(Party::Uav, &uav), (Party::Enclave, &enclave), (V, &veh)] {
            assert!(ledger.register(p, Certificate::issue(&ca, k.public(), 0.0, 100.0)));
        }
        let chain = HashChain::generate(vec![30, 50], &mut rng);
        let key = Digest([9; 32]);
        Fixture { ledger, uav, enclave, veh, chain, key }
    }

    fn ok(f: &mut Fixture, body: TxBody, key: &SigningKey, t: f64) -> TxStatus {
        f.ledger.apply(SignedTx::sign(body, key), t).status.clone()
    }

    fn deposit(f: &mut Fixture, who: &SigningKey, val: u64, depo: u64, t: f64) -> TxStatus {
        let body = TxBody::Deposit { val, depo, pk: who.public(), t_stamp: t };
        let k = who.clone();
        ok(f, body, &k, t)
    }

    /// Runs deposits, outcome and commit for one winner holding tasks 1 and 2.
    fn committed() -> Fixture {
        let mut f = fresh();
        let (uav, veh, enc) = (f.uav.clone(), f.veh.clone(), f.enclave.clone());
        assert_eq!(deposit(&mut f, &uav, 200, 200, 1.1), TxStatus::Applied);
        assert_eq!(deposit(&mut f, &veh, 40, 40, 1.2), TxStatus::Applied);
        let outcome = TxBody::Outcome {
            beta: [(1, Assignee::Vehicle(7)), (2, Assignee::Vehicle(7))].into(),
            payments: [(1, 30), (2, 50)].into(),
            excluded: vec![],
            program_hash: Digest([0; 32]),
            pk: enc.public(),
            t_stamp: 2.5,
        };
        assert_eq!(ok(&mut f, outcome, &enc, 2.6), TxStatus::Applied);
        let entry = CommitEntry {
            meta: Meta { root: f.chain.root(), length: f.chain.len() },
            payments: vec![30, 50],
            tasks: vec![1, 2],
            nonce0: 100,
            pk: veh.public(),
        };
        let commit = TxBody::Commit { entries: vec![entry], pk_uav: uav.public(), t_stamp: 3.5, t_exp: 20.0 };
        assert_eq!(ok(&mut f, commit, &uav, 3.6), TxStatus::Applied);
        f
    }

    fn publish_and_release(f: &mut Fixture, index: usize, t: f64) -> TxStatus {
        let veh = f.veh.clone();
        let nonce = 100 + index as u64;
        let h = key_commitment(&f.key, nonce);
        let publish = TxBody::PublishHash { index, h, pk: veh.public(), t_stamp: t };
        assert_eq!(ok(f, publish, &veh, t), TxStatus::Applied);
        let submit = TxBody::SubmitKey { index, key: f.key, nonce, pk: veh.public(), t_stamp: t };
        ok(f, submit, &veh, t)
    }

    #[test]
    fn deposits_add_up_and_respect_balance() {
        let mut f = fresh();
        let veh = f.veh.clone();
        assert_eq!(deposit(&mut f, &veh, 0, 0, 1.1), TxStatus::Applied);
        assert_eq!(deposit(&mut f, &veh, 30, 30, 1.2), TxStatus::Applied);
        assert_eq!(deposit(&mut f, &veh, 20, 50, 1.3), TxStatus::Applied);
        assert_eq!(f.ledger.deposit(V), 50);
        assert_eq!(f.ledger.wallet(V), 50);
        assert!(matches!(deposit(&mut f, &veh, 51, 101, 1.4), TxStatus::Rejected(_)));
        assert!(matches!(deposit(&mut f, &veh, 5, 60, 1.4), TxStatus::Rejected(_)));
        assert!(matches!(deposit(&mut f, &veh, 5, 55, 2.5), TxStatus::Rejected(_)));
        assert_eq!(f.ledger.escrow(), 50);
        assert!(f.ledger.conserved());
    }

    #[test]
    fn authentication() {
        let mut f = fresh();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let stranger = SigningKey::generate(&mut rng);
        assert!(matches!(deposit(&mut f, &stranger, 1, 1, 1.1), TxStatus::Rejected(_)));
        let body = TxBody::Deposit { val: 1, depo: 1, pk: f.veh.public(), t_stamp: 1.1 };
        let forged = SignedTx::sign(body, &stranger);
        assert!(matches!(f.ledger.apply(forged, 1.1).status, TxStatus::Rejected(_)));
        let unsigned = SignedTx {
            body: TxBody::Deposit { val: 1, depo: 1, pk: f.veh.public(), t_stamp: 1.1 },
            sig: None,
        };
        assert!(matches!(f.ledger.apply(unsigned, 1.1).status, TxStatus::Rejected(_)));
        assert_eq!(f.ledger.log().len(), 3);
    }

    #[test]
    fn only_enclave_publishes_outcome() {
        let mut f = fresh();
        let uav = f.uav.clone();
        let body = TxBody::Outcome {
            beta: BTreeMap::new(),
            payments: BTreeMap::new(),
            excluded: vec![],
            program_hash: Digest([0; 32]),
            pk: uav.public(),
            t_stamp: 2.5,
        };
        assert!(matches!(ok(&mut f, body, &uav, 2.6), TxStatus::Rejected(_)));
        assert!(f.ledger.outcome().is_none());
    }

    #[test]
    fn honest_settlement() {
        let mut f = committed();
        assert_eq!(publish_and_release(&mut f, 1, 4.5), TxStatus::Applied);
        assert_eq!(publish_and_release(&mut f, 2, 4.6), TxStatus::Applied);
        f.ledger.close_exchange(8.5);
        let veh = f.veh.clone();
        let pw = f.chain.payword_for_task(2).unwrap();
        let claim = TxBody::Claim { payword: pw, count: 2, p: 80, pk: veh.public(), t_stamp: 9.0 };
        assert_eq!(ok(&mut f, claim.clone(), &veh, 9.1), TxStatus::Applied);
        assert!(matches!(ok(&mut f, claim, &veh, 9.2), TxStatus::Rejected(_)));
        assert_eq!(f.ledger.wallet(V), 100 - 40 + 80);
        assert!(f.ledger.conserved());
    }

    #[test]
    fn late_and_stale_keys_fail_the_task() {
        let mut f = committed();
        // Task 1's deadline is 6.0.
        assert!(matches!(publish_and_release(&mut f, 1, 6.5), TxStatus::Failed(_)));
        let veh = f.veh.clone();
        let h = key_commitment(&f.key, 102);
        assert_eq!(ok(&mut f, TxBody::PublishHash { index: 2, h, pk: veh.public(), t_stamp: 4.5 }, &veh, 4.5), TxStatus::Applied);
        let stale = TxBody::SubmitKey { index: 2, key: f.key, nonce: 101, pk: veh.public(), t_stamp: 4.6 };
        assert!(matches!(ok(&mut f, stale, &veh, 4.6), TxStatus::Failed(_)));
        assert_eq!(f.ledger.failed(V), [1, 2].into());
        // 40 deposit, two tasks, 100% slash.
        assert_eq!(f.ledger.penalty_sink(), 40);
        assert!(f.ledger.conserved());
    }

    #[test]
    fn claims_are_checked() {
        let mut f = committed();
        assert_eq!(publish_and_release(&mut f, 1, 4.5), TxStatus::Applied);
        let veh = f.veh.clone();
        let pw1 = f.chain.payword_for_task(1).unwrap();
        let early = TxBody::Claim { payword: pw1, count: 1, p: 30, pk: veh.public(), t_stamp: 7.0 };
        assert!(matches!(ok(&mut f, early, &veh, 7.1), TxStatus::Rejected(_)));
        f.ledger.close_exchange(8.5);
        assert_eq!(f.ledger.failed(V), [2].into());
        let claims = [
            TxBody::Claim { payword: Digest([1; 32]), count: 1, p: 30, pk: veh.public(), t_stamp: 9.0 },
            TxBody::Claim { payword: pw1, count: 3, p: 30, pk: veh.public(), t_stamp: 9.0 },
            TxBody::Claim { payword: pw1, count: 1, p: 31, pk: veh.public(), t_stamp: 9.0 },
            TxBody::Claim { payword: pw1, count: 2, p: 30, pk: veh.public(), t_stamp: 9.0 },
        ];
        for c in claims {
            assert!(matches!(ok(&mut f, c, &veh, 9.1), TxStatus::Rejected(_)));
        }
        let good = TxBody::Claim { payword: pw1, count: 1, p: 30, pk: veh.public(), t_stamp: 9.0 };
        assert_eq!(ok(&mut f, good, &veh, 9.1), TxStatus::Applied);
        assert!(f.ledger.conserved());
    }

    #[test]
    fn refunds_once_after_expiry() {
        let mut f = committed();
        assert_eq!(publish_and_release(&mut f, 1, 4.5), TxStatus::Applied);
        assert_eq!(publish_and_release(&mut f, 2, 4.6), TxStatus::Applied);
        let uav = f.uav.clone();
        let early = TxBody::Refund { val: 200, pk: uav.public(), t_stamp: 10.0 };
        assert!(matches!(ok(&mut f, early, &uav, 10.1), TxStatus::Rejected(_)));
        f.ledger.close_exchange(8.5);
        let wrong = TxBody::Refund { val: 199, pk: uav.public(), t_stamp: 21.0 };
        assert!(matches!(ok(&mut f, wrong, &uav, 21.1), TxStatus::Rejected(_)));
        let refund = TxBody::Refund { val: 200, pk: uav.public(), t_stamp: 21.0 };
        assert_eq!(ok(&mut f, refund.clone(), &uav, 21.1), TxStatus::Applied);
        assert!(matches!(ok(&mut f, refund, &uav, 21.2), TxStatus::Rejected(_)));
        assert_eq!(f.ledger.wallet(Party::Uav), 1_000);
        assert!(f.ledger.conserved());
    }

    #[test]
    fn open_dispute_blames_the_uav() {
        let mut f = committed();
        let veh = f.veh.clone();
        let h = key_commitment(&f.key, 101);
        assert_eq!(ok(&mut f, TxBody::PublishHash { index: 1, h, pk: veh.public(), t_stamp: 4.5 }, &veh, 4.5), TxStatus::Applied);
        let dispute = TxBody::Dispute { refused: 1, cancelled: vec![2], pk: veh.public(), t_stamp: 4.7 };
        assert_eq!(ok(&mut f, dispute, &veh, 4.8), TxStatus::Applied);
        f.ledger.close_exchange(8.5);
        assert!(f.ledger.failed(V).is_empty());
        assert_eq!(f.ledger.deposit(Party::Uav), 200 - 80);
        assert_eq!(f.ledger.penalty_sink(), 80);
        assert!(f.ledger.conserved());
        assert_eq!(f.ledger.log().last().unwrap().tx.body.kind(), "timeout");
    }

    #[test]
    fn resolved_dispute_clears_the_uav() {
        let mut f = committed();
        let (veh, uav) = (f.veh.clone(), f.uav.clone());
        let dispute = TxBody::Dispute { refused: 1, cancelled: vec![], pk: veh.public(), t_stamp: 4.7 };
        assert_eq!(ok(&mut f, dispute, &veh, 4.8), TxStatus::Applied);
        let bad = TxBody::Resolve { winner: veh.public(), index: 1, payword: Digest([3; 32]), pk: uav.public(), t_stamp: 5.0 };
        assert!(matches!(ok(&mut f, bad, &uav, 5.1), TxStatus::Rejected(_)));
        let pw = f.chain.payword_for_task(1).unwrap();
        let good = TxBody::Resolve { winner: veh.public(), index: 1, payword: pw, pk: uav.public(), t_stamp: 5.0 };
        assert_eq!(ok(&mut f, good, &uav, 5.1), TxStatus::Applied);
        f.ledger.close_exchange(8.5);
        assert_eq!(f.ledger.deposit(Party::Uav), 200);
        assert_eq!(f.ledger.failed(V), [1, 2].into());
    }
}
