//! End-to-end round: attestation, sealed bids, deposits, enclave
//! execution, commit, per-task exchange, claims and refunds, driven by a
//! single event queue on a logical clock.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::crypto::{
    keccak256, open, random_bytes, seal, sym_decrypt, sym_encrypt, Digest, PublicKey, SealedBox, SealingKey,
    Signature, SigningKey,
};
use super::enclave::{required_deposit, seal_and_submit_bid, EnclaveSim};
use super::hashchain::{due_payment, verify_claim, HashChain};
use super::ledger::{
    key_commitment, proof_stub, resmsg_digest, Certificate, CommitEntry, Evidence, LedgerState, LoggedTx, Meta,
    PhaseWindows, SignedTx, TxBody, TxStatus,
};
use super::{to_units, ExchangeError, Party};
use crate::auction::{matching_order, Assignee};
use crate::cost::{processing_time, transmission_time, TaskId};
use crate::mobility::VehicleId;
use crate::{Bid, Env, Task};

/// Scripted deviation from the protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "snake_case")]
pub enum AdversaryScript {
    Honest,
    /// The winners of these tasks never send results.
    BidderAborts { tasks: BTreeSet<TaskId> },
    /// The UAV stops handing out paywords after each winner's first `after` tasks.
    UavRefusesPaywords { after: usize },
    /// The winners reveal a key that does not match their commitment.
    WrongKey { tasks: BTreeSet<TaskId> },
    /// The winner resends a result message with a stale nonce.
    Replay { task: TaskId },
}

impl AdversaryScript {
    fn parse_tasks(s: &str) -> Result<BTreeSet<TaskId>, String> {
        s.split(',')
            .filter(|t| !t.is_empty())
            .map(|t| t.trim().parse().map_err(|_| format!("bad task id `{t}`")))
            .collect()
    }

    /// Parties that deviate under this script, given the task winners.
    pub fn misbehaving(&self, winners: &BTreeMap<TaskId, VehicleId>) -> BTreeSet<Party> {
        let of = |t: &TaskId| winners.get(t).map(|&v| Party::Vehicle(v));
        match self {
            AdversaryScript::Honest => BTreeSet::new(),
            AdversaryScript::BidderAborts { tasks } | AdversaryScript::WrongKey { tasks } => {
                tasks.iter().filter_map(of).collect()
            }
            AdversaryScript::Replay { task } => of(task).into_iter().collect(),
            AdversaryScript::UavRefusesPaywords { .. } => [Party::Uav].into(),
        }
    }
}

impl fmt::Display for AdversaryScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |t: &BTreeSet<TaskId>| t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            AdversaryScript::Honest => f.write_str("honest"),
            AdversaryScript::BidderAborts { tasks } => write!(f, "bidder_aborts:{}", list(tasks)),
            AdversaryScript::UavRefusesPaywords { after } => write!(f, "uav_refuses_paywords:{after}"),
            AdversaryScript::WrongKey { tasks } => write!(f, "wrong_key:{}", list(tasks)),
            AdversaryScript::Replay { task } => write!(f, "replay:{task}"),
        }
    }
}

impl FromStr for AdversaryScript {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        match name.trim() {
            "honest" => Ok(AdversaryScript::Honest),
            "bidder_aborts" => Ok(AdversaryScript::BidderAborts { tasks: Self::parse_tasks(arg)? }),
            "wrong_key" => Ok(AdversaryScript::WrongKey { tasks: Self::parse_tasks(arg)? }),
            "uav_refuses_paywords" => arg
                .trim()
                .parse()
                .map(|after| AdversaryScript::UavRefusesPaywords { after })
                .map_err(|_| format!("bad count `{arg}`")),
            "replay" => arg
                .trim()
                .parse()
                .map(|task| AdversaryScript::Replay { task })
                .map_err(|_| format!("bad task id `{arg}`")),
            other => Err(format!("unknown adversary script `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub deposit_multiplier: f64,
    /// Fraction of a winner's per-task deposit share lost per failed task.
    pub slash_fraction: f64,
    /// Confirmation delay drawn uniformly from this range, seconds.
    pub consensus_delay: (f64, f64),
    /// Width of each of the init, deposit, execution and commit phases.
    pub phase_length: f64,
    pub claim_window: f64,
    /// How long a winner waits for a payword before disputing.
    pub payword_patience: f64,
    /// Bidders that deposit only half of what is required.
    pub underfunded: BTreeSet<VehicleId>,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            deposit_multiplier: 1.5,
            slash_fraction: 1.0,
            consensus_delay: (0.3, 0.81),
            phase_length: 2.0,
            claim_window: 3.0,
            payword_patience: 0.05,
            underfunded: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskVerdict {
    DeliveredAndPaid,
    NeitherWithPenalty,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub script: AdversaryScript,
    pub winners: BTreeMap<TaskId, VehicleId>,
    pub cloud_tasks: Vec<TaskId>,
    pub payments: BTreeMap<TaskId, u64>,
    pub excluded: Vec<VehicleId>,
    pub verdicts: BTreeMap<TaskId, TaskVerdict>,
    pub initial_wallets: BTreeMap<Party, u64>,
    pub final_wallets: BTreeMap<Party, u64>,
    pub escrow: u64,
    pub penalty_sink: u64,
    pub conserved: bool,
    pub fmap: BTreeMap<Party, BTreeSet<usize>>,
    pub tx_counts: BTreeMap<String, usize>,
    /// Net wallet change minus resource cost (vehicles) or plus the cloud
    /// value of delivered results (UAV).
    pub payoffs: BTreeMap<Party, f64>,
    /// Logical time when the last event ran.
    pub finished_at: f64,
    pub log: Vec<LoggedTx>,
}

impl ProtocolReport {
    pub fn violations(&self) -> usize {
        self.verdicts.values().filter(|v| **v == TaskVerdict::Violation).count()
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|t| serde_json::to_string(t).expect("log entries serialize") + "\n")
            .collect()
    }

    pub fn total_txs(&self) -> usize {
        self.tx_counts.values().sum()
    }
}

/// Off-chain result message from a winner to the UAV.
#[derive(Debug, Clone)]
struct ResMsg {
    vehicle: VehicleId,
    index: usize,
    sigma: SealedBox,
    h: Digest,
    pi: Digest,
    nonce: u64,
    sig: Signature,
}

#[derive(Debug)]
enum Event {
    Confirm(SignedTx),
    Execute,
    Commit,
    TaskReady { vehicle: VehicleId, index: usize },
    Result(ResMsg),
    Payword { vehicle: VehicleId, index: usize, payword: Digest, sig: Signature },
    PaywordTimeout { vehicle: VehicleId, index: usize },
    Close,
    Claims,
    Refunds,
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

fn payword_digest(vehicle: &PublicKey, index: usize, payword: &Digest) -> Digest {
    keccak256(&[b"seal-payword", &vehicle.0, &(index as u64).to_be_bytes(), &payword.0])
}

fn result_payload(task: TaskId, vehicle: VehicleId) -> Vec<u8> {
    keccak256(&[b"seal-task-result", &task.to_be_bytes(), &vehicle.to_be_bytes()]).0.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Behavior {
    Honest,
    Abort,
    WrongKey,
    Replay,
}

struct VehicleActor {
    id: VehicleId,
    key: SigningKey,
    bid: Bid,
    tasks: Vec<TaskId>,
    payments: Vec<u64>,
    root: Digest,
    nonce0: u64,
    keys: BTreeMap<usize, Digest>,
    sent: BTreeSet<usize>,
    computed: BTreeSet<usize>,
    paid_for: BTreeSet<usize>,
    best_payword: Option<(usize, Digest)>,
    disputed: bool,
}

struct UavActor {
    key: SigningKey,
    seal_key: SealingKey,
    chains: BTreeMap<VehicleId, HashChain>,
    sigmas: BTreeMap<(VehicleId, usize), SealedBox>,
    seen_nonces: BTreeMap<VehicleId, BTreeSet<u64>>,
    revealed: BTreeSet<(VehicleId, usize)>,
    delivered: BTreeSet<(VehicleId, usize)>,
}

struct Sim<'a> {
    tasks: &'a [Task],
    env: &'a Env,
    config: &'a ExchangeConfig,
    script: &'a AdversaryScript,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: f64,
    last_confirm: BTreeMap<PublicKey, f64>,
    ledger: LedgerState,
    enclave: EnclaveSim,
    uav: UavActor,
    vehicles: BTreeMap<VehicleId, VehicleActor>,
    sealed: Vec<(VehicleId, SealedBox)>,
    participants: Vec<Party>,
    windows: PhaseWindows,
    t_exp: f64,
    task_by_id: BTreeMap<TaskId, &'a Task>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: f64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, event }));
    }

    /// Sends a transaction stamped `now`. A sender's transactions confirm in
    /// submission order.
    fn submit(&mut self, body: TxBody, key: &SigningKey) {
        let (lo, hi) = self.config.consensus_delay;
        let delay = if hi > lo { self.rng.gen_range(lo..hi) } else { lo };
        let pk = key.public();
        let prev = self.last_confirm.get(&pk).copied().unwrap_or(f64::NEG_INFINITY);
        let at = (self.now + delay).max(prev + 1e-6);
        self.last_confirm.insert(pk, at);
        let tx = SignedTx::sign(body, key);
        self.schedule(at, Event::Confirm(tx));
    }

    fn behavior(&self, task: TaskId) -> Behavior {
        match self.script {
            AdversaryScript::BidderAborts { tasks } if tasks.contains(&task) => Behavior::Abort,
            AdversaryScript::WrongKey { tasks } if tasks.contains(&task) => Behavior::WrongKey,
            AdversaryScript::Replay { task: t } if *t == task => Behavior::Replay,
            _ => Behavior::Honest,
        }
    }

    fn run(&mut self) {
        while let Some(Reverse(s)) = self.queue.pop() {
            self.now = s.time;
            self.handle(s.event);
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Confirm(tx) => self.on_confirm(tx),
            Event::Execute => self.on_execute(),
            Event::Commit => self.on_commit(),
            Event::TaskReady { vehicle, index } => self.on_task_ready(vehicle, index),
            Event::Result(msg) => self.on_result(msg),
            Event::Payword { vehicle, index, payword, sig } => self.on_payword(vehicle, index, payword, sig),
            Event::PaywordTimeout { vehicle, index } => self.on_payword_timeout(vehicle, index),
            Event::Close => {
                let t = self.now;
                self.ledger.close_exchange(t);
            }
            Event::Claims => self.on_claims(),
            Event::Refunds => self.on_refunds(),
        }
    }

    fn on_confirm(&mut self, tx: SignedTx) {
        let logged = self.ledger.apply(tx, self.now).clone();
        if logged.status != TxStatus::Applied {
            return;
        }
        match logged.tx.body {
            TxBody::SubmitKey { index, pk, .. } => {
                let Some(vid) = self.vehicle_of(&pk) else { return };
                self.uav_decrypt(vid, index);
            }
            TxBody::Dispute { refused, pk, .. } => {
                let Some(vid) = self.vehicle_of(&pk) else { return };
                // An honest UAV answers a groundless dispute with the payword it sent.
                if self.uav.revealed.contains(&(vid, refused)) {
                    if let Some(pw) = self.uav.chains.get(&vid).and_then(|c| c.payword_for_task(refused)) {
                        let body = TxBody::Resolve {
                            winner: pk,
                            index: refused,
                            payword: pw,
                            pk: self.uav.key.public(),
                            t_stamp: self.now,
                        };
                        let key = self.uav.key.clone();
                        self.submit(body, &key);
                    }
                }
            }
            _ => {}
        }
    }

    fn vehicle_of(&self, pk: &PublicKey) -> Option<VehicleId> {
        self.vehicles.values().find(|v| v.key.public() == *pk).map(|v| v.id)
    }

    fn uav_decrypt(&mut self, vid: VehicleId, index: usize) {
        let Some(key) = self.ledger.released_key(Party::Vehicle(vid), index) else { return };
        let Some(sigma) = self.uav.sigmas.get(&(vid, index)) else { return };
        let Some(&task) = self.vehicles[&vid].tasks.get(index - 1) else { return };
        let plain = open(&self.uav.seal_key, sigma).and_then(|inner| sym_decrypt(&key.0, &inner));
        if plain.as_deref() == Ok(result_payload(task, vid).as_slice()) {
            self.uav.delivered.insert((vid, index));
        }
    }

    fn on_execute(&mut self) {
        let run = self.enclave.execute(
            &self.sealed,
            self.ledger.deposits(),
            self.tasks,
            self.env,
            self.config.deposit_multiplier,
        );
        let Ok(run) = run else { return };
        let body = TxBody::Outcome {
            beta: run.public.beta,
            payments: run.public.payments,
            excluded: run.public.excluded,
            program_hash: self.enclave.program_hash(),
            pk: self.enclave.signer_public(),
            t_stamp: self.now,
        };
        let key = self.enclave.signer().clone();
        self.submit(body, &key);
    }

    fn on_commit(&mut self) {
        let Some(outcome) = self.ledger.outcome().cloned() else { return };
        let order: Vec<TaskId> = matching_order(self.tasks).into_iter().map(|i| self.tasks[i].id).collect();
        let mut per_winner: BTreeMap<VehicleId, Vec<TaskId>> = BTreeMap::new();
        for task in order {
            if let Some(Assignee::Vehicle(v)) = outcome.beta.get(&task) {
                per_winner.entry(*v).or_default().push(task);
            }
        }
        let mut entries = Vec::new();
        for (vid, tasks) in per_winner {
            let payments: Vec<u64> = tasks.iter().map(|t| outcome.payments[t]).collect();
            let chain = HashChain::generate(payments.clone(), &mut self.rng);
            let nonce0 = self.rng.gen_range(0..u32::MAX as u64);
            let actor = self.vehicles.get_mut(&vid).expect("winners are participants");
            actor.tasks = tasks.clone();
            actor.payments = payments.clone();
            actor.root = chain.root();
            actor.nonce0 = nonce0;
            entries.push(CommitEntry {
                meta: Meta { root: chain.root(), length: chain.len() },
                payments,
                tasks: tasks.clone(),
                nonce0,
                pk: actor.key.public(),
            });
            self.uav.chains.insert(vid, chain);

            let ctx = self.env.bidders[&vid];
            let ready: Vec<f64> = tasks
                .iter()
                .map(|task| {
                    let spec = self.task_by_id[task];
                    let (chi, _) = actor.bid.entry(*task).expect("winner bid on its task");
                    transmission_time(spec, ctx.link_rate) + processing_time(spec, chi)
                })
                .collect();
            for (i, done) in ready.into_iter().enumerate() {
                let at = self.windows.t4 + done;
                self.schedule(at, Event::TaskReady { vehicle: vid, index: i + 1 });
            }
        }
        let body = TxBody::Commit {
            entries,
            pk_uav: self.uav.key.public(),
            t_stamp: self.now,
            t_exp: self.t_exp,
        };
        let key = self.uav.key.clone();
        self.submit(body, &key);
    }

    fn on_task_ready(&mut self, vid: VehicleId, index: usize) {
        let task = self.vehicles[&vid].tasks[index - 1];
        let behavior = self.behavior(task);
        if self.vehicles[&vid].disputed || behavior == Behavior::Abort {
            return;
        }
        let uav_box_key = self.uav.seal_key.public();
        let actor = self.vehicles.get_mut(&vid).expect("known vehicle");
        let key = Digest(random_bytes(&mut self.rng));
        let (payload, nonce) = match behavior {
            Behavior::Replay => (random_bytes::<32>(&mut self.rng).to_vec(), actor.nonce0 + index as u64 - 1),
            _ => (result_payload(task, vid), actor.nonce0 + index as u64),
        };
        let inner = sym_encrypt(&key.0, &payload, &mut self.rng);
        let sigma = seal(&uav_box_key, &inner, &mut self.rng);
        let h = key_commitment(&key, nonce);
        let pi = proof_stub(&sigma.digest(), &h);
        let pk = actor.key.public();
        let sig = actor.key.sign(&resmsg_digest(&pk, index, nonce, &sigma.digest(), &h, &pi).0);
        actor.sent.insert(index);
        let msg = ResMsg { vehicle: vid, index, sigma, h, pi, nonce, sig };
        let now = self.now;
        if behavior == Behavior::Replay {
            self.schedule(now, Event::Result(msg));
            return;
        }
        actor.computed.insert(index);
        actor.keys.insert(index, key);
        let vkey = actor.key.clone();
        self.submit(TxBody::PublishHash { index, h, pk, t_stamp: now }, &vkey);
        self.schedule(now, Event::Result(msg));
        self.schedule(now + self.config.payword_patience, Event::PaywordTimeout { vehicle: vid, index });
    }

    fn on_result(&mut self, msg: ResMsg) {
        let Some(actor) = self.vehicles.get(&msg.vehicle) else { return };
        let pk = actor.key.public();
        let sd = msg.sigma.digest();
        if !pk.verify(&resmsg_digest(&pk, msg.index, msg.nonce, &sd, &msg.h, &msg.pi).0, &msg.sig) {
            return;
        }
        let seen = self.uav.seen_nonces.entry(msg.vehicle).or_default();
        let fresh = msg.nonce == actor.nonce0 + msg.index as u64 && !seen.contains(&msg.nonce);
        if !fresh || msg.pi != proof_stub(&sd, &msg.h) {
            let body = TxBody::Misbehavior {
                accused: pk,
                evidence: Evidence {
                    index: msg.index,
                    nonce: msg.nonce,
                    sigma_digest: sd,
                    h: msg.h,
                    pi: msg.pi,
                    winner_sig: msg.sig,
                },
                pk: self.uav.key.public(),
                t_stamp: self.now,
            };
            let key = self.uav.key.clone();
            self.submit(body, &key);
            return;
        }
        seen.insert(msg.nonce);
        self.uav.sigmas.insert((msg.vehicle, msg.index), msg.sigma);
        if let AdversaryScript::UavRefusesPaywords { after } = self.script {
            if msg.index > *after {
                return;
            }
        }
        let Some(payword) = self.uav.chains.get(&msg.vehicle).and_then(|c| c.payword_for_task(msg.index)) else {
            return;
        };
        self.uav.revealed.insert((msg.vehicle, msg.index));
        let sig = self.uav.key.sign(&payword_digest(&pk, msg.index, &payword).0);
        let now = self.now;
        self.schedule(now, Event::Payword { vehicle: msg.vehicle, index: msg.index, payword, sig });
    }

    fn on_payword(&mut self, vid: VehicleId, index: usize, payword: Digest, sig: Signature) {
        let uav_pk = self.uav.key.public();
        let task = self.vehicles[&vid].tasks[index - 1];
        let behavior = self.behavior(task);
        let actor = self.vehicles.get_mut(&vid).expect("known vehicle");
        let pk = actor.key.public();
        if !uav_pk.verify(&payword_digest(&pk, index, &payword).0, &sig)
            || !verify_claim(&actor.root, &payword, index, &actor.payments)
        {
            return;
        }
        actor.paid_for.insert(index);
        if actor.best_payword.map_or(true, |(n, _)| index > n) {
            actor.best_payword = Some((index, payword));
        }
        let key = match behavior {
            Behavior::WrongKey => Digest(random_bytes(&mut self.rng)),
            _ => actor.keys[&index],
        };
        let nonce = actor.nonce0 + index as u64;
        let vkey = actor.key.clone();
        let now = self.now;
        self.submit(TxBody::SubmitKey { index, key, nonce, pk, t_stamp: now }, &vkey);
    }

    fn on_payword_timeout(&mut self, vid: VehicleId, index: usize) {
        let actor = self.vehicles.get_mut(&vid).expect("known vehicle");
        if actor.paid_for.contains(&index) {
            return;
        }
        let cancelled: Vec<usize> = if actor.disputed {
            Vec::new()
        } else {
            (1..=actor.tasks.len()).filter(|i| !actor.sent.contains(i)).collect()
        };
        actor.disputed = true;
        let pk = actor.key.public();
        let vkey = actor.key.clone();
        let now = self.now;
        self.submit(TxBody::Dispute { refused: index, cancelled, pk, t_stamp: now }, &vkey);
    }

    fn on_claims(&mut self) {
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for vid in ids {
            let actor = &self.vehicles[&vid];
            let Some((count, payword)) = actor.best_payword else { continue };
            let p = due_payment(&actor.payments, count, &self.ledger.failed(Party::Vehicle(vid)));
            let pk = actor.key.public();
            let vkey = actor.key.clone();
            let now = self.now;
            self.submit(TxBody::Claim { payword, count, p, pk, t_stamp: now }, &vkey);
        }
    }

    fn on_refunds(&mut self) {
        for (k, party) in self.participants.clone().into_iter().enumerate() {
            let val = self.ledger.deposit(party);
            let key = match party {
                Party::Uav => self.uav.key.clone(),
                Party::Vehicle(v) => self.vehicles[&v].key.clone(),
                Party::Enclave => continue,
            };
            let base = self.now;
            self.now = base + 1e-4 * k as f64;
            self.submit(TxBody::Refund { val, pk: key.public(), t_stamp: self.now }, &key);
            self.now = base;
        }
    }
}

/// Runs one exchange round. Bids are taken as truthful, so each bid price
/// is also the winner's resource cost when computing payoffs.
pub fn run_protocol(
    tasks: &[Task],
    bids: &[Bid],
    env: &Env,
    config: &ExchangeConfig,
    script: &AdversaryScript,
    seed: u64,
) -> Result<ProtocolReport, ExchangeError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ca = SigningKey::generate(&mut rng);
    let program = serde_json::to_vec(&(env, config)).map_err(|e| ExchangeError::Decode(e.to_string()))?;
    let mut enclave = EnclaveSim::new(&program, &mut rng);

    let phase = config.phase_length;
    let max_deadline = tasks.iter().map(|t| t.deadline).fold(0.0, f64::max);
    let t4 = 4.0 * phase;
    let exchange_close = t4 + max_deadline + 2.0 + config.consensus_delay.1;
    let windows = PhaseWindows { t0: 0.0, t1: phase, t2: 2.0 * phase, t3: 3.0 * phase, t4, exchange_close };
    let close_at = exchange_close + config.consensus_delay.1 + 0.01;
    let claims_at = close_at + 0.01;
    let t_exp = claims_at + config.claim_window;

    let reserve_units = to_units(env.reserve);
    let uav_deposit = reserve_units * tasks.len() as u64;
    let mut bids: Vec<&Bid> = bids.iter().filter(|b| !b.entries.is_empty()).collect();
    bids.sort_by_key(|b| b.vehicle_id);

    let mut wallets = BTreeMap::new();
    wallets.insert(Party::Uav, 2 * uav_deposit + 1);
    for b in &bids {
        wallets.insert(Party::Vehicle(b.vehicle_id), 2 * required_deposit(b, config.deposit_multiplier) + 1);
    }
    let initial_wallets = wallets.clone();
    let task_deadlines = tasks.iter().map(|t| (t.id, t4 + t.deadline)).collect();
    let mut ledger = LedgerState::new(ca.public(), windows, task_deadlines, wallets, config.slash_fraction);

    let cert_exp = t_exp + 1e6;
    let uav_key = SigningKey::generate(&mut rng);
    ledger.register(Party::Uav, Certificate::issue(&ca, uav_key.public(), 0.0, cert_exp));
    ledger.register(Party::Enclave, Certificate::issue(&ca, enclave.signer_public(), 0.0, cert_exp));
    let program_hash = enclave.program_hash();
    enclave.attest(Party::Uav, &program_hash)?;

    let mut vehicles = BTreeMap::new();
    let mut sealed = Vec::new();
    for b in &bids {
        let party = Party::Vehicle(b.vehicle_id);
        let key = SigningKey::generate(&mut rng);
        ledger.register(party, Certificate::issue(&ca, key.public(), 0.0, cert_exp));
        enclave.attest(party, &program_hash)?;
        sealed.push((b.vehicle_id, seal_and_submit_bid(party, b, &enclave, &mut rng)?));
        vehicles.insert(
            b.vehicle_id,
            VehicleActor {
                id: b.vehicle_id,
                key,
                bid: (*b).clone(),
                tasks: Vec::new(),
                payments: Vec::new(),
                root: Digest([0; 32]),
                nonce0: 0,
                keys: BTreeMap::new(),
                sent: BTreeSet::new(),
                computed: BTreeSet::new(),
                paid_for: BTreeSet::new(),
                best_payword: None,
                disputed: false,
            },
        );
    }
    let uav = UavActor {
        key: uav_key,
        seal_key: SealingKey::generate(&mut rng),
        chains: BTreeMap::new(),
        sigmas: BTreeMap::new(),
        seen_nonces: BTreeMap::new(),
        revealed: BTreeSet::new(),
        delivered: BTreeSet::new(),
    };
    let mut participants = vec![Party::Uav];
    participants.extend(bids.iter().map(|b| Party::Vehicle(b.vehicle_id)));

    let mut sim = Sim {
        tasks,
        env,
        config,
        script,
        rng,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        last_confirm: BTreeMap::new(),
        ledger,
        enclave,
        uav,
        vehicles,
        sealed,
        participants: participants.clone(),
        windows,
        t_exp,
        task_by_id: tasks.iter().map(|t| (t.id, t)).collect(),
    };

    // Deposits, staggered so that a sender's order is stable.
    for (k, party) in participants.iter().enumerate() {
        sim.now = windows.t1 + 1e-4 * (k as f64 + 1.0);
        let (key, need) = match party {
            Party::Uav => (sim.uav.key.clone(), uav_deposit),
            Party::Vehicle(v) => {
                let a = &sim.vehicles[v];
                let need = required_deposit(&a.bid, config.deposit_multiplier);
                let need = if config.underfunded.contains(v) { need / 2 } else { need };
                (a.key.clone(), need)
            }
            Party::Enclave => continue,
        };
        sim.submit(TxBody::Deposit { val: need, depo: need, pk: key.public(), t_stamp: sim.now }, &key);
    }
    sim.now = 0.0;
    sim.schedule(windows.t2, Event::Execute);
    sim.schedule(windows.t3, Event::Commit);
    sim.schedule(close_at, Event::Close);
    sim.schedule(claims_at, Event::Claims);
    sim.schedule(t_exp, Event::Refunds);
    sim.run();

    Ok(build_report(&sim, script.clone(), initial_wallets))
}

fn build_report(sim: &Sim<'_>, script: AdversaryScript, initial_wallets: BTreeMap<Party, u64>) -> ProtocolReport {
    let ledger = &sim.ledger;
    let outcome = ledger.outcome().cloned().unwrap_or_else(|| super::PublicOutcome {
        beta: BTreeMap::new(),
        payments: BTreeMap::new(),
        excluded: Vec::new(),
    });
    let mut winners = BTreeMap::new();
    let mut cloud_tasks = Vec::new();
    for (&t, a) in &outcome.beta {
        match a {
            Assignee::Vehicle(v) => {
                winners.insert(t, *v);
            }
            Assignee::Cloud => cloud_tasks.push(t),
        }
    }

    let mut verdicts = BTreeMap::new();
    for (vid, actor) in &sim.vehicles {
        let party = Party::Vehicle(*vid);
        let failed = ledger.failed(party);
        let claimed = ledger.claims().get(&party).map_or(0, |c| c.count);
        for (i, task) in actor.tasks.iter().enumerate() {
            let l = i + 1;
            let delivered = sim.uav.delivered.contains(&(*vid, l));
            let paid = l <= claimed && !failed.contains(&l);
            let penalty = ledger.slashes().iter().any(|s| s.winner == party && s.indices.contains(&l));
            let v = match (delivered, paid) {
                (true, true) => TaskVerdict::DeliveredAndPaid,
                (false, false) if penalty => TaskVerdict::NeitherWithPenalty,
                _ => TaskVerdict::Violation,
            };
            verdicts.insert(*task, v);
        }
    }

    let final_wallets = ledger.wallets().clone();
    let net = |p: Party| final_wallets.get(&p).copied().unwrap_or(0) as f64 - initial_wallets.get(&p).copied().unwrap_or(0) as f64;
    let mut payoffs = BTreeMap::new();
    for (vid, actor) in &sim.vehicles {
        let cost: f64 = actor
            .computed
            .iter()
            .filter_map(|l| actor.bid.entry(actor.tasks[l - 1]).map(|(_, price)| price))
            .sum();
        payoffs.insert(Party::Vehicle(*vid), net(Party::Vehicle(*vid)) - cost);
    }
    let value = sim.uav.delivered.len() as f64 * sim.env.reserve;
    payoffs.insert(Party::Uav, value + net(Party::Uav));

    let mut tx_counts = BTreeMap::new();
    for tx in ledger.log() {
        *tx_counts.entry(tx.tx.body.kind().to_string()).or_insert(0) += 1;
    }

    ProtocolReport {
        script,
        winners,
        cloud_tasks,
        payments: outcome.payments,
        excluded: outcome.excluded,
        verdicts,
        initial_wallets,
        final_wallets,
        escrow: ledger.escrow(),
        penalty_sink: ledger.penalty_sink(),
        conserved: ledger.conserved(),
        fmap: ledger.failed_tasks().clone(),
        tx_counts,
        payoffs,
        finished_at: ledger.clock(),
        log: ledger.log().to_vec(),
    }
}
