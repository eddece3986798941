//! Randomised property suites over the auction and the exchange.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::{run_auction, Assignee};
use crate::cost::{resource_cost, TaskId};
use crate::error::{Error, Result};
use crate::exchange::{run_protocol, AdversaryScript, ExchangeConfig, TaskVerdict};
use crate::mobility::VehicleId;
use crate::scenario::{build_location, LocationInstance, ScenarioConfig};
use crate::Bid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Truthfulness,
    Rationality,
    Monotonicity,
    Critical,
    Fairness,
    Privacy,
    Complexity,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Truthfulness,
        Suite::Rationality,
        Suite::Monotonicity,
        Suite::Critical,
        Suite::Fairness,
        Suite::Privacy,
        Suite::Complexity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Truthfulness => "truthfulness",
            Suite::Rationality => "rationality",
            Suite::Monotonicity => "monotonicity",
            Suite::Critical => "critical",
            Suite::Fairness => "fairness",
            Suite::Privacy => "privacy",
            Suite::Complexity => "complexity",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::param("suite", format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub seed: u64,
    /// Individual assertions evaluated.
    pub checks: u64,
    pub violations: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Up to a handful of failing cases, serialized for replay.
    pub counterexamples: Vec<serde_json::Value>,
}

impl SuiteReport {
    fn new(suite: Suite, trials: usize, seed: u64) -> Self {
        SuiteReport {
            suite,
            trials,
            seed,
            checks: 0,
            violations: 0,
            metrics: BTreeMap::new(),
            counterexamples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn absorb(&mut self, other: SuiteReport) {
        self.checks += other.checks;
        self.violations += other.violations;
        let room = 5usize.saturating_sub(self.counterexamples.len());
        self.counterexamples.extend(other.counterexamples.into_iter().take(room));
    }

    fn check(&mut self, ok: bool, example: impl FnOnce() -> serde_json::Value) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
            if self.counterexamples.len() < 5 {
                self.counterexamples.push(example());
            }
        }
    }
}

/// Random instance drawn from the default parameter ranges with a fixed
/// number of tasks and vehicles.
pub fn random_instance(seed: u64, tasks: usize, bidders: usize) -> Result<LocationInstance> {
    let config = ScenarioConfig { tasks: [tasks, tasks], bidders: Some(bidders), ..ScenarioConfig::default() };
    build_location(&config, seed, 0)
}

/// Replaces `vehicle`'s entry for `task` with `(compute, price)`.
pub fn with_deviation(bids: &[Bid], vehicle: VehicleId, task: TaskId, compute: f64, price: f64) -> Vec<Bid> {
    let mut out = bids.to_vec();
    for b in out.iter_mut().filter(|b| b.vehicle_id == vehicle) {
        for e in b.entries.iter_mut().filter(|e| e.task == task) {
            e.compute = compute;
            e.price = price;
        }
    }
    out
}

/// The vehicle's total payoff when it reports `bids` but holds the true
/// offers in `truth`. Supplying less than the true offer saves nothing,
/// since offers are take-it-or-leave-it; supplying more costs more.
pub fn payoff_for(inst: &LocationInstance, bids: &[Bid], truth: &Bid) -> Result<f64> {
    let outcome = run_auction(&inst.tasks, bids, &inst.env)?;
    let v = inst
        .vehicles
        .iter()
        .find(|v| v.id == truth.vehicle_id)
        .ok_or_else(|| Error::param("vehicle", format!("{} not in instance", truth.vehicle_id)))?;
    let reported = bids.iter().find(|b| b.vehicle_id == truth.vehicle_id);
    let mut total = 0.0;
    for task in outcome.tasks_of(truth.vehicle_id) {
        let true_chi = truth.entry(task).map_or(0.0, |e| e.0);
        let rep_chi = reported.and_then(|b| b.entry(task)).map_or(0.0, |e| e.0);
        let cost = resource_cost(true_chi.max(rep_chi), v.unit_cost, v.fixed_cost);
        total += outcome.critical_payment[&task] - cost;
    }
    Ok(total)
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 + k as f64 / (n - 1) as f64).collect()
}

fn instance_json(inst: &LocationInstance) -> serde_json::Value {
    serde_json::to_value(inst).unwrap_or(serde_json::Value::Null)
}

/// Truthful payoff against a 21×21 grid of compute and price deviations on
/// one task of every bidder.
pub fn truthfulness(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Truthfulness, trials, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = grid(21);
    let mut worst_gain = f64::NEG_INFINITY;
    for _ in 0..trials {
        let inst = random_instance(rng.gen(), rng.gen_range(3..=8), rng.gen_range(2..=6))?;
        for truth in &inst.bids {
            let honest = payoff_for(&inst, &inst.bids, truth)?;
            let task = truth.entries[rng.gen_range(0..truth.entries.len())].task;
            let (chi, price) = truth.entry(task).expect("task from bundle");
            for &fc in &factors {
                for &fb in &factors {
                    let dev = with_deviation(&inst.bids, truth.vehicle_id, task, chi * fc, price * fb);
                    let p = payoff_for(&inst, &dev, truth)?;
                    let gain = p - honest;
                    worst_gain = worst_gain.max(gain);
                    rep.check(gain <= 1e-9 * honest.abs().max(1.0), || {
                        serde_json::json!({
                            "vehicle": truth.vehicle_id, "task": task,
                            "compute_factor": fc, "price_factor": fb,
                            "truthful_payoff": honest, "deviated_payoff": p,
                            "instance": instance_json(&inst),
                        })
                    });
                }
            }
        }
    }
    rep.metrics.insert("max_gain".into(), worst_gain);
    Ok(rep)
}

/// Every winner's payoff under truthful bids is non-negative.
pub fn rationality(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Rationality, trials, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut winners = 0u64;
    for _ in 0..trials {
        let inst = random_instance(rng.gen(), rng.gen_range(5..=40), rng.gen_range(2..=20))?;
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env)?;
        for (task, a) in &out.winner_of {
            let Assignee::Vehicle(v) = a else { continue };
            winners += 1;
            let bid = inst.bids.iter().find(|b| b.vehicle_id == *v).expect("winner bid");
            let (_, price) = bid.entry(*task).expect("winner bid on task");
            let payoff = out.critical_payment[task] - price;
            rep.check(payoff >= 0.0, || serde_json::json!({"task": task, "vehicle": v, "payoff": payoff}));
        }
    }
    rep.metrics.insert("winners".into(), winners as f64);
    Ok(rep)
}

/// Raising the winner's compute by 10% or cutting its price by 10% keeps
/// it the lowest-MCF candidate.
pub fn monotonicity(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Monotonicity, trials, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let inst = random_instance(rng.gen(), rng.gen_range(5..=30), rng.gen_range(2..=12))?;
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env)?;
        for step in &out.trace {
            let Assignee::Vehicle(w) = step.winner else { continue };
            let task = inst.tasks.iter().find(|t| t.id == step.task).expect("task");
            let bid = inst.bids.iter().find(|b| b.vehicle_id == w).expect("winner bid");
            let (chi, price) = bid.entry(task.id).expect("entry");
            let link = inst.env.bidders[&w].link_rate;
            for (fc, fb) in [(1.1, 1.0), (1.0, 0.9), (1.1, 0.9)] {
                let m = inst.env.mcf(task, chi * fc, price * fb, link);
                let still = step.candidates.iter().all(|&(v, other)| v == w || m < other || (m == other && w < v));
                rep.check(still, || serde_json::json!({"task": task.id, "winner": w, "factors": [fc, fb]}));
            }
        }
    }
    Ok(rep)
}

/// Critical payment against a bisection on the winner's price.
pub fn critical(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Critical, trials, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..trials {
        let inst = random_instance(rng.gen(), rng.gen_range(3..=10), rng.gen_range(2..=8))?;
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env)?;
        for step in &out.trace {
            let Assignee::Vehicle(w) = step.winner else { continue };
            if step.candidates.len() < 2 {
                continue;
            }
            let (chi, b) = inst.bids.iter().find(|x| x.vehicle_id == w).and_then(|x| x.entry(step.task)).expect("entry");
            let wins = |price: f64| -> Result<bool> {
                let dev = with_deviation(&inst.bids, w, step.task, chi, price);
                Ok(run_auction(&inst.tasks, &dev, &inst.env)?.winner_of[&step.task] == Assignee::Vehicle(w))
            };
            let (mut lo, mut hi) = (b, inst.env.reserve);
            let sup = if wins(hi)? {
                hi
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if wins(mid)? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            let p = out.critical_payment[&step.task];
            let rel = (p - sup).abs() / sup.abs().max(1.0);
            max_rel = max_rel.max(rel);
            rep.check(rel <= 1e-6, || serde_json::json!({"task": step.task, "payment": p, "bisection": sup}));
        }
    }
    rep.metrics.insert("max_rel_error".into(), max_rel);
    Ok(rep)
}

fn fairness_instance(seed: u64) -> Result<LocationInstance> {
    random_instance(seed, 12, 8)
}

/// Scripts probing each misbehaviour against the honest run of the same instance.
pub fn adversary_scripts(winners: &BTreeMap<TaskId, VehicleId>) -> Vec<AdversaryScript> {
    let mut out = vec![AdversaryScript::Honest];
    if let Some((&task, _)) = winners.iter().next() {
        out.push(AdversaryScript::BidderAborts { tasks: [task].into() });
        out.push(AdversaryScript::WrongKey { tasks: [task].into() });
        out.push(AdversaryScript::Replay { task });
    }
    out.push(AdversaryScript::UavRefusesPaywords { after: 0 });
    out
}

fn fairness_seed(s: u64, rep: &mut SuiteReport) -> Result<u64> {
    let config = ExchangeConfig::default();
    let inst = fairness_instance(s)?;
    let honest = run_protocol(&inst.tasks, &inst.bids, &inst.env, &config, &AdversaryScript::Honest, s)
        .map_err(|e| Error::param("exchange", e.to_string()))?;
    let mut runs = 0;
    for script in adversary_scripts(&honest.winners) {
        let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &config, &script, s)
            .map_err(|e| Error::param("exchange", e.to_string()))?;
        runs += 1;
        let example = || serde_json::json!({"seed": s, "script": script.to_string()});
        rep.check(r.violations() == 0, example);
        let initial: u128 = r.initial_wallets.values().map(|&w| w as u128).sum();
        let after: u128 = r.final_wallets.values().map(|&w| w as u128).sum::<u128>() + r.escrow as u128;
        rep.check(r.conserved && initial == after, example);
        if script == AdversaryScript::Honest {
            rep.check(r.verdicts.values().all(|v| *v == TaskVerdict::DeliveredAndPaid), example);
            continue;
        }
        for party in script.misbehaving(&honest.winners) {
            let ok = r.payoffs.get(&party).copied().unwrap_or(0.0) < honest.payoffs.get(&party).copied().unwrap_or(0.0);
            rep.check(ok, || serde_json::json!({"seed": s, "script": script.to_string(), "party": party.to_string()}));
        }
    }
    Ok(runs)
}

/// Atomicity, conservation and deterrence across adversary scripts.
pub fn fairness(trials: usize, seed: u64) -> Result<SuiteReport> {
    let parts: Vec<Result<(SuiteReport, u64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut part = SuiteReport::new(Suite::Fairness, 1, seed);
            let runs = fairness_seed(seed.wrapping_add(k), &mut part)?;
            Ok((part, runs))
        })
        .collect();
    let mut rep = SuiteReport::new(Suite::Fairness, trials, seed);
    let mut runs = 0u64;
    for p in parts {
        let (part, r) = p?;
        rep.absorb(part);
        runs += r;
    }
    rep.metrics.insert("runs".into(), runs as f64);
    Ok(rep)
}

/// Renderings of a number to look for in serialized records.
pub fn renderings(x: f64) -> Vec<String> {
    let mut out = vec![format!("{x}"), format!("{x:e}"), serde_json::to_string(&x).unwrap_or_default()];
    out.sort();
    out.dedup();
    out
}

/// Serialized ledgers never contain any bidder's bid price or offered
/// compute.
pub fn privacy(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Privacy, trials, seed);
    let config = ExchangeConfig::default();
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        let inst = fairness_instance(s)?;
        let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &config, &AdversaryScript::Honest, s)
            .map_err(|e| Error::param("exchange", e.to_string()))?;
        let log = r.log_jsonl();
        for b in &inst.bids {
            for e in &b.entries {
                for x in [e.price, e.compute] {
                    for needle in renderings(x) {
                        rep.check(!log.contains(&needle), || {
                            serde_json::json!({"seed": s, "vehicle": b.vehicle_id, "task": e.task, "value": needle})
                        });
                    }
                }
            }
        }
    }
    Ok(rep)
}

fn time_auctions(inst: &LocationInstance, reps: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(run_auction(&inst.tasks, &inst.bids, &inst.env)?);
    }
    Ok(start.elapsed().as_secs_f64() / reps as f64)
}

/// Auction time when doubling the bidders at J = 100, and wall time of a
/// full round at (J = 100, I = 50).
pub fn complexity(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Complexity, trials, seed);
    let mut ratios = Vec::with_capacity(trials);
    let mut mean_small = 0.0;
    let mut mean_large = 0.0;
    for k in 0..trials as u64 {
        let small = random_instance(seed.wrapping_add(k), 100, 50)?;
        let large = random_instance(seed.wrapping_add(k), 100, 100)?;
        time_auctions(&small, 5)?;
        let ts = time_auctions(&small, 40)?;
        let tl = time_auctions(&large, 40)?;
        mean_small += ts / trials as f64;
        mean_large += tl / trials as f64;
        ratios.push(tl / ts);
    }
    let ratio = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    rep.check(ratio <= 2.6, || serde_json::json!({"ratio": ratio}));

    let start = Instant::now();
    let inst = random_instance(seed, 100, 50)?;
    run_auction(&inst.tasks, &inst.bids, &inst.env)?;
    run_protocol(&inst.tasks, &inst.bids, &inst.env, &ExchangeConfig::default(), &AdversaryScript::Honest, seed)
        .map_err(|e| Error::param("exchange", e.to_string()))?;
    let pipeline = start.elapsed().as_secs_f64();
    rep.check(pipeline < 2.0, || serde_json::json!({"pipeline_s": pipeline}));

    rep.metrics.insert("time_ratio".into(), ratio);
    rep.metrics.insert("auction_s_i50".into(), mean_small);
    rep.metrics.insert("auction_s_i100".into(), mean_large);
    rep.metrics.insert("pipeline_s".into(), pipeline);
    Ok(rep)
}

/// Runs one suite. `trials` must be at least one.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    match suite {
        Suite::Truthfulness => truthfulness(trials, seed),
        Suite::Rationality => rationality(trials, seed),
        Suite::Monotonicity => monotonicity(trials, seed),
        Suite::Critical => critical(trials, seed),
        Suite::Fairness => fairness(trials, seed),
        Suite::Privacy => privacy(trials, seed),
        Suite::Complexity => complexity(trials, seed),
    }
}
