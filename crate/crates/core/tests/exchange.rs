use std::collections::BTreeSet;

use seal_core::auction::run_auction;
use seal_core::exchange::{run_protocol, AdversaryScript, ExchangeConfig, Party, ProtocolReport, TaskVerdict};
use seal_core::scenario::{build_location, LocationInstance, ScenarioConfig};

fn instance(seed: u64) -> LocationInstance {
    let c = ScenarioConfig { tasks: [12, 12], bidders: Some(8), ..ScenarioConfig::default() };
    build_location(&c, seed, 0).unwrap()
}

fn run(inst: &LocationInstance, script: &AdversaryScript, config: &ExchangeConfig, seed: u64) -> ProtocolReport {
    run_protocol(&inst.tasks, &inst.bids, &inst.env, config, script, seed).unwrap()
}

fn honest(inst: &LocationInstance, seed: u64) -> ProtocolReport {
    run(inst, &AdversaryScript::Honest, &ExchangeConfig::default(), seed)
}

/// A seed whose instance has at least one winner with two or more tasks.
fn busy_seed() -> (u64, LocationInstance) {
    (1..200)
        .map(|s| (s, instance(s)))
        .find(|(_, inst)| {
            let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
            out.winners().iter().any(|w| out.tasks_of(*w).len() >= 2)
        })
        .expect("some seed has a multi-task winner")
}

#[test]
fn honest_round_delivers_and_pays_everything() {
    let (seed, inst) = busy_seed();
    let r = honest(&inst, seed);
    assert!(!r.winners.is_empty());
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
    for (task, v) in &r.verdicts {
        assert_eq!(*v, TaskVerdict::DeliveredAndPaid, "task {task}");
    }
    assert_eq!(r.verdicts.len(), r.winners.len());
    assert_eq!(r.penalty_sink, 0);
    assert!(r.fmap.values().all(BTreeSet::is_empty));
    for (task, vid) in &r.winners {
        assert!(r.payoffs[&Party::Vehicle(*vid)] >= 0.0, "task {task}");
    }
}

#[test]
fn honest_tx_count_is_batched() {
    let (seed, inst) = busy_seed();
    let r = honest(&inst, seed);
    let participants = inst.bids.len() + 1;
    let winners: BTreeSet<_> = r.winners.values().collect();
    let expected = participants + 1 + 1 + 2 * r.winners.len() + winners.len() + participants;
    assert_eq!(r.total_txs(), expected, "{:?}", r.tx_counts);
    assert_eq!(r.tx_counts.get("claim").copied().unwrap_or(0), winners.len());
    assert!(r.tx_counts.keys().all(|k| k != "payword"));
}

#[test]
fn outcome_matches_plain_auction() {
    let (seed, inst) = busy_seed();
    let r = honest(&inst, seed);
    let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
    for (task, a) in &out.winner_of {
        match a.vehicle() {
            Some(v) => assert_eq!(r.winners[task], v),
            None => assert!(r.cloud_tasks.contains(task)),
        }
    }
}

#[test]
fn deterministic_under_seed() {
    let (seed, inst) = busy_seed();
    assert_eq!(honest(&inst, seed).log_jsonl(), honest(&inst, seed).log_jsonl());
}

#[test]
fn bidder_abort_is_penalised() {
    let (seed, inst) = busy_seed();
    let base = honest(&inst, seed);
    let (&task, &vid) = base.winners.iter().next().unwrap();
    let script = AdversaryScript::BidderAborts { tasks: [task].into() };
    let r = run(&inst, &script, &ExchangeConfig::default(), seed);
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
    assert_eq!(r.verdicts[&task], TaskVerdict::NeitherWithPenalty);
    assert!(r.penalty_sink > 0);
    let me = Party::Vehicle(vid);
    assert!(r.payoffs[&me] < base.payoffs[&me]);
}

#[test]
fn wrong_key_is_penalised() {
    let (seed, inst) = busy_seed();
    let base = honest(&inst, seed);
    let (&task, &vid) = base.winners.iter().next().unwrap();
    let script = AdversaryScript::WrongKey { tasks: [task].into() };
    let r = run(&inst, &script, &ExchangeConfig::default(), seed);
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
    assert_eq!(r.verdicts[&task], TaskVerdict::NeitherWithPenalty);
    assert!(r.payoffs[&Party::Vehicle(vid)] < base.payoffs[&Party::Vehicle(vid)]);
}

#[test]
fn replay_is_rejected() {
    let (seed, inst) = busy_seed();
    let base = honest(&inst, seed);
    let (&task, &vid) = base.winners.iter().next().unwrap();
    let r = run(&inst, &AdversaryScript::Replay { task }, &ExchangeConfig::default(), seed);
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
    assert_ne!(r.verdicts[&task], TaskVerdict::DeliveredAndPaid);
    assert!(r.tx_counts.get("misbehavior").copied().unwrap_or(0) >= 1);
    assert!(r.payoffs[&Party::Vehicle(vid)] < base.payoffs[&Party::Vehicle(vid)]);
}

#[test]
fn uav_refusal_costs_the_uav() {
    let (seed, inst) = busy_seed();
    let base = honest(&inst, seed);
    let r = run(&inst, &AdversaryScript::UavRefusesPaywords { after: 1 }, &ExchangeConfig::default(), seed);
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
    assert!(r.verdicts.values().any(|v| *v == TaskVerdict::NeitherWithPenalty));
    assert!(r.payoffs[&Party::Uav] < base.payoffs[&Party::Uav]);
    assert!(r.tx_counts.get("dispute").copied().unwrap_or(0) >= 1);
}

#[test]
fn underfunded_bidder_is_excluded() {
    let (seed, inst) = busy_seed();
    let base = honest(&inst, seed);
    let &vid = base.winners.values().next().unwrap();
    let config = ExchangeConfig { underfunded: [vid].into(), ..ExchangeConfig::default() };
    let r = run(&inst, &AdversaryScript::Honest, &config, seed);
    assert!(r.excluded.contains(&vid));
    assert!(r.winners.values().all(|w| *w != vid));
    let others: Vec<_> = inst.bids.iter().filter(|b| b.vehicle_id != vid).cloned().collect();
    let oracle = run_auction(&inst.tasks, &others, &inst.env).unwrap();
    for (task, a) in &oracle.winner_of {
        assert_eq!(a.vehicle(), r.winners.get(task).copied(), "task {task}");
    }
    assert!(r.conserved);
    assert_eq!(r.violations(), 0);
}

#[test]
fn no_bidders_means_no_exchange() {
    let c = ScenarioConfig { tasks: [3, 3], bidders: Some(0), ..ScenarioConfig::default() };
    let inst = build_location(&c, 1, 0).unwrap();
    let r = honest(&inst, 1);
    assert!(r.winners.is_empty());
    assert_eq!(r.cloud_tasks.len(), 3);
    assert!(r.conserved);
}

#[test]
fn log_round_trips_through_json() {
    let (seed, inst) = busy_seed();
    let r = honest(&inst, seed);
    let back: Vec<seal_core::exchange::ledger::LoggedTx> =
        r.log_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, r.log);
    let report: ProtocolReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(report, r);
}
