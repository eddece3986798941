//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Every check recomputes its expected value here rather than trusting the
//! library's own bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha3::{Digest as _, Keccak256};

use seal_core::auction::{run_auction, Assignee};
use seal_core::baselines::Scheme;
use seal_core::exchange::crypto::Digest;
use seal_core::exchange::hashchain::{due_payment, verify_claim, HashChain};
use seal_core::exchange::ledger::{TxBody, TxStatus};
use seal_core::exchange::{run_protocol, AdversaryScript, ExchangeConfig, Party, ProtocolReport, TaskVerdict};
use seal_core::experiment::{sweep, Axis, SweepRow};
use seal_core::scenario::{build_location, LocationInstance, ScenarioConfig};
use seal_core::{Bid, Env, Task};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn instance(seed: u64, tasks: usize, bidders: usize) -> LocationInstance {
    let c = ScenarioConfig { tasks: [tasks, tasks], bidders: Some(bidders), ..ScenarioConfig::default() };
    build_location(&c, seed, 0).expect("instance builds")
}

fn unit_cost(inst: &LocationInstance, vehicle: u64) -> (f64, f64) {
    let v = inst.vehicles.iter().find(|v| v.id == vehicle).expect("bidder is a vehicle");
    (v.unit_cost, v.fixed_cost)
}

fn replace(bids: &[Bid], vehicle: u64, task: u64, compute: f64, price: f64) -> Vec<Bid> {
    let mut out = bids.to_vec();
    let b = out.iter_mut().find(|b| b.vehicle_id == vehicle).unwrap();
    let e = b.entries.iter_mut().find(|e| e.task == task).unwrap();
    e.compute = compute;
    e.price = price;
    out
}

/// Payoff of `vehicle` whose true offers are `truth` when the auction runs
/// on `reported`. Providing more compute than the true offer costs more;
/// providing less does not shrink the single-minded cost.
fn payoff(inst: &LocationInstance, reported: &[Bid], truth: &Bid) -> f64 {
    let out = run_auction(&inst.tasks, reported, &inst.env).unwrap();
    let (phi, c0) = unit_cost(inst, truth.vehicle_id);
    let rep = reported.iter().find(|b| b.vehicle_id == truth.vehicle_id).unwrap();
    out.winner_of
        .iter()
        .filter(|(_, a)| **a == Assignee::Vehicle(truth.vehicle_id))
        .map(|(t, _)| {
            let chi_true = truth.entries.iter().find(|e| e.task == *t).unwrap().compute;
            let chi_rep = rep.entries.iter().find(|e| e.task == *t).unwrap().compute;
            out.critical_payment[t] - (phi * chi_true.max(chi_rep) + c0)
        })
        .sum()
}

/// MCF written out from the model: weighted hover, transmit and payment.
fn mcf(env: &Env, task: &Task, compute: f64, price: f64, link: f64) -> f64 {
    let w = env.weights.omega;
    let e = &env.energy;
    let hover = e.p_hover * task.size * task.intensity / compute;
    let uplink = (e.p_a2g + e.p_hover) * task.size / link;
    w * (hover + uplink) + (1.0 - w) * env.weights.lambda_p * price
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// 1
fn truthfulness() -> Verdict {
    let grid: Vec<f64> = (0..21).map(|k| 0.5 + k as f64 * 0.05).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let seeds: Vec<(u64, usize, usize)> =
        (0..100).map(|_| (rng.gen(), rng.gen_range(3..=8), rng.gen_range(2..=6))).collect();
    let start = Instant::now();
    let per: Vec<(u64, u64, f64)> = seeds
        .par_iter()
        .map(|&(s, j, i)| {
            let inst = instance(s, j, i);
            let (mut checks, mut bad, mut worst) = (0u64, 0u64, f64::NEG_INFINITY);
            for truth in &inst.bids {
                let honest = payoff(&inst, &inst.bids, truth);
                for e in &truth.entries {
                    for &fc in &grid {
                        for &fb in &grid {
                            let dev = replace(&inst.bids, truth.vehicle_id, e.task, e.compute * fc, e.price * fb);
                            let gain = payoff(&inst, &dev, truth) - honest;
                            worst = worst.max(gain);
                            checks += 1;
                            if gain > 1e-9 * honest.abs().max(1.0) {
                                bad += 1;
                            }
                        }
                    }
                }
            }
            (checks, bad, worst)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let checks: u64 = per.iter().map(|p| p.0).sum();
    let bad: u64 = per.iter().map(|p| p.1).sum();
    let worst = per.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad == 0 && secs < 120.0,
        format!("100 instances, {checks} deviations, {bad} profitable, max gain {worst:.3e}, {secs:.1}s"),
    )
}

// 2
fn rationality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut winners, mut negative, mut untruthful) = (0usize, 0usize, 0usize);
    let mut min_payoff = f64::INFINITY;
    while winners < 10_000 {
        let inst = instance(rng.gen(), rng.gen_range(5..=40), rng.gen_range(2..=20));
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
        for (t, a) in &out.winner_of {
            let Assignee::Vehicle(v) = *a else { continue };
            winners += 1;
            let (phi, c0) = unit_cost(&inst, v);
            let bid = inst.bids.iter().find(|b| b.vehicle_id == v).unwrap();
            let e = bid.entries.iter().find(|e| e.task == *t).unwrap();
            if rel(e.price, phi * e.compute + c0) > 1e-12 {
                untruthful += 1;
            }
            let p = out.critical_payment[t] - (phi * e.compute + c0);
            min_payoff = min_payoff.min(p);
            if p < 0.0 {
                negative += 1;
            }
        }
    }
    verdict(
        negative == 0 && untruthful == 0,
        format!("{winners} winners, {negative} with negative payoff, min payoff {min_payoff:.3e}"),
    )
}

// 3
fn critical_payment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut cases, mut bad) = (0usize, 0usize);
    let mut worst = 0.0f64;
    while cases < 500 {
        let inst = instance(rng.gen(), rng.gen_range(3..=12), rng.gen_range(2..=8));
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
        for step in out.trace.iter().filter(|s| s.candidates.len() >= 2) {
            let Assignee::Vehicle(w) = step.winner else { continue };
            let e = inst.bids.iter().find(|b| b.vehicle_id == w).unwrap().entries.iter().find(|e| e.task == step.task).unwrap().clone();
            let wins = |x: f64| {
                let bids = replace(&inst.bids, w, step.task, e.compute, x);
                run_auction(&inst.tasks, &bids, &inst.env).unwrap().winner_of[&step.task] == Assignee::Vehicle(w)
            };
            let reserve = inst.env.reserve;
            let sup = if wins(reserve) {
                reserve
            } else {
                let (mut lo, mut hi) = (e.price, reserve);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if wins(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            let r = rel(out.critical_payment[&step.task], sup);
            worst = worst.max(r);
            cases += 1;
            if r > 1e-6 {
                bad += 1;
            }
        }
    }
    verdict(bad == 0, format!("{cases} contested tasks, {bad} off, max relative error {worst:.2e}"))
}

// 4
fn monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut winners, mut bad, mut mismatch) = (0usize, 0usize, 0usize);
    while winners < 500 {
        let inst = instance(rng.gen(), rng.gen_range(5..=30), rng.gen_range(2..=12));
        let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
        for step in &out.trace {
            let Assignee::Vehicle(w) = step.winner else { continue };
            winners += 1;
            let task = inst.tasks.iter().find(|t| t.id == step.task).unwrap();
            let offer = |v: u64| {
                let e = inst.bids.iter().find(|b| b.vehicle_id == v).unwrap().entries.iter().find(|e| e.task == task.id).unwrap();
                (e.compute, e.price, inst.env.bidders[&v].link_rate)
            };
            for &(v, m) in &step.candidates {
                let (c, p, l) = offer(v);
                if rel(m, mcf(&inst.env, task, c, p, l)) > 1e-12 {
                    mismatch += 1;
                }
            }
            let (c, p, l) = offer(w);
            for (fc, fb) in [(1.1, 1.0), (1.0, 0.9), (1.1, 0.9)] {
                let mw = mcf(&inst.env, task, c * fc, p * fb, l);
                let kept = step.candidates.iter().filter(|(v, _)| *v != w).all(|&(v, _)| {
                    let (ck, pk, lk) = offer(v);
                    let mk = mcf(&inst.env, task, ck, pk, lk);
                    mw < mk || (mw == mk && w < v)
                });
                if !kept {
                    bad += 1;
                }
            }
            // A cheaper price alone must also win the full auction again.
            let bids = replace(&inst.bids, w, task.id, c, p * 0.9);
            if run_auction(&inst.tasks, &bids, &inst.env).unwrap().winner_of[&task.id] != Assignee::Vehicle(w) {
                bad += 1;
            }
        }
    }
    verdict(
        bad == 0 && mismatch == 0,
        format!("{winners} winners, {bad} argmin changes, {mismatch} MCF mismatches"),
    )
}

// 5
fn fairness() -> Verdict {
    struct Seed {
        runs: usize,
        violations: usize,
        unconserved: usize,
        honest_incomplete: usize,
        not_deterred: usize,
    }
    let config = ExchangeConfig::default();
    let go = |inst: &LocationInstance, script: &AdversaryScript, s: u64| -> ProtocolReport {
        run_protocol(&inst.tasks, &inst.bids, &inst.env, &config, script, s).unwrap()
    };
    // Seeds whose honest round has at least one winner.
    let seeds: Vec<u64> = (1..)
        .filter(|&s| {
            let inst = instance(s, 12, 8);
            !run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap().winners().is_empty()
        })
        .take(200)
        .collect();
    let per: Vec<Seed> = seeds
        .par_iter()
        .map(|&s| {
            let inst = instance(s, 12, 8);
            let honest = go(&inst, &AdversaryScript::Honest, s);
            let first = *honest.winners.keys().next().unwrap();
            let scripts = [
                AdversaryScript::Honest,
                AdversaryScript::BidderAborts { tasks: [first].into() },
                AdversaryScript::UavRefusesPaywords { after: 0 },
                AdversaryScript::WrongKey { tasks: [first].into() },
                AdversaryScript::Replay { task: first },
            ];
            let mut out = Seed { runs: 0, violations: 0, unconserved: 0, honest_incomplete: 0, not_deterred: 0 };
            for script in &scripts {
                let r = go(&inst, script, s);
                out.runs += 1;
                out.violations += r.verdicts.values().filter(|v| **v == TaskVerdict::Violation).count();
                let before: u128 = r.initial_wallets.values().map(|&w| w as u128).sum();
                let after: u128 = r.final_wallets.values().map(|&w| w as u128).sum::<u128>() + r.escrow as u128;
                // Every deposit is refunded or slashed, so only the sink stays in escrow.
                if before != after || r.escrow != r.penalty_sink {
                    out.unconserved += 1;
                }
                match script {
                    AdversaryScript::Honest => {
                        let all = r.verdicts.len() == r.winners.len()
                            && r.verdicts.values().all(|v| *v == TaskVerdict::DeliveredAndPaid);
                        if !all {
                            out.honest_incomplete += 1;
                        }
                    }
                    _ => {
                        let cheaters: Vec<Party> = match script {
                            AdversaryScript::UavRefusesPaywords { .. } => vec![Party::Uav],
                            _ => vec![Party::Vehicle(honest.winners[&first])],
                        };
                        for p in cheaters {
                            if !(r.payoffs[&p] < honest.payoffs[&p]) {
                                out.not_deterred += 1;
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let sum = |f: fn(&Seed) -> usize| per.iter().map(f).sum::<usize>();
    let (runs, v, u, h, d) =
        (sum(|s| s.runs), sum(|s| s.violations), sum(|s| s.unconserved), sum(|s| s.honest_incomplete), sum(|s| s.not_deterred));
    verdict(
        v == 0 && u == 0 && h == 0 && d == 0 && runs == 1000,
        format!("{runs} runs over {} seeds: {v} violations, {u} unconserved, {h} incomplete honest, {d} undeterred", seeds.len()),
    )
}

// 6
fn keccak(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Keccak256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Root implied by handing over `h^{count+1}` for the first `count` links.
fn fold(payword: [u8; 32], count: usize, payments: &[u64]) -> [u8; 32] {
    let mut h = payword;
    for z in (1..=count).rev() {
        h = keccak(&[&h, &payments[z - 1].to_be_bytes()]);
    }
    keccak(&[&h])
}

fn hashchain() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut chains, mut bad_root, mut bad_due, mut accepted_forgeries) = (0usize, 0usize, 0usize, 0usize);
    let mut forgeries = 0usize;
    for _ in 0..400 {
        let n = rng.gen_range(1..=50);
        let payments: Vec<u64> = (0..n).map(|_| rng.gen_range(0..2_000_000_000u64)).collect();
        let tail: [u8; 32] = rng.gen();
        let chain = HashChain::from_tail(Digest(tail), payments.clone());
        chains += 1;
        // h^{z} for z = n+1 down to 1, built here.
        let mut elems = vec![[0u8; 32]; n + 2];
        elems[n + 1] = tail;
        for z in (1..=n).rev() {
            elems[z] = keccak(&[&elems[z + 1], &payments[z - 1].to_be_bytes()]);
        }
        elems[0] = keccak(&[&elems[1]]);
        if chain.root().0 != elems[0] {
            bad_root += 1;
        }
        let root = chain.root();
        let count = rng.gen_range(1..=n);
        let failed: BTreeSet<usize> = (1..=n).filter(|_| rng.gen_bool(0.3)).collect();
        let word = chain.payword_for_task(count).unwrap();
        if word.0 != elems[count + 1] || fold(word.0, count, &payments) != root.0 || !verify_claim(&root, &word, count, &payments) {
            bad_root += 1;
        }
        let expected: u64 = (1..=count).map(|l| payments[l - 1]).sum::<u64>()
            - failed.iter().filter(|&&k| k <= count).map(|&k| payments[k - 1]).sum::<u64>();
        if due_payment(&payments, count, &failed) != expected {
            bad_due += 1;
        }
        for k in 0..25 {
            forgeries += 1;
            let (w, c) = match k % 5 {
                0 => (Digest(rng.gen()), count),
                1 => {
                    let mut b = word.0;
                    b[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
                    (Digest(b), count)
                }
                // The right payword presented for one task more.
                2 => (word, count + 1),
                3 if count > 1 => (word, count - 1),
                _ => (Digest(elems[rng.gen_range(0..=count)]), count),
            };
            if verify_claim(&root, &w, c, &payments) {
                accepted_forgeries += 1;
            }
        }
    }
    while forgeries < 10_000 {
        forgeries += 1;
        let payments = vec![1u64; 5];
        let chain = HashChain::from_tail(Digest(rng.gen()), payments.clone());
        if verify_claim(&chain.root(), &Digest(rng.gen()), 5, &payments) {
            accepted_forgeries += 1;
        }
    }

    // End to end: accepted claims on the ledger fold to the committed root
    // and pay exactly the delivered part of the vector.
    let (mut claims, mut bad_claims) = (0usize, 0usize);
    let mut s = 0u64;
    while claims < 200 {
        s += 1;
        let inst = instance(s, 20, 4);
        let honest = run_protocol(&inst.tasks, &inst.bids, &inst.env, &ExchangeConfig::default(), &AdversaryScript::Honest, s).unwrap();
        let aborted: BTreeSet<u64> = honest.winners.keys().copied().filter(|_| rng.gen_bool(0.3)).collect();
        let script = AdversaryScript::BidderAborts { tasks: aborted };
        let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &ExchangeConfig::default(), &script, s).unwrap();
        let commits: Vec<_> = r
            .log
            .iter()
            .filter_map(|l| match &l.tx.body {
                TxBody::Commit { entries, .. } if l.status == TxStatus::Applied => Some(entries.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        for l in &r.log {
            let TxBody::Claim { payword, count, p, pk, .. } = &l.tx.body else { continue };
            if l.status != TxStatus::Applied {
                continue;
            }
            claims += 1;
            let Some(entry) = commits.iter().find(|e| e.pk == *pk) else {
                bad_claims += 1;
                continue;
            };
            let party = Party::Vehicle(r.winners[&entry.tasks[0]]);
            let failed = r.fmap.get(&party).cloned().unwrap_or_default();
            let due: u64 = (1..=*count).map(|l| entry.payments[l - 1]).sum::<u64>()
                - failed.iter().filter(|&&k| k <= *count).map(|&k| entry.payments[k - 1]).sum::<u64>();
            let delivered: u64 = entry
                .tasks
                .iter()
                .zip(&entry.payments)
                .filter(|(t, _)| r.verdicts[*t] == TaskVerdict::DeliveredAndPaid)
                .map(|(_, p)| p)
                .sum();
            if fold(payword.0, *count, &entry.payments) != entry.meta.root.0 || *p != due || *p != delivered {
                bad_claims += 1;
            }
        }
    }
    verdict(
        bad_root == 0 && bad_due == 0 && accepted_forgeries == 0 && bad_claims == 0,
        format!(
            "{chains} chains (|G| 1..50): {bad_root} root/fold mismatches, {bad_due} payout mismatches; \
             {forgeries} forgeries, {accepted_forgeries} accepted; {claims} ledger claims, {bad_claims} wrong"
        ),
    )
}

// 7
fn renderings(x: f64) -> Vec<String> {
    vec![format!("{x}"), format!("{x:e}"), format!("{x:?}"), serde_json::to_string(&x).unwrap()]
}

fn privacy() -> Verdict {
    let scripts = |first: u64| {
        [
            AdversaryScript::Honest,
            AdversaryScript::BidderAborts { tasks: [first].into() },
            AdversaryScript::WrongKey { tasks: [first].into() },
            AdversaryScript::Replay { task: first },
        ]
    };
    let per: Vec<(usize, usize, bool)> = (1..=100u64)
        .into_par_iter()
        .map(|s| {
            let inst = instance(s, 12, 8);
            let first = inst.tasks[0].id;
            let script = scripts(first)[(s % 4) as usize].clone();
            let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &ExchangeConfig::default(), &script, s).unwrap();
            let ledger: String = r.log.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect();
            let needles: Vec<String> = inst
                .bids
                .iter()
                .flat_map(|b| b.entries.iter().flat_map(|e| [e.price, e.compute]))
                .flat_map(renderings)
                .collect();
            let hits = needles.iter().filter(|n| ledger.contains(n.as_str())).count();
            // The scanner itself must see a planted value.
            let planted = format!("{ledger}{}", serde_json::to_string(&inst.bids).unwrap());
            let sees = needles.iter().any(|n| planted.contains(n.as_str()));
            (needles.len(), hits, sees)
        })
        .collect();
    let needles: usize = per.iter().map(|p| p.0).sum();
    let hits: usize = per.iter().map(|p| p.1).sum();
    let blind = per.iter().filter(|p| !p.2).count();
    verdict(
        hits == 0 && blind == 0,
        format!("100 ledgers, {needles} bid renderings searched, {hits} found, scanner blind in {blind}"),
    )
}

// 8
fn means(rows: &[SweepRow], scheme: Scheme, metric: fn(&SweepRow) -> f64) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.scheme == scheme) {
        let e = acc.entry(r.value.to_bits()).or_insert((r.value, 0.0, 0));
        e.1 += metric(r);
        e.2 += 1;
    }
    let mut out: Vec<(f64, f64)> = acc.into_values().map(|(v, s, n)| (v, s / n as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn density_trend() -> Verdict {
    let seeds: Vec<u64> = (1..=20).collect();
    let base = ScenarioConfig { tasks: [200, 200], ..ScenarioConfig::default() };
    let values: Vec<f64> = (1..=10).map(|k| 10.0 * k as f64).collect();
    let rows = sweep(&base, Axis::Density, &values, &[Scheme::Seal], &seeds).unwrap();
    let m = means(&rows, Scheme::Seal, |r| r.mean_uav_cost);
    let inversions: Vec<(f64, f64)> = m.windows(2).filter(|w| w[1].1 > w[0].1).map(|w| (w[1].0, w[1].1 / w[0].1 - 1.0)).collect();
    let trend_ok = inversions.len() <= 1 && inversions.iter().all(|(_, r)| *r <= 0.02);

    let rows = sweep(&ScenarioConfig::default(), Axis::Tasks, &[190.0, 205.0], &[Scheme::Seal], &seeds).unwrap();
    let t = means(&rows, Scheme::Seal, |r| r.mean_uav_cost);
    let tasks_ok = t[1].1 >= t[0].1;
    verdict(
        trend_ok && tasks_ok,
        format!(
            "density 10..100: {:.4e} -> {:.4e}, inversions {:?}; J=190 {:.4e} vs J=205 {:.4e}",
            m[0].1,
            m[m.len() - 1].1,
            inversions,
            t[0].1,
            t[1].1
        ),
    )
}

// 9
fn baseline_trends() -> Verdict {
    let seeds: Vec<u64> = (1..=20).collect();
    let schemes = [Scheme::Seal, Scheme::Eaa, Scheme::Daa, Scheme::Paa];
    let rows = sweep(&ScenarioConfig::default(), Axis::Locations, &[25.0, 30.0], &schemes, &seeds).unwrap();
    let total = |s| means(&rows, s, |r| r.total_energy);
    let (seal, daa, paa) = (total(Scheme::Seal), total(Scheme::Daa), total(Scheme::Paa));
    let n_ok = (0..2).all(|i| seal[i].1 <= daa[i].1 && seal[i].1 <= paa[i].1);

    let rows = sweep(&ScenarioConfig::default(), Axis::Tasks, &[300.0], &schemes, &seeds).unwrap();
    let per_loc = |s| means(&rows, s, |r| r.mean_energy)[0].1;
    let task_only = |s| means(&rows, s, |r| r.mean_task_energy)[0].1;
    let (e_seal, e_eaa, e_daa, e_paa) = (per_loc(Scheme::Seal), per_loc(Scheme::Eaa), per_loc(Scheme::Daa), per_loc(Scheme::Paa));
    let j_ok = e_seal <= e_eaa && e_seal <= e_daa && e_seal <= e_paa;
    verdict(
        n_ok && j_ok,
        format!(
            "N=25/30 mission energy SEAL {:.3e}/{:.3e} DAA {:.3e}/{:.3e} PAA {:.3e}/{:.3e}; \
             J=300 energy per location SEAL {e_seal:.4e} EAA {e_eaa:.4e} DAA {e_daa:.4e} PAA {e_paa:.4e} \
             (task-only SEAL {:.4e} EAA {:.4e} DAA {:.4e})",
            seal[0].1,
            seal[1].1,
            daa[0].1,
            daa[1].1,
            paa[0].1,
            paa[1].1,
            task_only(Scheme::Seal),
            task_only(Scheme::Eaa),
            task_only(Scheme::Daa),
        ),
    )
}

// 10
fn time_auction(inst: &LocationInstance, reps: usize) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap());
    }
    start.elapsed().as_secs_f64() / reps as f64
}

fn complexity() -> Verdict {
    let mut ratios = Vec::new();
    for trial in 0..20u64 {
        let big = instance(1000 + trial, 100, 100);
        let small = instance(1000 + trial, 100, 50);
        time_auction(&big, 5);
        time_auction(&small, 5);
        ratios.push(time_auction(&big, 40) / time_auction(&small, 40));
    }
    let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let start = Instant::now();
    let inst = instance(77, 100, 50);
    let out = run_auction(&inst.tasks, &inst.bids, &inst.env).unwrap();
    let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &ExchangeConfig::default(), &AdversaryScript::Honest, 77).unwrap();
    let pipeline = start.elapsed().as_secs_f64();
    let complete = r.verdicts.len() == out.winner_of.values().filter(|a| a.vehicle().is_some()).count();
    verdict(
        ratio <= 2.6 && pipeline < 2.0 && complete,
        format!("auction time ratio I=100/I=50 {ratio:.2} (20 trials); pipeline J=100 I=50 {:.1} ms", pipeline * 1e3),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("truthfulness", truthfulness),
        ("individual rationality", rationality),
        ("critical payment", critical_payment),
        ("monotonicity", monotonicity),
        ("exchange fairness", fairness),
        ("hashchain claims", hashchain),
        ("privacy", privacy),
        ("cost trends", density_trend),
        ("baseline trends", baseline_trends),
        ("complexity", complexity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        failed += usize::from(!v.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
