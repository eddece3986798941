//! Reverse combinatorial auction: urgency-ordered matching by marginal cost
//! and critical-value payments.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::{
    feasible, minimum_compute, processing_time, resource_cost, transmission_time, CostWeights,
    EnergyParams, TaskId, TaskSpec,
};
use crate::error::{Error, Result};
use crate::mobility::{VehicleId, VehicleState};
use crate::scalar::Scalar;

/// One entry of a combinatorial bid: compute offered to a task and its price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidEntry<T> {
    pub task: TaskId,
    /// Cycles/s the vehicle devotes to the task.
    pub compute: T,
    pub price: T,
}

/// `⟨Γ_i, χ_i, b_i⟩`, stored entry by entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinatorialBid<T> {
    pub vehicle_id: VehicleId,
    pub entries: Vec<BidEntry<T>>,
}

impl<T: Scalar> CombinatorialBid<T> {
    /// `(compute, price)` offered for `task`.
    pub fn entry(&self, task: TaskId) -> Option<(T, T)> {
        self.entries
            .iter()
            .find(|e| e.task == task)
            .map(|e| (e.compute, e.price))
    }

    pub fn bundle(&self) -> BTreeSet<TaskId> {
        self.entries.iter().map(|e| e.task).collect()
    }

    /// Largest single price in the bundle.
    pub fn max_price(&self) -> T {
        self.entries
            .iter()
            .map(|e| e.price)
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Public per-vehicle facts the UAV knows or measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidderContext<T> {
    /// Residual dwell time in coverage, seconds.
    pub dwell: T,
    /// Uplink rate γ to this vehicle, bits/s.
    pub link_rate: T,
    /// Idle compute χ̄, cycles/s.
    pub capacity: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionEnv<T> {
    pub energy: EnergyParams<T>,
    pub weights: CostWeights<T>,
    pub bidders: BTreeMap<VehicleId, BidderContext<T>>,
    /// Highest price the UAV accepts for one task (the cloud price).
    pub reserve: T,
}

impl<T: Scalar> AuctionEnv<T> {
    /// `ϖ/((1 - ϖ)·λ_p)`: converts joules of MCF into currency.
    pub fn energy_to_price(&self) -> T {
        let w = &self.weights;
        w.omega / ((T::one() - w.omega) * w.lambda_p)
    }

    /// Energy part of the marginal cost: `s·(P_hov·ζ/χ + (P_a2g + P_hov)/γ)`.
    pub fn service_energy(&self, task: &TaskSpec<T>, compute: T, link_rate: T) -> T {
        let e = &self.energy;
        e.p_hover * processing_time(task, compute)
            + (e.p_a2g + e.p_hover) * transmission_time(task, link_rate)
    }

    /// Marginal cost function of serving `task` with `(compute, price)` over `link_rate`.
    pub fn mcf(&self, task: &TaskSpec<T>, compute: T, price: T, link_rate: T) -> T {
        let w = &self.weights;
        w.omega * self.service_energy(task, compute, link_rate)
            + (T::one() - w.omega) * w.lambda_p * price
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignee {
    Vehicle(VehicleId),
    /// No feasible vehicle; the task falls back to the remote cloud.
    Cloud,
}

impl Assignee {
    pub fn vehicle(self) -> Option<VehicleId> {
        match self {
            Assignee::Vehicle(v) => Some(v),
            Assignee::Cloud => None,
        }
    }
}

/// Per-task record of the matching pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchStep<T> {
    pub task: TaskId,
    /// Candidate vehicles with their MCF, ascending by vehicle id.
    pub candidates: Vec<(VehicleId, T)>,
    pub winner: Assignee,
    pub critical: Option<VehicleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome<T> {
    pub winner_of: BTreeMap<TaskId, Assignee>,
    /// Payment for each vehicle-won task.
    pub critical_payment: BTreeMap<TaskId, T>,
    /// Matching order and candidate sets. Private to the UAV's enclave.
    pub trace: Vec<MatchStep<T>>,
}

impl<T: Scalar> AuctionOutcome<T> {
    /// Tasks won by `vehicle`, in matching order.
    pub fn tasks_of(&self, vehicle: VehicleId) -> Vec<TaskId> {
        self.trace
            .iter()
            .filter(|s| s.winner == Assignee::Vehicle(vehicle))
            .map(|s| s.task)
            .collect()
    }

    pub fn winners(&self) -> BTreeSet<VehicleId> {
        self.winner_of.values().filter_map(|a| a.vehicle()).collect()
    }

    pub fn total_payment(&self) -> T {
        self.critical_payment.values().copied().sum()
    }
}

/// Urgency descending, then task id ascending.
pub fn matching_order<T: Scalar>(tasks: &[TaskSpec<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| {
        tasks[b]
            .urgency
            .partial_cmp(&tasks[a].urgency)
            .unwrap_or(Ordering::Equal)
            .then(tasks[a].id.cmp(&tasks[b].id))
    });
    order
}

pub(crate) fn validate_inputs<T: Scalar>(
    tasks: &[TaskSpec<T>],
    bids: &[CombinatorialBid<T>],
    env: &AuctionEnv<T>,
) -> Result<()> {
    env.weights.validate()?;
    env.energy.validate()?;
    if !(env.reserve >= T::zero()) {
        return Err(Error::param("reserve", "must be non-negative"));
    }
    let mut ids = BTreeSet::new();
    for t in tasks {
        t.validate()?;
        if !ids.insert(t.id) {
            return Err(Error::param("tasks", format!("duplicate task id {}", t.id)));
        }
    }
    let mut seen = BTreeSet::new();
    for bid in bids {
        if !seen.insert(bid.vehicle_id) {
            return Err(Error::param(
                "bids",
                format!("duplicate bid from vehicle {}", bid.vehicle_id),
            ));
        }
        let ctx = env.bidders.get(&bid.vehicle_id).ok_or_else(|| {
            Error::param("bids", format!("vehicle {} has no context", bid.vehicle_id))
        })?;
        if !(ctx.link_rate > T::zero()) {
            return Err(Error::param(
                "link_rate",
                format!("vehicle {}: must be positive", bid.vehicle_id),
            ));
        }
        let mut tasks_in_bid = BTreeSet::new();
        for e in &bid.entries {
            if !(e.compute > T::zero()) || !(e.price >= T::zero()) {
                return Err(Error::param(
                    "bids",
                    format!("vehicle {} task {}: need compute > 0, price >= 0", bid.vehicle_id, e.task),
                ));
            }
            if !tasks_in_bid.insert(e.task) {
                return Err(Error::param(
                    "bids",
                    format!("vehicle {} bids twice on task {}", bid.vehicle_id, e.task),
                ));
            }
        }
    }
    Ok(())
}

/// Lowest MCF wins; equal MCF goes to the lowest vehicle id.
pub(crate) fn argmin<T: Scalar>(cands: impl Iterator<Item = (VehicleId, T)>) -> Option<(VehicleId, T)> {
    cands.fold(None, |best, (v, m)| match best {
        Some((bv, bm)) if bm < m || (bm == m && bv < v) => Some((bv, bm)),
        _ => Some((v, m)),
    })
}

/// The price at which the winner's MCF would equal the critical bidder's.
pub fn virtual_price<T: Scalar>(
    env: &AuctionEnv<T>,
    task: &TaskSpec<T>,
    winner: (T, BidderContext<T>),
    critical: (T, T, BidderContext<T>),
) -> T {
    let (chi_i, ctx_i) = winner;
    let (chi_k, b_k, ctx_k) = critical;
    let e_i = env.service_energy(task, chi_i, ctx_i.link_rate);
    let e_k = env.service_energy(task, chi_k, ctx_k.link_rate);
    b_k + env.energy_to_price() * (e_k - e_i)
}

/// Runs the matching and pricing passes.
pub fn run_auction<T: Scalar>(
    tasks: &[TaskSpec<T>],
    bids: &[CombinatorialBid<T>],
    env: &AuctionEnv<T>,
) -> Result<AuctionOutcome<T>> {
    validate_inputs(tasks, bids, env)?;
    let mut residual: BTreeMap<VehicleId, T> = bids
        .iter()
        .map(|b| (b.vehicle_id, env.bidders[&b.vehicle_id].capacity))
        .collect();
    let mut by_vehicle: Vec<&CombinatorialBid<T>> = bids.iter().collect();
    by_vehicle.sort_by_key(|b| b.vehicle_id);

    let mut outcome = AuctionOutcome {
        winner_of: BTreeMap::new(),
        critical_payment: BTreeMap::new(),
        trace: Vec::with_capacity(tasks.len()),
    };

    for idx in matching_order(tasks) {
        let task = &tasks[idx];
        // (vehicle, compute, price, mcf)
        let mut cands: Vec<(VehicleId, T, T, T)> = Vec::new();
        for bid in &by_vehicle {
            let Some((chi, price)) = bid.entry(task.id) else {
                continue;
            };
            let ctx = env.bidders[&bid.vehicle_id];
            let t = transmission_time(task, ctx.link_rate) + processing_time(task, chi);
            if feasible(task, t, ctx.dwell) && residual[&bid.vehicle_id] >= chi && price <= env.reserve
            {
                cands.push((bid.vehicle_id, chi, price, env.mcf(task, chi, price, ctx.link_rate)));
            }
        }

        let Some((w, _)) = argmin(cands.iter().map(|c| (c.0, c.3))) else {
            outcome.winner_of.insert(task.id, Assignee::Cloud);
            outcome.trace.push(MatchStep {
                task: task.id,
                candidates: Vec::new(),
                winner: Assignee::Cloud,
                critical: None,
            });
            continue;
        };
        let &(_, chi_w, b_w, _) = cands.iter().find(|c| c.0 == w).expect("winner is a candidate");
        let left = residual.get_mut(&w).expect("winner has a residual");
        *left = *left - chi_w;

        let critical = argmin(cands.iter().filter(|c| c.0 != w).map(|c| (c.0, c.3)));
        let payment = match critical {
            None => env.reserve,
            Some((k, _)) => {
                let &(_, chi_k, b_k, _) = cands.iter().find(|c| c.0 == k).expect("critical is a candidate");
                let raw = virtual_price(
                    env,
                    task,
                    (chi_w, env.bidders[&w]),
                    (chi_k, b_k, env.bidders[&k]),
                );
                // Capped at the reserve, floored at the bid against rounding.
                raw.min(env.reserve).max(b_w)
            }
        };
        outcome.winner_of.insert(task.id, Assignee::Vehicle(w));
        outcome.critical_payment.insert(task.id, payment);
        outcome.trace.push(MatchStep {
            task: task.id,
            candidates: cands.iter().map(|c| (c.0, c.3)).collect(),
            winner: Assignee::Vehicle(w),
            critical: critical.map(|c| c.0),
        });
    }
    Ok(outcome)
}

/// How a vehicle prices and sizes its offers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfferPolicy<T> {
    /// Extra compute above the deadline minimum, as a fraction of it.
    pub headroom: T,
}

/// Builds a truthful bid. Tasks are taken in matching order and added while
/// they can finish in time and the running compute total stays within the
/// idle compute. Each is offered `required·(1 + headroom)`, capped at what
/// is left, and priced at cost.
pub fn build_feasible_task_set<T: Scalar>(
    vehicle: &VehicleState<T>,
    dwell: T,
    tasks: &[TaskSpec<T>],
    policy: OfferPolicy<T>,
) -> CombinatorialBid<T> {
    let mut left = vehicle.idle_compute;
    let mut entries = Vec::new();
    for idx in matching_order(tasks) {
        let task = &tasks[idx];
        let Some(need) = minimum_compute(task, vehicle.link_rate, dwell) else {
            continue;
        };
        if need > left {
            continue;
        }
        let compute = (need * (T::one() + policy.headroom)).min(left);
        left = left - compute;
        entries.push(BidEntry {
            task: task.id,
            compute,
            price: resource_cost(compute, vehicle.unit_cost, vehicle.fixed_cost),
        });
    }
    CombinatorialBid {
        vehicle_id: vehicle.id,
        entries,
    }
}
