//! Task timing, UAV energy and the UAV's weighted cost.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{Assignee, AuctionEnv, AuctionOutcome, CombinatorialBid};
use crate::error::{Error as ParamError, Result};
use crate::scalar::{lit, Scalar};

pub type TaskId = u64;

/// One computation mission `⟨s, φ, τ, ζ⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec<T> {
    pub id: TaskId,
    /// Bits.
    pub size: T,
    /// Priority in (0, 1].
    pub urgency: T,
    /// Seconds.
    pub deadline: T,
    /// Cycles per bit.
    pub intensity: T,
}

impl<T: Scalar> TaskSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.size > T::zero()) {
            return Err(ParamError::param("size", format!("task {}: must be positive", self.id)));
        }
        if !(self.deadline > T::zero()) {
            return Err(ParamError::param("deadline", format!("task {}: must be positive", self.id)));
        }
        if !(self.intensity > T::zero()) {
            return Err(ParamError::param("intensity", format!("task {}: must be positive", self.id)));
        }
        if !(self.urgency > T::zero() && self.urgency <= T::one()) {
            return Err(ParamError::param("urgency", format!("task {}: must lie in (0, 1]", self.id)));
        }
        Ok(())
    }

    /// Total cycles needed, `s·ζ`.
    pub fn cycles(&self) -> T {
        self.size * self.intensity
    }
}

/// Propulsion power as a function of cruise speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlightPower<T> {
    Constant { watts: T },
    /// `c1·V³ + c2/V`: parasitic drag plus induced power.
    Curve { c1: T, c2: T },
}

impl<T: Scalar> FlightPower<T> {
    pub fn at(&self, speed: T) -> T {
        match *self {
            FlightPower::Constant { watts } => watts,
            FlightPower::Curve { c1, c2 } => c1 * speed.powi(3) + c2 / speed,
        }
    }

    /// Speed in `[v_min, v_max]` minimising the energy `P(V)·L/V` of a leg.
    pub fn energy_optimal_speed(&self, v_min: T, v_max: T) -> T {
        match *self {
            FlightPower::Constant { .. } => v_max,
            // d/dV (c1·V² + c2/V²) = 0 at V⁴ = c2/c1.
            FlightPower::Curve { c1, c2 } => (c2 / c1).sqrt().sqrt().max(v_min).min(v_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams<T> {
    pub p_hover: T,
    pub p_a2g: T,
    pub flight: FlightPower<T>,
    pub segment_length: T,
    pub fly_speed: T,
    pub altitude: T,
}

impl<T: Scalar> EnergyParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_hover > T::zero()) || !(self.p_a2g > T::zero()) {
            return Err(ParamError::param("p_hover", "powers must be positive"));
        }
        if !(self.fly_speed > T::zero()) {
            return Err(ParamError::param("fly_speed", "must be positive"));
        }
        if let FlightPower::Constant { watts } = self.flight {
            if !(watts > T::zero()) {
                return Err(ParamError::param("p_fly", "must be positive"));
            }
        }
        Ok(())
    }

    /// Propulsion energy of the leg to the next location, `P_fly·L/V`.
    pub fn flight_energy(&self) -> T {
        self.flight.at(self.fly_speed) * self.segment_length / self.fly_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights<T> {
    /// Energy weight ϖ in (0, 1).
    pub omega: T,
    /// Payment scaling λ_p.
    pub lambda_p: T,
}

impl<T: Scalar> CostWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > T::zero() && self.omega < T::one()) {
            return Err(ParamError::param("omega", "must lie in (0, 1)"));
        }
        if !(self.lambda_p > T::zero()) {
            return Err(ParamError::param("lambda_p", "must be positive"));
        }
        Ok(())
    }
}

fn check_rates<T: Scalar>(compute: T, link_rate: T) -> Result<()> {
    if !(compute > T::zero()) {
        return Err(ParamError::param("compute", "must be positive"));
    }
    if !(link_rate > T::zero()) {
        return Err(ParamError::param("link_rate", "must be positive"));
    }
    Ok(())
}

/// Uplink time `s/γ`.
pub fn transmission_time<T: Scalar>(task: &TaskSpec<T>, link_rate: T) -> T {
    task.size / link_rate
}

/// Processing time `s·ζ/χ`.
pub fn processing_time<T: Scalar>(task: &TaskSpec<T>, compute: T) -> T {
    task.cycles() / compute
}

/// `s·(1/γ + ζ/χ)`; the result downlink is neglected.
pub fn task_completion_time<T: Scalar>(task: &TaskSpec<T>, compute: T, link_rate: T) -> Result<T> {
    check_rates(compute, link_rate)?;
    Ok(transmission_time(task, link_rate) + processing_time(task, compute))
}

/// Deadline constraint: completion within both the task deadline and the dwell time.
pub fn feasible<T: Scalar>(task: &TaskSpec<T>, completion_time: T, dwell: T) -> bool {
    completion_time <= task.deadline.min(dwell)
}

/// Smallest compute meeting `min(τ, dwell)`, or `None` when even infinite
/// compute cannot beat the uplink time.
pub fn minimum_compute<T: Scalar>(task: &TaskSpec<T>, link_rate: T, dwell: T) -> Option<T> {
    let slack = task.deadline.min(dwell) - transmission_time(task, link_rate);
    (slack > T::zero()).then(|| task.cycles() / slack)
}

/// A task served at some compute and link rate.
#[derive(Debug, Clone, Copy)]
pub struct ServedTask<'a, T> {
    pub task: &'a TaskSpec<T>,
    pub compute: T,
    pub link_rate: T,
}

/// Hover plus transmit energy of one served task, `P_hov·T + P_a2g·T_tr`.
pub fn task_energy<T: Scalar>(params: &EnergyParams<T>, served: &ServedTask<'_, T>) -> T {
    let t_tr = transmission_time(served.task, served.link_rate);
    let t = t_tr + processing_time(served.task, served.compute);
    params.p_hover * t + params.p_a2g * t_tr
}

/// UAV energy at one location: flight leg, hovering through every served
/// task, and uplink transmission.
pub fn segment_energy<T: Scalar>(params: &EnergyParams<T>, served: &[ServedTask<'_, T>]) -> T {
    params.flight_energy() + served.iter().map(|s| task_energy(params, s)).sum::<T>()
}

/// `ϖ·E + (1 - ϖ)·λ_p·Σp`.
pub fn uav_total_cost<T: Scalar>(energy: T, payments: &[T], weights: &CostWeights<T>) -> T {
    let paid: T = payments.iter().copied().sum();
    weights.omega * energy + (T::one() - weights.omega) * weights.lambda_p * paid
}

/// Private cost `Θ(χ) = φ·χ + c_0`.
pub fn resource_cost<T: Scalar>(compute: T, unit_cost: T, fixed_cost: T) -> T {
    unit_cost * compute + fixed_cost
}

/// Winner payoff `p - Θ(χ)`; zero for losers.
pub fn vehicle_payoff<T: Scalar>(payment: T, compute: T, unit_cost: T, fixed_cost: T, won: bool) -> T {
    if won {
        payment - resource_cost(compute, unit_cost, fixed_cost)
    } else {
        T::zero()
    }
}

/// A fixed offloading target (remote cloud, roadside fog, or the UAV itself).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadServer<T> {
    pub unit_cost: T,
    /// Cycles/s dedicated to each task.
    pub compute: T,
    pub link_rate: T,
}

impl<T: Scalar> OffloadServer<T> {
    /// Price charged per task, `φ·χ`.
    pub fn price(&self) -> T {
        self.unit_cost * self.compute
    }
}

/// Which constraint an allocation breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum Infeasible {
    #[error("deadline constraint violated for task {task} on vehicle {vehicle}")]
    Deadline { task: TaskId, vehicle: u64 },
    #[error("individual rationality violated: task {task} pays below the bid")]
    Rationality { task: TaskId },
    #[error("task {task} is not assigned exactly once")]
    Assignment { task: TaskId },
    #[error("negative payment for task {task}")]
    NegativePayment { task: TaskId },
    #[error("vehicle {vehicle} is over its idle compute")]
    Capacity { vehicle: u64 },
    #[error("vehicle {vehicle} has no bid for task {task}")]
    NoBid { task: TaskId, vehicle: u64 },
}

impl Infeasible {
    /// Identifier of the violated constraint in the cost-minimization problem.
    pub fn constraint_id(&self) -> &'static str {
        match self {
            Infeasible::Deadline { .. } => "deadline",
            Infeasible::Rationality { .. } => "individual-rationality",
            Infeasible::Assignment { .. } => "single-assignment",
            Infeasible::NegativePayment { .. } => "non-negative-payment",
            Infeasible::Capacity { .. } => "capacity",
            Infeasible::NoBid { .. } => "bundle",
        }
    }
}

/// Everything needed to evaluate an allocation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInput<'a, T> {
    pub tasks: &'a [TaskSpec<T>],
    pub bids: &'a [CombinatorialBid<T>],
    pub env: &'a AuctionEnv<T>,
    /// Fallback for tasks without a vehicle.
    pub cloud: &'a OffloadServer<T>,
}

/// Weighted UAV cost of an allocation, with unassigned tasks priced at the
/// cloud fallback. Hover time is charged only for served tasks.
pub fn objective_value<T: Scalar>(
    outcome: &AuctionOutcome<T>,
    input: &ObjectiveInput<'_, T>,
) -> std::result::Result<T, Infeasible> {
    let bids: BTreeMap<_, _> = input.bids.iter().map(|b| (b.vehicle_id, b)).collect();
    let task_ids: BTreeSet<TaskId> = input.tasks.iter().map(|t| t.id).collect();
    if let Some(&extra) = outcome.winner_of.keys().find(|id| !task_ids.contains(id)) {
        return Err(Infeasible::Assignment { task: extra });
    }
    let energy = &input.env.energy;
    let weights = &input.env.weights;
    let mut energy_sum = T::zero();
    let mut paid = T::zero();
    let mut used: BTreeMap<u64, T> = BTreeMap::new();

    for task in input.tasks {
        match outcome.winner_of.get(&task.id) {
            None => return Err(Infeasible::Assignment { task: task.id }),
            Some(Assignee::Cloud) => {
                let served = ServedTask {
                    task,
                    compute: input.cloud.compute,
                    link_rate: input.cloud.link_rate,
                };
                energy_sum = energy_sum + task_energy(energy, &served);
                paid = paid + input.cloud.price();
            }
            Some(&Assignee::Vehicle(vid)) => {
                let bid = bids
                    .get(&vid)
                    .and_then(|b| b.entry(task.id).map(|e| (b, e)))
                    .ok_or(Infeasible::NoBid { task: task.id, vehicle: vid })?;
                let (_, (compute, price)) = bid;
                let ctx = input
                    .env
                    .bidders
                    .get(&vid)
                    .ok_or(Infeasible::NoBid { task: task.id, vehicle: vid })?;
                let t = transmission_time(task, ctx.link_rate) + processing_time(task, compute);
                if !feasible(task, t, ctx.dwell) {
                    return Err(Infeasible::Deadline { task: task.id, vehicle: vid });
                }
                let p = outcome
                    .critical_payment
                    .get(&task.id)
                    .copied()
                    .ok_or(Infeasible::Assignment { task: task.id })?;
                if p < T::zero() {
                    return Err(Infeasible::NegativePayment { task: task.id });
                }
                if p < price {
                    return Err(Infeasible::Rationality { task: task.id });
                }
                let slot = used.entry(vid).or_insert_with(T::zero);
                *slot = *slot + compute;
                let served = ServedTask {
                    task,
                    compute,
                    link_rate: ctx.link_rate,
                };
                energy_sum = energy_sum + task_energy(energy, &served);
                paid = paid + p;
            }
        }
    }
    for (vid, total) in used {
        let cap = input.env.bidders[&vid].capacity;
        // Sums of per-task shares may exceed the capacity by rounding only.
        if total > cap * (T::one() + lit(1e-12)) {
            return Err(Infeasible::Capacity { vehicle: vid });
        }
    }
    let e = energy_sum + energy.flight_energy();
    Ok(weights.omega * e + (T::one() - weights.omega) * weights.lambda_p * paid)
}
