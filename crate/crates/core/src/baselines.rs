//! SEAL and the comparison schemes evaluated on the same location instance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{argmin, matching_order, run_auction, validate_inputs, Assignee};
use crate::cost::{feasible, processing_time, task_energy, transmission_time, OffloadServer, ServedTask, TaskId};
use crate::error::{Error, Result};
use crate::mobility::VehicleId;
use crate::scenario::{derive_seed, LocationInstance, ScenarioConfig};
use crate::{Bid, Env, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Seal,
    /// Greedy minimum energy, slowest flight.
    Eaa,
    /// Greedy minimum delay, fastest flight.
    Daa,
    /// Greedy minimum bid, random flight speed.
    Paa,
    Cloud,
    Fog,
    /// Everything computed on board.
    Local,
}

impl Scheme {
    pub const ALL: [Scheme; 7] =
        [Scheme::Seal, Scheme::Eaa, Scheme::Daa, Scheme::Paa, Scheme::Cloud, Scheme::Fog, Scheme::Local];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Seal => "seal",
            Scheme::Eaa => "eaa",
            Scheme::Daa => "daa",
            Scheme::Paa => "paa",
            Scheme::Cloud => "cloud",
            Scheme::Fog => "fog",
            Scheme::Local => "local",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::param("scheme", format!("unknown scheme `{s}`")))
    }
}

/// Where a task ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Server {
    Vehicle(VehicleId),
    Cloud,
    Fog,
    Uav,
}

/// Evaluation of one scheme at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub fly_speed: f64,
    pub served_by: BTreeMap<TaskId, Server>,
    /// What the UAV pays per task, cloud fallbacks included.
    pub payments: BTreeMap<TaskId, f64>,
    /// Completion time per task, seconds.
    pub delays: BTreeMap<TaskId, f64>,
    pub task_energy: f64,
    pub flight_energy: f64,
    pub energy: f64,
    pub total_payment: f64,
    pub uav_cost: f64,
    /// Tasks sent to the cloud because no vehicle could take them.
    pub fallbacks: usize,
    pub deadline_misses: usize,
}

impl SchemeReport {
    pub fn mean_delay(&self) -> f64 {
        if self.delays.is_empty() {
            0.0
        } else {
            self.delays.values().sum::<f64>() / self.delays.len() as f64
        }
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.values().copied().fold(0.0, f64::max)
    }

    pub fn vehicle_tasks(&self) -> usize {
        self.served_by.values().filter(|s| matches!(s, Server::Vehicle(_))).count()
    }
}

/// Knobs of the comparison schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub v_min: f64,
    pub v_max: f64,
    pub cloud: OffloadServer<f64>,
    pub fog: OffloadServer<f64>,
    /// On-board compute, cycles/s.
    pub uav_compute: f64,
    /// Extra power drawn while computing on board, W.
    pub uav_compute_power: f64,
    pub paa_seed: u64,
}

impl BaselineParams {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        BaselineParams {
            v_min: config.uav_speed_mps[0],
            v_max: config.uav_speed_mps[1],
            cloud: config.cloud(),
            fog: config.fog(),
            uav_compute: crate::units::gigacycles_per_s(config.uav_compute_gcps),
            uav_compute_power: config.uav_compute_power_w,
            paa_seed: config.paa_speed_seed,
        }
    }
}

struct Tally {
    served_by: BTreeMap<TaskId, Server>,
    payments: BTreeMap<TaskId, f64>,
    delays: BTreeMap<TaskId, f64>,
    task_energy: f64,
    fallbacks: usize,
    deadline_misses: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            served_by: BTreeMap::new(),
            payments: BTreeMap::new(),
            delays: BTreeMap::new(),
            task_energy: 0.0,
            fallbacks: 0,
            deadline_misses: 0,
        }
    }

    fn remote(&mut self, env: &Env, task: &Task, server: &OffloadServer<f64>, tag: Server) {
        let served = ServedTask { task, compute: server.compute, link_rate: server.link_rate };
        let t = transmission_time(task, server.link_rate) + processing_time(task, server.compute);
        if t > task.deadline {
            self.deadline_misses += 1;
        }
        self.task_energy += task_energy(&env.energy, &served);
        self.served_by.insert(task.id, tag);
        self.payments.insert(task.id, server.price());
        self.delays.insert(task.id, t);
    }

    fn vehicle(&mut self, env: &Env, task: &Task, vid: VehicleId, compute: f64, payment: f64) {
        let link = env.bidders[&vid].link_rate;
        let served = ServedTask { task, compute, link_rate: link };
        self.task_energy += task_energy(&env.energy, &served);
        self.served_by.insert(task.id, Server::Vehicle(vid));
        self.payments.insert(task.id, payment);
        self.delays.insert(task.id, transmission_time(task, link) + processing_time(task, compute));
    }

    fn finish(self, scheme: Scheme, env: &Env) -> SchemeReport {
        let flight_energy = env.energy.flight_energy();
        let energy = flight_energy + self.task_energy;
        let total_payment: f64 = self.payments.values().sum();
        let w = &env.weights;
        SchemeReport {
            scheme,
            fly_speed: env.energy.fly_speed,
            served_by: self.served_by,
            payments: self.payments,
            delays: self.delays,
            task_energy: self.task_energy,
            flight_energy,
            energy,
            total_payment,
            uav_cost: w.omega * energy + (1.0 - w.omega) * w.lambda_p * total_payment,
            fallbacks: self.fallbacks,
            deadline_misses: self.deadline_misses,
        }
    }
}

/// Assignment rule of the greedy vehicle baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Greedy {
    MinEnergy,
    MinDelay,
    MinBid,
}

/// Urgency-ordered greedy assignment using the auction's candidate filter;
/// winners are paid their bids.
fn greedy(
    rule: Greedy,
    tasks: &[Task],
    bids: &[Bid],
    env: &Env,
    cloud: &OffloadServer<f64>,
    tally: &mut Tally,
) {
    let mut by_vehicle: Vec<&Bid> = bids.iter().collect();
    by_vehicle.sort_by_key(|b| b.vehicle_id);
    let mut residual: BTreeMap<VehicleId, f64> =
        bids.iter().map(|b| (b.vehicle_id, env.bidders[&b.vehicle_id].capacity)).collect();

    for idx in matching_order(tasks) {
        let task = &tasks[idx];
        let mut cands: Vec<(VehicleId, f64, f64, f64)> = Vec::new();
        for bid in &by_vehicle {
            let Some((chi, price)) = bid.entry(task.id) else {
                continue;
            };
            let ctx = env.bidders[&bid.vehicle_id];
            let t = transmission_time(task, ctx.link_rate) + processing_time(task, chi);
            if feasible(task, t, ctx.dwell) && residual[&bid.vehicle_id] >= chi && price <= env.reserve {
                let key = match rule {
                    Greedy::MinEnergy => env.service_energy(task, chi, ctx.link_rate),
                    Greedy::MinDelay => t,
                    Greedy::MinBid => price,
                };
                cands.push((bid.vehicle_id, chi, price, key));
            }
        }
        match argmin(cands.iter().map(|c| (c.0, c.3))) {
            Some((w, _)) => {
                let &(_, chi, price, _) = cands.iter().find(|c| c.0 == w).expect("winner is a candidate");
                *residual.get_mut(&w).expect("winner has a residual") -= chi;
                tally.vehicle(env, task, w, chi, price);
            }
            None => {
                tally.fallbacks += 1;
                tally.remote(env, task, cloud, Server::Cloud);
            }
        }
    }
}

fn with_speed(env: &Env, speed: f64) -> Env {
    let mut e = env.clone();
    e.energy.fly_speed = speed;
    e
}

/// Evaluates `scheme` on the given tasks and bids. `env.energy.fly_speed` is
/// the speed used by SEAL and the infrastructure schemes.
pub fn run_scheme(
    scheme: Scheme,
    tasks: &[Task],
    bids: &[Bid],
    env: &Env,
    params: &BaselineParams,
    location: usize,
) -> Result<SchemeReport> {
    validate_inputs(tasks, bids, env)?;
    if !(params.v_min > 0.0 && params.v_min <= params.v_max) {
        return Err(Error::param("uav_speed_mps", "need 0 < v_min <= v_max"));
    }
    let mut tally = Tally::new();
    let report = match scheme {
        Scheme::Seal => {
            let outcome = run_auction(tasks, bids, env)?;
            let bid_of: BTreeMap<_, _> = bids.iter().map(|b| (b.vehicle_id, b)).collect();
            for task in tasks {
                match outcome.winner_of[&task.id] {
                    Assignee::Vehicle(v) => {
                        let (chi, _) = bid_of[&v].entry(task.id).expect("winner bid on task");
                        tally.vehicle(env, task, v, chi, outcome.critical_payment[&task.id]);
                    }
                    Assignee::Cloud => {
                        tally.fallbacks += 1;
                        tally.remote(env, task, &params.cloud, Server::Cloud);
                    }
                }
            }
            tally.finish(scheme, env)
        }
        Scheme::Eaa | Scheme::Daa | Scheme::Paa => {
            let (rule, speed) = match scheme {
                Scheme::Eaa => (Greedy::MinEnergy, params.v_min),
                Scheme::Daa => (Greedy::MinDelay, params.v_max),
                _ => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.paa_seed, location, 9));
                    let v = if params.v_max > params.v_min {
                        rng.gen_range(params.v_min..=params.v_max)
                    } else {
                        params.v_min
                    };
                    (Greedy::MinBid, v)
                }
            };
            let env = with_speed(env, speed);
            greedy(rule, tasks, bids, &env, &params.cloud, &mut tally);
            tally.finish(scheme, &env)
        }
        Scheme::Cloud | Scheme::Fog => {
            let (server, tag) = if scheme == Scheme::Cloud {
                (&params.cloud, Server::Cloud)
            } else {
                (&params.fog, Server::Fog)
            };
            for task in tasks {
                tally.remote(env, task, server, tag);
            }
            tally.finish(scheme, env)
        }
        Scheme::Local => {
            if !(params.uav_compute > 0.0) {
                return Err(Error::param("uav_compute_gcps", "must be positive"));
            }
            // One on-board processor: tasks queue in urgency order.
            let mut clock = 0.0;
            for idx in matching_order(tasks) {
                let task = &tasks[idx];
                let busy = processing_time(task, params.uav_compute);
                clock += busy;
                if clock > task.deadline {
                    tally.deadline_misses += 1;
                }
                tally.task_energy += (env.energy.p_hover + params.uav_compute_power) * busy;
                tally.served_by.insert(task.id, Server::Uav);
                tally.payments.insert(task.id, 0.0);
                tally.delays.insert(task.id, clock);
            }
            tally.finish(scheme, env)
        }
    };
    Ok(report)
}

/// Runs one scheme on a generated location.
pub fn run_on_instance(
    scheme: Scheme,
    inst: &LocationInstance,
    params: &BaselineParams,
) -> Result<SchemeReport> {
    run_scheme(scheme, &inst.tasks, &inst.bids, &inst.env, params, inst.location)
}
