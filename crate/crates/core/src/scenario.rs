//! Scenario parameters and per-location instance generation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{build_feasible_task_set, AuctionEnv, BidderContext, OfferPolicy};
use crate::cost::{CostWeights, EnergyParams, FlightPower, OffloadServer};
use crate::error::{Error, Result};
use crate::exchange::{AdversaryScript, ExchangeConfig};
use crate::mobility::{
    avg_vehicle_speed, residual_dwell_time, spawn_population, AttributeRanges, Heading, TrafficParams, VehicleId,
};
use crate::units::{gigacycles_per_s, kmh_to_mps, mbps, megabits, per_km_to_per_m};
use crate::{Bid, Env, Task, Vehicle};

/// How the `intensity` field is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityUnit {
    CyclesPerBit,
    /// Cycles per megabit; makes processing nearly free.
    CyclesPerMegabit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightModel {
    Constant,
    Curve,
}

/// Every knob of a simulated mission. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub locations: usize,
    pub slots: usize,
    pub tasks: [usize; 2],
    pub altitude_m: f64,
    pub task_size_mb: [f64; 2],
    pub deadline_s: [f64; 2],
    pub idle_compute_gcps: [f64; 2],
    pub omega: f64,
    pub intensity: f64,
    pub intensity_unit: IntensityUnit,
    pub urgency: [f64; 2],
    pub coverage_radius_m: f64,
    pub segment_length_m: f64,
    pub link_rate_mbps: f64,
    pub uav_speed_mps: [f64; 2],
    pub lambda_p: f64,
    pub vehicle_speed_kmh: [f64; 2],
    pub unit_cost: [f64; 2],
    pub fixed_cost: f64,
    pub p_a2g_w: f64,
    pub p_hover_w: f64,

    pub density_veh_per_km: f64,
    pub max_density_veh_per_km: f64,
    pub slot_interval_s: f64,
    /// Slots simulated before the UAV arrives at a location.
    pub warmup_slots: usize,
    /// Fixed number of vehicles in coverage; overrides the traffic model.
    pub bidders: Option<usize>,
    /// Extra compute offered above the deadline minimum, drawn per vehicle.
    pub headroom: [f64; 2],

    pub flight_model: FlightModel,
    pub p_fly_w: f64,
    pub flight_c1: f64,
    pub flight_c2: f64,

    pub cloud_unit_cost: f64,
    pub cloud_compute_gcps: f64,
    pub fog_unit_cost: f64,
    pub fog_compute_gcps: f64,
    pub uav_compute_gcps: f64,
    pub uav_compute_power_w: f64,
    pub paa_speed_seed: u64,
    /// Per-task price cap; defaults to the cloud price.
    pub reserve: Option<f64>,

    pub deposit_multiplier: f64,
    pub slash_fraction: f64,
    pub adversary: String,
    /// Run the exchange protocol after each auction in `run`.
    pub run_exchange: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            locations: 30,
            slots: 1000,
            tasks: [100, 300],
            altitude_m: 50.0,
            task_size_mb: [3.0, 9.0],
            deadline_s: [1.0, 2.5],
            idle_compute_gcps: [0.5, 2.0],
            omega: 0.5,
            intensity: 50.0,
            intensity_unit: IntensityUnit::CyclesPerBit,
            urgency: [0.1, 1.0],
            coverage_radius_m: 250.0,
            segment_length_m: 500.0,
            link_rate_mbps: 6.0,
            uav_speed_mps: [2.0, 20.0],
            lambda_p: 40.0,
            vehicle_speed_kmh: [30.0, 80.0],
            unit_cost: [1.0, 9.0],
            fixed_cost: 0.0,
            p_a2g_w: 0.2,
            p_hover_w: 500.0,
            density_veh_per_km: 50.0,
            max_density_veh_per_km: 150.0,
            slot_interval_s: 1.0,
            warmup_slots: 60,
            bidders: None,
            headroom: [0.1, 0.5],
            flight_model: FlightModel::Curve,
            p_fly_w: 150.0,
            flight_c1: 0.36,
            flight_c2: 3600.0,
            cloud_unit_cost: 8.0,
            cloud_compute_gcps: 10.0,
            fog_unit_cost: 9.0,
            fog_compute_gcps: 3.0,
            uav_compute_gcps: 1.0,
            uav_compute_power_w: 10.0,
            paa_speed_seed: 7,
            reserve: None,
            deposit_multiplier: 1.5,
            slash_fraction: 1.0,
            adversary: "honest".into(),
            run_exchange: true,
        }
    }
}

fn check_range(name: &'static str, r: [f64; 2], positive: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::param(name, format!("empty or non-finite range [{}, {}]", r[0], r[1])));
    }
    if positive && !(r[0] > 0.0) {
        return Err(Error::param(name, "values must be positive"));
    }
    Ok(())
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::param(name, format!("must be positive, got {x}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks[0] > self.tasks[1] {
            return Err(Error::param("tasks", "empty range"));
        }
        check_range("task_size_mb", self.task_size_mb, true)?;
        check_range("deadline_s", self.deadline_s, true)?;
        check_range("idle_compute_gcps", self.idle_compute_gcps, true)?;
        check_range("urgency", self.urgency, true)?;
        if self.urgency[1] > 1.0 {
            return Err(Error::param("urgency", "must lie in (0, 1]"));
        }
        check_range("uav_speed_mps", self.uav_speed_mps, true)?;
        check_range("vehicle_speed_kmh", self.vehicle_speed_kmh, true)?;
        check_range("unit_cost", self.unit_cost, false)?;
        check_range("headroom", self.headroom, false)?;
        if self.unit_cost[0] < 0.0 || self.headroom[0] < 0.0 || self.fixed_cost < 0.0 {
            return Err(Error::param("unit_cost", "costs and headroom must be non-negative"));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::param("omega", "must lie in (0, 1)"));
        }
        for (name, x) in [
            ("intensity", self.intensity),
            ("coverage_radius_m", self.coverage_radius_m),
            ("segment_length_m", self.segment_length_m),
            ("link_rate_mbps", self.link_rate_mbps),
            ("lambda_p", self.lambda_p),
            ("p_a2g_w", self.p_a2g_w),
            ("p_hover_w", self.p_hover_w),
            ("max_density_veh_per_km", self.max_density_veh_per_km),
            ("slot_interval_s", self.slot_interval_s),
            ("cloud_compute_gcps", self.cloud_compute_gcps),
            ("fog_compute_gcps", self.fog_compute_gcps),
            ("uav_compute_gcps", self.uav_compute_gcps),
            ("deposit_multiplier", self.deposit_multiplier),
        ] {
            check_positive(name, x)?;
        }
        if !(self.density_veh_per_km >= 0.0) {
            return Err(Error::param("density_veh_per_km", "must be non-negative"));
        }
        match self.flight_model {
            FlightModel::Constant => check_positive("p_fly_w", self.p_fly_w)?,
            FlightModel::Curve => {
                check_positive("flight_c1", self.flight_c1)?;
                check_positive("flight_c2", self.flight_c2)?;
            }
        }
        if !(0.0..=1.0).contains(&self.slash_fraction) {
            return Err(Error::param("slash_fraction", "must lie in [0, 1]"));
        }
        if self.warmup_slots == 0 || self.warmup_slots > self.slots {
            return Err(Error::param("warmup_slots", "must lie in [1, slots]"));
        }
        if let Some(r) = self.reserve {
            if !(r >= 0.0) {
                return Err(Error::param("reserve", "must be non-negative"));
            }
        }
        self.script()?;
        Ok(())
    }

    pub fn script(&self) -> Result<AdversaryScript> {
        self.adversary.parse().map_err(|e| Error::param("adversary", e))
    }

    /// Cycles per bit.
    pub fn intensity_cycles_per_bit(&self) -> f64 {
        match self.intensity_unit {
            IntensityUnit::CyclesPerBit => self.intensity,
            IntensityUnit::CyclesPerMegabit => self.intensity / megabits(1.0),
        }
    }

    pub fn flight_power(&self) -> FlightPower<f64> {
        match self.flight_model {
            FlightModel::Constant => FlightPower::Constant { watts: self.p_fly_w },
            FlightModel::Curve => FlightPower::Curve { c1: self.flight_c1, c2: self.flight_c2 },
        }
    }

    /// Speed minimising propulsion energy per leg.
    pub fn energy_optimal_speed(&self) -> f64 {
        self.flight_power().energy_optimal_speed(self.uav_speed_mps[0], self.uav_speed_mps[1])
    }

    pub fn energy_params(&self, fly_speed: f64) -> EnergyParams<f64> {
        EnergyParams {
            p_hover: self.p_hover_w,
            p_a2g: self.p_a2g_w,
            flight: self.flight_power(),
            segment_length: self.segment_length_m,
            fly_speed,
            altitude: self.altitude_m,
        }
    }

    pub fn weights(&self) -> CostWeights<f64> {
        CostWeights { omega: self.omega, lambda_p: self.lambda_p }
    }

    pub fn cloud(&self) -> OffloadServer<f64> {
        OffloadServer {
            unit_cost: self.cloud_unit_cost,
            compute: gigacycles_per_s(self.cloud_compute_gcps),
            link_rate: mbps(self.link_rate_mbps),
        }
    }

    pub fn fog(&self) -> OffloadServer<f64> {
        OffloadServer {
            unit_cost: self.fog_unit_cost,
            compute: gigacycles_per_s(self.fog_compute_gcps),
            link_rate: mbps(self.link_rate_mbps),
        }
    }

    pub fn reserve_price(&self) -> f64 {
        self.reserve.unwrap_or_else(|| self.cloud().price())
    }

    pub fn traffic(&self) -> TrafficParams<f64> {
        TrafficParams {
            density: per_km_to_per_m(self.density_veh_per_km),
            max_density: per_km_to_per_m(self.max_density_veh_per_km),
            v_min: kmh_to_mps(self.vehicle_speed_kmh[0]),
            v_max: kmh_to_mps(self.vehicle_speed_kmh[1]),
            coverage_radius: self.coverage_radius_m,
            slot_interval: self.slot_interval_s,
            slot_count: self.slots,
        }
    }

    pub fn exchange(&self) -> ExchangeConfig {
        ExchangeConfig {
            deposit_multiplier: self.deposit_multiplier,
            slash_fraction: self.slash_fraction,
            ..ExchangeConfig::default()
        }
    }
}

/// Everything the auction and the baselines need at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationInstance {
    pub location: usize,
    pub tasks: Vec<Task>,
    pub vehicles: Vec<Vehicle>,
    pub bids: Vec<Bid>,
    /// Auction environment with the UAV flying at its energy-optimal speed.
    pub env: Env,
}

/// Deterministic sub-seed for (seed, location, stream).
pub fn derive_seed(seed: u64, location: usize, stream: u64) -> u64 {
    let mut z = seed
        ^ (location as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED69);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws the tasks of one location. The count comes from its own stream so
/// that the first `k` tasks do not depend on how many are drawn.
pub fn generate_tasks(config: &ScenarioConfig, seed: u64, location: usize) -> Vec<Task> {
    let mut count_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, location, 0));
    let count = count_rng.gen_range(config.tasks[0]..=config.tasks[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, location, 1));
    let zeta = config.intensity_cycles_per_bit();
    (0..count)
        .map(|j| Task {
            id: j as u64 + 1,
            size: megabits(uniform(&mut rng, config.task_size_mb)),
            deadline: uniform(&mut rng, config.deadline_s),
            urgency: uniform(&mut rng, config.urgency),
            intensity: zeta,
        })
        .collect()
}

fn attributes(config: &ScenarioConfig) -> AttributeRanges {
    AttributeRanges {
        idle_compute: (
            gigacycles_per_s(config.idle_compute_gcps[0]),
            gigacycles_per_s(config.idle_compute_gcps[1]),
        ),
        unit_cost: (config.unit_cost[0], config.unit_cost[1]),
        fixed_cost: config.fixed_cost,
        link_rate: mbps(config.link_rate_mbps),
    }
}

/// Vehicles in coverage when the UAV arrives.
pub fn generate_vehicles(config: &ScenarioConfig, seed: u64, location: usize) -> Result<Vec<Vehicle>> {
    let traffic = config.traffic();
    let vseed = derive_seed(seed, location, 2);
    let attrs = attributes(config);
    match config.bidders {
        None => {
            let slots = spawn_population(vseed, &traffic, config.warmup_slots, &attrs)?;
            Ok(slots.into_iter().last().unwrap_or_default())
        }
        Some(count) => {
            let speed = avg_vehicle_speed(&traffic)?;
            let mut rng = ChaCha8Rng::seed_from_u64(vseed);
            let radius = config.coverage_radius_m;
            Ok((0..count as VehicleId)
                .map(|id| Vehicle {
                    id,
                    distance_to_uav: rng.gen_range(0.0..=radius),
                    heading: if rng.gen_bool(0.5) { Heading::Towards } else { Heading::Away },
                    speed,
                    idle_compute: rng.gen_range(attrs.idle_compute.0..=attrs.idle_compute.1),
                    unit_cost: uniform(&mut rng, [attrs.unit_cost.0, attrs.unit_cost.1]),
                    fixed_cost: attrs.fixed_cost,
                    link_rate: attrs.link_rate,
                })
                .collect())
        }
    }
}

/// Builds the tasks, vehicles, truthful bids and auction environment of
/// one location.
pub fn build_location(config: &ScenarioConfig, seed: u64, location: usize) -> Result<LocationInstance> {
    let tasks = generate_tasks(config, seed, location);
    let vehicles = generate_vehicles(config, seed, location)?;
    instance_from(config, seed, location, tasks, vehicles)
}

/// Same as [`build_location`] for externally supplied tasks and vehicles.
pub fn instance_from(
    config: &ScenarioConfig,
    seed: u64,
    location: usize,
    tasks: Vec<Task>,
    vehicles: Vec<Vehicle>,
) -> Result<LocationInstance> {
    config.validate()?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, location, 3));
    let mut bidders = BTreeMap::new();
    let mut bids = Vec::new();
    for v in &vehicles {
        let dwell = residual_dwell_time(v, config.coverage_radius_m, v.speed)?;
        let headroom = uniform(&mut head_rng, config.headroom);
        bidders.insert(
            v.id,
            BidderContext { dwell, link_rate: v.link_rate, capacity: v.idle_compute },
        );
        let bid = build_feasible_task_set(v, dwell, &tasks, OfferPolicy { headroom });
        if !bid.entries.is_empty() {
            bids.push(bid);
        }
    }
    let env = AuctionEnv {
        energy: config.energy_params(config.energy_optimal_speed()),
        weights: config.weights(),
        bidders,
        reserve: config.reserve_price(),
    };
    Ok(LocationInstance { location, tasks, vehicles, bids, env })
}
