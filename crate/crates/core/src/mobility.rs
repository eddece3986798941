//! Vehicular traffic in the UAV's coverage disk.
//!
//! Speeds follow the density-speed relation `max(v_min, (1 - η/η_max)·v_max)`,
//! coverage occupancy follows the inflow/outflow recursion, and each vehicle's
//! remaining time under the UAV is `(ℜ + ς·d) / v̄`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub type VehicleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams<T> {
    /// Vehicles per metre.
    pub density: T,
    /// Jam density, vehicles per metre.
    pub max_density: T,
    pub v_min: T,
    pub v_max: T,
    pub coverage_radius: T,
    pub slot_interval: T,
    pub slot_count: usize,
}

impl<T: Scalar> TrafficParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_density > T::zero()) {
            return Err(Error::param("max_density", "must be positive"));
        }
        if !(self.density >= T::zero()) || self.density > self.max_density {
            return Err(Error::param(
                "density",
                format!("must lie in [0, {}], got {}", self.max_density, self.density),
            ));
        }
        if !(self.v_min > T::zero()) || self.v_min > self.v_max {
            return Err(Error::param("v_min", "need 0 < v_min <= v_max"));
        }
        if !(self.coverage_radius > T::zero()) {
            return Err(Error::param("coverage_radius", "must be positive"));
        }
        if !(self.slot_interval > T::zero()) {
            return Err(Error::param("slot_interval", "must be positive"));
        }
        Ok(())
    }

    /// Poisson arrival rate `λ = η·v̄` in vehicles per second.
    pub fn arrival_rate(&self) -> Result<T> {
        Ok(self.density * avg_vehicle_speed(self)?)
    }
}

/// Direction of travel relative to the UAV's hover point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    Towards,
    Away,
}

impl Heading {
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Heading::Towards => T::one(),
            Heading::Away => -T::one(),
        }
    }

    pub fn from_sign(s: i64) -> Option<Self> {
        match s {
            1 => Some(Heading::Towards),
            -1 => Some(Heading::Away),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub id: VehicleId,
    pub distance_to_uav: T,
    pub heading: Heading,
    pub speed: T,
    /// Idle compute, cycles/s.
    pub idle_compute: T,
    /// Private unit cost of shared compute.
    pub unit_cost: T,
    pub fixed_cost: T,
    /// Uplink rate, bits/s.
    pub link_rate: T,
}

/// `max(v_min, (1 - η/η_max)·v_max)`.
pub fn avg_vehicle_speed<T: Scalar>(params: &TrafficParams<T>) -> Result<T> {
    params.validate()?;
    let free_flow = (T::one() - params.density / params.max_density) * params.v_max;
    Ok(params.v_min.max(free_flow))
}

/// One step of the coverage-occupancy recursion. `slot_index` is 1-based.
pub fn vehicle_count_step<T: Scalar>(
    prev_count: T,
    inflow: T,
    leave_ratio: T,
    slot_index: usize,
) -> Result<T> {
    if !(leave_ratio >= T::zero() && leave_ratio <= T::one()) {
        return Err(Error::param("leave_ratio", format!("{leave_ratio} outside [0, 1]")));
    }
    if slot_index == 0 {
        return Err(Error::param("slot_index", "slots are numbered from 1"));
    }
    let stay = T::one() - leave_ratio;
    Ok(if slot_index == 1 {
        inflow * stay
    } else {
        (inflow + prev_count) * stay
    })
}

/// Seconds until the vehicle leaves the coverage disk.
pub fn residual_dwell_time<T: Scalar>(
    v: &VehicleState<T>,
    coverage_radius: T,
    avg_speed: T,
) -> Result<T> {
    if !(avg_speed > T::zero()) {
        return Err(Error::param("avg_speed", "must be positive"));
    }
    let t = (coverage_radius + v.heading.sign::<T>() * v.distance_to_uav) / avg_speed;
    Ok(t.max(T::zero()))
}

/// Ranges from which spawned vehicle attributes are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeRanges {
    pub idle_compute: (f64, f64),
    pub unit_cost: (f64, f64),
    pub fixed_cost: f64,
    pub link_rate: f64,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone)]
struct Moving<T> {
    state: VehicleState<T>,
    /// Metres left before exiting, `ℜ + ς·d`.
    travel_left: f64,
}

impl<T: Scalar> Moving<T> {
    fn sync(&mut self, radius: f64) {
        if self.travel_left > radius {
            self.state.heading = Heading::Towards;
            self.state.distance_to_uav = lit(self.travel_left - radius);
        } else {
            self.state.heading = Heading::Away;
            self.state.distance_to_uav = lit(radius - self.travel_left);
        }
    }
}

/// Generates `horizon` per-slot snapshots of the vehicles inside coverage.
///
/// Arrivals per slot are Poisson with mean `η·v̄·Δt`. Every spawned vehicle
/// starts at a uniform distance in `[0, ℜ]` with an equiprobable heading and
/// travels at `v̄`; vehicles are removed once they exit the disk.
pub fn spawn_population<T: Scalar>(
    seed: u64,
    params: &TrafficParams<T>,
    horizon: usize,
    attrs: &AttributeRanges,
) -> Result<Vec<Vec<VehicleState<T>>>> {
    if horizon > params.slot_count {
        return Err(Error::param(
            "horizon",
            format!("{horizon} exceeds slot_count {}", params.slot_count),
        ));
    }
    let speed = avg_vehicle_speed(params)?.as_f64();
    let dt = params.slot_interval.as_f64();
    let radius = params.coverage_radius.as_f64();
    let mean_arrivals = params.density.as_f64() * speed * dt;
    let poisson = if mean_arrivals > 0.0 {
        Some(Poisson::new(mean_arrivals).map_err(|e| Error::param("density", e.to_string()))?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id: VehicleId = 0;
    let mut present: Vec<Moving<T>> = Vec::new();
    let mut slots = Vec::with_capacity(horizon);

    for _ in 0..horizon {
        for m in present.iter_mut() {
            m.travel_left -= speed * dt;
        }
        present.retain(|m| m.travel_left > 0.0);
        for m in present.iter_mut() {
            m.sync(radius);
        }

        let arrivals = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..arrivals {
            let d = rng.gen_range(0.0..=radius);
            let heading = if rng.gen_bool(0.5) {
                Heading::Towards
            } else {
                Heading::Away
            };
            let state = VehicleState {
                id: next_id,
                distance_to_uav: lit(d),
                heading,
                speed: lit(speed),
                idle_compute: lit(uniform(&mut rng, attrs.idle_compute)),
                unit_cost: lit(uniform(&mut rng, attrs.unit_cost)),
                fixed_cost: lit(attrs.fixed_cost),
                link_rate: lit(attrs.link_rate),
            };
            next_id += 1;
            let sign = if heading == Heading::Towards { 1.0 } else { -1.0 };
            present.push(Moving {
                state,
                travel_left: radius + sign * d,
            });
        }
        slots.push(present.iter().map(|m| m.state.clone()).collect());
    }
    Ok(slots)
}

/// Per-slot vehicles read from a CSV trace.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    pub slots: BTreeMap<u64, Vec<VehicleState<T>>>,
    /// Rows dropped because the vehicle was outside the coverage radius.
    pub dropped: usize,
}

impl<T> Trace<T> {
    pub fn vehicle_count(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    slot: u64,
    id: VehicleId,
    distance_m: f64,
    heading: i64,
    speed_mps: f64,
    idle_compute_cps: f64,
    unit_cost: f64,
}

/// Reads `slot,id,distance_m,heading,speed_mps,idle_compute_cps,unit_cost`.
///
/// Link rate and fixed cost are not part of the schema and come from `defaults`.
pub fn load_trace<T: Scalar>(
    path: &Path,
    coverage_radius: T,
    defaults: &AttributeRanges,
) -> Result<Trace<T>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut trace = Trace {
        slots: BTreeMap::new(),
        dropped: 0,
    };
    let radius = coverage_radius.as_f64();
    let headers = reader
        .headers()
        .map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let line_err = |message: String| Error::Trace {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| line_err(e.to_string()))?;
        let heading = Heading::from_sign(row.heading)
            .ok_or_else(|| line_err(format!("heading must be 1 or -1, got {}", row.heading)))?;
        if !(row.distance_m >= 0.0) || !(row.speed_mps > 0.0) || !(row.idle_compute_cps >= 0.0) {
            return Err(line_err("distance, speed and compute must be non-negative".into()));
        }
        if row.distance_m > radius {
            trace.dropped += 1;
            continue;
        }
        trace.slots.entry(row.slot).or_default().push(VehicleState {
            id: row.id,
            distance_to_uav: lit(row.distance_m),
            heading,
            speed: lit(row.speed_mps),
            idle_compute: lit(row.idle_compute_cps),
            unit_cost: lit(row.unit_cost),
            fixed_cost: lit(defaults.fixed_cost),
            link_rate: lit(defaults.link_rate),
        });
    }
    Ok(trace)
}
