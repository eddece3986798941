//! Multi-location runs and parameter sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_on_instance, BaselineParams, Scheme, SchemeReport};
use crate::error::{Error, Result};
use crate::scenario::{build_location, ScenarioConfig};

/// One scheme at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRow {
    pub seed: u64,
    pub location: usize,
    pub scheme: Scheme,
    pub tasks: usize,
    pub vehicles: usize,
    pub bidders: usize,
    pub vehicle_tasks: usize,
    pub fallbacks: usize,
    pub deadline_misses: usize,
    pub fly_speed: f64,
    pub uav_cost: f64,
    pub energy: f64,
    pub flight_energy: f64,
    pub task_energy: f64,
    pub total_payment: f64,
    pub mean_delay: f64,
    pub max_delay: f64,
    /// Leg flight time plus the slowest task, seconds.
    pub stop_time: f64,
}

impl LocationRow {
    fn new(seed: u64, location: usize, vehicles: usize, bidders: usize, segment: f64, r: &SchemeReport) -> Self {
        LocationRow {
            seed,
            location,
            scheme: r.scheme,
            tasks: r.served_by.len(),
            vehicles,
            bidders,
            vehicle_tasks: r.vehicle_tasks(),
            fallbacks: r.fallbacks,
            deadline_misses: r.deadline_misses,
            fly_speed: r.fly_speed,
            uav_cost: r.uav_cost,
            energy: r.energy,
            flight_energy: r.flight_energy,
            task_energy: r.task_energy,
            total_payment: r.total_payment,
            mean_delay: r.mean_delay(),
            max_delay: r.max_delay(),
            stop_time: segment / r.fly_speed + r.max_delay(),
        }
    }
}

/// Runs every scheme at every location of one mission. Rows are ordered by
/// location, then by the order of `schemes`.
pub fn run_locations(config: &ScenarioConfig, seed: u64, schemes: &[Scheme]) -> Result<Vec<LocationRow>> {
    config.validate()?;
    let params = BaselineParams::from_config(config);
    let per_location: Vec<Result<Vec<LocationRow>>> = (0..config.locations)
        .into_par_iter()
        .map(|n| {
            let inst = build_location(config, seed, n)?;
            schemes
                .iter()
                .map(|&s| {
                    let r = run_on_instance(s, &inst, &params)?;
                    Ok(LocationRow::new(
                        seed,
                        n,
                        inst.vehicles.len(),
                        inst.bids.len(),
                        config.segment_length_m,
                        &r,
                    ))
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_location {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Vehicle density, veh/km.
    Density,
    /// Tasks per location (fixed count).
    Tasks,
    /// Number of locations.
    Locations,
    /// Vehicles in coverage (fixed count).
    Bidders,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Density => "density",
            Axis::Tasks => "tasks",
            Axis::Locations => "locations",
            Axis::Bidders => "bidders",
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = config.clone();
        let count = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::param("axis", format!("{} needs whole values, got {value}", self.name())))
            }
        };
        match self {
            Axis::Density => c.density_veh_per_km = value,
            Axis::Tasks => {
                let n = count()?;
                c.tasks = [n, n];
            }
            Axis::Locations => c.locations = count()?,
            Axis::Bidders => c.bidders = Some(count()?),
        }
        Ok(c)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Axis::Density, Axis::Tasks, Axis::Locations, Axis::Bidders]
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::param("axis", format!("unknown axis `{s}`")))
    }
}

/// `from, from + step, …` up to and including `to` (with a little slack for
/// rounding).
pub fn axis_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) {
        return Err(Error::param("range", "bounds and step must be finite"));
    }
    if !(step > 0.0) {
        return Err(Error::param("step", "must be positive"));
    }
    if from > to {
        return Err(Error::param("range", format!("empty range {from}..{to}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| from + k as f64 * step).collect())
}

/// Mission-level aggregate of one scheme at one sweep point and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub locations: usize,
    /// Mean per-location UAV cost.
    pub mean_uav_cost: f64,
    pub total_energy: f64,
    /// Mean per-location energy.
    pub mean_energy: f64,
    pub mean_task_energy: f64,
    pub total_payment: f64,
    pub mean_delay: f64,
    /// Sum of per-location stop times.
    pub journey_time: f64,
    pub vehicle_tasks: usize,
    pub fallbacks: usize,
}

fn aggregate(axis: Axis, value: f64, seed: u64, scheme: Scheme, rows: &[&LocationRow]) -> SweepRow {
    let n = rows.len();
    let nf = n.max(1) as f64;
    let total_energy: f64 = rows.iter().map(|r| r.energy).sum();
    let tasks: usize = rows.iter().map(|r| r.tasks).sum();
    let delay_sum: f64 = rows.iter().map(|r| r.mean_delay * r.tasks as f64).sum();
    SweepRow {
        axis,
        value,
        scheme,
        seed,
        locations: n,
        mean_uav_cost: rows.iter().map(|r| r.uav_cost).sum::<f64>() / nf,
        total_energy,
        mean_energy: total_energy / nf,
        mean_task_energy: rows.iter().map(|r| r.task_energy).sum::<f64>() / nf,
        total_payment: rows.iter().map(|r| r.total_payment).sum(),
        mean_delay: if tasks == 0 { 0.0 } else { delay_sum / tasks as f64 },
        journey_time: rows.iter().map(|r| r.stop_time).sum(),
        vehicle_tasks: rows.iter().map(|r| r.vehicle_tasks).sum(),
        fallbacks: rows.iter().map(|r| r.fallbacks).sum(),
    }
}

/// Runs every (value, seed) pair in parallel. Output is ordered by value,
/// seed, then scheme order.
pub fn sweep(
    config: &ScenarioConfig,
    axis: Axis,
    values: &[f64],
    schemes: &[Scheme],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::param("range", "sweep has no points"));
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    if schemes.is_empty() {
        return Err(Error::param("schemes", "at least one scheme is required"));
    }
    let configs: Vec<ScenarioConfig> = values.iter().map(|&v| axis.apply(config, v)).collect::<Result<_>>()?;
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<Vec<SweepRow>>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let rows = run_locations(&configs[i], seed, schemes)?;
            Ok(schemes
                .iter()
                .map(|&s| {
                    let mine: Vec<&LocationRow> = rows.iter().filter(|r| r.scheme == s).collect();
                    aggregate(axis, values[i], seed, s, &mine)
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean of `metric` over seeds for each (value, scheme), in sweep order.
pub fn seed_means(rows: &[SweepRow], metric: impl Fn(&SweepRow) -> f64) -> Vec<(f64, Scheme, f64)> {
    let mut out: Vec<(f64, Scheme, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.0 == r.value && o.1 == r.scheme) {
            Some(o) => {
                o.2 += metric(r);
                o.3 += 1;
            }
            None => out.push((r.value, r.scheme, metric(r), 1)),
        }
    }
    out.into_iter().map(|(v, s, sum, n)| (v, s, sum / n as f64)).collect()
}
