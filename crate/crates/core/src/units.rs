//! SI conversions for the mixed units found in scenario configuration.

pub const BITS_PER_MEGABIT: f64 = 1.0e6;
pub const CYCLES_PER_GIGACYCLE: f64 = 1.0e9;
pub const METERS_PER_KILOMETER: f64 = 1000.0;

pub fn megabits(x: f64) -> f64 {
    x * BITS_PER_MEGABIT
}

pub fn mbps(x: f64) -> f64 {
    x * BITS_PER_MEGABIT
}

pub fn gigacycles_per_s(x: f64) -> f64 {
    x * CYCLES_PER_GIGACYCLE
}

pub fn kmh_to_mps(x: f64) -> f64 {
    x * METERS_PER_KILOMETER / 3600.0
}

/// Vehicles per kilometre to vehicles per metre.
pub fn per_km_to_per_m(x: f64) -> f64 {
    x / METERS_PER_KILOMETER
}
