//! Edge-computing resource trading between a UAV and passing vehicles:
//! traffic and dwell-time models, a truthful reverse auction, and a
//! hash-chain payment exchange on a simulated ledger.

pub mod auction;
pub mod baselines;
pub mod cost;
pub mod error;
pub mod exchange;
pub mod experiment;
pub mod mobility;
pub mod scalar;
pub mod scenario;
pub mod units;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Task = cost::TaskSpec<f64>;
pub type Vehicle = mobility::VehicleState<f64>;
pub type Bid = auction::CombinatorialBid<f64>;
pub type Outcome = auction::AuctionOutcome<f64>;
pub type Env = auction::AuctionEnv<f64>;
