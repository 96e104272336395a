//! Mixed H2/H-infinity control of partially observed linear stochastic
//! systems: Kalman-Bucy filtering, coupled Riccati synthesis, closed-loop
//! simulation and Monte Carlo verification.

pub mod error;
pub mod evaluate;
pub mod filtering;
pub mod model;
pub mod odeint;
pub mod scenario;
pub mod simulate;
pub mod stats;
pub mod synthesis;

pub use error::{Error, Result};
pub use filtering::{run_filter, solve_filter_covariance, FilterPlan, FilterTrajectory};
pub use model::{Dims, MatrixSignal, SystemModel, TimeGrid, ValidationReport};
pub use scenario::{load_scenario, parse_scenario, uav_scenario};
pub use simulate::{Baseline, DisturbanceMode, DisturbancePolicy, LoopSetup, SimResult};
pub use synthesis::{synthesize, AffineVariant, BoundedReal, GainSchedule, GainVariant, Synthesis};
