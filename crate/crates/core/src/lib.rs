//! Equilibrium term structures for electricity forward markets.
//!
//! The engine stacks the mean-variance programs of all producers and
//! consumers, together with a hypothetical market agent whose optimality
//! condition is the market-clearing constraint, into one convex quadratic
//! program. Solving that program once yields the equilibrium expected price
//! of every traded contract along with each player's trading and production
//! schedule, and the equilibrium is verified by independent per-player
//! best-response solves.
//!
//! Module map:
//! - [`model`]: contract grids, plants, players, exogenous curves, covariance.
//! - [`assembly`]: per-player constraint blocks and the stacked program.
//! - [`qp`]: the interior-point solver and KKT residual checker.
//! - [`equilibrium`]: solve, price extraction, utilities, Nash verification.
//! - [`extensions`]: futures conversion, block contracts, transaction costs.
//! - [`calibration`]: plant-parameter fitting and covariance estimation.
//! - [`synth`]: deterministic synthetic fleets, markets and histories.

pub mod assembly;
pub mod calibration;
pub mod equilibrium;
pub mod extensions;
pub mod model;
pub mod qp;
pub mod synth;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use model::{ContractGrid, MarketInstance, VariableLayout};
pub use qp::{QpProblem, QpSolution, QpStatus};
