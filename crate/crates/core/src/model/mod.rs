//! Domain types: contract grid, plants, players, exogenous curves,
//! covariance model and the variable layout of the stacked program.
//!
//! All types are immutable after construction and safe to share across
//! threads.

pub mod grid;
pub mod layout;
pub mod market;

pub use grid::{discount_factors, ContractGrid, GridError};
pub use layout::{ContractClasses, PlayerDims, PlayerRef, PlayerSlice, VariableLayout};
pub use market::{
    validate_market, Consumer, CovarianceModel, ExogenousCurves, MarketInstance, MarketViolation,
    PowerPlant, Producer,
};
