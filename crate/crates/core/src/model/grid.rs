//! Delivery/trading grid of forward contracts and flat contract indexing.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one delivery")]
    EmptyDeliveries,
    #[error("delivery times must be strictly increasing")]
    UnsortedDeliveries,
    #[error("delivery {0} has no trading times")]
    EmptyLadder(usize),
    #[error("trading times of delivery {0} must be strictly increasing")]
    UnsortedLadder(usize),
    #[error("last trading time of delivery {0} must equal its delivery time")]
    TerminalMismatch(usize),
    #[error("one trading ladder per delivery required")]
    LadderCountMismatch,
}

/// All contracts of the market: for each delivery time `T_j` an ordered
/// ladder of trading times ending exactly at `T_j` (a contract traded after
/// delivery does not exist). Contracts are flat-indexed delivery-major,
/// trading-minor.
///
/// Times are plain numbers; the caller picks the unit and must use the same
/// unit for the interest rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractGrid {
    delivery_times: Vec<f64>,
    trading_times: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    n: usize,
}

impl ContractGrid {
    pub fn new(delivery_times: Vec<f64>, trading_times: Vec<Vec<f64>>) -> Result<Self, GridError> {
        if delivery_times.is_empty() {
            return Err(GridError::EmptyDeliveries);
        }
        if delivery_times.len() != trading_times.len() {
            return Err(GridError::LadderCountMismatch);
        }
        if delivery_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::UnsortedDeliveries);
        }
        for (j, ladder) in trading_times.iter().enumerate() {
            if ladder.is_empty() {
                return Err(GridError::EmptyLadder(j));
            }
            if ladder.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GridError::UnsortedLadder(j));
            }
            if *ladder.last().unwrap() != delivery_times[j] {
                return Err(GridError::TerminalMismatch(j));
            }
        }
        let mut offsets = Vec::with_capacity(delivery_times.len() + 1);
        let mut n = 0;
        for ladder in &trading_times {
            offsets.push(n);
            n += ladder.len();
        }
        offsets.push(n);
        Ok(Self {
            delivery_times,
            trading_times,
            offsets,
            n,
        })
    }

    pub fn n_deliveries(&self) -> usize {
        self.delivery_times.len()
    }

    /// Total number of contracts N = Σⱼ |Iⱼ|.
    pub fn n_contracts(&self) -> usize {
        self.n
    }

    pub fn delivery_times(&self) -> &[f64] {
        &self.delivery_times
    }

    pub fn delivery_time(&self, j: usize) -> f64 {
        self.delivery_times[j]
    }

    pub fn ladder(&self, j: usize) -> &[f64] {
        &self.trading_times[j]
    }

    pub fn ladder_len(&self, j: usize) -> usize {
        self.trading_times[j].len()
    }

    pub fn flatten(&self, j: usize, i: usize) -> usize {
        debug_assert!(i < self.ladder_len(j));
        self.offsets[j] + i
    }

    pub fn unflatten(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.n);
        let j = match self.offsets.binary_search(&n) {
            Ok(j) if j < self.n_deliveries() => j,
            Ok(j) => j - 1,
            Err(j) => j - 1,
        };
        (j, n - self.offsets[j])
    }

    /// Delivery index of flat contract `n`.
    pub fn delivery_of(&self, n: usize) -> usize {
        self.unflatten(n).0
    }

    /// Iterate `(flat, j, i, trading_time, delivery_time)` in flat order.
    pub fn contracts(&self) -> impl Iterator<Item = (usize, usize, usize, f64, f64)> + '_ {
        (0..self.n_deliveries()).flat_map(move |j| {
            self.trading_times[j]
                .iter()
                .enumerate()
                .map(move |(i, &t)| (self.flatten(j, i), j, i, t, self.delivery_times[j]))
        })
    }
}

/// Per-contract discount factors `e^{-rate · T_j}`; each contract's factor
/// depends only on its delivery time.
pub fn discount_factors(grid: &ContractGrid, rate: f64) -> DVector<f64> {
    let mut out = DVector::zeros(grid.n_contracts());
    for (n, j, _, _, _) in grid.contracts() {
        out[n] = (-rate * grid.delivery_time(j)).exp();
    }
    out
}
