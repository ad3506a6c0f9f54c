//! Market-realism layers: forward/future conversion, multi-delivery block
//! contracts and linear-plus-quadratic transaction costs. Each one preserves
//! the quadratic-program form of the assembled market.

use crate::model::{ContractGrid, MarketInstance};
use thiserror::Error;

/// Per-contract trading costs. Trading volume `V` costs `ε|V| + υV²`:
/// `ε` is half the bid-offer spread plus fees, `υ` the order-book impact
/// slope. Costs enter the expected utility only (they are deterministic, so
/// they carry no variance term) and apply to electricity contracts alone.
#[derive(Debug, Clone)]
pub struct TransactionCostSpec {
    pub epsilon: Vec<f64>,
    pub upsilon: Vec<f64>,
}

impl TransactionCostSpec {
    pub fn zero(n: usize) -> Self {
        Self {
            epsilon: vec![0.0; n],
            upsilon: vec![0.0; n],
        }
    }

    pub fn uniform(n: usize, epsilon: f64, upsilon: f64) -> Self {
        Self {
            epsilon: vec![epsilon; n],
            upsilon: vec![upsilon; n],
        }
    }

    pub fn is_valid(&self, n: usize) -> bool {
        self.epsilon.len() == n
            && self.upsilon.len() == n
            && self.epsilon.iter().chain(self.upsilon.iter()).all(|v| *v >= 0.0)
    }
}

/// A contract covering several delivery periods, traded at times common to
/// all of them. Merging is a variable substitution: every covered contract
/// of every player, and the matching price variables, collapse into one
/// representative variable.
#[derive(Debug, Clone)]
pub struct BlockContract {
    /// Covered delivery indices (J' ⊆ J), non-empty.
    pub deliveries: Vec<usize>,
    /// Trading times, each present on every covered delivery's ladder.
    pub trading_times: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtensionError {
    #[error("ladder for delivery {j} has {expected} points, curve has {got}")]
    LadderMismatch { j: usize, expected: usize, got: usize },
    #[error("{0}")]
    InvalidBlocks(String),
    #[error("cost specification invalid: {0}")]
    InvalidCosts(String),
}

/// Expected future prices on one delivery's trading ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct FuturesCurve {
    pub values: Vec<f64>,
}

/// Expected forward prices on one delivery's trading ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardsCurve {
    pub values: Vec<f64>,
}

fn check_ladder(grid: &ContractGrid, j: usize, len: usize) -> Result<(), ExtensionError> {
    let expected = grid.ladder_len(j);
    if len != expected {
        return Err(ExtensionError::LadderMismatch { j, expected, got: len });
    }
    Ok(())
}

/// Convert a futures ladder to forwards for delivery `j`: the terminal entry
/// carries over unchanged, earlier entries add the telescoped futures
/// increments weighted by `e^{-r t_{k+1}} / e^{-r T_j}`.
///
/// At `r = 0` the weights are all one and the sum telescopes, so every
/// forward equals the terminal futures value.
pub fn forwards_from_futures(
    futures: &FuturesCurve,
    rate: f64,
    grid: &ContractGrid,
    j: usize,
) -> Result<ForwardsCurve, ExtensionError> {
    check_ladder(grid, j, futures.values.len())?;
    let times = grid.ladder(j);
    let big_t = grid.delivery_time(j);
    let m = times.len();
    let fut = &futures.values;
    let mut out = vec![0.0; m];
    out[m - 1] = fut[m - 1];
    for i in 0..m.saturating_sub(1) {
        let mut acc = fut[i];
        for k in i..m - 1 {
            let w = ((-rate * times[k + 1]).exp()) / ((-rate * big_t).exp());
            acc += (fut[k + 1] - fut[k]) * w;
        }
        out[i] = acc;
    }
    Ok(ForwardsCurve { values: out })
}

/// Invert [`forwards_from_futures`] by back-substitution on the triangular
/// system, from the terminal entry downward.
///
/// The terminal weight is exactly one, so the forward at the second-to-last
/// trading time never depends on its own futures entry (and at `r = 0` no
/// entry before the terminal one is determined). Wherever a diagonal
/// coefficient vanishes the futures value is completed flat from the right,
/// which fixes the output uniquely; mapping the result forward again
/// reproduces every forwards ladder that is reachable from some futures
/// ladder.
pub fn futures_from_forwards(
    forwards: &ForwardsCurve,
    rate: f64,
    grid: &ContractGrid,
    j: usize,
) -> Result<FuturesCurve, ExtensionError> {
    check_ladder(grid, j, forwards.values.len())?;
    let times = grid.ladder(j);
    let big_t = grid.delivery_time(j);
    let m = times.len();
    let fwd = &forwards.values;
    let w = |k: usize| ((-rate * times[k]).exp()) / ((-rate * big_t).exp());

    let mut fut = vec![0.0; m];
    fut[m - 1] = fwd[m - 1];
    let scale = fwd.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in (0..m.saturating_sub(1)).rev() {
        // fwd_i = fut_i (1 - w_{i+1}) + Σ_{k=i+1}^{m-2} fut_k (w_k - w_{k+1})
        //         + fut_{m-1} w_{m-1}
        let mut partial = fut[m - 1] * w(m - 1);
        for k in i + 1..m - 1 {
            partial += fut[k] * (w(k) - w(k + 1));
        }
        let coef = 1.0 - w(i + 1);
        if coef.abs() <= 1e-14 * scale.max(1.0) {
            fut[i] = fut[i + 1];
        } else {
            fut[i] = (fwd[i] - partial) / coef;
        }
    }
    Ok(FuturesCurve { values: fut })
}

/// Attach block contracts to a market, validating that blocks are mutually
/// consistent and realizable on the grid. The variable substitution itself
/// happens during assembly through the contract classes.
pub fn apply_block_contracts(
    market: &MarketInstance,
    blocks: &[BlockContract],
) -> Result<MarketInstance, ExtensionError> {
    let mut out = market.clone();
    out.blocks.extend_from_slice(blocks);
    out.contract_classes()
        .map_err(ExtensionError::InvalidBlocks)?;
    Ok(out)
}

/// Attach a transaction-cost specification to a market. Assembly then splits
/// every volume variable into a buy/sell pair and adds `ε` to the linear and
/// `υ` to the quadratic utility terms.
pub fn apply_transaction_costs(
    market: &MarketInstance,
    spec: TransactionCostSpec,
) -> Result<MarketInstance, ExtensionError> {
    let n = market.grid.n_contracts();
    if !spec.is_valid(n) {
        return Err(ExtensionError::InvalidCosts(format!(
            "expected {n} non-negative entries per coefficient"
        )));
    }
    let mut out = market.clone();
    out.cost_spec = Some(spec);
    Ok(out)
}
