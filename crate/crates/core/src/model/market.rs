//! Players, plants, exogenous curves and the market instance.
//!
//! Unit conventions: production in MWh per delivery period, prices in
//! currency per MWh / fuel unit / tonne. No internal unit conversion happens
//! anywhere; ingestion must pre-convert. The covariance model is the
//! covariance of the *discounted* stacked price vector (electricity block
//! first, then one block per fuel in market order, then the emission block).

use super::grid::ContractGrid;
use super::layout::ContractClasses;
use crate::extensions::{BlockContract, TransactionCostSpec};
use nalgebra::DMatrix;

/// One generation unit. `ramp_down` is stored as a non-positive lower bound
/// on the per-period production change.
#[derive(Debug, Clone)]
pub struct PowerPlant {
    pub name: String,
    /// Index into the market fuel set.
    pub fuel: usize,
    /// Maximum production per delivery period (MWh).
    pub capacity_max: f64,
    /// Maximum production increase between consecutive deliveries (MWh).
    pub ramp_up: f64,
    /// Maximum production decrease, stored as a non-positive bound (MWh).
    pub ramp_down: f64,
    /// Fuel units consumed per MWh produced.
    pub efficiency: f64,
    /// Emission certificates consumed per MWh produced (tonnes CO₂/MWh).
    pub emission_intensity: f64,
}

/// Producer: risk aversion plus a possibly empty plant portfolio. An empty
/// portfolio models a non-physical trader.
#[derive(Debug, Clone)]
pub struct Producer {
    pub id: String,
    /// Mean-variance risk aversion λ_p > 0 (1/currency).
    pub risk_aversion: f64,
    pub plants: Vec<PowerPlant>,
}

impl Producer {
    /// Plant indices in canonical order: grouped by fuel, input order within
    /// a fuel. Production variables and reports follow this order.
    pub fn ordered_plants(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.plants.len()).collect();
        idx.sort_by_key(|&i| (self.plants[i].fuel, i));
        idx
    }
}

/// Consumer: serves a fixed share of system demand. The retail price only
/// shifts the reported profit, never the equilibrium solution.
#[derive(Debug, Clone)]
pub struct Consumer {
    pub id: String,
    /// Mean-variance risk aversion λ_c > 0 (1/currency).
    pub risk_aversion: f64,
    /// Share p_c ∈ [0, 1] of total demand; shares sum to one market-wide.
    pub demand_share: f64,
    /// Contractual resale price (currency/MWh), used in reporting only.
    pub retail_price: f64,
}

/// Expected exogenous curves on the contract grid.
#[derive(Debug, Clone)]
pub struct ExogenousCurves {
    /// Expected undiscounted fuel forward prices, one length-N vector per
    /// fuel in market fuel order.
    pub fuel_prices: Vec<Vec<f64>>,
    /// Expected undiscounted emission forward prices, length N.
    pub emission_prices: Vec<f64>,
    /// Demand per delivery period (MWh), length |J|.
    pub demand: Vec<f64>,
    /// Constant interest rate in the unit implied by the grid's timestamps.
    pub interest_rate: f64,
}

/// Covariance of the discounted stacked price vector, partitioned into the
/// electricity block (N×N), the electricity/fuel+emission cross block
/// (N × N(|L|+1)) and the fuel+emission block.
///
/// The electricity block must be strictly positive definite; the stacked
/// matrix must be symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q3: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn zero(n: usize, n_fuels: usize) -> Self {
        let m = n * (n_fuels + 1);
        Self {
            q1: DMatrix::zeros(n, n),
            q2: DMatrix::zeros(n, m),
            q3: DMatrix::zeros(m, m),
        }
    }

    /// Full (N(|L|+2))² matrix `[[Q₁, Q₂], [Q₂ᵀ, Q₃]]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.q1.nrows();
        let m = self.q3.nrows();
        let mut s = DMatrix::zeros(n + m, n + m);
        s.view_mut((0, 0), (n, n)).copy_from(&self.q1);
        s.view_mut((0, n), (n, m)).copy_from(&self.q2);
        s.view_mut((n, 0), (m, n)).copy_from(&self.q2.transpose());
        s.view_mut((n, n), (m, m)).copy_from(&self.q3);
        s
    }

    /// Split a full stacked matrix back into blocks.
    pub fn from_stacked(full: &DMatrix<f64>, n: usize) -> Self {
        let m = full.nrows() - n;
        Self {
            q1: full.view((0, 0), (n, n)).into(),
            q2: full.view((0, n), (n, m)).into(),
            q3: full.view((n, n), (m, m)).into(),
        }
    }

    pub fn dims_match(&self, n: usize, n_fuels: usize) -> bool {
        let m = n * (n_fuels + 1);
        self.q1.nrows() == n
            && self.q1.ncols() == n
            && self.q2.nrows() == n
            && self.q2.ncols() == m
            && self.q3.nrows() == m
            && self.q3.ncols() == m
    }
}

/// A complete market instance; immutable once constructed.
#[derive(Debug, Clone)]
pub struct MarketInstance {
    pub grid: ContractGrid,
    pub fuels: Vec<String>,
    pub producers: Vec<Producer>,
    pub consumers: Vec<Consumer>,
    pub curves: ExogenousCurves,
    pub covariance: CovarianceModel,
    /// Bound on the net number of electricity contracts per player and
    /// contract.
    pub trade_bound: f64,
    /// Per-contract linear/quadratic trading costs, when modeled.
    pub cost_spec: Option<TransactionCostSpec>,
    /// Multi-delivery contracts; covered contracts share one variable.
    pub blocks: Vec<BlockContract>,
}

impl MarketInstance {
    /// Contract classes after applying block-contract merges.
    pub fn contract_classes(&self) -> Result<ContractClasses, String> {
        ContractClasses::from_blocks(&self.grid, &self.blocks)
    }

    pub fn n_players(&self) -> usize {
        self.producers.len() + self.consumers.len()
    }
}

/// One failed invariant, as a human-readable finding.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketViolation(pub String);

impl std::fmt::Display for MarketViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Check every model invariant; returns an empty list iff the instance is
/// usable. Diagnostic only, never panics.
pub fn validate_market(market: &MarketInstance) -> Vec<MarketViolation> {
    let mut out = Vec::new();
    let mut flag = |cond: bool, msg: String| {
        if !cond {
            out.push(MarketViolation(msg));
        }
    };

    let n = market.grid.n_contracts();
    let n_fuels = market.fuels.len();

    flag(
        !market.producers.is_empty(),
        "market needs at least one producer".into(),
    );
    flag(
        !market.consumers.is_empty(),
        "market needs at least one consumer".into(),
    );
    for p in &market.producers {
        flag(
            p.risk_aversion > 0.0,
            format!("producer {}: risk aversion must be positive", p.id),
        );
        for plant in &p.plants {
            let tag = format!("producer {} plant {}", p.id, plant.name);
            flag(plant.fuel < n_fuels, format!("{tag}: unknown fuel index"));
            flag(plant.capacity_max >= 0.0, format!("{tag}: negative capacity"));
            flag(plant.efficiency > 0.0, format!("{tag}: efficiency must be positive"));
            flag(
                plant.emission_intensity > 0.0,
                format!("{tag}: emission intensity must be positive"),
            );
            flag(
                plant.ramp_down <= 0.0 && plant.ramp_up >= 0.0,
                format!("{tag}: ramp bounds must satisfy down ≤ 0 ≤ up"),
            );
        }
    }
    let mut share_sum = 0.0;
    for c in &market.consumers {
        flag(
            c.risk_aversion > 0.0,
            format!("consumer {}: risk aversion must be positive", c.id),
        );
        flag(
            (0.0..=1.0).contains(&c.demand_share),
            format!("consumer {}: demand share outside [0, 1]", c.id),
        );
        share_sum += c.demand_share;
    }
    flag(
        (share_sum - 1.0).abs() <= 1e-12,
        format!("demand shares sum to {share_sum}"),
    );

    flag(
        market.curves.fuel_prices.len() == n_fuels,
        "one fuel price curve per fuel required".into(),
    );
    for (l, curve) in market.curves.fuel_prices.iter().enumerate() {
        flag(
            curve.len() == n,
            format!("fuel {l}: price curve has {} entries, expected {n}", curve.len()),
        );
    }
    flag(
        market.curves.emission_prices.len() == n,
        "emission price curve must cover every contract".into(),
    );
    flag(
        market.curves.demand.len() == market.grid.n_deliveries(),
        "demand must cover every delivery".into(),
    );
    flag(
        market.curves.demand.iter().all(|d| d.is_finite() && *d >= 0.0),
        "demand must be finite and non-negative".into(),
    );
    flag(market.trade_bound > 0.0, "trade bound must be positive".into());

    if market.covariance.dims_match(n, n_fuels) {
        let stacked = market.covariance.stacked();
        let asym = (&stacked - stacked.transpose()).amax();
        flag(
            asym <= 1e-10 * (1.0 + stacked.amax()),
            format!("covariance not symmetric (asymmetry {asym:.3e})"),
        );
        let norm = stacked.amax();
        let eig = stacked.symmetric_eigenvalues();
        let min_eig = eig.min();
        flag(
            min_eig >= -1e-10 * norm.max(1.0),
            format!("covariance not PSD (min eigenvalue {min_eig:.3e})"),
        );
        let q1_min = market.covariance.q1.symmetric_eigenvalues().min();
        flag(
            q1_min > 0.0,
            format!("electricity block must be positive definite (min eigenvalue {q1_min:.3e})"),
        );
    } else {
        flag(false, "covariance dimensions do not match the grid".into());
    }

    if let Some(spec) = &market.cost_spec {
        flag(
            spec.epsilon.len() == n && spec.upsilon.len() == n,
            "cost spec must cover every contract".into(),
        );
        flag(
            spec.epsilon.iter().chain(spec.upsilon.iter()).all(|v| *v >= 0.0),
            "cost coefficients must be non-negative".into(),
        );
    }

    if let Err(msg) = market.contract_classes() {
        flag(false, msg);
    }

    out
}
