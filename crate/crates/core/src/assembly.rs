//! Per-player constraint blocks and the stacked market program.
//!
//! Each producer solves
//!
//! ```text
//!     max  -E[π_p]ᵀ v_p - ½ λ_p v_pᵀ Q_p v_p
//!     s.t. per-delivery volume balance, per-fuel-per-delivery fuel cover,
//!          one emissions row over the horizon (all homogeneous),
//!          ramp rows, capacity boxes, trade-bound boxes
//! ```
//!
//! and each consumer the analogue with demand-cover equalities. The global
//! program block-stacks every player, appends one clearing row per contract
//! class (whose multipliers are pinned to zero: the hypothetical market
//! agent) and couples each player's volume slice to the price slice through
//! the Hessian, so that stationarity of the price block is exactly the
//! clearing constraint.
//!
//! Discounting is baked into the linear term and the covariance convention:
//! expected fuel/emission prices enter multiplied by `e^{-r̂ T_j}`, and the
//! supplied covariance is that of discounted prices. The price slice of the
//! solution is therefore the discounted expected electricity price.

use crate::model::{
    discount_factors, validate_market, MarketInstance, MarketViolation, PlayerDims, PlayerRef,
    VariableLayout,
};
use crate::qp::{QpProblem, SparseMatrix, Triplets};
use nalgebra::{DMatrix, DVector};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("market failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMarket(Vec<MarketViolation>),
    #[error("layout construction failed: {0}")]
    Layout(String),
    #[error("internal dimension mismatch: {0}")]
    Dimensions(String),
}

/// Constraint family, used to name violations in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFamily {
    VolumeBalance,
    FuelCover,
    EmissionCover,
    DemandCover,
    RampUp,
    RampDown,
    CapacityUpper,
    CapacityLower,
    TradeUpper,
    TradeLower,
    NonNegativity,
}

impl std::fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ConstraintFamily::VolumeBalance => "volume balance",
            ConstraintFamily::FuelCover => "fuel cover",
            ConstraintFamily::EmissionCover => "emission cover",
            ConstraintFamily::DemandCover => "demand cover",
            ConstraintFamily::RampUp => "ramp up",
            ConstraintFamily::RampDown => "ramp down",
            ConstraintFamily::CapacityUpper => "capacity upper",
            ConstraintFamily::CapacityLower => "capacity lower",
            ConstraintFamily::TradeUpper => "trade bound upper",
            ConstraintFamily::TradeLower => "trade bound lower",
            ConstraintFamily::NonNegativity => "volume split non-negativity",
        };
        f.write_str(name)
    }
}

/// One player's matrices in their local variable space.
#[derive(Debug, Clone)]
pub struct PlayerBlocks {
    pub player: PlayerRef,
    pub eq: SparseMatrix,
    pub eq_rhs: DVector<f64>,
    pub ineq: SparseMatrix,
    pub ineq_rhs: DVector<f64>,
    /// Lower triangle of the player's covariance Hessian, unscaled; the
    /// risk aversion multiplies it during stacking and utility evaluation.
    pub cov_lower: SparseMatrix,
    /// Lower triangle of the transaction-cost Hessian; enters unscaled.
    pub cost_lower: SparseMatrix,
    /// Expected-cost linear term: discounted fuel/emission prices in the
    /// F/O slots plus linear trading costs in the volume slots.
    pub linear: DVector<f64>,
    pub eq_families: Vec<ConstraintFamily>,
    pub ineq_families: Vec<ConstraintFamily>,
    pub risk_aversion: f64,
    pub dims: PlayerDims,
}

impl PlayerBlocks {
    pub fn dim(&self) -> usize {
        self.dims.total()
    }
}

/// Shared precomputation for block construction: layout, discount factors
/// and class-level covariance/cost data.
pub struct AssemblyContext<'m> {
    pub market: &'m MarketInstance,
    pub layout: VariableLayout,
    /// Per original contract: e^{-r̂ T_j}.
    pub disc: DVector<f64>,
    /// Class-level electricity covariance Sᵀ Q̂₁ S.
    q1_cls: DMatrix<f64>,
    /// Class-level electricity/fuel+emission cross covariance Sᵀ Q̂₂.
    q2_cls: DMatrix<f64>,
    /// Class-level discounted cost coefficients (sums over class members).
    eps_cls: Vec<f64>,
    ups_cls: Vec<f64>,
}

impl<'m> AssemblyContext<'m> {
    pub fn new(market: &'m MarketInstance) -> Result<Self, AssemblyError> {
        let layout = VariableLayout::for_market(market).map_err(AssemblyError::Layout)?;
        let disc = discount_factors(&market.grid, market.curves.interest_rate);
        let classes = &layout.classes;
        let k = classes.n_classes();
        let q1 = &market.covariance.q1;
        let q2 = &market.covariance.q2;
        let mut q1_cls = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let mut acc = 0.0;
                for &n in classes.members(a) {
                    for &m in classes.members(b) {
                        acc += q1[(n, m)];
                    }
                }
                q1_cls[(a, b)] = acc;
            }
        }
        let m_fo = q2.ncols();
        let mut q2_cls = DMatrix::zeros(k, m_fo);
        for a in 0..k {
            for col in 0..m_fo {
                let mut acc = 0.0;
                for &n in classes.members(a) {
                    acc += q2[(n, col)];
                }
                q2_cls[(a, col)] = acc;
            }
        }
        let (mut eps_cls, mut ups_cls) = (vec![0.0; k], vec![0.0; k]);
        if let Some(spec) = &market.cost_spec {
            for n in 0..market.grid.n_contracts() {
                let c = classes.class_of(n);
                eps_cls[c] += disc[n] * spec.epsilon[n];
                ups_cls[c] += disc[n] * spec.upsilon[n];
            }
        }
        Ok(Self {
            market,
            layout,
            disc,
            q1_cls,
            q2_cls,
            eps_cls,
            ups_cls,
        })
    }

    fn n_classes(&self) -> usize {
        self.layout.n_classes()
    }

    fn split(&self) -> bool {
        self.layout.split_volumes
    }

    fn vol_width(&self) -> usize {
        if self.split() {
            2 * self.n_classes()
        } else {
            self.n_classes()
        }
    }

    /// Volume coefficients of `class` as (local index, sign) pairs.
    fn vol_terms(&self, class: usize) -> Vec<(usize, f64)> {
        if self.split() {
            vec![(class, 1.0), (self.n_classes() + class, -1.0)]
        } else {
            vec![(class, 1.0)]
        }
    }

    /// Covariance Hessian over the volume(+F/O) prefix, lower triangle.
    fn covariance_lower(&self, with_fuel_legs: bool, dim: usize) -> SparseMatrix {
        let k = self.n_classes();
        let nv = self.vol_width();
        let mut t = Triplets::new(dim, dim);
        for a in 0..k {
            for b in 0..=a {
                let v = self.q1_cls[(a, b)];
                if v == 0.0 {
                    continue;
                }
                t.push(a, b, v);
                if self.split() {
                    t.push(k + a, k + b, v);
                    t.push_sym_lower(k + a, b, -v);
                    if a != b {
                        t.push_sym_lower(k + b, a, -v);
                    }
                }
            }
        }
        if with_fuel_legs {
            let m_fo = self.q2_cls.ncols();
            for a in 0..k {
                for m in 0..m_fo {
                    let v = self.q2_cls[(a, m)];
                    if v == 0.0 {
                        continue;
                    }
                    t.push(nv + m, a, v);
                    if self.split() {
                        t.push(nv + m, k + a, -v);
                    }
                }
            }
            let q3 = &self.market.covariance.q3;
            for m1 in 0..m_fo {
                for m2 in 0..=m1 {
                    let v = q3[(m1, m2)];
                    if v != 0.0 {
                        t.push(nv + m1, nv + m2, v);
                    }
                }
            }
        }
        t.to_csr()
    }

    /// Quadratic trading-cost Hessian `2υ (V⁺ - V⁻)²`-pattern, lower triangle.
    fn cost_lower(&self, dim: usize) -> SparseMatrix {
        let k = self.n_classes();
        let mut t = Triplets::new(dim, dim);
        if self.split() {
            for c in 0..k {
                let v = 2.0 * self.ups_cls[c];
                if v == 0.0 {
                    continue;
                }
                t.push(c, c, v);
                t.push(k + c, k + c, v);
                t.push(k + c, c, -v);
            }
        }
        t.to_csr()
    }

    /// Linear trading-cost entries on the volume slots.
    fn cost_linear(&self, linear: &mut DVector<f64>) {
        if self.split() {
            let k = self.n_classes();
            for c in 0..k {
                linear[c] += self.eps_cls[c];
                linear[k + c] += self.eps_cls[c];
            }
        }
    }
}

/// Build a producer's constraint and objective blocks.
pub fn producer_blocks(
    ctx: &AssemblyContext,
    producer_index: usize,
) -> Result<PlayerBlocks, AssemblyError> {
    let market = ctx.market;
    let producer = &market.producers[producer_index];
    let grid = &market.grid;
    let n = grid.n_contracts();
    let n_j = grid.n_deliveries();
    let n_l = market.fuels.len();
    let classes = &ctx.layout.classes;
    let ordered = producer.ordered_plants();
    let n_r = ordered.len();

    let dims = PlayerDims {
        n_vol: ctx.vol_width(),
        n_fuel: n * n_l,
        n_em: n,
        n_prod: n_r * n_j,
    };
    let dim = dims.total();
    let slice_like = crate::model::PlayerSlice {
        player: PlayerRef::Producer(producer_index),
        offset: 0,
        dims,
    };
    let fuel_local = |l: usize, c: usize| slice_like.fuel_local(n, l, c);
    let em_local = |c: usize| slice_like.em_local(c);
    let prod_local = |j: usize, pos: usize| slice_like.prod_local(n_r, j, pos);

    // Equalities: volume balance per delivery, fuel cover per (fuel,
    // delivery), one emissions row. All right-hand sides are zero.
    let n_eq = n_j * (n_l + 1) + 1;
    let mut eq = Triplets::new(n_eq, dim);
    let mut eq_families = Vec::with_capacity(n_eq);
    for j in 0..n_j {
        for i in 0..grid.ladder_len(j) {
            let class = classes.class_of(grid.flatten(j, i));
            for (idx, sign) in ctx.vol_terms(class) {
                eq.push(j, idx, sign);
            }
        }
        for pos in 0..n_r {
            eq.push(j, prod_local(j, pos), 1.0);
        }
        eq_families.push(ConstraintFamily::VolumeBalance);
    }
    for l in 0..n_l {
        for j in 0..n_j {
            let row = n_j + l * n_j + j;
            for i in 0..grid.ladder_len(j) {
                eq.push(row, fuel_local(l, grid.flatten(j, i)), 1.0);
            }
            for (pos, &pi) in ordered.iter().enumerate() {
                let plant = &producer.plants[pi];
                if plant.fuel == l {
                    eq.push(row, prod_local(j, pos), -plant.efficiency);
                }
            }
            eq_families.push(ConstraintFamily::FuelCover);
        }
    }
    let em_row = n_j * (n_l + 1);
    for c in 0..n {
        eq.push(em_row, em_local(c), 1.0);
    }
    for (pos, &pi) in ordered.iter().enumerate() {
        let plant = &producer.plants[pi];
        for j in 0..n_j {
            eq.push(em_row, prod_local(j, pos), -plant.emission_intensity);
        }
    }
    eq_families.push(ConstraintFamily::EmissionCover);

    // Inequalities: ramp pairs, capacity boxes, trade-bound boxes, and the
    // split non-negativity rows. Two-sided bounds are emitted as paired
    // one-sided rows so that Bx ≤ b is literal.
    let mut ineq = Triplets::new(
        2 * n_r * n_j.saturating_sub(1) + 2 * n_r * n_j + 2 * ctx.n_classes()
            + if ctx.split() { 2 * ctx.n_classes() } else { 0 },
        dim,
    );
    let mut rhs = Vec::new();
    let mut ineq_families = Vec::new();
    let mut row = 0usize;
    for (pos, &pi) in ordered.iter().enumerate() {
        let plant = &producer.plants[pi];
        for j in 0..n_j.saturating_sub(1) {
            ineq.push(row, prod_local(j + 1, pos), 1.0);
            ineq.push(row, prod_local(j, pos), -1.0);
            rhs.push(plant.ramp_up);
            ineq_families.push(ConstraintFamily::RampUp);
            row += 1;
            ineq.push(row, prod_local(j, pos), 1.0);
            ineq.push(row, prod_local(j + 1, pos), -1.0);
            rhs.push(-plant.ramp_down);
            ineq_families.push(ConstraintFamily::RampDown);
            row += 1;
        }
    }
    for (pos, &pi) in ordered.iter().enumerate() {
        let plant = &producer.plants[pi];
        for j in 0..n_j {
            ineq.push(row, prod_local(j, pos), 1.0);
            rhs.push(plant.capacity_max);
            ineq_families.push(ConstraintFamily::CapacityUpper);
            row += 1;
            ineq.push(row, prod_local(j, pos), -1.0);
            rhs.push(0.0);
            ineq_families.push(ConstraintFamily::CapacityLower);
            row += 1;
        }
    }
    row = push_trade_rows(ctx, &mut ineq, &mut rhs, &mut ineq_families, row);
    debug_assert_eq!(row, rhs.len());

    let cov_lower = ctx.covariance_lower(true, dim);
    let cost_lower = ctx.cost_lower(dim);
    let mut linear = DVector::zeros(dim);
    for c in 0..n {
        for l in 0..n_l {
            linear[fuel_local(l, c)] = ctx.disc[c] * market.curves.fuel_prices[l][c];
        }
        linear[em_local(c)] = ctx.disc[c] * market.curves.emission_prices[c];
    }
    ctx.cost_linear(&mut linear);

    Ok(PlayerBlocks {
        player: PlayerRef::Producer(producer_index),
        eq: eq.to_csr(),
        eq_rhs: DVector::zeros(n_eq),
        ineq: ineq.to_csr(),
        ineq_rhs: DVector::from_vec(rhs),
        cov_lower,
        cost_lower,
        linear,
        eq_families,
        ineq_families,
        risk_aversion: producer.risk_aversion,
        dims,
    })
}

/// Build a consumer's blocks: demand-cover equalities and trade boxes over
/// the volume slice, with the electricity covariance block as Hessian.
pub fn consumer_blocks(
    ctx: &AssemblyContext,
    consumer_index: usize,
) -> Result<PlayerBlocks, AssemblyError> {
    let market = ctx.market;
    let consumer = &market.consumers[consumer_index];
    let grid = &market.grid;
    let n_j = grid.n_deliveries();
    let classes = &ctx.layout.classes;
    let dims = PlayerDims {
        n_vol: ctx.vol_width(),
        n_fuel: 0,
        n_em: 0,
        n_prod: 0,
    };
    let dim = dims.total();

    let mut eq = Triplets::new(n_j, dim);
    let mut eq_rhs = DVector::zeros(n_j);
    let mut eq_families = Vec::with_capacity(n_j);
    for j in 0..n_j {
        for i in 0..grid.ladder_len(j) {
            let class = classes.class_of(grid.flatten(j, i));
            for (idx, sign) in ctx.vol_terms(class) {
                eq.push(j, idx, sign);
            }
        }
        eq_rhs[j] = consumer.demand_share * market.curves.demand[j];
        eq_families.push(ConstraintFamily::DemandCover);
    }

    let mut ineq = Triplets::new(
        2 * ctx.n_classes() + if ctx.split() { 2 * ctx.n_classes() } else { 0 },
        dim,
    );
    let mut rhs = Vec::new();
    let mut ineq_families = Vec::new();
    push_trade_rows(ctx, &mut ineq, &mut rhs, &mut ineq_families, 0);

    let cov_lower = ctx.covariance_lower(false, dim);
    let cost_lower = ctx.cost_lower(dim);
    let mut linear = DVector::zeros(dim);
    ctx.cost_linear(&mut linear);

    Ok(PlayerBlocks {
        player: PlayerRef::Consumer(consumer_index),
        eq: eq.to_csr(),
        eq_rhs,
        ineq: ineq.to_csr(),
        ineq_rhs: DVector::from_vec(rhs),
        cov_lower,
        cost_lower,
        linear,
        eq_families,
        ineq_families,
        risk_aversion: consumer.risk_aversion,
        dims,
    })
}

/// Net-position trade bounds per class plus split non-negativity rows.
fn push_trade_rows(
    ctx: &AssemblyContext,
    ineq: &mut Triplets,
    rhs: &mut Vec<f64>,
    families: &mut Vec<ConstraintFamily>,
    mut row: usize,
) -> usize {
    let bound = ctx.market.trade_bound;
    for class in 0..ctx.n_classes() {
        for (idx, sign) in ctx.vol_terms(class) {
            ineq.push(row, idx, sign);
        }
        rhs.push(bound);
        families.push(ConstraintFamily::TradeUpper);
        row += 1;
        for (idx, sign) in ctx.vol_terms(class) {
            ineq.push(row, idx, -sign);
        }
        rhs.push(bound);
        families.push(ConstraintFamily::TradeLower);
        row += 1;
    }
    if ctx.split() {
        let k = ctx.n_classes();
        for c in 0..2 * k {
            ineq.push(row, c, -1.0);
            rhs.push(0.0);
            families.push(ConstraintFamily::NonNegativity);
            row += 1;
        }
    }
    row
}

/// The stacked program plus everything needed to interpret its solution.
#[derive(Debug)]
pub struct AssembledQP {
    pub problem: QpProblem,
    pub layout: VariableLayout,
    /// Global equality rows implementing market clearing (pinned duals).
    pub clearing_rows: Range<usize>,
    pub blocks: Vec<PlayerBlocks>,
    /// Global equality/inequality row ranges per player, `blocks` order.
    pub eq_rows: Vec<Range<usize>>,
    pub ineq_rows: Vec<Range<usize>>,
}

/// Stack all players and the clearing rows into one program.
pub fn assemble_global(market: &MarketInstance) -> Result<AssembledQP, AssemblyError> {
    let violations = validate_market(market);
    if !violations.is_empty() {
        return Err(AssemblyError::InvalidMarket(violations));
    }
    let ctx = AssemblyContext::new(market)?;
    let mut blocks = Vec::with_capacity(market.n_players());
    for p in 0..market.producers.len() {
        blocks.push(producer_blocks(&ctx, p)?);
    }
    for c in 0..market.consumers.len() {
        blocks.push(consumer_blocks(&ctx, c)?);
    }
    assemble_from_blocks(ctx, blocks)
}

fn assemble_from_blocks(
    ctx: AssemblyContext,
    blocks: Vec<PlayerBlocks>,
) -> Result<AssembledQP, AssemblyError> {
    let layout = ctx.layout.clone();
    let dim = layout.dim;
    let k = layout.n_classes();

    for (slice, block) in layout.players.iter().zip(&blocks) {
        if slice.dims.total() != block.dim() {
            return Err(AssemblyError::Dimensions(format!(
                "layout slice {:?} has width {}, block has {}",
                slice.player,
                slice.dims.total(),
                block.dim()
            )));
        }
    }

    let total_eq: usize = blocks.iter().map(|b| b.eq.nrows()).sum::<usize>() + k;
    let total_ineq: usize = blocks.iter().map(|b| b.ineq.nrows()).sum();

    let mut a = Triplets::new(total_eq, dim);
    let mut a_rhs = DVector::zeros(total_eq);
    let mut b = Triplets::new(total_ineq, dim);
    let mut b_rhs = DVector::zeros(total_ineq);
    let mut q = Triplets::new(dim, dim);
    let mut linear = DVector::zeros(dim);

    let mut eq_rows = Vec::with_capacity(blocks.len());
    let mut ineq_rows = Vec::with_capacity(blocks.len());
    let (mut eq_off, mut ineq_off) = (0usize, 0usize);
    for (slice, block) in layout.players.iter().zip(&blocks) {
        let off = slice.offset;
        for (r, c, v) in block.eq.iter() {
            a.push(eq_off + r, off + c, v);
        }
        for r in 0..block.eq.nrows() {
            a_rhs[eq_off + r] = block.eq_rhs[r];
        }
        eq_rows.push(eq_off..eq_off + block.eq.nrows());
        eq_off += block.eq.nrows();

        for (r, c, v) in block.ineq.iter() {
            b.push(ineq_off + r, off + c, v);
        }
        for r in 0..block.ineq.nrows() {
            b_rhs[ineq_off + r] = block.ineq_rhs[r];
        }
        ineq_rows.push(ineq_off..ineq_off + block.ineq.nrows());
        ineq_off += block.ineq.nrows();

        for (r, c, v) in block.cov_lower.iter() {
            q.push(off + r, off + c, block.risk_aversion * v);
        }
        for (r, c, v) in block.cost_lower.iter() {
            q.push(off + r, off + c, v);
        }
        for i in 0..block.dim() {
            linear[off + i] = block.linear[i];
        }

        // Hessian coupling of the volume slice against the price slice.
        for class in 0..k {
            for (idx, sign) in ctx.vol_terms(class) {
                q.push(layout.price_index(class), off + idx, sign);
            }
        }
    }

    // Clearing rows: one per class, zero on the price columns.
    let clearing_start = eq_off;
    for class in 0..k {
        let row = clearing_start + class;
        for slice in &layout.players {
            for (idx, sign) in ctx.vol_terms(class) {
                a.push(row, slice.offset + idx, sign);
            }
        }
    }

    let problem = QpProblem {
        hessian_lower: q.to_csr(),
        linear,
        eq: a.to_csr(),
        eq_rhs: a_rhs,
        ineq: b.to_csr(),
        ineq_rhs: b_rhs,
        pinned_duals: (clearing_start..clearing_start + k).collect(),
    };
    problem
        .check_dims()
        .map_err(|e| AssemblyError::Dimensions(e.to_string()))?;

    Ok(AssembledQP {
        problem,
        layout,
        clearing_rows: clearing_start..clearing_start + k,
        blocks,
        eq_rows,
        ineq_rows,
    })
}
