//! Equilibrium computation and verification.
//!
//! `solve_equilibrium` assembles the stacked program, checks strict
//! feasibility of every player (and of the joint system including clearing),
//! solves once, and interprets the solution: undiscounted price term
//! structure, per-player positions and utilities, clearing residual.
//! `verify_nash` then re-solves every player's program at the equilibrium
//! prices and confirms that nobody can improve their utility.

use crate::assembly::{assemble_global, AssembledQP, AssemblyError, PlayerBlocks};
use crate::model::{MarketInstance, PlayerRef};
use crate::qp::{
    kkt_residuals, phase1_feasible, solve_dual_form, KktReport, QpError, QpProblem, QpStatus,
    SolverOptions, Triplets,
};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub solver: SolverOptions,
    /// Run the strict-feasibility pre-checks (per player and joint).
    pub check_feasibility: bool,
    /// Curvature threshold (relative to ‖Q‖) below which the price of some
    /// contract is flagged as possibly non-unique.
    pub nonuniqueness_threshold: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            check_feasibility: true,
            nonuniqueness_threshold: 1e-8,
        }
    }
}

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("player {id} has no strictly feasible point (margin {margin:.3e}, worst family: {family})")]
    PlayerInfeasible {
        id: String,
        family: String,
        margin: f64,
    },
    #[error("players are individually feasible but cannot jointly clear the market (margin {margin:.3e})")]
    JointlyInfeasible { margin: f64 },
    #[error("solver did not reach tolerance (status {status:?}, residuals: {kkt})")]
    Solver { status: QpStatus, kkt: KktReport },
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// One player's share of the solution.
#[derive(Debug, Clone)]
pub struct PlayerOutcome {
    pub player: PlayerRef,
    pub id: String,
    /// Raw local variable vector in block layout.
    pub variables: DVector<f64>,
    /// Net traded electricity per original contract (class value expanded
    /// onto every covered contract).
    pub volumes: Vec<f64>,
    /// Mean-variance utility with the retail price set to zero.
    pub utility: f64,
    /// Utility plus discounted retail revenue (consumers only; equal to
    /// `utility` for producers).
    pub utility_with_retail: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Undiscounted expected price per original contract, flat grid order.
    pub prices: Vec<f64>,
    /// Discounted expected price per contract class (raw price slice).
    pub prices_discounted: Vec<f64>,
    pub players: Vec<PlayerOutcome>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    /// ‖Σ_k net volume‖_∞ over contract classes.
    pub clearing_residual: f64,
    pub kkt: KktReport,
    pub iterations: usize,
    /// Set when the reduced curvature of some price variable is nearly
    /// zero, meaning the equilibrium price may be an interval.
    pub possibly_nonunique: bool,
    /// Full stacked solution vector.
    pub x: DVector<f64>,
}

/// Assemble, check feasibility, solve and interpret.
pub fn solve_equilibrium(
    market: &MarketInstance,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumSolution, EquilibriumError> {
    let asm = assemble_global(market)?;

    if opts.check_feasibility {
        for block in &asm.blocks {
            let out = phase1_feasible(&block.eq, &block.eq_rhs, &block.ineq, &block.ineq_rhs)?;
            if !out.strictly_feasible() {
                let family = worst_family(block, &out.point);
                return Err(EquilibriumError::PlayerInfeasible {
                    id: player_id(market, block.player),
                    family,
                    margin: out.margin,
                });
            }
        }
        let joint = phase1_feasible(
            &asm.problem.eq,
            &asm.problem.eq_rhs,
            &asm.problem.ineq,
            &asm.problem.ineq_rhs,
        )?;
        if !joint.strictly_feasible() {
            return Err(EquilibriumError::JointlyInfeasible {
                margin: joint.margin,
            });
        }
    }

    let mut solver_opts = opts.solver.clone();
    solver_opts.probe_range =
        Some(asm.layout.price_offset..asm.layout.price_offset + asm.layout.n_classes());
    let sol = solve_dual_form(&asm.problem, &solver_opts)?;
    match sol.status {
        QpStatus::Optimal => {}
        status => {
            return Err(EquilibriumError::Solver {
                status,
                kkt: sol.kkt,
            })
        }
    }

    let q_norm = asm.problem.hessian_lower.sym_inf_norm();
    let possibly_nonunique = sol
        .probe_min_pivot
        .is_some_and(|p| p < opts.nonuniqueness_threshold * q_norm.max(1.0));

    Ok(interpret(market, &asm, sol, possibly_nonunique))
}

fn interpret(
    market: &MarketInstance,
    asm: &AssembledQP,
    sol: crate::qp::QpSolution,
    possibly_nonunique: bool,
) -> EquilibriumSolution {
    let layout = &asm.layout;
    let grid = &market.grid;
    let disc = crate::model::discount_factors(grid, market.curves.interest_rate);
    let prices_discounted = layout.prices(&sol.x);
    let prices: Vec<f64> = (0..grid.n_contracts())
        .map(|n| prices_discounted[layout.classes.class_of(n)] / disc[n])
        .collect();

    let k = layout.n_classes();
    let mut net_total = vec![0.0; k];
    let mut players = Vec::with_capacity(asm.blocks.len());
    for (slice, block) in layout.players.iter().zip(&asm.blocks) {
        let v = DVector::from_fn(block.dim(), |i, _| sol.x[slice.offset + i]);
        let net = layout.net_volumes(&sol.x, slice.player);
        for (c, val) in net.iter().enumerate() {
            net_total[c] += val;
        }
        let volumes: Vec<f64> = (0..grid.n_contracts())
            .map(|n| net[layout.classes.class_of(n)])
            .collect();
        let utility = player_utility(block, &prices_discounted, k, layout.split_volumes, &v);
        let utility_with_retail = match slice.player {
            PlayerRef::Consumer(c) => {
                let consumer = &market.consumers[c];
                let retail: f64 = (0..grid.n_deliveries())
                    .map(|j| {
                        (-market.curves.interest_rate * grid.delivery_time(j)).exp()
                            * consumer.retail_price
                            * consumer.demand_share
                            * market.curves.demand[j]
                    })
                    .sum();
                utility + retail
            }
            PlayerRef::Producer(_) => utility,
        };
        players.push(PlayerOutcome {
            player: slice.player,
            id: player_id(market, slice.player),
            variables: v,
            volumes,
            utility,
            utility_with_retail,
        });
    }

    let clearing_residual = net_total.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    EquilibriumSolution {
        prices,
        prices_discounted,
        players,
        eq_duals: sol.eq_duals,
        ineq_duals: sol.ineq_duals,
        clearing_residual,
        kkt: sol.kkt,
        iterations: sol.iterations,
        possibly_nonunique,
        x: sol.x,
    }
}

fn player_id(market: &MarketInstance, player: PlayerRef) -> String {
    match player {
        PlayerRef::Producer(p) => market.producers[p].id.clone(),
        PlayerRef::Consumer(c) => market.consumers[c].id.clone(),
    }
}

/// Constraint family with the largest violation at `point`.
fn worst_family(block: &PlayerBlocks, point: &DVector<f64>) -> String {
    let slack = block.ineq.mul_vec(point) - &block.ineq_rhs;
    let mut worst = (f64::NEG_INFINITY, None);
    for (r, &v) in slack.iter().enumerate() {
        if v > worst.0 {
            worst = (v, Some(block.ineq_families[r]));
        }
    }
    match worst.1 {
        Some(f) => f.to_string(),
        None => "equalities".to_string(),
    }
}

/// Mean-variance utility of one player at discounted prices:
/// `-E[π_k]ᵀ v - ½ λ_k vᵀ Q_k v` minus trading costs, with the retail price
/// excluded (that only shifts reported profit).
pub fn player_utility(
    block: &PlayerBlocks,
    prices_discounted: &[f64],
    n_classes: usize,
    split: bool,
    v: &DVector<f64>,
) -> f64 {
    let mut value = -block.linear.dot(v);
    for c in 0..n_classes {
        let net = if split {
            v[c] - v[n_classes + c]
        } else {
            v[c]
        };
        value -= prices_discounted[c] * net;
    }
    value -= 0.5 * block.risk_aversion * v.dot(&block.cov_lower.sym_mul_vec(v));
    value -= 0.5 * v.dot(&block.cost_lower.sym_mul_vec(v));
    value
}

/// The single-player program at fixed discounted prices.
pub fn player_problem(
    block: &PlayerBlocks,
    prices_discounted: &[f64],
    n_classes: usize,
    split: bool,
) -> QpProblem {
    let dim = block.dim();
    let mut q = Triplets::new(dim, dim);
    for (r, c, v) in block.cov_lower.iter() {
        q.push(r, c, block.risk_aversion * v);
    }
    for (r, c, v) in block.cost_lower.iter() {
        q.push(r, c, v);
    }
    let mut linear = block.linear.clone();
    for c in 0..n_classes {
        linear[c] += prices_discounted[c];
        if split {
            linear[n_classes + c] -= prices_discounted[c];
        }
    }
    QpProblem::new(
        q.to_csr(),
        linear,
        block.eq.clone(),
        block.eq_rhs.clone(),
        block.ineq.clone(),
        block.ineq_rhs.clone(),
    )
}

/// Solve one player's program at fixed prices. Used for Nash verification
/// and as an independent check of the stacked solve.
pub fn best_response(
    asm: &AssembledQP,
    player_index: usize,
    prices_discounted: &[f64],
    opts: &SolverOptions,
) -> Result<(DVector<f64>, f64), EquilibriumError> {
    let block = &asm.blocks[player_index];
    let k = asm.layout.n_classes();
    let split = asm.layout.split_volumes;
    let problem = player_problem(block, prices_discounted, k, split);
    let sol = solve_dual_form(&problem, opts)?;
    match sol.status {
        QpStatus::Optimal => {
            let utility = player_utility(block, prices_discounted, k, split, &sol.x);
            Ok((sol.x, utility))
        }
        status => Err(EquilibriumError::Solver {
            status,
            kkt: sol.kkt,
        }),
    }
}

/// Per-player best-response utility gap.
#[derive(Debug, Clone)]
pub struct PlayerGap {
    pub id: String,
    pub utility_equilibrium: f64,
    pub utility_best_response: f64,
    /// `utility_best_response - utility_equilibrium`; non-negative up to
    /// solver tolerance, and small iff the player is already optimal.
    pub gap: f64,
}

/// Result of independent Nash verification.
#[derive(Debug, Clone)]
pub struct NashReport {
    pub gaps: Vec<PlayerGap>,
    pub max_gap: f64,
    /// Largest relative gap, `gap / (1 + |Ψ_eq|)`.
    pub max_relative_gap: f64,
    pub clearing_residual: f64,
    pub pinned_max: f64,
    pub pass: bool,
}

/// Re-solve every player at the equilibrium prices and compare utilities.
/// The hypothetical-agent condition is checked as a clearing residual plus
/// pinned multipliers at zero.
pub fn verify_nash(
    market: &MarketInstance,
    asm: &AssembledQP,
    solution: &EquilibriumSolution,
    tol: f64,
) -> Result<NashReport, EquilibriumError> {
    let opts = SolverOptions::default();
    let mut gaps = Vec::with_capacity(asm.blocks.len());
    let mut max_gap = f64::NEG_INFINITY;
    let mut max_rel = f64::NEG_INFINITY;
    for (i, outcome) in solution.players.iter().enumerate() {
        let (_, best) = best_response(asm, i, &solution.prices_discounted, &opts)?;
        let gap = best - outcome.utility;
        let rel = gap / (1.0 + outcome.utility.abs());
        max_gap = max_gap.max(gap);
        max_rel = max_rel.max(rel);
        gaps.push(PlayerGap {
            id: outcome.id.clone(),
            utility_equilibrium: outcome.utility,
            utility_best_response: best,
            gap,
        });
    }
    let pinned_max = asm
        .problem
        .pinned_duals
        .iter()
        .map(|&r| solution.eq_duals[r].abs())
        .fold(0.0, f64::max);
    let demand_scale = 1.0 + market.curves.demand.iter().sum::<f64>();
    let clearing_ok = solution.clearing_residual <= 1e-8 * demand_scale;
    let pass = max_rel <= tol && clearing_ok && pinned_max == 0.0;
    Ok(NashReport {
        gaps,
        max_gap,
        max_relative_gap: max_rel,
        clearing_residual: solution.clearing_residual,
        pinned_max,
        pass,
    })
}

/// Evaluate each player's own first-order conditions at the stacked
/// solution: the per-player program at the equilibrium prices, with the
/// player's slices of the stacked multipliers. Equivalence of the stacked
/// and per-player conditions means every report closes near solver
/// tolerance.
pub fn per_player_kkt(asm: &AssembledQP, solution: &EquilibriumSolution) -> Vec<KktReport> {
    let k = asm.layout.n_classes();
    let split = asm.layout.split_volumes;
    asm.blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let problem = player_problem(block, &solution.prices_discounted, k, split);
            let v = &solution.players[i].variables;
            let mu = DVector::from_iterator(
                asm.eq_rows[i].len(),
                asm.eq_rows[i].clone().map(|r| solution.eq_duals[r]),
            );
            let eta = DVector::from_iterator(
                asm.ineq_rows[i].len(),
                asm.ineq_rows[i].clone().map(|r| solution.ineq_duals[r]),
            );
            kkt_residuals(&problem, v, &mu, &eta)
        })
        .collect()
}
