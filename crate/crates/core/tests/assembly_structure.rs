//! Structural checks of the per-player blocks and the stacked program,
//! pinned to hand-enumerated constraint counts and matrix patterns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use termeq::assembly::{assemble_global, AssemblyContext, ConstraintFamily, producer_blocks};
use termeq::extensions::TransactionCostSpec;
use termeq::model::{
    Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant,
    Producer,
};

fn plant(name: &str, fuel: usize, cap: f64) -> PowerPlant {
    PowerPlant {
        name: name.into(),
        fuel,
        capacity_max: cap,
        ramp_up: cap,
        ramp_down: -cap,
        efficiency: 0.7,
        emission_intensity: 0.4,
    }
}

fn market(grid: ContractGrid, plants: Vec<PowerPlant>, demand: Vec<f64>) -> MarketInstance {
    let n = grid.n_contracts();
    let n_fuels = 1;
    let m = n * (n_fuels + 1);
    MarketInstance {
        grid,
        fuels: vec!["gas".into()],
        producers: vec![Producer {
            id: "p1".into(),
            risk_aversion: 1e-4,
            plants,
        }],
        consumers: vec![Consumer {
            id: "c1".into(),
            risk_aversion: 1e-4,
            demand_share: 1.0,
            retail_price: 0.0,
        }],
        curves: ExogenousCurves {
            fuel_prices: vec![vec![50.0; n]],
            emission_prices: vec![4.0; n],
            demand,
            interest_rate: 0.0,
        },
        covariance: CovarianceModel {
            q1: DMatrix::identity(n, n),
            q2: DMatrix::zeros(n, m),
            q3: DMatrix::identity(m, m) * 0.5,
        },
        trade_bound: 1000.0,
        cost_spec: None,
        blocks: Vec::new(),
    }
}

fn count(fams: &[ConstraintFamily], f: ConstraintFamily) -> usize {
    fams.iter().filter(|&&x| x == f).count()
}

#[test]
fn pure_trader_blocks_reduce_to_volume_row_and_boxes() {
    let grid = ContractGrid::new(vec![1.0], vec![vec![1.0]]).unwrap();
    let m = market(grid, vec![], vec![0.0]);
    let ctx = AssemblyContext::new(&m).unwrap();
    let blocks = producer_blocks(&ctx, 0).unwrap();

    // Equalities: one volume-balance row with no production terms, one fuel
    // row, one emission row; all homogeneous.
    assert_eq!(blocks.eq.nrows(), 3);
    assert!(blocks.eq_rhs.iter().all(|&v| v == 0.0));
    let (cols, vals) = blocks.eq.row(0);
    assert_eq!(cols, &[0]);
    assert_eq!(vals, &[1.0]);

    // Trade box: ±V ≤ bound.
    assert_eq!(blocks.ineq.nrows(), 2);
    assert_eq!(blocks.ineq_rhs.as_slice(), &[1000.0, 1000.0]);
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::TradeUpper), 1);
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::TradeLower), 1);
}

#[test]
fn producer_equality_row_count_matches_grid_dimensions() {
    // 1 plant, 2 deliveries, spot-only trading, 1 fuel:
    // |J|(|L|+1)+1 = 2·2+1 = 5 equality rows.
    let grid = ContractGrid::new(vec![1.0, 2.0], vec![vec![1.0], vec![2.0]]).unwrap();
    let m = market(grid, vec![plant("a", 0, 100.0)], vec![10.0, 10.0]);
    let ctx = AssemblyContext::new(&m).unwrap();
    let blocks = producer_blocks(&ctx, 0).unwrap();
    assert_eq!(blocks.eq.nrows(), 5);
    assert_eq!(count(&blocks.eq_families, ConstraintFamily::VolumeBalance), 2);
    assert_eq!(count(&blocks.eq_families, ConstraintFamily::FuelCover), 2);
    assert_eq!(count(&blocks.eq_families, ConstraintFamily::EmissionCover), 1);
}

#[test]
fn ramp_and_capacity_row_counts() {
    // 1 plant, 3 deliveries: 2 two-sided ramp pairs = 4 one-sided rows;
    // capacity boxes = 6 one-sided rows.
    let grid =
        ContractGrid::new(vec![1.0, 2.0, 3.0], vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    let m = market(grid, vec![plant("a", 0, 100.0)], vec![10.0; 3]);
    let ctx = AssemblyContext::new(&m).unwrap();
    let blocks = producer_blocks(&ctx, 0).unwrap();
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::RampUp), 2);
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::RampDown), 2);
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::CapacityUpper), 3);
    assert_eq!(count(&blocks.ineq_families, ConstraintFamily::CapacityLower), 3);
}

#[test]
fn consumer_demand_row_spreads_over_the_ladder() {
    // 1 delivery, 5 trading times, p_c = 0.4, D = 50 → one row summing five
    // variables to 20.
    let grid =
        ContractGrid::new(vec![1.0], vec![vec![0.2, 0.4, 0.6, 0.8, 1.0]]).unwrap();
    let mut m = market(grid, vec![plant("a", 0, 100.0)], vec![50.0]);
    m.consumers = vec![
        Consumer {
            id: "c1".into(),
            risk_aversion: 1e-4,
            demand_share: 0.4,
            retail_price: 0.0,
        },
        Consumer {
            id: "c2".into(),
            risk_aversion: 1e-4,
            demand_share: 0.6,
            retail_price: 0.0,
        },
    ];
    let asm = assemble_global(&m).unwrap();
    let c1 = &asm.blocks[1];
    assert_eq!(c1.eq.nrows(), 1);
    let (cols, vals) = c1.eq.row(0);
    assert_eq!(cols.len(), 5);
    assert!(vals.iter().all(|&v| v == 1.0));
    assert_eq!(c1.eq_rhs[0], 20.0);
    // b_c has length 2N for the box constraints.
    assert_eq!(c1.ineq.nrows(), 10);
}

#[test]
fn global_dimensions_and_clearing_row_at_n1() {
    // One pure trader and one consumer, N = 1, |L| = 1:
    // dim(x) = (1 + 1 + 1 + 0) + 1 + 1 = 5, clearing row reads V_p + V_c = 0.
    let grid = ContractGrid::new(vec![1.0], vec![vec![1.0]]).unwrap();
    let m = market(grid, vec![], vec![0.0]);
    let asm = assemble_global(&m).unwrap();
    assert_eq!(asm.problem.dim(), 5);
    assert_eq!(asm.layout.price_offset, 4);

    // Global A rows = Σ_p (|J|(|L|+1)+1) + |C|·|J| + N.
    assert_eq!(asm.problem.n_eq(), 3 + 1 + 1);
    assert_eq!(asm.clearing_rows, 4..5);
    assert_eq!(asm.problem.pinned_duals, vec![4]);

    let (cols, vals) = asm.problem.eq.row(4);
    assert_eq!(cols, &[0, 3]);
    assert_eq!(vals, &[1.0, 1.0]);
}

#[test]
fn price_slice_appears_in_no_equality_row_and_q_corner_is_zero() {
    let grid = ContractGrid::new(vec![1.0, 2.0], vec![vec![0.5, 1.0], vec![2.0]]).unwrap();
    let m = market(grid, vec![plant("a", 0, 100.0)], vec![10.0, 20.0]);
    let asm = assemble_global(&m).unwrap();
    let price0 = asm.layout.price_offset;
    for (_, c, _) in asm.problem.eq.iter() {
        assert!(c < price0, "price column {c} referenced in equality row");
    }
    for (_, c, _) in asm.problem.ineq.iter() {
        assert!(c < price0, "price column {c} referenced in inequality row");
    }
    // Bottom-right block of Q is zero: no stored entry has both indices in
    // the price slice.
    for (r, c, _) in asm.problem.hessian_lower.iter() {
        assert!(!(r >= price0 && c >= price0), "price-price entry at ({r},{c})");
    }
}

#[test]
fn hessian_restricted_to_clearing_subspace_is_the_block_diagonal() {
    // With x on the clearing subspace, xᵀQx = Σ_k λ_k v_kᵀ Q_k v_k ≥ 0.
    let grid = ContractGrid::new(vec![1.0], vec![vec![0.5, 1.0]]).unwrap();
    let mut m = market(grid, vec![plant("a", 0, 100.0)], vec![10.0]);
    m.producers.push(Producer {
        id: "p2".into(),
        risk_aversion: 3e-4,
        plants: vec![plant("b", 0, 60.0)],
    });
    let asm = assemble_global(&m).unwrap();
    let q = &asm.problem.hessian_lower;
    let norm_q = q.sym_inf_norm();
    let dim = asm.problem.dim();
    let k = asm.layout.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    for _ in 0..1000 {
        let mut x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        // Project the volume variables onto Σ_players net volume = 0.
        for class in 0..k {
            let total: f64 = asm
                .layout
                .players
                .iter()
                .map(|s| x[s.offset + class])
                .sum();
            let share = total / asm.layout.players.len() as f64;
            for s in &asm.layout.players {
                x[s.offset + class] -= share;
            }
        }
        let quad = x.dot(&q.sym_mul_vec(&x));
        let norm_x2 = x.dot(&x);
        assert!(
            quad >= -1e-10 * norm_x2 * norm_q,
            "negative curvature on clearing subspace: {quad:.3e}"
        );

        // Route 2: the per-player block diagonal evaluated directly.
        let mut expected = 0.0;
        for (slice, block) in asm.layout.players.iter().zip(&asm.blocks) {
            let v = DVector::from_fn(block.dim(), |i, _| x[slice.offset + i]);
            expected += block.risk_aversion * v.dot(&block.cov_lower.sym_mul_vec(&v));
        }
        approx::assert_relative_eq!(quad, expected, epsilon = 1e-9 * (1.0 + expected.abs()));
    }
}

#[test]
fn split_layout_doubles_volumes_and_adds_nonnegativity() {
    let grid = ContractGrid::new(vec![1.0], vec![vec![0.5, 1.0]]).unwrap();
    let mut m = market(grid, vec![plant("a", 0, 100.0)], vec![10.0]);
    m.cost_spec = Some(TransactionCostSpec::uniform(2, 0.5, 0.01));
    let asm = assemble_global(&m).unwrap();
    assert!(asm.layout.split_volumes);
    // Volume slice is 2K wide; clearing row carries ± signs.
    let row = asm.clearing_rows.start;
    let (cols, vals) = asm.problem.eq.row(row);
    assert_eq!(cols.len(), 4); // two players × (V⁺, V⁻) for class 0
    assert_eq!(vals.iter().filter(|&&v| v == 1.0).count(), 2);
    assert_eq!(vals.iter().filter(|&&v| v == -1.0).count(), 2);
    let nonneg = asm.blocks[0]
        .ineq_families
        .iter()
        .filter(|&&f| f == ConstraintFamily::NonNegativity)
        .count();
    assert_eq!(nonneg, 4);
}

#[test]
fn invalid_market_is_rejected_with_findings() {
    let grid = ContractGrid::new(vec![1.0], vec![vec![1.0]]).unwrap();
    let mut m = market(grid, vec![], vec![0.0]);
    m.consumers[0].demand_share = 0.6;
    m.consumers.push(Consumer {
        id: "c2".into(),
        risk_aversion: 1e-4,
        demand_share: 0.6,
        retail_price: 0.0,
    });
    let err = assemble_global(&m).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("demand shares sum to"), "{msg}");
}
