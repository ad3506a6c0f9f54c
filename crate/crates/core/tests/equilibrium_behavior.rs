//! Economic behavior of the equilibrium engine on hand-built markets, plus
//! stacked-versus-per-player consistency on random instances.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use termeq::assembly::assemble_global;
use termeq::equilibrium::{
    best_response, per_player_kkt, player_utility, solve_equilibrium, verify_nash,
    EquilibriumOptions,
};
use termeq::model::{
    validate_market, Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance,
    PowerPlant, Producer,
};
use termeq::qp::SolverOptions;
use termeq::testkit::random_small_market;

/// Spot-only market: one plant, one consumer, one fuel.
fn spot_market(lambda_p: f64, lambda_c: f64, demand: f64, capacity: f64) -> MarketInstance {
    let grid = ContractGrid::new(vec![1.0], vec![vec![1.0]]).unwrap();
    MarketInstance {
        grid,
        fuels: vec!["gas".into()],
        producers: vec![Producer {
            id: "p1".into(),
            risk_aversion: lambda_p,
            plants: vec![PowerPlant {
                name: "plant".into(),
                fuel: 0,
                capacity_max: capacity,
                ramp_up: capacity,
                ramp_down: -capacity,
                efficiency: 0.7,
                emission_intensity: 0.4,
            }],
        }],
        consumers: vec![Consumer {
            id: "c1".into(),
            risk_aversion: lambda_c,
            demand_share: 1.0,
            retail_price: 60.0,
        }],
        curves: ExogenousCurves {
            fuel_prices: vec![vec![50.0]],
            emission_prices: vec![4.0],
            demand: vec![demand],
            interest_rate: 0.0,
        },
        covariance: CovarianceModel {
            q1: DMatrix::from_element(1, 1, 25.0),
            q2: DMatrix::zeros(1, 2),
            q3: DMatrix::identity(2, 2) * 4.0,
        },
        trade_bound: 10_000.0,
        cost_spec: None,
        blocks: Vec::new(),
    }
}

#[test]
fn risk_neutral_limit_prices_at_marginal_cost() {
    // Marginal cost = c·G_fuel + g·G_em = 0.7·50 + 0.4·4 = 36.6. With
    // λ → 0, demand below capacity and no ramp binding, the spot price
    // approaches marginal cost.
    let market = spot_market(1e-6, 1e-6, 100.0, 200.0);
    let sol = solve_equilibrium(&market, &EquilibriumOptions::default()).unwrap();
    let mc = 0.7 * 50.0 + 0.4 * 4.0;
    let rel = (sol.prices[0] - mc).abs() / mc;
    assert!(rel < 0.01, "price {} vs marginal cost {mc}", sol.prices[0]);

    // The consumer absorbs all demand, the producer covers it.
    assert!((sol.players[1].volumes[0] - 100.0).abs() < 1e-6);
    assert!((sol.players[0].volumes[0] + 100.0).abs() < 1e-6);
    assert!(sol.clearing_residual < 1e-8 * 101.0);
}

#[test]
fn empty_market_clears_with_zero_positions() {
    let mut market = spot_market(1e-4, 1e-4, 0.0, 0.0);
    market.producers[0].plants.clear();
    let sol = solve_equilibrium(&market, &EquilibriumOptions::default()).unwrap();
    for p in &sol.players {
        assert!(p.volumes.iter().all(|v| v.abs() < 1e-8));
        assert!(p.utility.abs() < 1e-8);
    }
    assert!(sol.clearing_residual < 1e-10);
}

#[test]
fn consumer_positions_are_forced_at_single_trading_time() {
    // With one trading time per delivery the demand rows pin the consumer's
    // volumes regardless of risk aversion.
    let build = |lambda_c: f64| {
        let grid =
            ContractGrid::new(vec![1.0, 2.0], vec![vec![1.0], vec![2.0]]).unwrap();
        let n = 2;
        MarketInstance {
            grid,
            fuels: vec!["gas".into()],
            producers: vec![Producer {
                id: "p1".into(),
                risk_aversion: 1e-5,
                plants: vec![PowerPlant {
                    name: "plant".into(),
                    fuel: 0,
                    capacity_max: 300.0,
                    ramp_up: 300.0,
                    ramp_down: -300.0,
                    efficiency: 0.7,
                    emission_intensity: 0.4,
                }],
            }],
            consumers: vec![Consumer {
                id: "c1".into(),
                risk_aversion: lambda_c,
                demand_share: 1.0,
                retail_price: 0.0,
            }],
            curves: ExogenousCurves {
                fuel_prices: vec![vec![50.0; n]],
                emission_prices: vec![4.0; n],
                demand: vec![120.0, 80.0],
                interest_rate: 0.0,
            },
            covariance: CovarianceModel {
                q1: DMatrix::identity(n, n) * 16.0,
                q2: DMatrix::zeros(n, 2 * n),
                q3: DMatrix::identity(2 * n, 2 * n) * 4.0,
            },
            trade_bound: 10_000.0,
            cost_spec: None,
            blocks: Vec::new(),
        }
    };
    let low = solve_equilibrium(&build(1e-6), &EquilibriumOptions::default()).unwrap();
    let high = solve_equilibrium(&build(1e-2), &EquilibriumOptions::default()).unwrap();
    for sol in [&low, &high] {
        assert!((sol.players[1].volumes[0] - 120.0).abs() < 1e-7);
        assert!((sol.players[1].volumes[1] - 80.0).abs() < 1e-7);
    }
}

#[test]
fn best_response_is_bang_bang_in_the_price() {
    let market = spot_market(1e-9, 1e-9, 100.0, 100.0);
    let asm = assemble_global(&market).unwrap();
    let opts = SolverOptions::default();
    let mc = 36.6;

    // Price strictly below marginal cost: plant stays off, nothing traded.
    let (v, _) = best_response(&asm, 0, &[mc - 5.0], &opts).unwrap();
    let dims = asm.blocks[0].dims;
    let w_index = dims.n_vol + dims.n_fuel + dims.n_em;
    assert!(v[0].abs() < 1e-4, "volume {}", v[0]);
    assert!(v[w_index].abs() < 1e-4, "production {}", v[w_index]);

    // Price strictly above marginal cost: full capacity, all sold.
    let (v, _) = best_response(&asm, 0, &[mc + 5.0], &opts).unwrap();
    assert!((v[w_index] - 100.0).abs() < 1e-5, "production {}", v[w_index]);
    assert!((v[0] + 100.0).abs() < 1e-5, "volume {}", v[0]);
}

#[test]
fn nash_verification_accepts_equilibrium_and_rejects_wrong_prices() {
    let market = spot_market(1e-4, 1e-4, 100.0, 200.0);
    let asm = assemble_global(&market).unwrap();
    let sol = solve_equilibrium(&market, &EquilibriumOptions::default()).unwrap();
    let report = verify_nash(&market, &asm, &sol, 1e-6).unwrap();
    assert!(report.pass, "max relative gap {}", report.max_relative_gap);
    assert!(report.gaps.iter().all(|g| g.gap >= -1e-6));

    // Misreport prices 10% high: the producer would profitably deviate.
    let mut wrong = sol.clone();
    for p in &mut wrong.prices_discounted {
        *p *= 1.1;
    }
    let k = asm.layout.n_classes();
    for (i, outcome) in wrong.players.iter_mut().enumerate() {
        outcome.utility = player_utility(
            &asm.blocks[i],
            &wrong.prices_discounted,
            k,
            asm.layout.split_volumes,
            &outcome.variables,
        );
    }
    let report = verify_nash(&market, &asm, &wrong, 1e-6).unwrap();
    assert!(!report.pass, "wrong prices should not verify");
    assert!(report.max_gap > 1e-3);
}

#[test]
fn utilities_scale_and_retail_revenue_is_reporting_only() {
    let market = spot_market(1e-4, 1e-4, 100.0, 200.0);
    let sol = solve_equilibrium(&market, &EquilibriumOptions::default()).unwrap();
    let consumer = &sol.players[1];
    // s_c shifts the reported value, not the solution:
    // retail revenue = s_c · p_c · ΣD = 60 · 100.
    approx::assert_relative_eq!(
        consumer.utility_with_retail - consumer.utility,
        6000.0,
        epsilon = 1e-9
    );
    // Consumer forced to buy D at price π̄: Ψ = -π̄·D - ½ λ D² σ².
    let pi = sol.prices[0];
    let expected = -pi * 100.0 - 0.5 * 1e-4 * 100.0f64.powi(2) * 25.0;
    approx::assert_relative_eq!(consumer.utility, expected, max_relative = 1e-9);
}

#[test]
fn stacked_solution_satisfies_every_players_own_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = EquilibriumOptions::default();
    let mut solved = 0;
    for trial in 0..10 {
        let market = random_small_market(&mut rng);
        assert!(validate_market(&market).is_empty(), "trial {trial}");
        let asm = assemble_global(&market).unwrap();
        let sol = solve_equilibrium(&market, &opts).unwrap();

        let scale = asm.problem.residual_scale();
        for (i, report) in per_player_kkt(&asm, &sol).iter().enumerate() {
            assert!(
                report.passes(1e-7, scale),
                "trial {trial} player {i}: {report}"
            );
        }
        let nash = verify_nash(&market, &asm, &sol, 1e-6).unwrap();
        assert!(nash.pass, "trial {trial}: {}", nash.max_relative_gap);
        let demand_scale = 1.0 + market.curves.demand.iter().sum::<f64>();
        assert!(sol.clearing_residual <= 1e-8 * demand_scale);
        solved += 1;
    }
    assert_eq!(solved, 10);
}
