//! Shared test machinery behind the `testkit` feature: a brute-force QP
//! oracle and deterministic random-instance generators.
//!
//! Everything here is independent of the interior-point solve path: the
//! oracle enumerates active sets and solves dense KKT systems with an LU
//! factorization.

use crate::model::{
    Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant, Producer,
};
use crate::qp::{QpProblem, SparseMatrix, Triplets};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Dense statement of a QP for the oracle.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl DenseQp {
    pub fn to_problem(&self) -> QpProblem {
        let n = self.linear.len();
        let lower = {
            let mut t = Triplets::new(n, n);
            for i in 0..n {
                for j in 0..=i {
                    t.push(i, j, self.q[(i, j)]);
                }
            }
            t.to_csr()
        };
        let to_sparse = |m: &DMatrix<f64>| {
            let mut t = Triplets::new(m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    t.push(r, c, m[(r, c)]);
                }
            }
            t.to_csr()
        };
        let eq = if self.eq.nrows() > 0 {
            to_sparse(&self.eq)
        } else {
            SparseMatrix::zero(0, n)
        };
        let ineq = if self.ineq.nrows() > 0 {
            to_sparse(&self.ineq)
        } else {
            SparseMatrix::zero(0, n)
        };
        QpProblem::new(
            lower,
            self.linear.clone(),
            eq,
            self.eq_rhs.clone(),
            ineq,
            self.ineq_rhs.clone(),
        )
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        -self.linear.dot(x) - 0.5 * (x.transpose() * &self.q * x)[(0, 0)]
    }
}

/// Maximize `-πᵀx - ½xᵀQx` over `Ax = a, Bx ≤ b` by enumerating every active
/// set and solving the corresponding equality KKT system densely.
///
/// Requires Q ≻ 0. Returns the optimal `(x, μ, η)` or `None` when no active
/// set yields a KKT-consistent point (infeasible problem).
pub fn brute_force_qp(p: &DenseQp) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = p.linear.len();
    let me = p.eq.nrows();
    let mi = p.ineq.nrows();
    let tol = 1e-9 * (1.0 + p.ineq_rhs.amax() + p.linear.amax());

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let dim = n + me + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = p.eq[(r, c)];
                kkt[(c, n + r)] = p.eq[(r, c)];
            }
            rhs[n + r] = p.eq_rhs[r];
        }
        for (k, &r) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + me + k, c)] = p.ineq[(r, c)];
                kkt[(c, n + me + k)] = p.ineq[(r, c)];
            }
            rhs[n + me + k] = p.ineq_rhs[r];
        }
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = DVector::from_iterator(n, sol.iter().take(n).copied());
        let mu = DVector::from_iterator(me, sol.iter().skip(n).take(me).copied());
        let mut eta = DVector::zeros(mi);
        let mut ok = true;
        for (k, &r) in active.iter().enumerate() {
            eta[r] = sol[n + me + k];
            if eta[r] < -tol {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let slack = &p.ineq * &x - &p.ineq_rhs;
        if slack.iter().any(|&v| v > tol) {
            continue;
        }
        if me > 0 && (&p.eq * &x - &p.eq_rhs).amax() > tol {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|(b, ..)| obj > *b) {
            best = Some((obj, x, mu, eta));
        }
    }
    best.map(|(_, x, mu, eta)| (x, mu, eta))
}

/// Random strictly convex QP with a guaranteed-feasible interior:
/// box constraints plus a few random cutting rows through a known interior
/// point, and optionally equality rows satisfied by that point.
pub fn random_convex_qp<R: Rng>(rng: &mut R, n: usize, extra_ineq: usize, n_eq: usize) -> DenseQp {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = &g * g.transpose() + DMatrix::identity(n, n) * rng.random_range(0.5..2.0);
    let linear = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let interior = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..n {
        let mut up = vec![0.0; n];
        up[i] = 1.0;
        rows.push(up);
        rhs.push(rng.random_range(1.0..2.0));
        let mut dn = vec![0.0; n];
        dn[i] = -1.0;
        rows.push(dn);
        rhs.push(rng.random_range(1.0..2.0));
    }
    for _ in 0..extra_ineq {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let through: f64 = row
            .iter()
            .zip(interior.iter())
            .map(|(r, x)| r * x)
            .sum::<f64>();
        rows.push(row);
        rhs.push(through + rng.random_range(0.1..1.0));
    }
    let mi = rows.len();
    let ineq = DMatrix::from_fn(mi, n, |r, c| rows[r][c]);
    let ineq_rhs = DVector::from_vec(rhs);

    let eq = DMatrix::from_fn(n_eq, n, |_, _| rng.random_range(-1.0..1.0));
    let eq_rhs = &eq * &interior;

    DenseQp {
        q,
        linear,
        eq,
        eq_rhs,
        ineq,
        ineq_rhs,
    }
}

/// Random symmetric positive definite matrix with unit-order scale.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> DMatrix<f64> {
    let f = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let mut s = (&f * f.transpose()) * (scale / dim as f64);
    for i in 0..dim {
        s[(i, i)] += scale * rng.random_range(0.3..1.0);
    }
    s
}

/// Random small market instance that satisfies every model invariant and is
/// strictly feasible by construction: generous capacity relative to demand,
/// ramps wide enough for the demand swings, and a large trade bound.
pub fn random_small_market<R: Rng>(rng: &mut R) -> MarketInstance {
    let n_deliveries = rng.random_range(1..=3);
    let mut delivery_times = Vec::with_capacity(n_deliveries);
    let mut trading_times = Vec::with_capacity(n_deliveries);
    let mut t0 = 0.0f64;
    for _ in 0..n_deliveries {
        t0 += rng.random_range(0.5..1.5);
        let ladder_len = rng.random_range(1..=3);
        let mut ladder: Vec<f64> = (0..ladder_len - 1)
            .map(|k| t0 - rng.random_range(0.05..0.45) * (k + 1) as f64)
            .collect();
        ladder.push(t0);
        ladder.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ladder.dedup();
        delivery_times.push(t0);
        trading_times.push(ladder);
    }
    let grid = ContractGrid::new(delivery_times, trading_times).expect("valid random grid");
    let n = grid.n_contracts();

    let n_fuels = rng.random_range(1..=2);
    let fuels: Vec<String> = (0..n_fuels).map(|l| format!("fuel{l}")).collect();

    let n_producers = rng.random_range(1..=3);
    let mut producers = Vec::with_capacity(n_producers);
    let mut total_cap = 0.0;
    for p in 0..n_producers {
        // The first producer always owns plants; later ones may be traders.
        let n_plants = if p == 0 {
            rng.random_range(1..=3)
        } else {
            rng.random_range(0..=2)
        };
        let plants: Vec<PowerPlant> = (0..n_plants)
            .map(|r| {
                let cap = rng.random_range(50.0..150.0);
                total_cap += cap;
                let ramp = cap * rng.random_range(0.5..1.0);
                PowerPlant {
                    name: format!("p{p}r{r}"),
                    fuel: rng.random_range(0..n_fuels),
                    capacity_max: cap,
                    ramp_up: ramp,
                    ramp_down: -ramp,
                    efficiency: rng.random_range(0.3..0.9),
                    emission_intensity: rng.random_range(0.2..1.0),
                }
            })
            .collect();
        producers.push(Producer {
            id: format!("p{p}"),
            risk_aversion: 10f64.powf(rng.random_range(-5.0..-2.0)),
            plants,
        });
    }

    let n_consumers = rng.random_range(1..=2);
    let mut shares: Vec<f64> = (0..n_consumers).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = shares.iter().sum();
    for s in &mut shares {
        *s /= sum;
    }
    let consumers: Vec<Consumer> = shares
        .into_iter()
        .enumerate()
        .map(|(c, demand_share)| Consumer {
            id: format!("c{c}"),
            risk_aversion: 10f64.powf(rng.random_range(-5.0..-2.0)),
            demand_share,
            retail_price: rng.random_range(0.0..80.0),
        })
        .collect();

    let base_demand = 0.4 * total_cap.max(100.0);
    let demand: Vec<f64> = (0..grid.n_deliveries())
        .map(|_| base_demand * (1.0 + rng.random_range(-0.2..0.2)))
        .collect();
    let fuel_prices: Vec<Vec<f64>> = (0..n_fuels)
        .map(|_| {
            let base = rng.random_range(20.0..80.0);
            (0..n)
                .map(|_| base * (1.0 + rng.random_range(-0.1..0.1)))
                .collect()
        })
        .collect();
    let emission_prices: Vec<f64> = (0..n).map(|_| rng.random_range(2.0..10.0)).collect();

    let dim = n * (n_fuels + 2);
    let stacked = random_spd(rng, dim, 9.0);
    let covariance = CovarianceModel::from_stacked(&stacked, n);

    let trade_bound = 10.0 * (1.0 + demand.iter().sum::<f64>());
    MarketInstance {
        grid,
        fuels,
        producers,
        consumers,
        curves: ExogenousCurves {
            fuel_prices,
            emission_prices,
            demand,
            interest_rate: rng.random_range(0.0..0.1),
        },
        covariance,
        trade_bound,
        cost_spec: None,
        blocks: Vec::new(),
    }
}
