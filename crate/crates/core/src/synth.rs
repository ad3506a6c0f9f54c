//! Deterministic synthetic inputs: plant fleets, factor-model covariances,
//! demand shapes and production histories. Used by the shipped demo
//! scenarios, the benchmarks and the acceptance suite; real data can be
//! substituted anywhere a synthetic input is used.

use crate::calibration::{HistorySample, ProductionHistory};
use crate::extensions::{BlockContract, TransactionCostSpec};
use crate::model::{
    Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant, Producer,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal draw (Box-Muller).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Factor-model covariance construction.
///
/// Drivers are one common factor per fuel, one emission factor, and one
/// slot-local factor per (fuel, contract) pair, all with unit variance.
/// A fuel contract `(l, m)` loads `fuel_sd[l]` on its common factor and
/// `fuel_idio_frac · fuel_sd[l]` on its own slot factor. An electricity
/// contract `n` loads `fuel_link[n] · fuel_mix[l] · fuel_sd[l]` on the
/// common fuel factors (curve-wide anchoring), `local_link[n] ·
/// fuel_mix[l] · fuel_idio_frac · fuel_sd[l]` on the slot factors of its
/// own ladder position (time-local anchoring), `em_link[n] · em_sd` on
/// the emission factor, plus an idiosyncratic standard deviation
/// `idio_sd[n]`. The stacked matrix is `L·Lᵀ + diag(idio²)`, positive
/// semidefinite by construction, with a strictly positive definite
/// electricity block whenever every `idio_sd` entry is positive.
///
/// Far-from-delivery contracts anchor to fuel costs (large links), while
/// near-delivery contracts are dominated by demand noise (large
/// `idio_sd`); that pattern drives the equilibrium term-structure slope.
#[derive(Debug, Clone)]
pub struct FactorCovariance {
    /// Per-contract curve-wide fuel anchoring (length N).
    pub fuel_link: Vec<f64>,
    /// Per-contract anchoring to the same slot's fuel contract (length N).
    pub local_link: Vec<f64>,
    /// Per-contract idiosyncratic volatility (length N), strictly positive.
    pub idio_sd: Vec<f64>,
    /// Per-fuel factor volatility (length |L|).
    pub fuel_sd: Vec<f64>,
    /// Share of the electricity anchoring carried by each fuel (length |L|).
    pub fuel_mix: Vec<f64>,
    pub em_sd: f64,
    /// Per-contract loading multiplier on the emission factor (length N).
    /// Its ladder profile is independent of the fuel anchoring, which lets
    /// fuel-driven and emission-driven risk pull the term structure in
    /// different directions.
    pub em_link: Vec<f64>,
    /// Slot-local volatility of fuel contracts relative to their factor
    /// volatility.
    pub fuel_idio_frac: f64,
}

impl FactorCovariance {
    pub fn build(&self, n_contracts: usize) -> CovarianceModel {
        let n = n_contracts;
        let n_l = self.fuel_sd.len();
        // Common fuel factors, emission factor, then slot factors.
        let n_factors = n_l + 1 + n_l * n;
        let d = n * (n_l + 2);
        let mut loadings = DMatrix::zeros(d, n_factors);
        let mut idio = vec![0.0f64; d];
        let slot = |l: usize, m: usize| n_l + 1 + l * n + m;

        for c in 0..n {
            for l in 0..n_l {
                let local_sd = self.fuel_idio_frac * self.fuel_sd[l];
                loadings[(c, l)] = self.fuel_link[c] * self.fuel_mix[l] * self.fuel_sd[l];
                loadings[(c, slot(l, c))] = self.local_link[c] * self.fuel_mix[l] * local_sd;
            }
            loadings[(c, n_l)] = self.em_link[c] * self.em_sd;
            idio[c] = self.idio_sd[c];
        }
        for l in 0..n_l {
            let local_sd = self.fuel_idio_frac * self.fuel_sd[l];
            for m in 0..n {
                let row = n + l * n + m;
                loadings[(row, l)] = self.fuel_sd[l];
                loadings[(row, slot(l, m))] = local_sd;
                idio[row] = 0.02 * self.fuel_sd[l];
            }
        }
        for m in 0..n {
            let row = n + n_l * n + m;
            loadings[(row, n_l)] = self.em_sd;
            idio[row] = 0.1 * self.em_sd;
        }

        let mut stacked = &loadings * loadings.transpose();
        for i in 0..d {
            stacked[(i, i)] += idio[i] * idio[i];
        }
        CovarianceModel::from_stacked(&stacked, n)
    }
}

/// Synthetic thermal fleet with gas/coal/oil characteristics. Capacities
/// are MWh per delivery period; efficiencies are in price-normalized fuel
/// units per MWh so that `efficiency × fuel price` is a cost in currency
/// per MWh.
pub fn synthetic_fleet<R: Rng>(rng: &mut R, n_plants: usize) -> Vec<PowerPlant> {
    let mut plants = Vec::with_capacity(n_plants);
    for k in 0..n_plants {
        let draw: f64 = rng.random();
        // fuel 0 = gas, 1 = coal, 2 = oil
        let (fuel, name) = if draw < 0.5 {
            (0usize, format!("gas{k:03}"))
        } else if draw < 0.85 {
            (1, format!("coal{k:03}"))
        } else {
            (2, format!("oil{k:03}"))
        };
        let capacity = match fuel {
            0 => rng.random_range(100.0..400.0),
            1 => rng.random_range(150.0..500.0),
            _ => rng.random_range(30.0..120.0),
        };
        let ramp_frac = match fuel {
            0 => rng.random_range(0.4..1.0),
            1 => rng.random_range(0.15..0.4),
            _ => 1.0,
        };
        let (eff, em) = match fuel {
            0 => (rng.random_range(0.60..0.80), rng.random_range(0.32..0.42)),
            1 => (rng.random_range(0.35..0.50), rng.random_range(0.80..1.00)),
            _ => (rng.random_range(0.80..1.10), rng.random_range(0.55..0.75)),
        };
        plants.push(PowerPlant {
            name,
            fuel,
            capacity_max: capacity,
            ramp_up: ramp_frac * capacity,
            ramp_down: -ramp_frac * capacity,
            efficiency: eff,
            emission_intensity: em,
        });
    }
    plants
}

/// Fuel price bases: gas in GBp/therm-normalized units, coal and oil per
/// tonne, matching the usual UK quoting conventions.
pub const FUEL_PRICE_BASES: [f64; 3] = [69.30, 57.87, 110.0];
pub const EMISSION_PRICE_BASE: f64 = 3.883;

/// Synthetic system-scale market: `n_deliveries` half-hour periods, each
/// tradable one month ahead and at the spot, a single producer owning the
/// whole fleet and a single consumer serving all demand. With
/// `month_ahead_block` set, the month-ahead positions of all deliveries
/// form one block contract, mirroring how a month contract actually trades.
pub fn system_scale_market(
    n_plants: usize,
    n_deliveries: usize,
    seed: u64,
    month_ahead_block: bool,
) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plants = synthetic_fleet(&mut rng, n_plants);
    let total_cap: f64 = plants.iter().map(|p| p.capacity_max).sum();

    let step = 0.5 / 24.0 / 365.0; // half an hour in years
    let t_first = 1.0;
    let month_ahead = t_first - 30.0 / 365.0;
    let delivery_times: Vec<f64> = (0..n_deliveries).map(|j| t_first + j as f64 * step).collect();
    let trading_times: Vec<Vec<f64>> = delivery_times
        .iter()
        .map(|&t| vec![month_ahead, t])
        .collect();
    let grid = ContractGrid::new(delivery_times, trading_times).expect("valid synthetic grid");
    let n = grid.n_contracts();

    // Daily demand shape between roughly 40% and 70% of fleet capacity.
    let demand: Vec<f64> = (0..n_deliveries)
        .map(|j| {
            let phase = j as f64 / 48.0 * std::f64::consts::TAU;
            total_cap * (0.55 + 0.15 * (phase - 0.7).sin()) * (1.0 + 0.02 * standard_normal(&mut rng))
        })
        .map(|d| d.max(0.0))
        .collect();

    let fuels = vec!["gas".to_string(), "coal".to_string(), "oil".to_string()];
    let fuel_prices: Vec<Vec<f64>> = (0..3).map(|l| vec![FUEL_PRICE_BASES[l]; n]).collect();
    let emission_prices = vec![EMISSION_PRICE_BASE; n];

    // Month-ahead contracts anchor to fuel; spots carry demand noise.
    let mut fuel_link = vec![0.0; n];
    let mut local_link = vec![0.0; n];
    let mut em_link = vec![0.0; n];
    let mut idio_sd = vec![0.0; n];
    for (flat, _, i, _, _) in grid.contracts() {
        if i == 0 {
            fuel_link[flat] = 0.10;
            local_link[flat] = 0.20;
            em_link[flat] = 0.04;
            idio_sd[flat] = 1.5;
        } else {
            fuel_link[flat] = 0.02;
            local_link[flat] = 0.05;
            em_link[flat] = 0.10;
            idio_sd[flat] = 7.0;
        }
    }
    let covariance = FactorCovariance {
        fuel_link,
        local_link,
        em_link,
        idio_sd,
        fuel_sd: vec![6.0, 4.0, 8.0],
        fuel_mix: vec![0.6, 0.3, 0.1],
        em_sd: 0.8,
        fuel_idio_frac: 0.1,
    }
    .build(n);

    let blocks = if month_ahead_block {
        vec![BlockContract {
            deliveries: (0..n_deliveries).collect(),
            trading_times: vec![month_ahead],
        }]
    } else {
        Vec::new()
    };

    MarketInstance {
        grid,
        fuels,
        producers: vec![Producer {
            id: "fleet".into(),
            risk_aversion: 1e-5,
            plants,
        }],
        consumers: vec![Consumer {
            id: "system".into(),
            risk_aversion: 1e-5,
            demand_share: 1.0,
            retail_price: 0.0,
        }],
        curves: ExogenousCurves {
            fuel_prices,
            emission_prices,
            demand,
            interest_rate: 0.0,
        },
        covariance,
        trade_bound: 50.0 * total_cap,
        cost_spec: Some(TransactionCostSpec::uniform(n, 0.1, 1e-4)),
        blocks,
    }
}

/// Generate a plant history whose normalized production follows the
/// logistic response of the true margin, with Gaussian observation noise.
/// Prices vary enough to identify all three parameters.
pub fn synthetic_history<R: Rng>(
    rng: &mut R,
    plant: &str,
    true_params: [f64; 3],
    n_samples: usize,
    noise_sd: f64,
) -> ProductionHistory {
    let [c, g, ct] = true_params;
    let samples = (0..n_samples)
        .map(|_| {
            let fuel = 50.0 * (1.0 + 0.25 * standard_normal(rng)).max(0.2);
            let em = 4.0 * (1.0 + 0.35 * standard_normal(rng)).max(0.2);
            // Spread the margin over ±8 so the logistic transition region
            // is well sampled.
            let theta = rng.random_range(-8.0..8.0);
            let elec = theta + c * fuel + g * em + ct;
            let w = 1.0 / (1.0 + (-theta).exp()) + noise_sd * standard_normal(rng);
            HistorySample {
                production: 100.0 * w.clamp(0.0, 1.0),
                capacity: 100.0,
                spot_electricity: elec,
                spot_fuel: fuel,
                spot_emission: em,
            }
        })
        .collect();
    ProductionHistory {
        plant: plant.into(),
        samples,
    }
}
