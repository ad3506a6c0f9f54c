//! Plant-parameter calibration from normalized historical production, and
//! covariance estimation from historical price samples.
//!
//! A plant's production decision is driven by the spot margin
//! `Θ = Π - c·G_fuel - g·G_em - c̃`; the fit finds the efficiency `c`,
//! emission intensity `g` and margin offset `c̃` whose logistic response
//! `1/(1+e^{-Θ})` best explains the normalized production in a
//! least-squares sense. The optimizer is Levenberg-Marquardt with an
//! analytic Jacobian, box bounds and a deterministic multi-start grid.

use crate::model::CovarianceModel;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no usable samples (all capacities were zero or series empty)")]
    EmptyUsableSeries,
    #[error("need at least {required} usable samples, found {found}")]
    TooFewSamples { required: usize, found: usize },
    #[error("price samples have {got} columns, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least two price samples")]
    TooFewPriceSamples,
}

/// One half-hour observation of a plant.
#[derive(Debug, Clone, Copy)]
pub struct HistorySample {
    pub production: f64,
    pub capacity: f64,
    pub spot_electricity: f64,
    pub spot_fuel: f64,
    pub spot_emission: f64,
}

/// Aligned production and spot-price history of one plant.
#[derive(Debug, Clone)]
pub struct ProductionHistory {
    pub plant: String,
    pub samples: Vec<HistorySample>,
}

/// Normalized production series with aligned prices, zero-capacity samples
/// removed.
#[derive(Debug, Clone)]
pub struct FitSeries {
    pub w: Vec<f64>,
    pub elec: Vec<f64>,
    pub fuel: Vec<f64>,
    pub em: Vec<f64>,
    /// Samples removed because the available capacity was zero.
    pub dropped: usize,
    /// Samples whose ratio fell outside [0, 1] and was clamped.
    pub clamped: usize,
}

impl FitSeries {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Normalized production `W̃ = production / capacity`, clamped to [0, 1];
/// zero-capacity half hours are dropped and counted.
pub fn normalize_production(history: &ProductionHistory) -> Result<FitSeries, CalibrationError> {
    let mut out = FitSeries {
        w: Vec::with_capacity(history.samples.len()),
        elec: Vec::new(),
        fuel: Vec::new(),
        em: Vec::new(),
        dropped: 0,
        clamped: 0,
    };
    for s in &history.samples {
        if s.capacity <= 0.0 {
            out.dropped += 1;
            continue;
        }
        let ratio = s.production / s.capacity;
        let w = ratio.clamp(0.0, 1.0);
        if w != ratio {
            out.clamped += 1;
        }
        out.w.push(w);
        out.elec.push(s.spot_electricity);
        out.fuel.push(s.spot_fuel);
        out.em.push(s.spot_emission);
    }
    if out.is_empty() {
        return Err(CalibrationError::EmptyUsableSeries);
    }
    Ok(out)
}

/// Production margin `Θ = Π - c·G_fuel - g·G_em - c̃`. Production takes
/// place iff Θ ≥ 0.
pub fn margin(c: f64, g: f64, c_tilde: f64, spot_elec: f64, spot_fuel: f64, spot_em: f64) -> f64 {
    spot_elec - c * spot_fuel - g * spot_em - c_tilde
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sum of squared residuals of the logistic production model and its
/// gradient with respect to `(c, g, c̃)`.
pub fn sse_and_gradient(params: [f64; 3], series: &FitSeries) -> (f64, [f64; 3]) {
    let [c, g, ct] = params;
    let mut sse = 0.0;
    let mut grad = [0.0; 3];
    for k in 0..series.len() {
        let theta = margin(c, g, ct, series.elec[k], series.fuel[k], series.em[k]);
        let p = logistic(theta);
        let r = series.w[k] - p;
        sse += r * r;
        let dp = p * (1.0 - p);
        // dr/dc = σ'(Θ)·G_fuel etc. (Θ decreases in each parameter).
        grad[0] += 2.0 * r * dp * series.fuel[k];
        grad[1] += 2.0 * r * dp * series.em[k];
        grad[2] += 2.0 * r * dp;
    }
    (sse, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationFlag {
    /// Nearly all observations sit at 0 or 1; parameters are weakly
    /// identified and offsets drift to their bounds.
    SaturatedSeries,
    /// Prices barely vary, so price-collinear directions are flat.
    LowPriceVariation,
    /// A fitted parameter ended on its box bound.
    AtBound,
}

/// Fitted plant parameters with diagnostics.
#[derive(Debug, Clone)]
pub struct PlantCalibration {
    pub plant: String,
    pub efficiency: f64,
    pub emission_intensity: f64,
    pub margin_offset: f64,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<CalibrationFlag>,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Box bounds on (c, g, c̃).
    pub bounds: [(f64, f64); 3],
    pub max_iterations: usize,
    pub min_samples: usize,
    /// Relative projected-gradient tolerance.
    pub gradient_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: [(0.0, 10.0), (0.0, 5.0), (0.0, 100.0)],
            max_iterations: 200,
            min_samples: 100,
            gradient_tol: 1e-10,
        }
    }
}

/// Deterministic coarse multi-start grid over (c, g, c̃).
fn start_grid() -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    let mut k = 0;
    for &c in &[0.5, 2.0] {
        for &g in &[0.25, 1.0] {
            for &ct in &[5.0, 50.0] {
                out[k] = [c, g, ct];
                k += 1;
            }
        }
    }
    out
}

/// Fit one plant by bounded Levenberg-Marquardt from every grid start,
/// keeping the best final objective.
pub fn fit_plant(
    history: &ProductionHistory,
    opts: &FitOptions,
) -> Result<PlantCalibration, CalibrationError> {
    let series = normalize_production(history)?;
    if series.len() < opts.min_samples {
        return Err(CalibrationError::TooFewSamples {
            required: opts.min_samples,
            found: series.len(),
        });
    }

    let mut flags = Vec::new();
    let informative = series
        .w
        .iter()
        .filter(|&&w| (0.01..=0.99).contains(&w))
        .count();
    if (informative as f64) < 0.05 * series.len() as f64 {
        flags.push(CalibrationFlag::SaturatedSeries);
    }
    let spread = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        var.sqrt() / (1.0 + mean.abs())
    };
    if spread(&series.elec) < 1e-10 && spread(&series.fuel) < 1e-10 && spread(&series.em) < 1e-10 {
        flags.push(CalibrationFlag::LowPriceVariation);
    }

    let mut best: Option<(f64, [f64; 3], usize, bool)> = None;
    for start in start_grid() {
        let clamped_start = clamp_params(start, &opts.bounds);
        let (params, sse, iters, converged) = lm_minimize(clamped_start, &series, opts);
        if best.as_ref().is_none_or(|(s, ..)| sse < *s) {
            best = Some((sse, params, iters, converged));
        }
    }
    let (sse, params, iterations, lm_converged) = best.expect("at least one start");

    let at_bound = params
        .iter()
        .zip(&opts.bounds)
        .any(|(&p, &(lo, hi))| p <= lo || p >= hi);
    if at_bound {
        flags.push(CalibrationFlag::AtBound);
    }
    let degenerate = flags
        .iter()
        .any(|f| matches!(f, CalibrationFlag::SaturatedSeries | CalibrationFlag::LowPriceVariation));

    Ok(PlantCalibration {
        plant: history.plant.clone(),
        efficiency: params[0],
        emission_intensity: params[1],
        margin_offset: params[2],
        sse,
        iterations,
        converged: lm_converged && !degenerate,
        flags,
    })
}

fn clamp_params(p: [f64; 3], bounds: &[(f64, f64); 3]) -> [f64; 3] {
    let mut out = p;
    for i in 0..3 {
        out[i] = out[i].clamp(bounds[i].0, bounds[i].1);
    }
    out
}

/// Infinity norm of the gradient projected onto the feasible directions.
fn projected_gradient_norm(params: &[f64; 3], grad: &[f64; 3], bounds: &[(f64, f64); 3]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        let (lo, hi) = bounds[i];
        let g = grad[i];
        let blocked = (params[i] <= lo && g > 0.0) || (params[i] >= hi && g < 0.0);
        if !blocked {
            worst = worst.max(g.abs());
        }
    }
    worst
}

fn lm_minimize(
    start: [f64; 3],
    series: &FitSeries,
    opts: &FitOptions,
) -> ([f64; 3], f64, usize, bool) {
    let m = series.len();
    let mut params = start;
    let (mut sse, mut grad) = sse_and_gradient(params, series);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_iterations {
        iterations += 1;
        let scale = 1.0 + sse;
        if projected_gradient_norm(&params, &grad, &opts.bounds) <= opts.gradient_tol * scale {
            converged = true;
            break;
        }

        // J with rows dr_k/dθ; the step solves (JᵀJ + λD) δ = -Jᵀr.
        let mut jtj = Matrix3::zeros();
        let mut neg_jtr = Vector3::zeros();
        let [c, g_, ct] = params;
        for k in 0..m {
            let theta = margin(c, g_, ct, series.elec[k], series.fuel[k], series.em[k]);
            let p = logistic(theta);
            let dp = p * (1.0 - p);
            let row = Vector3::new(dp * series.fuel[k], dp * series.em[k], dp);
            let r = series.w[k] - p;
            jtj += row * row.transpose();
            neg_jtr -= row * r;
        }

        let mut accepted = false;
        for _ in 0..25 {
            let mut lhs = jtj;
            for i in 0..3 {
                lhs[(i, i)] += damping * (jtj[(i, i)].max(1e-12));
            }
            let Some(step) = lhs.lu().solve(&neg_jtr) else {
                damping *= 10.0;
                continue;
            };
            let candidate = clamp_params(
                [params[0] + step[0], params[1] + step[1], params[2] + step[2]],
                &opts.bounds,
            );
            let (cand_sse, cand_grad) = sse_and_gradient(candidate, series);
            if cand_sse < sse {
                let step_size = (0..3)
                    .map(|i| (candidate[i] - params[i]).abs())
                    .fold(0.0f64, f64::max);
                params = candidate;
                sse = cand_sse;
                grad = cand_grad;
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                if step_size < 1e-12 {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            // No descent direction within the damping budget: local optimum
            // (possibly at a bound).
            converged =
                projected_gradient_norm(&params, &grad, &opts.bounds) <= 1e-6 * (1.0 + sse);
            break;
        }
        if converged {
            break;
        }
    }
    (params, sse, iterations, converged)
}

/// Shrinkage covariance estimate with a diagonal target and intensity.
#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    pub covariance: CovarianceModel,
    /// Shrinkage intensity δ ∈ [0, 1].
    pub intensity: f64,
    pub samples: usize,
}

/// Blend a sample covariance toward its diagonal: `(1-δ)·S + δ·diag(S)`.
pub fn shrink_toward_diagonal(sample: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let mut out = sample * (1.0 - delta);
    for i in 0..sample.nrows() {
        out[(i, i)] = sample[(i, i)];
    }
    out
}

/// Estimate the covariance of the stacked discounted price vector from
/// row-wise samples, shrinking toward the diagonal with the analytically
/// optimal intensity. The result is symmetric PSD by construction and is
/// partitioned into the model's three blocks.
pub fn shrinkage_covariance(
    samples: &DMatrix<f64>,
    n_contracts: usize,
    n_fuels: usize,
) -> Result<ShrinkageResult, CalibrationError> {
    let d = n_contracts * (n_fuels + 2);
    if samples.ncols() != d {
        return Err(CalibrationError::DimensionMismatch {
            expected: d,
            got: samples.ncols(),
        });
    }
    let t = samples.nrows();
    if t < 2 {
        return Err(CalibrationError::TooFewPriceSamples);
    }

    let tf = t as f64;
    let means = DVector::from_fn(d, |i, _| samples.column(i).sum() / tf);
    let mut centered = samples.clone();
    for r in 0..t {
        for c in 0..d {
            centered[(r, c)] -= means[c];
        }
    }
    let s = centered.transpose() * &centered / tf;

    // Optimal intensity for the diagonal target: the off-diagonal
    // estimation variance over the off-diagonal dispersion.
    let mut pi_full = 0.0;
    let mut pi_diag = 0.0;
    for r in 0..t {
        for i in 0..d {
            for j in 0..d {
                let dev = centered[(r, i)] * centered[(r, j)] - s[(i, j)];
                let dev2 = dev * dev;
                pi_full += dev2;
                if i == j {
                    pi_diag += dev2;
                }
            }
        }
    }
    pi_full /= tf;
    pi_diag /= tf;
    let mut gamma = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                gamma += s[(i, j)] * s[(i, j)];
            }
        }
    }
    let intensity = if gamma > 0.0 {
        (((pi_full - pi_diag) / gamma) / tf).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let shrunk = shrink_toward_diagonal(&s, intensity);
    Ok(ShrinkageResult {
        covariance: CovarianceModel::from_stacked(&shrunk, n_contracts),
        intensity,
        samples: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn history(samples: Vec<HistorySample>) -> ProductionHistory {
        ProductionHistory {
            plant: "test".into(),
            samples,
        }
    }

    fn sample(prod: f64, cap: f64) -> HistorySample {
        HistorySample {
            production: prod,
            capacity: cap,
            spot_electricity: 50.0,
            spot_fuel: 50.0,
            spot_emission: 4.0,
        }
    }

    #[test]
    fn normalization_ratio_clamp_and_drop() {
        let h = history(vec![sample(50.0, 100.0), sample(101.0, 100.0), sample(5.0, 0.0)]);
        let s = normalize_production(&h).unwrap();
        assert_eq!(s.w, vec![0.5, 1.0]);
        assert_eq!(s.clamped, 1);
        assert_eq!(s.dropped, 1);

        let empty = history(vec![sample(5.0, 0.0)]);
        assert_eq!(
            normalize_production(&empty).unwrap_err(),
            CalibrationError::EmptyUsableSeries
        );
    }

    #[test]
    fn margin_arithmetic() {
        // Π = 70, c·G = 50, g·G_em = 10, c̃ = 5 → Θ = 5.
        assert_relative_eq!(margin(1.0, 2.5, 5.0, 70.0, 50.0, 4.0), 5.0);
        // c̃ = 0 leaves the raw spark-spread margin.
        assert_relative_eq!(margin(1.0, 2.5, 0.0, 70.0, 50.0, 4.0), 10.0);
        // Gas 69.30, emissions 3.883, c = 0.7, g = 0.4:
        let theta = margin(0.7, 0.4, 0.0, 55.0, 69.30, 3.883);
        assert_relative_eq!(theta, 55.0 - 0.7 * 69.30 - 0.4 * 3.883, epsilon = 1e-12);
    }

    #[test]
    fn margin_scales_with_prices_and_offset() {
        let s = 3.7;
        let base = margin(0.7, 0.4, 5.0, 60.0, 50.0, 4.0);
        let scaled = margin(0.7, 0.4, s * 5.0, s * 60.0, s * 50.0, s * 4.0);
        assert_relative_eq!(scaled, s * base, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<HistorySample> = (0..200)
            .map(|_| {
                let fuel = 50.0 * (1.0 + rng.random_range(-0.3..0.3));
                let em = 4.0 * (1.0 + rng.random_range(-0.3..0.3));
                let elec = 0.7 * fuel + 0.4 * em + rng.random_range(-8.0..8.0);
                HistorySample {
                    production: rng.random_range(0.0..100.0),
                    capacity: 100.0,
                    spot_electricity: elec,
                    spot_fuel: fuel,
                    spot_emission: em,
                }
            })
            .collect();
        let series = normalize_production(&history(samples)).unwrap();

        for trial in 0..20 {
            let params = [
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..1.5),
                rng.random_range(0.0..20.0),
            ];
            let (sse, grad) = sse_and_gradient(params, &series);
            for i in 0..3 {
                let scale = params[i].abs().max(1.0);
                let h = 1e-5 * scale;
                let mut hi = params;
                hi[i] += h;
                let mut lo = params;
                lo[i] -= h;
                let fd = (sse_and_gradient(hi, &series).0 - sse_and_gradient(lo, &series).0)
                    / (2.0 * h);
                // Central differences of the objective carry roundoff of
                // order ε·sse/h; allow that on top of the relative bound.
                let fd_noise = 10.0 * f64::EPSILON * (1.0 + sse) / h;
                let limit = 1e-4 * grad[i].abs().max(fd.abs()) + fd_noise;
                assert!(
                    (grad[i] - fd).abs() <= limit,
                    "trial {trial} param {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn saturated_series_is_flagged_degenerate() {
        // An always-on plant saturates the logistic: the objective is flat
        // over every parameter choice with a large positive margin, so the
        // fit is reported as degenerate rather than trusted.
        let samples: Vec<HistorySample> = (0..200).map(|_| sample(100.0, 100.0)).collect();
        let fit = fit_plant(&history(samples), &FitOptions::default()).unwrap();
        assert!(fit.flags.contains(&CalibrationFlag::SaturatedSeries));
        assert!(!fit.converged);
        assert!(fit.sse < 1e-6);
    }

    #[test]
    fn constant_prices_are_flagged() {
        let samples: Vec<HistorySample> = (0..150)
            .map(|k| {
                let mut s = sample(if k % 2 == 0 { 80.0 } else { 20.0 }, 100.0);
                s.spot_electricity = 40.0;
                s
            })
            .collect();
        let fit = fit_plant(&history(samples), &FitOptions::default()).unwrap();
        assert!(fit.flags.contains(&CalibrationFlag::LowPriceVariation));
        assert!(!fit.converged);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let samples: Vec<HistorySample> = (0..20).map(|_| sample(50.0, 100.0)).collect();
        let err = fit_plant(&history(samples), &FitOptions::default()).unwrap_err();
        assert_eq!(
            err,
            CalibrationError::TooFewSamples {
                required: 100,
                found: 20
            }
        );
    }

    #[test]
    fn identical_price_samples_give_zero_covariance() {
        let row = [50.0, 48.0, 4.0];
        let samples = DMatrix::from_fn(10, 3, |_, c| row[c]);
        let out = shrinkage_covariance(&samples, 1, 1).unwrap();
        assert!(out.covariance.stacked().amax() < 1e-12);
    }

    #[test]
    fn full_shrinkage_limit_is_diagonal() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let shrunk = shrink_toward_diagonal(&s, 1.0);
        assert_relative_eq!(shrunk[(0, 1)], 0.0);
        assert_relative_eq!(shrunk[(0, 0)], 2.0);
        assert_relative_eq!(shrunk[(1, 1)], 1.0);
    }

    #[test]
    fn shrinkage_output_is_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let samples = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let out = shrinkage_covariance(&samples, 2, 1).unwrap();
        let stacked = out.covariance.stacked();
        let min_eig = stacked.symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-10 * stacked.trace().max(1.0));
    }
}
