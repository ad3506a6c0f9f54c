//! First-order optimality residuals for a [`QpProblem`] at a given
//! primal-dual triple. Pure function of its inputs; the solver reports these
//! against the unregularized problem.

use super::QpProblem;
use nalgebra::DVector;

/// Residuals of the stacked optimality system:
///
/// ```text
///     -π - Qx - Bᵀη - Aᵀμ = 0        stationarity
///     ηᵢ (Bx - b)ᵢ        = 0        complementarity
///     Bx - b              ≤ 0        primal inequalities
///     Ax - a              = 0        primal equalities
///     η                   ≥ 0        dual feasibility
///     μ_pinned            = 0        pinned multipliers
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    /// Minimum inequality multiplier, reported raw (negative means a
    /// violated sign constraint).
    pub dual_feas: f64,
    pub pinned: f64,
}

impl KktReport {
    /// All residuals within `tol * scale`, with `dual_feas ≥ -tol * scale`.
    pub fn passes(&self, tol: f64, scale: f64) -> bool {
        let lim = tol * scale;
        self.stationarity <= lim
            && self.complementarity <= lim
            && self.primal_eq <= lim
            && self.primal_ineq <= lim
            && self.dual_feas >= -lim
            && self.pinned <= lim
    }

    /// Largest violation, with `dual_feas` folded in by sign.
    pub fn worst(&self) -> f64 {
        [
            self.stationarity,
            self.complementarity,
            self.primal_eq,
            self.primal_ineq,
            (-self.dual_feas).max(0.0),
            self.pinned,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl std::fmt::Display for KktReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stat={:.3e} comp={:.3e} eq={:.3e} ineq={:.3e} dual_min={:.3e} pinned={:.3e}",
            self.stationarity,
            self.complementarity,
            self.primal_eq,
            self.primal_ineq,
            self.dual_feas,
            self.pinned
        )
    }
}

/// Evaluate the optimality residuals of `problem` at `(x, mu, eta)`.
///
/// `mu` must cover every equality row, including pinned ones.
pub fn kkt_residuals(
    problem: &QpProblem,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    eta: &DVector<f64>,
) -> KktReport {
    assert_eq!(x.len(), problem.dim());
    assert_eq!(mu.len(), problem.n_eq());
    assert_eq!(eta.len(), problem.n_ineq());

    let mut grad = -problem.linear.clone();
    problem.hessian_lower.sym_mul_vec_add(x, -1.0, &mut grad);
    problem.ineq.tr_mul_vec_add(eta, -1.0, &mut grad);
    problem.eq.tr_mul_vec_add(mu, -1.0, &mut grad);
    let stationarity = grad.amax();

    let slack = problem.ineq.mul_vec(x) - &problem.ineq_rhs;
    let complementarity = eta
        .iter()
        .zip(slack.iter())
        .map(|(e, s)| (e * s).abs())
        .fold(0.0, f64::max);
    let primal_ineq = slack.iter().copied().fold(0.0, f64::max);
    let dual_feas = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let dual_feas = if dual_feas.is_finite() { dual_feas } else { 0.0 };

    let primal_eq = if problem.n_eq() > 0 {
        (problem.eq.mul_vec(x) - &problem.eq_rhs).amax()
    } else {
        0.0
    };

    let pinned = problem
        .pinned_duals
        .iter()
        .map(|&r| mu[r].abs())
        .fold(0.0, f64::max);

    KktReport {
        stationarity,
        complementarity,
        primal_eq,
        primal_ineq,
        dual_feas,
        pinned,
    }
}
