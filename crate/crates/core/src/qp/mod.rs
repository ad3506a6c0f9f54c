//! Convex quadratic programming: problem container, KKT residual checker and
//! a self-contained primal-dual interior-point solver.
//!
//! Problems are posed in maximization form,
//!
//! ```text
//!     max  -πᵀx - ½ xᵀQx
//!     s.t.  Ax = a,  Bx ≤ b
//! ```
//!
//! with an optional set of equality rows whose multipliers are pinned to
//! zero. Pinned rows exert no force on the optimum; they are dropped from the
//! solved system and verified a posteriori through the KKT report, which is
//! exact for systems where the pinned rows are implied by stationarity.

pub mod kkt;
pub mod ldl;
pub mod solver;
pub mod sparse;

pub use kkt::{kkt_residuals, KktReport};
pub use solver::{phase1_feasible, solve_dual_form, Phase1Outcome, SolverOptions};
pub use sparse::{SparseMatrix, Triplets};

use nalgebra::DVector;
use thiserror::Error;

/// One QP instance: `max -πᵀx - ½xᵀQx  s.t. Ax = a, Bx ≤ b`, with the
/// multipliers of the rows in `pinned_duals` constrained to zero.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Lower triangle of the symmetric Hessian Q.
    pub hessian_lower: SparseMatrix,
    /// Linear coefficient π.
    pub linear: DVector<f64>,
    pub eq: SparseMatrix,
    pub eq_rhs: DVector<f64>,
    pub ineq: SparseMatrix,
    pub ineq_rhs: DVector<f64>,
    /// Indices of equality rows whose multipliers are fixed at zero.
    pub pinned_duals: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("pinned dual row {0} out of range")]
    PinnedRowOutOfRange(usize),
    #[error("equality system inconsistent (residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },
    #[error("factorization failed even under heavy regularization")]
    Factorization,
}

impl QpProblem {
    pub fn new(
        hessian_lower: SparseMatrix,
        linear: DVector<f64>,
        eq: SparseMatrix,
        eq_rhs: DVector<f64>,
        ineq: SparseMatrix,
        ineq_rhs: DVector<f64>,
    ) -> Self {
        Self {
            hessian_lower,
            linear,
            eq,
            eq_rhs,
            ineq,
            ineq_rhs,
            pinned_duals: Vec::new(),
        }
    }

    /// Problem with no constraints at all.
    pub fn unconstrained(hessian_lower: SparseMatrix, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self::new(
            hessian_lower,
            linear,
            SparseMatrix::zero(0, n),
            DVector::zeros(0),
            SparseMatrix::zero(0, n),
            DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.nrows()
    }

    pub fn check_dims(&self) -> Result<(), QpError> {
        let n = self.dim();
        let whine = |what: &str| Err(QpError::Dimensions(what.to_string()));
        if self.hessian_lower.nrows() != n || self.hessian_lower.ncols() != n {
            return whine("hessian");
        }
        if self.eq.ncols() != n || self.eq.nrows() != self.eq_rhs.len() {
            return whine("equalities");
        }
        if self.ineq.ncols() != n || self.ineq.nrows() != self.ineq_rhs.len() {
            return whine("inequalities");
        }
        for &r in &self.pinned_duals {
            if r >= self.n_eq() {
                return Err(QpError::PinnedRowOutOfRange(r));
            }
        }
        Ok(())
    }

    /// Objective value `-πᵀx - ½xᵀQx` (the maximized quantity).
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let qx = self.hessian_lower.sym_mul_vec(x);
        -self.linear.dot(x) - 0.5 * x.dot(&qx)
    }

    /// Residual scale used by relative tolerance checks.
    pub fn residual_scale(&self) -> f64 {
        1.0 + self.ineq_rhs.amax() + self.linear.amax()
    }
}

/// Solver verdict. `MaxIter` carries the best iterate found so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Primal-dual solution triple plus diagnostics.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for all equality rows; pinned entries are exactly zero.
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktReport,
    /// Smallest |D| pivot over the probed variable range, when requested.
    /// Used as a curvature probe for detecting nearly-undetermined variables.
    pub probe_min_pivot: Option<f64>,
}
