//! Primal-dual interior-point solver with a Mehrotra predictor-corrector
//! step, treating the primal iterate and both multiplier families jointly.
//!
//! Pinned equality rows are handled by eliminating their multiplier columns
//! from the Newton system. The rows themselves are dropped from the solved
//! system and verified through the final KKT report; for market-clearing
//! systems they are implied by stationarity of the price block, so the
//! report closes whenever the solve converges.
//!
//! Every Newton system is regularized (`+δ` on the primal block, `-δ` on the
//! dual block) during factorization only; iterative refinement runs against
//! the unregularized matrix so reported residuals are not distorted.

use super::ldl::{LdlError, LdlFactor};
use super::sparse::{SparseMatrix, Triplets};
use super::{kkt_residuals, QpError, QpProblem, QpSolution, QpStatus};
use nalgebra::DVector;
use std::ops::Range;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative tolerance on every KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Regularization relative to the Hessian scale.
    pub regularization: f64,
    /// Iterative refinement rounds per Newton solve.
    pub refine_steps: usize,
    /// Fraction-to-boundary factor.
    pub step_fraction: f64,
    /// Variable range whose final |D| pivots are reported (curvature probe).
    pub probe_range: Option<Range<usize>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            regularization: 1e-9,
            refine_steps: 2,
            step_fraction: 0.995,
            probe_range: None,
        }
    }
}

/// Output of the auxiliary feasibility program.
#[derive(Debug, Clone)]
pub struct Phase1Outcome {
    pub point: DVector<f64>,
    /// Smallest achievable max(Bx - b) subject to Ax = a. Strict feasibility
    /// holds iff this is negative. `-inf` when there are no inequalities.
    pub margin: f64,
}

impl Phase1Outcome {
    pub fn strictly_feasible(&self) -> bool {
        self.margin < 0.0
    }
}

/// Solve `max -πᵀx - ½xᵀQx  s.t. Ax = a, Bx ≤ b, μ_pinned = 0`.
///
/// Returns the primal-dual triple; `status` distinguishes an optimal
/// solution, a problem without a strictly feasible point, and an iteration
/// limit (best iterate returned).
pub fn solve_dual_form(problem: &QpProblem, opts: &SolverOptions) -> Result<QpSolution, QpError> {
    problem.check_dims()?;
    solve_inner(problem, opts, true)
}

fn solve_inner(
    problem: &QpProblem,
    opts: &SolverOptions,
    classify: bool,
) -> Result<QpSolution, QpError> {
    let sys = NewtonSystem::new(problem, opts);
    let outcome = if problem.n_ineq() == 0 {
        sys.solve_equality_constrained()
    } else {
        sys.mehrotra_loop()
    }?;
    let mut solution = outcome;
    if solution.status == QpStatus::MaxIter && classify {
        // Distinguish "never strictly feasible" from plain non-convergence.
        let phase1 = phase1_feasible(&problem.eq, &problem.eq_rhs, &problem.ineq, &problem.ineq_rhs);
        match phase1 {
            Ok(out) if !out.strictly_feasible() => solution.status = QpStatus::Infeasible,
            Err(QpError::InconsistentEqualities { .. }) => solution.status = QpStatus::Infeasible,
            _ => {}
        }
    }
    Ok(solution)
}

/// Minimize the worst inequality violation subject to the equalities.
///
/// Solves the auxiliary program `min t  s.t. Ax = a, Bx - t·1 ≤ b` (with `t`
/// bounded below at `-(1 + 2‖b‖_∞)` so the program stays bounded even when
/// the inequality rows do not oppose each other). Errors when the equality
/// system itself is inconsistent.
pub fn phase1_feasible(
    eq: &SparseMatrix,
    eq_rhs: &DVector<f64>,
    ineq: &SparseMatrix,
    ineq_rhs: &DVector<f64>,
) -> Result<Phase1Outcome, QpError> {
    let n = eq.ncols().max(ineq.ncols());
    if eq.nrows() > 0 && ineq.nrows() > 0 && eq.ncols() != ineq.ncols() {
        return Err(QpError::Dimensions("phase1 column mismatch".into()));
    }

    // Least-squares equality solve through [[I, Aᵀ], [A, -δ]], refined
    // against the unregularized augmented system.
    let me = eq.nrows();
    let ls_point = if me > 0 {
        let delta = 1e-10 * (1.0 + eq_rhs.amax());
        let mut t = Triplets::new(n + me, n + me);
        for i in 0..n {
            t.push(i, i, 1.0);
        }
        for (r, c, v) in eq.iter() {
            t.push(n + r, c, v);
        }
        for r in 0..me {
            t.push(n + r, n + r, -delta);
        }
        let k = t.to_csr();
        let fac = LdlFactor::factor(&k, delta * 1e-8).map_err(|_| QpError::Factorization)?;
        let mut target = DVector::zeros(n + me);
        for r in 0..me {
            target[n + r] = eq_rhs[r];
        }
        let mut z: Vec<f64> = target.iter().copied().collect();
        fac.solve_in_place(&mut z);
        let mut z = DVector::from_vec(z);
        for _ in 0..3 {
            let mut resid = target.clone();
            k.sym_mul_vec_add(&z, -1.0, &mut resid);
            for r in 0..me {
                resid[n + r] -= delta * z[n + r];
            }
            let mut dz: Vec<f64> = resid.iter().copied().collect();
            fac.solve_in_place(&mut dz);
            for i in 0..z.len() {
                z[i] += dz[i];
            }
        }
        let x = DVector::from_iterator(n, z.iter().take(n).copied());
        let residual = (eq.mul_vec(&x) - eq_rhs).amax();
        if residual > 1e-8 * (1.0 + eq_rhs.amax()) {
            return Err(QpError::InconsistentEqualities { residual });
        }
        x
    } else {
        DVector::zeros(n)
    };

    if ineq.nrows() == 0 {
        return Ok(Phase1Outcome {
            point: ls_point,
            margin: f64::NEG_INFINITY,
        });
    }

    // LP over (x, t).
    let t_cap = 1.0 + 2.0 * ineq_rhs.amax();
    let mi = ineq.nrows();
    let mut b_ext = Triplets::new(mi + 1, n + 1);
    for (r, c, v) in ineq.iter() {
        b_ext.push(r, c, v);
    }
    for r in 0..mi {
        b_ext.push(r, n, -1.0);
    }
    b_ext.push(mi, n, -1.0);
    let mut b_rhs = DVector::zeros(mi + 1);
    for r in 0..mi {
        b_rhs[r] = ineq_rhs[r];
    }
    b_rhs[mi] = t_cap;
    let mut a_ext = Triplets::new(me, n + 1);
    for (r, c, v) in eq.iter() {
        a_ext.push(r, c, v);
    }
    let mut linear = DVector::zeros(n + 1);
    linear[n] = 1.0; // max -t  ==  min t
    let lp = QpProblem::new(
        SparseMatrix::zero(n + 1, n + 1),
        linear,
        a_ext.to_csr(),
        eq_rhs.clone(),
        b_ext.to_csr(),
        b_rhs,
    );
    let opts = SolverOptions::default();
    let sol = solve_inner(&lp, &opts, false)?;
    let point = DVector::from_iterator(n, sol.x.iter().take(n).copied());
    Ok(Phase1Outcome {
        point,
        margin: sol.x[n],
    })
}

struct NewtonSystem<'a> {
    p: &'a QpProblem,
    opts: &'a SolverOptions,
    free_rows: Vec<usize>,
    a_free: SparseMatrix,
    a_free_rhs: DVector<f64>,
    n: usize,
    me: usize,
    mi: usize,
    scale: f64,
    delta0: f64,
}

struct Factored {
    factor: LdlFactor,
    k_lower: SparseMatrix,
    delta: f64,
}

impl<'a> NewtonSystem<'a> {
    fn new(p: &'a QpProblem, opts: &'a SolverOptions) -> Self {
        let pinned: std::collections::HashSet<usize> = p.pinned_duals.iter().copied().collect();
        let free_rows: Vec<usize> = (0..p.n_eq()).filter(|r| !pinned.contains(r)).collect();
        let a_free = p.eq.select_rows(&free_rows);
        let a_free_rhs = DVector::from_iterator(free_rows.len(), free_rows.iter().map(|&r| p.eq_rhs[r]));
        let q_scale = p.hessian_lower.sym_inf_norm().max(1.0);
        Self {
            p,
            opts,
            n: p.dim(),
            me: free_rows.len(),
            mi: p.n_ineq(),
            free_rows,
            a_free,
            a_free_rhs,
            scale: p.residual_scale(),
            delta0: opts.regularization * q_scale,
        }
    }

    fn build_k(&self, w: Option<&DVector<f64>>, delta: f64) -> SparseMatrix {
        let nk = self.n + self.me;
        let cap = self.p.hessian_lower.nnz() + self.a_free.nnz() + nk + 4 * self.mi;
        let mut t = Triplets::with_capacity(nk, nk, cap);
        for (r, c, v) in self.p.hessian_lower.iter() {
            t.push(r, c, v);
        }
        for i in 0..self.n {
            t.push(i, i, delta);
        }
        for r in 0..self.mi {
            let wr = match w {
                Some(w) => w[r],
                None => 1.0,
            };
            if wr == 0.0 {
                continue;
            }
            let (cols, vals) = self.p.ineq.row(r);
            for (ka, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                for (&cb, &vb) in cols.iter().zip(vals).take(ka + 1) {
                    t.push_sym_lower(ca, cb, wr * va * vb);
                }
            }
        }
        for (r, c, v) in self.a_free.iter() {
            t.push(self.n + r, c, v);
        }
        for r in 0..self.me {
            t.push(self.n + r, self.n + r, -delta);
        }
        t.to_csr()
    }

    fn factor(&self, w: Option<&DVector<f64>>) -> Result<Factored, QpError> {
        let mut delta = self.delta0;
        for _ in 0..8 {
            let k_lower = self.build_k(w, delta);
            match LdlFactor::factor(&k_lower, 1e-6 * delta) {
                Ok(factor) => {
                    return Ok(Factored {
                        factor,
                        k_lower,
                        delta,
                    })
                }
                Err(LdlError::TinyPivot { .. }) => delta *= 100.0,
                Err(LdlError::NotSquare) => return Err(QpError::Factorization),
            }
        }
        Err(QpError::Factorization)
    }

    /// Solve with `fac`, refining against the unregularized system.
    fn solve_kkt(&self, fac: &Factored, rhs: &DVector<f64>) -> DVector<f64> {
        let mut z: Vec<f64> = rhs.iter().copied().collect();
        fac.factor.solve_in_place(&mut z);
        let mut z = DVector::from_vec(z);
        for _ in 0..self.opts.refine_steps {
            let mut r = rhs.clone();
            fac.k_lower.sym_mul_vec_add(&z, -1.0, &mut r);
            for i in 0..self.n {
                r[i] += fac.delta * z[i];
            }
            for i in self.n..self.n + self.me {
                r[i] -= fac.delta * z[i];
            }
            let mut dz: Vec<f64> = r.iter().copied().collect();
            fac.factor.solve_in_place(&mut dz);
            for i in 0..z.len() {
                z[i] += dz[i];
            }
        }
        z
    }

    fn scatter_mu(&self, mu_free: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.p.n_eq());
        for (k, &r) in self.free_rows.iter().enumerate() {
            full[r] = mu_free[k];
        }
        full
    }

    fn probe(&self, fac: &Factored) -> Option<f64> {
        self.opts.probe_range.as_ref().map(|range| {
            fac.factor.d()[range.clone()]
                .iter()
                .map(|d| d.abs())
                .fold(f64::INFINITY, f64::min)
        })
    }

    fn solve_equality_constrained(&self) -> Result<QpSolution, QpError> {
        let fac = self.factor(None)?;
        let mut rhs = DVector::zeros(self.n + self.me);
        for i in 0..self.n {
            rhs[i] = -self.p.linear[i];
        }
        for r in 0..self.me {
            rhs[self.n + r] = self.a_free_rhs[r];
        }
        let z = self.solve_kkt(&fac, &rhs);
        let x = DVector::from_iterator(self.n, z.iter().take(self.n).copied());
        let mu_free = DVector::from_iterator(self.me, z.iter().skip(self.n).copied());
        let mu = self.scatter_mu(&mu_free);
        let eta = DVector::zeros(0);
        let kkt = kkt_residuals(self.p, &x, &mu, &eta);
        let status = if kkt.passes(self.opts.tol, self.scale) {
            QpStatus::Optimal
        } else {
            QpStatus::MaxIter
        };
        Ok(QpSolution {
            probe_min_pivot: self.probe(&fac),
            x,
            eq_duals: mu,
            ineq_duals: eta,
            status,
            iterations: 1,
            kkt,
        })
    }

    fn mehrotra_loop(&self) -> Result<QpSolution, QpError> {
        let (n, me, mi) = (self.n, self.me, self.mi);
        let b = &self.p.ineq_rhs;

        // Start from the inequality-penalized equality KKT point.
        let fac0 = self.factor(Some(&DVector::from_element(mi, 1.0)))?;
        let mut rhs = DVector::zeros(n + me);
        let bt_b = self.p.ineq.tr_mul_vec(b);
        for i in 0..n {
            rhs[i] = -self.p.linear[i] + bt_b[i];
        }
        for r in 0..me {
            rhs[n + r] = self.a_free_rhs[r];
        }
        let z0 = self.solve_kkt(&fac0, &rhs);
        let mut x = DVector::from_iterator(n, z0.iter().take(n).copied());
        let mut mu = DVector::from_iterator(me, z0.iter().skip(n).copied());

        let s_raw = b - self.p.ineq.mul_vec(&x);
        let floor = 1e-2 * (1.0 + b.amax());
        let mut s = s_raw.map(|v| v.max(floor));
        let mut eta = DVector::from_element(mi, 1.0);

        let mut best: Option<(f64, QpSolution)> = None;
        let mut stalls = 0usize;
        let mut probe_min = None;

        for iter in 0..self.opts.max_iter {
            let mu_full = self.scatter_mu(&mu);
            let kkt = kkt_residuals(self.p, &x, &mu_full, &eta);
            let score = kkt.worst();
            let candidate = QpSolution {
                x: x.clone(),
                eq_duals: mu_full,
                ineq_duals: eta.clone(),
                status: QpStatus::MaxIter,
                iterations: iter,
                kkt,
                probe_min_pivot: probe_min,
            };
            if kkt.passes(self.opts.tol, self.scale) {
                let mut done = candidate;
                done.status = QpStatus::Optimal;
                return Ok(done);
            }
            if best.as_ref().is_none_or(|(s0, _)| score < *s0) {
                best = Some((score, candidate));
            }

            // Residuals of the perturbed system.
            let mut r_d = self.p.linear.clone();
            self.p.hessian_lower.sym_mul_vec_add(&x, 1.0, &mut r_d);
            self.a_free.tr_mul_vec_add(&mu, 1.0, &mut r_d);
            self.p.ineq.tr_mul_vec_add(&eta, 1.0, &mut r_d);
            let r_p = self.a_free.mul_vec(&x) - &self.a_free_rhs;
            let r_s = self.p.ineq.mul_vec(&x) + &s - b;
            let gap = s.dot(&eta) / mi as f64;

            let w = DVector::from_fn(mi, |i, _| eta[i] / s[i]);
            let fac = self.factor(Some(&w))?;
            probe_min = self.probe(&fac);

            let assemble_rhs = |tmp: &DVector<f64>| {
                let mut rhs = DVector::zeros(n + me);
                let mut top = -r_d.clone();
                self.p.ineq.tr_mul_vec_add(tmp, 1.0, &mut top);
                for i in 0..n {
                    rhs[i] = top[i];
                }
                for r in 0..me {
                    rhs[n + r] = -r_p[r];
                }
                rhs
            };

            // Predictor.
            let tmp_aff = DVector::from_fn(mi, |i, _| eta[i] - w[i] * r_s[i]);
            let z = self.solve_kkt(&fac, &assemble_rhs(&tmp_aff));
            let dx_a = DVector::from_iterator(n, z.iter().take(n).copied());
            let ds_a = -(&r_s) - self.p.ineq.mul_vec(&dx_a);
            let deta_a = DVector::from_fn(mi, |i, _| -eta[i] - w[i] * ds_a[i]);

            let ap_aff = max_step(&s, &ds_a).min(1.0);
            let ad_aff = max_step(&eta, &deta_a).min(1.0);
            let gap_aff = (0..mi)
                .map(|i| (s[i] + ap_aff * ds_a[i]) * (eta[i] + ad_aff * deta_a[i]))
                .sum::<f64>()
                / mi as f64;
            let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let tmp = DVector::from_fn(mi, |i, _| {
                eta[i] - (sigma * gap - ds_a[i] * deta_a[i]) / s[i] - w[i] * r_s[i]
            });
            let z = self.solve_kkt(&fac, &assemble_rhs(&tmp));
            let dx = DVector::from_iterator(n, z.iter().take(n).copied());
            let dmu = DVector::from_iterator(me, z.iter().skip(n).copied());
            let ds = -(&r_s) - self.p.ineq.mul_vec(&dx);
            let deta = DVector::from_fn(mi, |i, _| {
                -(s[i] * eta[i] - sigma * gap + ds_a[i] * deta_a[i]) / s[i] - w[i] * ds[i]
            });

            let tau = self.opts.step_fraction;
            let ap = (tau * max_step(&s, &ds)).min(1.0);
            let ad = (tau * max_step(&eta, &deta)).min(1.0);
            if ap.max(ad) < 1e-10 {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }

            x += ap * &dx;
            s += ap * &ds;
            mu += ad * &dmu;
            eta += ad * &deta;
            for i in 0..mi {
                s[i] = s[i].max(1e-300);
                eta[i] = eta[i].max(1e-300);
            }
        }

        let (_, mut out) = best.expect("at least one iterate");
        out.iterations = self.opts.max_iter;
        Ok(out)
    }
}

/// Largest α with v + α dv ≥ 0.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense_lower(n: usize, entries: &[(usize, usize, f64)]) -> SparseMatrix {
        let mut t = Triplets::new(n, n);
        for &(r, c, v) in entries {
            t.push(r, c, v);
        }
        t.to_csr()
    }

    #[test]
    fn unconstrained_quadratic() {
        // max x - ½x²  →  x = 1, objective ½
        let p = QpProblem::unconstrained(
            dense_lower(1, &[(0, 0, 1.0)]),
            DVector::from_vec(vec![-1.0]),
        );
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(p.objective(&sol.x), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn equality_constrained_toy() {
        // Q = I₂, π = 0, x₁ + x₂ = 1 → x = (½, ½), μ = -½ from the 3×3
        // KKT system solved by hand.
        let mut a = Triplets::new(1, 2);
        a.push(0, 0, 1.0);
        a.push(0, 1, 1.0);
        let p = QpProblem::new(
            dense_lower(2, &[(0, 0, 1.0), (1, 1, 1.0)]),
            DVector::zeros(2),
            a.to_csr(),
            DVector::from_vec(vec![1.0]),
            SparseMatrix::zero(0, 2),
            DVector::zeros(0),
        );
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.eq_duals[0], -0.5, epsilon = 1e-9);
    }

    #[test]
    fn active_inequality_toy() {
        // max x - ½x² s.t. x ≤ 0 → x = 0 with η = 1 (hand KKT).
        let mut b = Triplets::new(1, 1);
        b.push(0, 0, 1.0);
        let p = QpProblem::new(
            dense_lower(1, &[(0, 0, 1.0)]),
            DVector::from_vec(vec![-1.0]),
            SparseMatrix::zero(0, 1),
            DVector::zeros(0),
            b.to_csr(),
            DVector::zeros(1),
        );
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-8);
        assert_relative_eq!(sol.ineq_duals[0], 1.0, epsilon = 1e-7);
        assert!(sol.kkt.complementarity < 1e-8);
    }

    #[test]
    fn box_constrained_lp_like() {
        // max x (Q = 0) s.t. -1 ≤ x ≤ 1: solution x = 1, η_upper = 1.
        let mut b = Triplets::new(2, 1);
        b.push(0, 0, 1.0);
        b.push(1, 0, -1.0);
        let p = QpProblem::new(
            SparseMatrix::zero(1, 1),
            DVector::from_vec(vec![-1.0]),
            SparseMatrix::zero(0, 1),
            DVector::zeros(0),
            b.to_csr(),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_problem_is_classified() {
        // x = 5 pinned by an equality, box x ≤ 1.
        let mut a = Triplets::new(1, 1);
        a.push(0, 0, 1.0);
        let mut b = Triplets::new(1, 1);
        b.push(0, 0, 1.0);
        let p = QpProblem::new(
            dense_lower(1, &[(0, 0, 1.0)]),
            DVector::zeros(1),
            a.to_csr(),
            DVector::from_vec(vec![5.0]),
            b.to_csr(),
            DVector::from_vec(vec![1.0]),
        );
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn phase1_symmetric_box() {
        // -1 ≤ x ≤ 1, no equalities → x = 0 with margin -1.
        let mut b = Triplets::new(2, 1);
        b.push(0, 0, 1.0);
        b.push(1, 0, -1.0);
        let out = phase1_feasible(
            &SparseMatrix::zero(0, 1),
            &DVector::zeros(0),
            &b.to_csr(),
            &DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_relative_eq!(out.margin, -1.0, epsilon = 1e-6);
        assert!(out.point[0].abs() < 1e-5);
        assert!(out.strictly_feasible());
    }

    #[test]
    fn phase1_contradiction() {
        // x pinned at 5, box x ≤ 1 → margin 4.
        let mut a = Triplets::new(1, 1);
        a.push(0, 0, 1.0);
        let mut b = Triplets::new(1, 1);
        b.push(0, 0, 1.0);
        let out = phase1_feasible(
            &a.to_csr(),
            &DVector::from_vec(vec![5.0]),
            &b.to_csr(),
            &DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert_relative_eq!(out.margin, 4.0, epsilon = 1e-6);
        assert!(!out.strictly_feasible());
    }

    #[test]
    fn phase1_inconsistent_equalities() {
        // x = 1 and x = 2 simultaneously.
        let mut a = Triplets::new(2, 1);
        a.push(0, 0, 1.0);
        a.push(1, 0, 1.0);
        let err = phase1_feasible(
            &a.to_csr(),
            &DVector::from_vec(vec![1.0, 2.0]),
            &SparseMatrix::zero(0, 1),
            &DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::InconsistentEqualities { .. }));
    }

    #[test]
    fn pinned_duals_stay_zero_when_row_is_implied() {
        // Variables (y, p): max -½y² + ... coupled so that stationarity of p
        // forces the pinned row y = 0. Mirrors the clearing-row structure:
        // Q = [[1, 1], [1, 0]], pinned equality row [1 0]·x = 0.
        let q = dense_lower(2, &[(0, 0, 1.0), (1, 0, 1.0)]);
        let mut a = Triplets::new(1, 2);
        a.push(0, 0, 1.0);
        let mut p = QpProblem::new(
            q,
            DVector::from_vec(vec![-2.0, 0.0]),
            a.to_csr(),
            DVector::zeros(1),
            SparseMatrix::zero(0, 2),
            DVector::zeros(0),
        );
        p.pinned_duals = vec![0];
        let sol = solve_dual_form(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        // Stationarity row 0: 2 - y - p = 0 with y = 0 → p = 2.
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-8);
        assert_relative_eq!(sol.eq_duals[0], 0.0);
        assert!(sol.kkt.passes(1e-8, p.residual_scale()));
    }
}
