//! Small dense nonlinear programming toolkit used by attack synthesis.
//!
//! `minimize` is a sequential quadratic programming method: forward
//! finite-difference gradients, a damped BFGS Hessian, quadratic subproblems
//! solved by null-space elimination of the equalities followed by a
//! least-distance program (solved through `nnls`), an elastic fallback when
//! the linearized constraints are inconsistent, and an L1 merit line search.

use nalgebra::{DMatrix, DVector};

/// Values of the objective and constraints at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Must be zero at a solution.
    pub equalities: Vec<f64>,
    /// Must be nonnegative at a solution.
    pub inequalities: Vec<f64>,
}

/// A smooth problem `min f(x)` s.t. `c_eq(x) = 0`, `c_in(x) >= 0`,
/// `lower <= x <= upper`.
pub trait Problem {
    fn dimension(&self) -> usize;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;
    /// Typical magnitude of each variable. The method works on `x / scale`.
    fn scale(&self) -> Vec<f64> {
        vec![1.0; self.dimension()]
    }
    /// `None` when the point lies outside the domain of the model.
    fn evaluate(&self, x: &[f64]) -> Option<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpConfig {
    pub max_iterations: usize,
    /// Step-size tolerance on scaled variables.
    pub step_tolerance: f64,
    /// Constraint violation accepted at a solution.
    pub feasibility_tolerance: f64,
    /// Relative finite-difference step on scaled variables.
    pub fd_step: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-9,
            feasibility_tolerance: 1e-7,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub evaluation: Evaluation,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SqpOutcome {
    pub fn is_feasible(&self, tolerance: f64) -> bool {
        self.violation <= tolerance
    }
}

/// Largest constraint violation.
pub fn violation(e: &Evaluation) -> f64 {
    let eq = e.equalities.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    e.inequalities.iter().fold(eq, |m, c| m.max(-c))
}

fn l1_violation(e: &Evaluation) -> f64 {
    e.equalities.iter().map(|c| c.abs()).sum::<f64>()
        + e.inequalities.iter().map(|c| (-c).max(0.0)).sum::<f64>()
}

/// Lawson-Hanson nonnegative least squares: `min |A x - b|` s.t. `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0) * (n.max(1) as f64);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut z = DVector::zeros(n);
        if idx.is_empty() {
            return z;
        }
        let sub = a.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        for (k, &j) in idx.iter().enumerate() {
            z[j] = sol[k];
        }
        z
    };
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let mut best = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, wb)| w[j] > wb) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        passive[t] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            let z = solve_passive(&passive);
            if (0..n).all(|j| !passive[j] || z[j] > 0.0) || inner > 3 * n + 10 {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            x += alpha * (z - &x);
            for j in 0..n {
                if passive[j] && x[j] <= 1e-14 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

/// Least-distance program `min |w|` s.t. `E w >= f`. Returns the solution
/// and the multipliers, or `None` when the constraints are inconsistent.
pub fn ldp(e: &DMatrix<f64>, f: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (m, n) = e.shape();
    if m == 0 {
        return Some((DVector::zeros(n), DVector::zeros(0)));
    }
    let mut a = DMatrix::zeros(n + 1, m);
    a.view_mut((0, 0), (n, m)).copy_from(&e.transpose());
    for j in 0..m {
        a[(n, j)] = f[j];
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let u = nnls(&a, &rhs);
    let r = &a * &u - rhs;
    let denom = -r[n];
    if denom <= 1e-12 || r.norm() <= 1e-12 {
        return None;
    }
    let w = DVector::from_iterator(n, (0..n).map(|k| r[k] / denom));
    let lambda = u / denom;
    // verify; NNLS round-off can leave tiny violations
    let slack = e * &w - f;
    let scale = f.amax().max(1.0);
    if slack.iter().any(|s| *s < -1e-7 * scale) {
        return None;
    }
    Some((w, lambda))
}

/// Solution of a convex quadratic subproblem.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub d: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
}

/// `min 1/2 d'Bd + g'd` s.t. `A_eq d = b_eq`, `A_in d >= b_in`, with `B`
/// symmetric positive definite. `None` when infeasible.
pub fn solve_qp(
    b: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Option<QpSolution> {
    let n = g.len();
    let (d0, z) = if a_eq.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        // full SVD of A_eq' gives range and null space of A_eq
        let at = a_eq.transpose();
        let svd = at.clone().svd(true, true);
        let u = svd.u.as_ref()?;
        let smax = svd.singular_values.amax().max(1e-300);
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * smax)
            .count();
        let d0 = a_eq
            .clone()
            .svd(true, true)
            .solve(b_eq, 1e-10 * smax)
            .ok()?;
        let resid = a_eq * &d0 - b_eq;
        if resid.amax() > 1e-8 * b_eq.amax().max(1.0) {
            return None;
        }
        (d0, complete_basis(u, rank, n))
    };
    let k = z.ncols();
    let q_full = g + b * &d0;
    let (y, lam) = if k == 0 {
        let slack = a_in * &d0 - b_in;
        if slack.iter().any(|s| *s < -1e-8 * b_in.amax().max(1.0)) {
            return None;
        }
        (DVector::zeros(0), DVector::zeros(a_in.nrows()))
    } else {
        let h = z.transpose() * b * &z;
        let h = (&h + h.transpose()) * 0.5;
        let chol = h.cholesky()?;
        let l = chol.l();
        let q = z.transpose() * &q_full;
        let linv_q = l.solve_lower_triangular(&q)?;
        let gz = a_in * &z;
        let hz = b_in - a_in * &d0;
        // y = L^-T (w - L^-1 q)  ->  gz y = gz L^-T w - gz L^-T L^-1 q
        let lt = l.transpose();
        let e = lt
            .clone()
            .solve_upper_triangular(&gz.transpose())
            .map(|m| m.transpose())?;
        let f = &hz + &e * &linv_q;
        let (w, lam) = ldp(&e, &f)?;
        let y = lt.solve_upper_triangular(&(w - linv_q))?;
        (y, lam)
    };
    let d = if k == 0 { d0 } else { d0 + &z * y };
    // equality multipliers by least squares on stationarity
    let mu = if a_eq.nrows() == 0 {
        DVector::zeros(0)
    } else {
        let rhs = b * &d + g - a_in.transpose() * &lam;
        a_eq.transpose()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(a_eq.nrows()))
    };
    Some(QpSolution {
        d,
        eq_multipliers: mu,
        ineq_multipliers: lam,
    })
}

/// Orthonormal basis of the complement of the first `rank` columns of `u`.
fn complete_basis(u: &DMatrix<f64>, rank: usize, n: usize) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = (0..rank).map(|j| u.column(j).into_owned()).collect();
    let mut extra = Vec::new();
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= c * b;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            v /= nv;
            basis.push(v.clone());
            extra.push(v);
        }
    }
    if extra.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&extra)
}

struct Scaled<'a, P: Problem + ?Sized> {
    problem: &'a P,
    scale: Vec<f64>,
}

impl<P: Problem + ?Sized> Scaled<'_, P> {
    fn unscale(&self, z: &DVector<f64>) -> Vec<f64> {
        z.iter().zip(&self.scale).map(|(z, s)| z * s).collect()
    }

    fn eval(&self, z: &DVector<f64>) -> Option<Evaluation> {
        let e = self.problem.evaluate(&self.unscale(z))?;
        let finite = e.objective.is_finite()
            && e.equalities.iter().all(|c| c.is_finite())
            && e.inequalities.iter().all(|c| c.is_finite());
        finite.then_some(e)
    }

    /// Forward-difference Jacobians of objective, equalities, inequalities.
    fn derivatives(
        &self,
        z: &DVector<f64>,
        at: &Evaluation,
        step: f64,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = z.len();
        let (me, mi) = (at.equalities.len(), at.inequalities.len());
        let mut g = DVector::zeros(n);
        let mut je = DMatrix::zeros(me, n);
        let mut ji = DMatrix::zeros(mi, n);
        for j in 0..n {
            let h0 = step * z[j].abs().max(1.0);
            let mut h = if z[j] + h0 <= hi[j] { h0 } else { -h0 };
            let mut zp = z.clone();
            zp[j] += h;
            let ep = match self.eval(&zp) {
                Some(e) => e,
                None => {
                    h = -h;
                    zp[j] = z[j] + h;
                    if zp[j] < lo[j] - 1e-12 || zp[j] > hi[j] + 1e-12 {
                        return None;
                    }
                    self.eval(&zp)?
                }
            };
            g[j] = (ep.objective - at.objective) / h;
            for r in 0..me {
                je[(r, j)] = (ep.equalities[r] - at.equalities[r]) / h;
            }
            for r in 0..mi {
                ji[(r, j)] = (ep.inequalities[r] - at.inequalities[r]) / h;
            }
        }
        Some((g, je, ji))
    }
}

/// Minimum-norm step that cancels the equality and violated or active
/// inequality residuals at the trial point, to first order.
fn second_order_correction(
    je: &DMatrix<f64>,
    ji: &DMatrix<f64>,
    trial: &Evaluation,
    ci: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = je.ncols();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (r, c) in trial.equalities.iter().enumerate() {
        rows.push(je.row(r).into_owned());
        rhs.push(-c);
    }
    for (r, c) in trial.inequalities.iter().enumerate() {
        let active = lam.get(r).is_some_and(|l| *l > 1e-10) || ci[r].abs() < 1e-9;
        if *c < 0.0 || active {
            rows.push(ji.row(r).into_owned());
            rhs.push(-c);
        }
    }
    if rows.is_empty() {
        return None;
    }
    let a = DMatrix::from_rows(&rows);
    let b = DVector::from_vec(rhs);
    let dc = a.svd(true, true).solve(&b, 1e-12).ok()?;
    (dc.len() == n && dc.iter().all(|x| x.is_finite())).then_some(dc)
}

/// Sequential quadratic programming from `x0` (clamped into the bounds).
/// `None` when the model cannot be evaluated at the start point.
pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &SqpConfig,
) -> Option<SqpOutcome> {
    let n = problem.dimension();
    let scale: Vec<f64> = problem
        .scale()
        .into_iter()
        .map(|s| if s.abs() > 0.0 { s.abs() } else { 1.0 })
        .collect();
    let sp = Scaled { problem, scale };
    let lo = DVector::from_iterator(n, problem.lower().iter().zip(&sp.scale).map(|(l, s)| l / s));
    let hi = DVector::from_iterator(n, problem.upper().iter().zip(&sp.scale).map(|(u, s)| u / s));
    let mut z = DVector::from_iterator(
        n,
        x0.iter()
            .zip(&sp.scale)
            .enumerate()
            .map(|(j, (x, s))| (x / s).clamp(lo[j], hi[j])),
    );
    let mut e = sp.eval(&z)?;
    let mut hess = DMatrix::<f64>::identity(n, n);
    let mut rho = 1.0f64;
    let mut derivs = sp.derivatives(&z, &e, config.fd_step, &lo, &hi);
    let mut iterations = 0;
    let mut converged = false;
    let mut resets = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let Some((g, je, ji)) = derivs.clone() else {
            break;
        };
        let me = e.equalities.len();
        let ce = DVector::from_column_slice(&e.equalities);
        let ci = DVector::from_column_slice(&e.inequalities);

        // bound rows appended to the inequalities
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for r in 0..ji.nrows() {
            rows.push((ji.row(r).transpose(), -ci[r]));
        }
        for j in 0..n {
            if lo[j].is_finite() {
                let mut a = DVector::zeros(n);
                a[j] = 1.0;
                rows.push((a, lo[j] - z[j]));
            }
            if hi[j].is_finite() {
                let mut a = DVector::zeros(n);
                a[j] = -1.0;
                rows.push((a, z[j] - hi[j]));
            }
        }
        let n_general = ji.nrows();
        let build = |extra: usize| {
            let mut a = DMatrix::zeros(rows.len(), n + extra);
            let mut b = DVector::zeros(rows.len());
            for (r, (row, rhs)) in rows.iter().enumerate() {
                a.view_mut((r, 0), (1, n)).copy_from(&row.transpose());
                b[r] = *rhs;
            }
            (a, b)
        };

        let (a_in, b_in) = build(0);
        let mut qp = solve_qp(&hess, &g, &je, &(-&ce), &a_in, &b_in);
        let mut elastic = false;
        if qp.is_none() {
            // elastic: relax violated linearizations by (1 - xi)
            elastic = true;
            let (mut a_in2, mut b_in2) = build(1);
            for r in 0..n_general {
                if ci[r] < 0.0 {
                    a_in2[(r, n)] = -ci[r];
                }
            }
            // xi in [0, 1]
            let m = a_in2.nrows();
            a_in2 = a_in2.insert_rows(m, 2, 0.0);
            b_in2 = b_in2.insert_rows(m, 2, 0.0);
            a_in2[(m, n)] = 1.0;
            a_in2[(m + 1, n)] = -1.0;
            b_in2[m + 1] = -1.0;
            let mut a_eq2 = DMatrix::zeros(me, n + 1);
            a_eq2.view_mut((0, 0), (me, n)).copy_from(&je);
            for r in 0..me {
                a_eq2[(r, n)] = -ce[r];
            }
            let mut h2 = DMatrix::zeros(n + 1, n + 1);
            h2.view_mut((0, 0), (n, n)).copy_from(&hess);
            let penalty = 1e4 * (1.0 + g.amax()).max(rho);
            h2[(n, n)] = penalty;
            let mut g2 = DVector::zeros(n + 1);
            g2.rows_mut(0, n).copy_from(&g);
            g2[n] = -penalty;
            qp = solve_qp(&h2, &g2, &a_eq2, &(-&ce), &a_in2, &b_in2).map(|s| QpSolution {
                d: s.d.rows(0, n).into_owned(),
                eq_multipliers: s.eq_multipliers,
                ineq_multipliers: s.ineq_multipliers.rows(0, rows.len()).into_owned(),
            });
        }
        let Some(qp) = qp else { break };
        let d = qp.d.clone();
        let lam_general = qp.ineq_multipliers.rows(0, n_general).into_owned();
        let mu = qp.eq_multipliers.clone();

        let viol = violation(&e);
        if d.amax() < config.step_tolerance && viol <= config.feasibility_tolerance {
            converged = true;
            break;
        }

        let mult_max = mu.amax().max(lam_general.amax());
        if !elastic {
            rho = rho.max(1.1 * mult_max + 1e-3);
        }
        let merit = |ev: &Evaluation| ev.objective + rho * l1_violation(ev);
        let phi0 = merit(&e);
        let slope = g.dot(&d) - rho * l1_violation(&e);

        let accept = |trial: &DVector<f64>, alpha: f64| -> Option<Evaluation> {
            let et = sp.eval(trial)?;
            let phi = merit(&et);
            let ok = if slope < 0.0 {
                phi <= phi0 + 1e-4 * alpha * slope
            } else {
                phi < phi0
            };
            ok.then_some(et)
        };
        let clamp =
            |t: DVector<f64>| DVector::from_iterator(n, (0..n).map(|j| t[j].clamp(lo[j], hi[j])));

        let mut next = None;
        let full = clamp(&z + &d);
        if let Some(et) = accept(&full, 1.0) {
            next = Some((full, et));
        } else if let Some(et_full) = sp.eval(&full) {
            // second-order correction against constraint curvature
            if let Some(dc) = second_order_correction(&je, &ji, &et_full, &ci, &lam_general) {
                let corrected = clamp(&z + &d + dc);
                if let Some(et) = accept(&corrected, 1.0) {
                    next = Some((corrected, et));
                }
            }
        }
        if next.is_none() {
            let mut alpha = 0.5;
            for _ in 0..40 {
                let trial = clamp(&z + alpha * &d);
                if let Some(et) = accept(&trial, alpha) {
                    next = Some((trial, et));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((z_new, e_new)) = next else {
            if resets < 2 && viol > config.feasibility_tolerance || resets < 1 {
                resets += 1;
                hess = DMatrix::identity(n, n);
                continue;
            }
            converged =
                viol <= config.feasibility_tolerance && d.amax() < 1e3 * config.step_tolerance;
            break;
        };

        let grad_lag = |g: &DVector<f64>, je: &DMatrix<f64>, ji: &DMatrix<f64>| {
            let mut gl = g.clone();
            if mu.len() == je.nrows() && je.nrows() > 0 {
                gl -= je.transpose() * &mu;
            }
            if lam_general.len() == ji.nrows() && ji.nrows() > 0 {
                gl -= ji.transpose() * &lam_general;
            }
            gl
        };
        let new_derivs = sp.derivatives(&z_new, &e_new, config.fd_step, &lo, &hi);
        if let Some((g1, je1, ji1)) = &new_derivs {
            let s = &z_new - &z;
            let y = grad_lag(g1, je1, ji1) - grad_lag(&g, &je, &ji);
            let bs = &hess * &s;
            let sbs = s.dot(&bs);
            let sy = s.dot(&y);
            if sbs > 1e-16 {
                let y = if sy < 0.2 * sbs {
                    let theta = 0.8 * sbs / (sbs - sy);
                    theta * y + (1.0 - theta) * &bs
                } else {
                    y
                };
                let sy = s.dot(&y);
                if sy > 1e-16 {
                    hess = &hess - (&bs * bs.transpose()) / sbs + (&y * y.transpose()) / sy;
                    hess = (&hess + hess.transpose()) * 0.5;
                }
            }
        }
        let moved = (&z_new - &z).amax();
        z = z_new;
        e = e_new;
        derivs = new_derivs;
        if moved < config.step_tolerance && violation(&e) <= config.feasibility_tolerance {
            converged = true;
            break;
        }
    }
    let violation = violation(&e);
    Some(SqpOutcome {
        x: sp.unscale(&z),
        evaluation: e,
        violation,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Closure<F: Fn(&[f64]) -> Option<Evaluation>> {
        n: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        f: F,
    }

    impl<F: Fn(&[f64]) -> Option<Evaluation>> Problem for Closure<F> {
        fn dimension(&self) -> usize {
            self.n
        }
        fn lower(&self) -> Vec<f64> {
            self.lo.clone()
        }
        fn upper(&self) -> Vec<f64> {
            self.hi.clone()
        }
        fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
            (self.f)(x)
        }
    }

    #[test]
    fn nnls_matches_known_solution() {
        // unconstrained optimum (1, -1) -> constrained (0.5, 0)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[0.0, -1.0]);
        let x = nnls(&a, &b);
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-12);
        let b = DVector::from_column_slice(&[2.0, 1.0]);
        let x = nnls(&a, &b);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ldp_projection_onto_halfspace() {
        // min |w| s.t. w1 + w2 >= 2 -> (1, 1)
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = DVector::from_column_slice(&[2.0]);
        let (w, lam) = ldp(&e, &f).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lam[0], 1.0, epsilon = 1e-10);
        // w1 >= 1 and -w1 >= 0 is inconsistent
        let e = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let f = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(ldp(&e, &f).is_none());
    }

    #[test]
    fn qp_with_equality_and_inequality() {
        // min 1/2 |d|^2 - d1  s.t. d1 + d2 = 1, d2 >= 0.4
        let b = DMatrix::identity(2, 2);
        let g = DVector::from_column_slice(&[-1.0, 0.0]);
        let a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b_eq = DVector::from_column_slice(&[1.0]);
        let a_in = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b_in = DVector::from_column_slice(&[0.4]);
        let s = solve_qp(&b, &g, &a_eq, &b_eq, &a_in, &b_in).unwrap();
        assert_abs_diff_eq!(s.d[0], 0.6, epsilon = 1e-10);
        assert_abs_diff_eq!(s.d[1], 0.4, epsilon = 1e-10);
    }

    #[test]
    fn rosenbrock_on_disk() {
        // known optimum of Rosenbrock restricted to x^2 + y^2 <= 2 is (1, 1)
        let p = Closure {
            n: 2,
            lo: vec![-5.0; 2],
            hi: vec![5.0; 2],
            f: |x: &[f64]| {
                Some(Evaluation {
                    objective: (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
                    equalities: vec![],
                    inequalities: vec![2.0 - x[0] * x[0] - x[1] * x[1]],
                })
            },
        };
        let out = minimize(&p, &[-1.2, 1.0], &SqpConfig::default()).unwrap();
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn equality_constrained_circle() {
        // min x + y on x^2 + y^2 = 2 -> (-1, -1)
        let p = Closure {
            n: 2,
            lo: vec![f64::NEG_INFINITY; 2],
            hi: vec![f64::INFINITY; 2],
            f: |x: &[f64]| {
                Some(Evaluation {
                    objective: x[0] + x[1],
                    equalities: vec![x[0] * x[0] + x[1] * x[1] - 2.0],
                    inequalities: vec![],
                })
            },
        };
        let out = minimize(&p, &[0.5, -1.5], &SqpConfig::default()).unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], -1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(out.x[1], -1.0, epsilon = 1e-5);
    }

    #[test]
    fn active_bound() {
        // min (x - 3)^2 on [0, 2] -> 2
        let p = Closure {
            n: 1,
            lo: vec![0.0],
            hi: vec![2.0],
            f: |x: &[f64]| {
                Some(Evaluation {
                    objective: (x[0] - 3.0).powi(2),
                    equalities: vec![],
                    inequalities: vec![],
                })
            },
        };
        let out = minimize(&p, &[0.1], &SqpConfig::default()).unwrap();
        assert_abs_diff_eq!(out.x[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_start_recovers() {
        // min x^2 + y^2 s.t. x + y >= 4, x - y = 0, from a point violating both
        let p = Closure {
            n: 2,
            lo: vec![-10.0; 2],
            hi: vec![10.0; 2],
            f: |x: &[f64]| {
                Some(Evaluation {
                    objective: x[0] * x[0] + x[1] * x[1],
                    equalities: vec![x[0] - x[1]],
                    inequalities: vec![x[0] + x[1] - 4.0],
                })
            },
        };
        let out = minimize(&p, &[-3.0, 1.0], &SqpConfig::default()).unwrap();
        assert!(out.is_feasible(1e-7));
        assert_abs_diff_eq!(out.x[0], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(out.x[1], 2.0, epsilon = 1e-5);
    }
}
