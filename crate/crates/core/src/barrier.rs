//! Log-barrier interior-point method for
//!
//! ```text
//!   maximize  sum_{i in L} log z_i
//!   s.t.      a_j . z <= b_j      for every row j
//! ```
//!
//! A primal barrier phase (damped Newton on
//! `-t sum log z_i - sum log(b_j - a_j . z)`, `t` growing geometrically)
//! brings the iterate close to the central path; a primal-dual Newton phase
//! then drives stationarity and complementarity below the tolerance with the
//! row duals carried as independent variables. Recovering duals as
//! `1 / (t * slack)` alone loses precision once slacks approach round-off.

use nalgebra::{DMatrix, DVector};

/// One sparse inequality row `coeffs . z <= rhs`.
#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LogProgram {
    pub n: usize,
    /// Variables carrying a `log` term in the objective.
    pub log_vars: Vec<usize>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub z: Vec<f64>,
    pub duals: Vec<f64>,
    pub converged: bool,
    pub newton_steps: usize,
}

const GROWTH: f64 = 12.0;
const NEWTON_TOL: f64 = 1e-11;
const STAGE_STEPS: usize = 60;
/// Barrier parameter at which the primal-dual phase takes over.
const HANDOFF_T: f64 = 1e6;

impl LogProgram {
    fn slacks(&self, z: &[f64], out: &mut Vec<f64>) -> bool {
        out.clear();
        for r in &self.rows {
            let s = r.rhs - r.coeffs.iter().map(|&(i, a)| a * z[i]).sum::<f64>();
            if !(s > 0.0) {
                return false;
            }
            out.push(s);
        }
        self.log_vars.iter().all(|&i| z[i] > 0.0)
    }

    fn merit(&self, t: f64, z: &[f64], slack: &[f64]) -> f64 {
        -t * self.log_vars.iter().map(|&i| z[i].ln()).sum::<f64>() - slack.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// Directional derivative of the merit along `dz` at `z`.
    fn slope(&self, t: f64, z: &[f64], slack: &[f64], dz: &DVector<f64>) -> f64 {
        let mut d = -t * self.log_vars.iter().map(|&i| dz[i] / z[i]).sum::<f64>();
        for (r, &s) in self.rows.iter().zip(slack) {
            d += r.coeffs.iter().map(|&(i, a)| a * dz[i]).sum::<f64>() / s;
        }
        d
    }

    /// Solves from a strictly feasible `z0`.
    pub fn solve(&self, z0: Vec<f64>, tolerance: f64, max_newton: usize) -> BarrierOutcome {
        let n = self.n;
        let mut z = z0;
        let mut slack = Vec::with_capacity(self.rows.len());
        assert!(self.slacks(&z, &mut slack), "barrier start must be strictly feasible");

        let mut t = 1.0;
        let target_t = HANDOFF_T.max(1.0 / tolerance.sqrt()).min(1.0 / tolerance);
        let mut steps = 0;
        let mut converged = false;
        let mut grad = DVector::<f64>::zeros(n);
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut trial = vec![0.0; n];
        let mut trial_slack = Vec::with_capacity(self.rows.len());

        'outer: loop {
            for _ in 0..STAGE_STEPS {
                if steps >= max_newton {
                    break 'outer;
                }
                steps += 1;
                grad.fill(0.0);
                hess.fill(0.0);
                for &i in &self.log_vars {
                    grad[i] -= t / z[i];
                    hess[(i, i)] += t / (z[i] * z[i]);
                }
                for (r, &s) in self.rows.iter().zip(&slack) {
                    let inv = 1.0 / s;
                    let inv2 = inv * inv;
                    for &(i, a) in &r.coeffs {
                        grad[i] += a * inv;
                        for &(k, c) in &r.coeffs {
                            hess[(i, k)] += a * c * inv2;
                        }
                    }
                }
                let Some(dz) = newton_direction(&hess, &grad) else { break 'outer };
                let decrement = -grad.dot(&dz);
                if decrement / 2.0 <= NEWTON_TOL {
                    break;
                }
                let f0 = self.merit(t, &z, &slack);
                let mut alpha = 1.0;
                let mut moved = false;
                let mut stalled = false;
                while alpha > 1e-14 {
                    for i in 0..n {
                        trial[i] = z[i] + alpha * dz[i];
                    }
                    if self.slacks(&trial, &mut trial_slack) {
                        let f1 = self.merit(t, &trial, &trial_slack);
                        let drop = f0 - f1;
                        // once the merit change is below round-off, fall back to
                        // the slope along dz at the trial point
                        let accept = if drop.abs() > 1e-12 * f0.abs().max(1.0) {
                            drop >= 0.25 * alpha * decrement
                        } else {
                            self.slope(t, &trial, &trial_slack, &dz) <= 0.5 * decrement
                        };
                        if accept {
                            stalled = alpha * decrement < 1e-15 * f0.abs().max(1.0) && drop <= 0.0;
                            std::mem::swap(&mut z, &mut trial);
                            std::mem::swap(&mut slack, &mut trial_slack);
                            moved = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !moved || stalled {
                    // no further progress is representable at this t
                    break;
                }
            }
            if t >= target_t {
                converged = true;
                break;
            }
            t = (t * GROWTH).min(target_t);
        }
        let mut duals: Vec<f64> = slack.iter().map(|s| 1.0 / (t * s)).collect();
        if converged {
            let budget = max_newton.saturating_sub(steps);
            let (ok, used) = self.primal_dual(&mut z, &mut duals, tolerance, budget);
            converged = ok;
            steps += used;
        }
        BarrierOutcome { z, duals, converged, newton_steps: steps }
    }

    /// Optimality residual: stationarity (relative for `log` variables,
    /// absolute otherwise) and the largest complementarity product.
    pub fn residual(&self, z: &[f64], duals: &[f64]) -> f64 {
        let mut aty = vec![0.0; self.n];
        let mut res: f64 = 0.0;
        for (r, &y) in self.rows.iter().zip(duals) {
            let s = r.rhs - r.coeffs.iter().map(|&(i, a)| a * z[i]).sum::<f64>();
            res = res.max(y * s.max(0.0)).max(-y);
            for &(i, a) in &r.coeffs {
                aty[i] += a * y;
            }
        }
        let mut is_log = vec![false; self.n];
        for &i in &self.log_vars {
            is_log[i] = true;
            res = res.max((1.0 - z[i] * aty[i]).abs());
        }
        for i in (0..self.n).filter(|&i| !is_log[i]) {
            res = res.max(aty[i].abs());
        }
        res
    }

    /// Newton steps on the perturbed optimality conditions
    /// `g(z) = A^T y`, `y_j s_j = mu` with `mu` shrinking toward zero.
    fn primal_dual(&self, z: &mut Vec<f64>, y: &mut Vec<f64>, tolerance: f64, max_steps: usize) -> (bool, usize) {
        let n = self.n;
        let m = self.rows.len();
        let mut is_log = vec![false; n];
        for &i in &self.log_vars {
            is_log[i] = true;
        }
        let mut slack = Vec::with_capacity(m);
        let mut trial = vec![0.0; n];
        let mut trial_slack = Vec::with_capacity(m);
        let mut steps = 0;
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        loop {
            if !self.slacks(z, &mut slack) {
                return (false, steps);
            }
            if self.residual(z, y) <= tolerance {
                return (true, steps);
            }
            if steps >= max_steps {
                return (false, steps);
            }
            steps += 1;
            let gap = y.iter().zip(&slack).map(|(a, b)| a * b).sum::<f64>() / m.max(1) as f64;
            let mu = (0.1 * gap).max(0.01 * tolerance);
            // dual residual r_d = g - A^T y, complementarity r_c = y s - mu
            let mut rd = vec![0.0; n];
            for &i in &self.log_vars {
                rd[i] = 1.0 / z[i];
            }
            for (r, &yj) in self.rows.iter().zip(y.iter()) {
                for &(i, a) in &r.coeffs {
                    rd[i] -= a * yj;
                }
            }
            hess.fill(0.0);
            for i in 0..n {
                rhs[i] = rd[i];
                if is_log[i] {
                    hess[(i, i)] += 1.0 / (z[i] * z[i]);
                }
            }
            for (j, r) in self.rows.iter().enumerate() {
                let d = y[j] / slack[j];
                let rc_over_s = (y[j] * slack[j] - mu) / slack[j];
                for &(i, a) in &r.coeffs {
                    rhs[i] += a * rc_over_s;
                    for &(k, c) in &r.coeffs {
                        hess[(i, k)] += a * c * d;
                    }
                }
            }
            // (A^T D A + diag(1/z^2)) dz = r_d + A^T S^-1 r_c
            let Some(dz) = newton_direction(&hess, &(-&rhs)) else { return (false, steps) };
            let dy: Vec<f64> = self
                .rows
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let adz: f64 = r.coeffs.iter().map(|&(i, a)| a * dz[i]).sum();
                    (mu - y[j] * slack[j] + y[j] * adz) / slack[j]
                })
                .collect();
            // fraction to the boundary
            let mut alpha: f64 = 1.0;
            for (j, r) in self.rows.iter().enumerate() {
                let ds: f64 = -r.coeffs.iter().map(|&(i, a)| a * dz[i]).sum::<f64>();
                if ds < 0.0 {
                    alpha = alpha.min(-0.99 * slack[j] / ds);
                }
                if dy[j] < 0.0 {
                    alpha = alpha.min(-0.99 * y[j] / dy[j]);
                }
            }
            for &i in &self.log_vars {
                if dz[i] < 0.0 {
                    alpha = alpha.min(-0.99 * z[i] / dz[i]);
                }
            }
            loop {
                for i in 0..n {
                    trial[i] = z[i] + alpha * dz[i];
                }
                if self.slacks(&trial, &mut trial_slack) || alpha < 1e-14 {
                    break;
                }
                alpha *= 0.5;
            }
            if alpha < 1e-14 {
                return (false, steps);
            }
            z.copy_from_slice(&trial);
            for j in 0..m {
                y[j] += alpha * dy[j];
            }
        }
    }
}

/// Solves `H dz = -g` with Jacobi scaling; falls back to a small ridge if the
/// scaled matrix is not numerically positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| 1.0 / hess[(i, i)].max(1e-300).sqrt()));
    let mut scaled = hess.clone();
    for i in 0..n {
        for k in 0..n {
            scaled[(i, k)] *= d[i] * d[k];
        }
    }
    let rhs = -grad.component_mul(&d);
    for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&rhs);
            let dz = y.component_mul(&d);
            if dz.iter().all(|v| v.is_finite()) {
                return Some(dz);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_a_unit_budget_evenly() {
        // max log z0 + log z1, z0 + z1 <= 1
        let p = LogProgram {
            n: 2,
            log_vars: vec![0, 1],
            rows: vec![Row { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 }],
        };
        let out = p.solve(vec![0.1, 0.2], 1e-10, 500);
        assert!(out.converged);
        assert!((out.z[0] - 0.5).abs() < 1e-8 && (out.z[1] - 0.5).abs() < 1e-8);
        // dual of the budget equals 1/z at the optimum
        assert!((out.duals[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn weighted_capacity_split() {
        // max log r0 + log r1 with r0 <= 3 s0, r1 <= s1, s0 + s1 <= 1, s >= 0
        // optimum: s = 1/2 each, r0 = 1.5, r1 = 0.5
        let rows = vec![
            Row { coeffs: vec![(2, 1.0), (0, -3.0)], rhs: 0.0 },
            Row { coeffs: vec![(3, 1.0), (1, -1.0)], rhs: 0.0 },
            Row { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 },
            Row { coeffs: vec![(0, -1.0)], rhs: 0.0 },
            Row { coeffs: vec![(1, -1.0)], rhs: 0.0 },
        ];
        let p = LogProgram { n: 4, log_vars: vec![2, 3], rows };
        let out = p.solve(vec![0.3, 0.3, 0.1, 0.1], 1e-10, 500);
        assert!(out.converged);
        assert!((out.z[2] - 1.5).abs() < 1e-7, "{:?}", out.z);
        assert!((out.z[3] - 0.5).abs() < 1e-7);
    }
}
