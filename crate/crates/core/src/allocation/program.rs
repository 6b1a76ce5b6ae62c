//! Small dense convex programs and a primal log-barrier solver.
//!
//! A [`Program`] maximizes a separable concave objective subject to linear
//! inequalities `a.x <= b` and epigraph constraints `x[v] <= f(x)` with `f`
//! separable concave. Centering uses damped Newton steps on the barrier
//! function; the barrier weight grows by `mu` until the duality-gap
//! estimate `constraints / t` drops below the tolerance.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `linear * x + power * x^exponent` on one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Term {
    pub var: usize,
    pub linear: f64,
    pub power: f64,
}

/// `constant + sum_i term_i`; concave when every `power >= 0` and
/// `0 < exponent <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Separable {
    pub constant: f64,
    pub exponent: f64,
    pub terms: Vec<Term>,
}

impl Separable {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| {
                    let v = x[t.var];
                    let p = if t.power != 0.0 { t.power * v.max(0.0).powf(self.exponent) } else { 0.0 };
                    t.linear * v + p
                })
                .sum::<f64>()
    }

    fn derivative(&self, t: &Term, v: f64) -> f64 {
        let k = self.exponent;
        let p = if t.power != 0.0 {
            if k == 1.0 {
                t.power
            } else {
                t.power * k * v.powf(k - 1.0)
            }
        } else {
            0.0
        };
        t.linear + p
    }

    fn second_derivative(&self, t: &Term, v: f64) -> f64 {
        let k = self.exponent;
        if t.power != 0.0 && k != 1.0 {
            t.power * k * (k - 1.0) * v.powf(k - 2.0)
        } else {
            0.0
        }
    }

    pub fn gradient_into(&self, x: &[f64], scale: f64, g: &mut [f64]) {
        for t in &self.terms {
            g[t.var] += scale * self.derivative(t, x[t.var]);
        }
    }

    fn hessian_diag_into(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for t in &self.terms {
            h[(t.var, t.var)] += scale * self.second_derivative(t, x[t.var]);
        }
    }
}

/// `coeffs . x <= rhs`
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Linear {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.rhs - self.coeffs.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }
}

/// `x[var] <= f(x)`
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Epigraph {
    pub var: usize,
    pub f: Separable,
}

impl Epigraph {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.f.value(x) - x[self.var]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Program {
    pub vars: usize,
    pub objective: Separable,
    pub linear: Vec<Linear>,
    pub epigraph: Vec<Epigraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierOptions {
    /// Barrier weight growth factor per outer iteration.
    pub mu: f64,
    /// Stop once `constraints / t` is below this.
    pub gap_tolerance: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tolerance: f64,
    pub max_newton_steps: usize,
    pub max_outer_iterations: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            mu: 10.0,
            gap_tolerance: 1e-8,
            newton_tolerance: 1e-12,
            max_newton_steps: 200,
            max_outer_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

/// Barrier function pieces shared by phase I and phase II.
trait Barrier {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    /// `t * (-objective) - sum log(slack)`, or `None` outside the domain.
    fn value(&self, x: &[f64], t: f64) -> Option<f64>;
    fn grad_hess(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>);
    fn strictly_feasible(&self, x: &[f64]) -> bool;
}

fn add_linear_barrier(rows: &[Linear], x: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>, shift: Option<usize>) {
    for row in rows {
        let mut s = row.slack(x);
        if let Some(sv) = shift {
            s += x[sv];
        }
        let inv = 1.0 / s;
        for &(i, a) in &row.coeffs {
            g[i] += a * inv;
        }
        if let Some(sv) = shift {
            g[sv] -= inv;
        }
        let inv2 = inv * inv;
        for &(i, a) in &row.coeffs {
            for &(j, b) in &row.coeffs {
                h[(i, j)] += a * b * inv2;
            }
            if let Some(sv) = shift {
                h[(i, sv)] -= a * inv2;
                h[(sv, i)] -= a * inv2;
            }
        }
        if let Some(sv) = shift {
            h[(sv, sv)] += inv2;
        }
    }
}

impl Barrier for Program {
    fn dim(&self) -> usize {
        self.vars
    }

    fn count(&self) -> usize {
        self.linear.len() + self.epigraph.len()
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = -t * self.objective.value(x);
        for row in &self.linear {
            let s = row.slack(x);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        for e in &self.epigraph {
            let s = e.slack(x);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        v.is_finite().then_some(v)
    }

    fn grad_hess(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.vars;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        self.objective.gradient_into(x, -t, g.as_mut_slice());
        self.objective.hessian_diag_into(x, -t, &mut h);
        add_linear_barrier(&self.linear, x, &mut g, &mut h, None);
        // -log(f(x) - x_v): gradient -(grad f - e_v)/s, Hessian
        // (grad f - e_v)(grad f - e_v)^T / s^2 - hess f / s
        for e in &self.epigraph {
            let s = e.slack(x);
            let mut d = vec![0.0; n];
            e.f.gradient_into(x, 1.0, &mut d);
            d[e.var] -= 1.0;
            let nz: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0).collect();
            for &i in &nz {
                g[i] -= d[i] / s;
                for &j in &nz {
                    h[(i, j)] += d[i] * d[j] / (s * s);
                }
            }
            e.f.hessian_diag_into(x, -1.0 / s, &mut h);
        }
        (g, h)
    }

    fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.linear.iter().all(|r| r.slack(x) > 0.0) && self.epigraph.iter().all(|e| e.slack(x) > 0.0)
    }
}

/// Phase I: minimize `s` subject to `a.x - s <= b` over the linear rows.
/// The extra variable `s` is stored last.
struct PhaseOne<'a> {
    rows: &'a [Linear],
    vars: usize,
}

impl PhaseOne<'_> {
    fn shift_index(&self) -> usize {
        self.vars
    }
}

impl Barrier for PhaseOne<'_> {
    fn dim(&self) -> usize {
        self.vars + 1
    }

    fn count(&self) -> usize {
        self.rows.len()
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let sv = x[self.shift_index()];
        let mut v = t * sv;
        for row in self.rows {
            let s = row.slack(x) + sv;
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        v.is_finite().then_some(v)
    }

    fn grad_hess(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        g[self.shift_index()] += t;
        add_linear_barrier(self.rows, x, &mut g, &mut h, Some(self.shift_index()));
        (g, h)
    }

    fn strictly_feasible(&self, x: &[f64]) -> bool {
        let sv = x[self.shift_index()];
        self.rows.iter().all(|r| r.slack(x) + sv > 0.0)
    }
}

fn newton_direction(g: &DVector<f64>, h: DMatrix<f64>) -> Option<DVector<f64>> {
    let n = g.len();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut m = h.clone();
        if ridge > 0.0 {
            for i in 0..n {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&(-g));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    None
}

/// Newton centering at fixed `t`. Returns the number of steps taken.
fn center<B: Barrier>(b: &B, x: &mut Vec<f64>, t: f64, opts: &BarrierOptions, stop_early: &dyn Fn(&[f64]) -> bool) -> Result<usize> {
    const ARMIJO: f64 = 0.01;
    const SHRINK: f64 = 0.5;
    let mut steps = 0;
    while steps < opts.max_newton_steps {
        if stop_early(x) {
            return Ok(steps);
        }
        let (g, h) = b.grad_hess(x, t);
        let Some(dx) = newton_direction(&g, h) else {
            return Err(Error::Numerical("Newton system is singular".into()));
        };
        let decrement = -g.dot(&dx);
        if decrement / 2.0 <= opts.newton_tolerance {
            return Ok(steps);
        }
        let f0 = b.value(x, t).ok_or_else(|| Error::Numerical("iterate left the domain".into()))?;
        let mut step = 1.0;
        let mut trial = x.clone();
        let mut accepted = false;
        while step > 1e-14 {
            for (i, v) in trial.iter_mut().enumerate() {
                *v = x[i] + step * dx[i];
            }
            if b.strictly_feasible(&trial) {
                if let Some(f1) = b.value(&trial, t) {
                    // Near the center the decrease is below rounding of f; a
                    // feasible full step is then the exact Newton step.
                    let tiny = decrement < 1e-6;
                    if f1 <= f0 - ARMIJO * step * decrement || tiny {
                        accepted = true;
                        break;
                    }
                }
            }
            step *= SHRINK;
        }
        steps += 1;
        if !accepted {
            // No representable decrease left along the Newton direction.
            return Ok(steps);
        }
        core::mem::swap(x, &mut trial);
    }
    Ok(steps)
}

/// Finds a strictly feasible point of the linear rows, or `None` when their
/// interior is empty (up to `margin`). Variables that appear in no row stay
/// at zero.
pub(crate) fn phase_one(rows: &[Linear], vars: usize, opts: &BarrierOptions) -> Result<Option<Vec<f64>>> {
    if vars == 0 || rows.is_empty() {
        return Ok(Some(vec![0.0; vars]));
    }
    const MARGIN: f64 = 1e-9;
    let mut used = vec![false; vars];
    for r in rows {
        for &(i, _) in &r.coeffs {
            used[i] = true;
        }
    }
    // compact to used variables so the Newton system stays nonsingular
    let map: Vec<Option<usize>> = {
        let mut k = 0;
        used.iter()
            .map(|&u| {
                u.then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect()
    };
    let inner = map.iter().flatten().count();
    let compact: Vec<Linear> = rows
        .iter()
        .map(|r| Linear {
            coeffs: r.coeffs.iter().map(|&(i, a)| (map[i].expect("used"), a)).collect(),
            rhs: r.rhs,
        })
        .collect();
    let p1 = PhaseOne { rows: &compact, vars: inner };
    let mut x = vec![0.0; inner + 1];
    let worst = compact.iter().map(|r| -r.slack(&x)).fold(f64::NEG_INFINITY, f64::max);
    x[inner] = worst.max(0.0) + 1.0;
    let feasible_enough = |x: &[f64]| x[inner] < -MARGIN;
    let m = p1.count() as f64;
    let mut t = 1.0;
    for _ in 0..opts.max_outer_iterations {
        center(&p1, &mut x, t, opts, &feasible_enough)?;
        if feasible_enough(&x) {
            let mut out = vec![0.0; vars];
            for (i, slot) in map.iter().enumerate() {
                if let Some(k) = slot {
                    out[i] = x[*k];
                }
            }
            return Ok(Some(out));
        }
        if m / t < 1e-10 {
            break;
        }
        t *= opts.mu;
    }
    Ok(None)
}

/// Phase II from a strictly feasible start.
pub(crate) fn solve_from(prog: &Program, mut x: Vec<f64>, opts: &BarrierOptions) -> Result<Solution> {
    if !prog.strictly_feasible(&x) {
        return Err(Error::Numerical("barrier start is not strictly feasible".into()));
    }
    let m = prog.count() as f64;
    if m == 0.0 || prog.vars == 0 {
        let objective = prog.objective.value(&x);
        return Ok(Solution { x, objective, newton_steps: 0 });
    }
    let never = |_: &[f64]| false;
    let mut t = 1.0;
    let mut newton_steps = 0;
    for _ in 0..opts.max_outer_iterations {
        newton_steps += center(prog, &mut x, t, opts, &never)?;
        if m / t < opts.gap_tolerance {
            let objective = prog.objective.value(&x);
            return Ok(Solution { x, objective, newton_steps });
        }
        t *= opts.mu;
    }
    Err(Error::Numerical("barrier method hit the outer iteration limit".into()))
}

/// First-order optimality residuals of a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Residuals {
    /// Largest constraint violation (0 when feasible).
    pub violation: f64,
    /// `||grad f - sum lambda_i grad g_i||_inf` at the best `lambda >= 0`.
    pub stationarity: f64,
    /// `max lambda_i * |slack_i|`.
    pub complementarity: f64,
}

/// Multipliers come from a non-negative least-squares fit of the
/// stationarity equation, augmented with `slack_i * lambda_i` rows so that
/// loose constraints cannot absorb the gradient.
pub(crate) fn kkt_residuals(prog: &Program, x: &[f64]) -> Residuals {
    let n = prog.vars;
    let mut grad = vec![0.0; n];
    prog.objective.gradient_into(x, 1.0, &mut grad);
    let mut columns: Vec<(Vec<f64>, f64)> = Vec::with_capacity(prog.count());
    for row in &prog.linear {
        let mut a = vec![0.0; n];
        for &(i, c) in &row.coeffs {
            a[i] += c;
        }
        columns.push((a, row.slack(x)));
    }
    for e in &prog.epigraph {
        let mut a = vec![0.0; n];
        e.f.gradient_into(x, -1.0, &mut a);
        a[e.var] += 1.0;
        columns.push((a, e.slack(x)));
    }
    let violation = columns.iter().map(|(_, s)| -s).fold(0.0, f64::max);
    let finite = grad.iter().chain(columns.iter().flat_map(|(a, _)| a)).all(|v| v.is_finite());
    if !finite {
        return Residuals { violation, stationarity: f64::INFINITY, complementarity: f64::INFINITY };
    }
    if n == 0 {
        return Residuals { violation, stationarity: 0.0, complementarity: 0.0 };
    }
    let m = columns.len();
    let mut a = DMatrix::zeros(n + m, m);
    let mut b = DVector::zeros(n + m);
    for i in 0..n {
        b[i] = grad[i];
    }
    for (k, (col, slack)) in columns.iter().enumerate() {
        for i in 0..n {
            a[(i, k)] = col[i];
        }
        a[(n + k, k)] = slack.abs();
    }
    let lambda = crate::allocation::nnls::nnls(&a, &b);
    let mut stationarity = 0.0f64;
    for i in 0..n {
        let fitted: f64 = (0..m).map(|k| columns[k].0[i] * lambda[k]).sum();
        stationarity = stationarity.max((grad[i] - fitted).abs());
    }
    let complementarity = (0..m).map(|k| lambda[k] * columns[k].1.abs()).fold(0.0, f64::max);
    Residuals { violation, stationarity, complementarity }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonneg(vars: usize) -> Vec<Linear> {
        (0..vars).map(|i| Linear { coeffs: vec![(i, -1.0)], rhs: 0.0 }).collect()
    }

    #[test]
    fn lp_on_simplex_picks_best_vertex() {
        // max x0 + 2 x1 s.t. x0 + x1 <= 1, x >= 0
        let mut rows = nonneg(2);
        rows.push(Linear { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 });
        let prog = Program {
            vars: 2,
            objective: Separable {
                constant: 0.0,
                exponent: 1.0,
                terms: vec![Term { var: 0, linear: 1.0, power: 0.0 }, Term { var: 1, linear: 2.0, power: 0.0 }],
            },
            linear: rows.clone(),
            epigraph: vec![],
        };
        let opts = BarrierOptions::default();
        let x0 = phase_one(&rows, 2, &opts).unwrap().unwrap();
        let sol = solve_from(&prog, x0, &opts).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-7);
        assert!(sol.x[0].abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn square_root_objective_splits_evenly() {
        let mut rows = nonneg(2);
        rows.push(Linear { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 });
        let prog = Program {
            vars: 2,
            objective: Separable {
                constant: 0.0,
                exponent: 0.5,
                terms: vec![Term { var: 0, linear: 0.0, power: 1.0 }, Term { var: 1, linear: 0.0, power: 1.0 }],
            },
            linear: rows.clone(),
            epigraph: vec![],
        };
        let opts = BarrierOptions::default();
        let x0 = phase_one(&rows, 2, &opts).unwrap().unwrap();
        let sol = solve_from(&prog, x0, &opts).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-7, "{:?}", sol.x);
        assert!((sol.objective - 2.0f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn phase_one_detects_empty_interior() {
        // x >= 0 and x <= 0
        let rows = vec![
            Linear { coeffs: vec![(0, -1.0)], rhs: 0.0 },
            Linear { coeffs: vec![(0, 1.0)], rhs: 0.0 },
        ];
        assert_eq!(phase_one(&rows, 1, &BarrierOptions::default()).unwrap(), None);
        let rows = vec![
            Linear { coeffs: vec![(0, -1.0)], rhs: -2.0 },
            Linear { coeffs: vec![(0, 1.0)], rhs: 1.0 },
        ];
        assert_eq!(phase_one(&rows, 1, &BarrierOptions::default()).unwrap(), None);
    }
}
