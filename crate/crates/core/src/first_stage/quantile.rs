//! Linear quantile regression over a grid of quantile indices.
//!
//! Each fit solves the dual of the check-loss LP,
//!
//! ```text
//! max y'd  s.t.  X'd = 0,  tau - 1 <= d_i <= tau,
//! ```
//!
//! with a bounded-variable dual simplex. The basis is a set of `d_q` rows that
//! the fitted hyperplane interpolates; reduced costs are the residuals. Moving
//! from one `tau` to the next only shifts the bounds of `d`, so the previous
//! basis stays optimal in the reduced-cost sense and warm-starts the next fit.

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::DesignMatrices;
use crate::linalg::{self, dot, Lu, Matrix};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

/// Uniform grid on `[eps_small, 1 - eps_small]` with spacing at most `step`
/// and exact endpoints.
pub fn uniform_tau_grid(eps_small: f64, step: f64) -> Vec<f64> {
    let lo = eps_small;
    let hi = 1.0 - eps_small;
    let k = (((hi - lo) / step) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=k).map(|j| lo + (hi - lo) * j as f64 / k as f64).collect();
    grid[k] = hi;
    grid
}

/// Check loss `rho_tau(s) = s (tau - 1{s < 0})`.
pub fn check_loss(s: f64, tau: f64) -> f64 {
    if s < 0.0 {
        s * (tau - 1.0)
    } else {
        s * tau
    }
}

/// Position of `u` on a grid: `gamma(u) = (1 - w) gamma[lo] + w gamma[lo + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lo: usize,
    pub w: f64,
}

pub fn locate(grid: &[f64], u: f64) -> GridPoint {
    let last = grid.len() - 1;
    if last == 0 || u <= grid[0] {
        return GridPoint { lo: 0, w: 0.0 };
    }
    if u >= grid[last] {
        return GridPoint { lo: last - 1, w: 1.0 };
    }
    // first index with grid[j] > u
    let j = grid.partition_point(|&g| g <= u);
    let lo = j - 1;
    let w = (u - grid[lo]) / (grid[lo + 1] - grid[lo]);
    GridPoint { lo, w }
}

/// Interpolates the rows of a grid-indexed matrix.
pub fn interpolate_row(m: &Matrix, gp: GridPoint, out: &mut [f64]) {
    let a = m.row(gp.lo);
    if gp.w == 0.0 {
        out.copy_from_slice(a);
        return;
    }
    let b = m.row(gp.lo + 1);
    for j in 0..out.len() {
        out[j] = (1.0 - gp.w) * a[j] + gp.w * b[j];
    }
}

/// Fitted coefficient process `tau -> gamma_hat(tau)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProcessFit {
    pub tau_grid: Vec<f64>,
    /// Row `j` is `gamma_hat(tau_grid[j])`.
    pub gamma: Matrix,
    pub objective: Vec<f64>,
}

impl QuantileProcessFit {
    pub fn dq(&self) -> usize {
        self.gamma.cols()
    }

    pub fn lo(&self) -> f64 {
        self.tau_grid[0]
    }

    pub fn hi(&self) -> f64 {
        self.tau_grid[self.tau_grid.len() - 1]
    }

    pub fn locate(&self, u: f64) -> GridPoint {
        locate(&self.tau_grid, u)
    }

    pub fn eval_gamma_into(&self, u: f64, out: &mut [f64]) {
        interpolate_row(&self.gamma, self.locate(u), out);
    }

    /// `gamma_hat(u)`, with `u` clamped to the grid range and linear
    /// interpolation in between grid points.
    pub fn eval_gamma(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dq()];
        self.eval_gamma_into(u, &mut out);
        out
    }

    /// Central difference `(gamma(tau + eta) - gamma(tau - eta)) / (2 eta)`.
    pub fn gamma_derivative(&self, tau: f64, eta: f64) -> Result<Vec<f64>> {
        let slack = 1e-12;
        if !(eta > 0.0) || tau - eta < self.lo() - slack || tau + eta > self.hi() + slack {
            return Err(Error::StepOutOfRange { tau, eta, lo: self.lo(), hi: self.hi() });
        }
        Ok(self.gamma_derivative_unchecked(tau, eta))
    }

    pub(crate) fn gamma_derivative_unchecked(&self, tau: f64, eta: f64) -> Vec<f64> {
        let a = self.eval_gamma(tau + eta);
        let b = self.eval_gamma(tau - eta);
        a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * eta)).collect()
    }
}

pub fn fit_quantile_process(design: &DesignMatrices, y: &[f64], tau_grid: &[f64]) -> Result<QuantileProcessFit> {
    fit_quantile_matrix(&design.qmat, y, tau_grid)
}

pub fn fit_quantile_matrix(x: &Matrix, y: &[f64], tau_grid: &[f64]) -> Result<QuantileProcessFit> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidTuning("empty quantile grid".into()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTuning("quantile grid must be strictly increasing inside (0, 1)".into()));
    }
    let mut solver = DualSimplex::new(x, y)?;
    let mut gamma = Matrix::zeros(tau_grid.len(), x.cols());
    let mut objective = Vec::with_capacity(tau_grid.len());
    for (j, &tau) in tau_grid.iter().enumerate() {
        solver.solve(tau)?;
        gamma.row_mut(j).copy_from_slice(&solver.coef);
        objective.push(solver.objective(tau));
    }
    Ok(QuantileProcessFit { tau_grid: tau_grid.to_vec(), gamma, objective })
}

/// Single-quantile fit; returns the coefficients and the check-loss value.
pub fn fit_quantile(x: &Matrix, y: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
    let fit = fit_quantile_matrix(x, y, &[tau])?;
    Ok((fit.gamma.row(0).to_vec(), fit.objective[0]))
}

struct Breakpoint {
    t: f64,
    row: usize,
    slope: f64,
}

struct DualSimplex<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Nonbasic bound state: `true` means `d_i = tau`, `false` means `tau - 1`.
    upper: Vec<bool>,
    lu: Lu,
    coef: Vec<f64>,
    resid: Vec<f64>,
    scale: f64,
    cap: usize,
}

impl<'a> DualSimplex<'a> {
    fn new(x: &'a Matrix, y: &'a [f64]) -> Result<Self> {
        let n = x.rows();
        let p = x.cols();
        if y.len() != n {
            return Err(Error::DegenerateDesign("outcome length differs from design rows".into()));
        }
        if n < p || !linalg::has_full_column_rank(x, crate::dataset::COLLINEARITY_TOL) {
            return Err(Error::DegenerateDesign("design is rank deficient".into()));
        }
        // Start from the rows closest to the least-squares fit.
        let ols = linalg::solve(&x.gram(), &x.tr_mul_vec(y))
            .ok_or_else(|| Error::DegenerateDesign("singular Gram matrix".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        let r_ols: Vec<f64> = (0..n).map(|i| (y[i] - dot(x.row(i), &ols)).abs()).collect();
        order.sort_by(|&a, &b| r_ols[a].total_cmp(&r_ols[b]).then(a.cmp(&b)));
        let basis = independent_rows(x, &order, p)
            .ok_or_else(|| Error::DegenerateDesign("no nonsingular row basis".into()))?;
        let mut is_basic = vec![false; n];
        for &i in &basis {
            is_basic[i] = true;
        }
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let lu = Lu::factor(&x.select_rows(&basis), 1e-13)
            .ok_or_else(|| Error::DegenerateDesign("singular row basis".into()))?;
        let mut s = Self {
            x,
            y,
            basis,
            is_basic,
            upper: vec![false; n],
            lu,
            coef: vec![0.0; p],
            resid: vec![0.0; n],
            scale,
            cap: 50 * n + 1000,
        };
        s.refresh()?;
        for i in 0..n {
            s.upper[i] = s.resid[i] > 0.0;
        }
        Ok(s)
    }

    fn refresh(&mut self) -> Result<()> {
        let xb = self.x.select_rows(&self.basis);
        self.lu = Lu::factor(&xb, 1e-13).ok_or_else(|| Error::DegenerateDesign("singular row basis".into()))?;
        let yb: Vec<f64> = self.basis.iter().map(|&i| self.y[i]).collect();
        self.coef = self.lu.solve(&yb);
        for i in 0..self.x.rows() {
            self.resid[i] = if self.is_basic[i] { 0.0 } else { self.y[i] - dot(self.x.row(i), &self.coef) };
        }
        Ok(())
    }

    fn bound(&self, i: usize, tau: f64) -> f64 {
        if self.upper[i] {
            tau
        } else {
            tau - 1.0
        }
    }

    /// `d_B` solving `X_B' d_B = -sum_N x_i d_i`.
    fn basic_duals(&self, tau: f64) -> Vec<f64> {
        let p = self.x.cols();
        let mut g = vec![0.0; p];
        for i in 0..self.x.rows() {
            if self.is_basic[i] {
                continue;
            }
            let d = self.bound(i, tau);
            for (gj, xj) in g.iter_mut().zip(self.x.row(i)) {
                *gj -= d * xj;
            }
        }
        self.lu.solve_transpose(&g)
    }

    /// Direction of the coefficients when basic row `k` leaves the basis.
    fn direction(&self, k: usize, to_upper: bool) -> Vec<f64> {
        let mut e = vec![0.0; self.x.cols()];
        e[k] = if to_upper { -1.0 } else { 1.0 };
        self.lu.solve(&e)
    }

    /// Rows whose residual would change sign against their bound state.
    fn breakpoints(&self, delta: &[f64]) -> Vec<Breakpoint> {
        let mut out = Vec::new();
        for i in 0..self.x.rows() {
            if self.is_basic[i] {
                continue;
            }
            let xi = self.x.row(i);
            let a = -dot(xi, delta);
            let tol = PIVOT_TOL * (1.0 + linalg::norm_inf(xi) * linalg::norm_inf(delta));
            let r = self.resid[i];
            if self.upper[i] && a < -tol {
                out.push(Breakpoint { t: (r / -a).max(0.0), row: i, slope: -a });
            } else if !self.upper[i] && a > tol {
                out.push(Breakpoint { t: (-r / a).max(0.0), row: i, slope: a });
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.row.cmp(&b.row)));
        out
    }

    fn pivot(&mut self, k: usize, to_upper: bool, entering: usize, flipped: &[usize]) -> Result<()> {
        for &i in flipped {
            self.upper[i] = !self.upper[i];
        }
        let leaving = self.basis[k];
        self.is_basic[leaving] = false;
        self.upper[leaving] = to_upper;
        self.basis[k] = entering;
        self.is_basic[entering] = true;
        self.refresh()
    }

    fn solve(&mut self, tau: f64) -> Result<()> {
        let mut iterations = 0;
        loop {
            let db = self.basic_duals(tau);
            let mut best: Option<(usize, bool, f64)> = None;
            for (k, &d) in db.iter().enumerate() {
                let (viol, up) = if d > tau { (d - tau, true) } else { (tau - 1.0 - d, false) };
                if viol > FEAS_TOL && best.is_none_or(|(_, _, v)| viol > v) {
                    best = Some((k, up, viol));
                }
            }
            let Some((k, to_upper, viol)) = best else { break };
            iterations += 1;
            if iterations > self.cap {
                return Err(Error::SolverIterationCap { tau, iterations });
            }
            let delta = self.direction(k, to_upper);
            let bps = self.breakpoints(&delta);
            let mut remaining = viol;
            let mut entering = None;
            let mut flipped = Vec::new();
            for bp in &bps {
                remaining -= bp.slope;
                if remaining <= 0.0 {
                    entering = Some(bp.row);
                    break;
                }
                flipped.push(bp.row);
            }
            let entering = match entering {
                Some(e) => e,
                // Round-off can leave a sliver of infeasibility after all
                // breakpoints; the last one still restores feasibility.
                None if remaining <= 1e-7 && !bps.is_empty() => {
                    flipped.pop();
                    bps[bps.len() - 1].row
                }
                None => return Err(Error::DegenerateDesign("unbounded dual ratio test".into())),
            };
            self.pivot(k, to_upper, entering, &flipped)?;
        }
        self.lex_polish(tau)
    }

    /// Moves along objective-neutral edges towards lexicographically smaller
    /// coefficient vectors, so that flat optima resolve deterministically.
    fn lex_polish(&mut self, tau: f64) -> Result<()> {
        let p = self.x.cols();
        for _ in 0..self.cap {
            let db = self.basic_duals(tau);
            let mut moved = false;
            for k in 0..p {
                for to_upper in [true, false] {
                    let target = if to_upper { tau } else { tau - 1.0 };
                    if (db[k] - target).abs() > FEAS_TOL {
                        continue;
                    }
                    let delta = self.direction(k, to_upper);
                    let dtol = 1e-12 * linalg::norm_inf(&delta);
                    match delta.iter().find(|v| v.abs() > dtol) {
                        Some(&v) if v < 0.0 => {}
                        _ => continue,
                    }
                    let bps = self.breakpoints(&delta);
                    let Some(first) = bps.first() else { continue };
                    if first.t * linalg::norm_inf(&delta) <= 1e-12 * self.scale {
                        continue;
                    }
                    let entering = first.row;
                    self.pivot(k, to_upper, entering, &[])?;
                    moved = true;
                    break;
                }
                if moved {
                    break;
                }
            }
            if !moved {
                return Ok(());
            }
        }
        Err(Error::SolverIterationCap { tau, iterations: self.cap })
    }

    fn objective(&self, tau: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for &r in &self.resid {
            acc.add(check_loss(r, tau));
        }
        acc.total()
    }
}

/// Greedy selection of `p` linearly independent rows in the given order.
fn independent_rows(x: &Matrix, order: &[usize], p: usize) -> Option<Vec<usize>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut rows = Vec::with_capacity(p);
    for &i in order {
        let xi = x.row(i);
        let norm2: f64 = xi.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            continue;
        }
        let mut v = xi.to_vec();
        for _ in 0..2 {
            for u in &q {
                let c = dot(&v, u);
                for (vj, uj) in v.iter_mut().zip(u) {
                    *vj -= c * uj;
                }
            }
        }
        let r2: f64 = v.iter().map(|a| a * a).sum();
        if r2 > 1e-10 * norm2 {
            let r = r2.sqrt();
            v.iter_mut().for_each(|a| *a /= r);
            q.push(v);
            rows.push(i);
            if rows.len() == p {
                return Some(rows);
            }
        }
    }
    None
}
