//! Analytical estimators of the directional derivatives of the bound
//! functionals with respect to the first stages `theta = (beta, gamma(.))`.
//!
//! The clamped quantile-index maps `S1..S4` are minima and maxima of smooth
//! functions of `beta`, so their derivatives switch between the derivatives of
//! the active arguments. The case functions `T1..T4` select the active
//! arguments with a slackness `kappa`: arguments within `kappa` of each other
//! are treated as tied, and a tie contributes the min (upper bound) or max
//! (lower bound) of the tied derivatives.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::bounds::{index_args, s_index, BoundEngine, BoundPair, SIndex};
use crate::first_stage::{interpolate_row, Link, ThetaHat, TuningParams};
use crate::linalg::{dot, Matrix};
use crate::numeric::CompensatedSum;

/// Perturbation `h = (h1, h2)` of the first stages; `h2` lives on the
/// quantile grid of the fit it perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub h1: Vec<f64>,
    pub h2: Matrix,
}

impl Direction {
    pub fn zeros(dw: usize, grid_len: usize, dq: usize) -> Self {
        Self { h1: vec![0.0; dw], h2: Matrix::zeros(grid_len, dq) }
    }

    /// `(sqrt(n) (beta* - beta), sqrt(n) (gamma* - gamma))`.
    pub fn between(theta_star: &ThetaHat, theta: &ThetaHat, n: usize) -> Self {
        let rn = (n as f64).sqrt();
        let h1 = theta_star.prop.beta.iter().zip(&theta.prop.beta).map(|(a, b)| rn * (a - b)).collect();
        let g1 = theta_star.qr.gamma.as_slice();
        let g0 = theta.qr.gamma.as_slice();
        let data = g1.iter().zip(g0).map(|(a, b)| rn * (a - b)).collect();
        Self { h1, h2: Matrix::from_row_major(theta.qr.gamma.rows(), theta.qr.gamma.cols(), data) }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.h1.iter_mut().for_each(|v| *v *= lambda);
        out.h2.as_mut_slice().iter_mut().for_each(|v| *v *= lambda);
        out
    }
}

impl ThetaHat {
    /// `theta + t h`.
    pub fn perturbed(&self, t: f64, dir: &Direction) -> ThetaHat {
        let mut out = self.clone();
        for (b, h) in out.prop.beta.iter_mut().zip(&dir.h1) {
            *b += t * h;
        }
        for (g, h) in out.qr.gamma.as_mut_slice().iter_mut().zip(dir.h2.as_slice()) {
            *g += t * h;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HddValue {
    pub upper: f64,
    pub lower: f64,
}

impl HddValue {
    pub const ZERO: HddValue = HddValue { upper: 0.0, lower: 0.0 };
}

/// `L_beta(x, r'beta) / L(x, r'beta)^2 = (2x - 1) F'(r'beta) r / L^2`.
pub fn l_beta_ratio(link: Link, x: bool, r_row: &[f64], beta: &[f64]) -> Vec<f64> {
    let z = dot(r_row, beta);
    let l = link.likelihood(x, z);
    let f = if x { 1.0 } else { -1.0 } * link.pdf(z) / (l * l);
    r_row.iter().map(|r| f * r).collect()
}

/// A point `(tau, c, p)` at which the case functions are evaluated, with
/// `p = L(x, r(w)'beta)` and trimming `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasePoint {
    pub tau: f64,
    pub c: f64,
    pub p: f64,
    pub eps: f64,
}

impl CasePoint {
    pub fn new(tau: f64, c: f64, p: f64, eps: f64) -> Self {
        Self { tau, c, p, eps }
    }

    pub fn s(&self, kind: SIndex) -> f64 {
        s_index(kind, self.tau, self.c, self.p, self.eps)
    }

    /// `T1`: derivative of `S1` along a direction with `s = ratio' h1`.
    pub fn t1(&self, s: f64, kappa: f64) -> f64 {
        let [a, b, c] = index_args(true, self.tau, self.c, self.p, self.eps);
        let m = self.tau.min(1.0 - self.tau);
        let t11 = -self.c * m * s;
        let t12 = -self.tau * s;
        let t13 = 0.0;
        let ab = (a - b).abs() <= kappa;
        let ac = (a - c).abs() <= kappa;
        let bc = (b - c).abs() <= kappa;
        let i1 = a < b.min(c) - kappa;
        let i2 = b < a.min(c) - kappa;
        let i3 = c < a.min(b) - kappa;
        debug_assert!(u8::from(i1) + u8::from(i2) + u8::from(i3) <= 1);
        let i4 = ab && a.max(b) < c - kappa;
        let i5 = ac && a.max(c) < b - kappa;
        let i6 = bc && b.max(c) < a - kappa;
        let i7 = u8::from(ab) + u8::from(ac) + u8::from(bc) >= 2;
        let terms = [
            (i1, t11),
            (i2, t12),
            (i3, t13),
            (i4, t11.min(t12)),
            (i5, t11.min(0.0)),
            (i6, t12.min(0.0)),
            (i7, t11.min(t12).min(0.0)),
        ];
        terms.iter().filter(|(on, _)| *on).map(|(_, v)| v).sum()
    }

    /// `T2`: derivative of `S2 = max{S1, eps}`.
    pub fn t2(&self, s: f64, kappa: f64) -> f64 {
        let s1 = self.s(SIndex::S1);
        let t1 = self.t1(s, kappa);
        let mut v = 0.0;
        if s1 > self.eps + kappa {
            v += t1;
        }
        if (s1 - self.eps).abs() <= kappa {
            v += t1.max(0.0);
        }
        v
    }

    /// `T3`: derivative of `S3`.
    pub fn t3(&self, s: f64, kappa: f64) -> f64 {
        let [a, b, c] = index_args(false, self.tau, self.c, self.p, self.eps);
        let m = self.tau.min(1.0 - self.tau);
        let t31 = self.c * m * s;
        let t32 = (1.0 - self.tau) * s;
        let t33 = 0.0;
        let ab = (a - b).abs() <= kappa;
        let ac = (a - c).abs() <= kappa;
        let bc = (b - c).abs() <= kappa;
        let i1 = a > b.max(c) + kappa;
        let i2 = b > a.max(c) + kappa;
        let i3 = c > a.max(b) + kappa;
        debug_assert!(u8::from(i1) + u8::from(i2) + u8::from(i3) <= 1);
        let i4 = ab && a.min(b) > c + kappa;
        let i5 = ac && a.min(c) > b + kappa;
        let i6 = bc && b.min(c) > a + kappa;
        let i7 = u8::from(ab) + u8::from(ac) + u8::from(bc) >= 2;
        let terms = [
            (i1, t31),
            (i2, t32),
            (i3, t33),
            (i4, t31.max(t32)),
            (i5, t31.max(0.0)),
            (i6, t32.max(0.0)),
            (i7, t31.max(t32).max(0.0)),
        ];
        terms.iter().filter(|(on, _)| *on).map(|(_, v)| v).sum()
    }

    /// `T4`: derivative of `S4 = min{S3, 1 - eps}`.
    pub fn t4(&self, s: f64, kappa: f64) -> f64 {
        let s3 = self.s(SIndex::S3);
        let t3 = self.t3(s, kappa);
        let top = 1.0 - self.eps;
        let mut v = 0.0;
        if s3 < top - kappa {
            v += t3;
        }
        if (s3 - top).abs() <= kappa {
            v += t3.min(0.0);
        }
        v
    }

    /// Distance of the upper-bound map from its kinks: the smallest gap
    /// between the arguments of `S1` and between `S1` and `eps`.
    pub fn upper_margin(&self) -> f64 {
        let [a, b, c] = index_args(true, self.tau, self.c, self.p, self.eps);
        let s1 = a.min(b).min(c);
        (a - b).abs().min((a - c).abs()).min((b - c).abs()).min((s1 - self.eps).abs())
    }

    pub fn lower_margin(&self) -> f64 {
        let [a, b, c] = index_args(false, self.tau, self.c, self.p, self.eps);
        let s3 = a.max(b).max(c);
        (a - b).abs().min((a - c).abs()).min((b - c).abs()).min((s3 - (1.0 - self.eps)).abs())
    }
}

/// Derivative estimators of the bound functionals at `theta_hat`.
#[derive(Debug, Clone, Copy)]
pub struct HddEvaluator<'a> {
    pub engine: BoundEngine<'a>,
    pub eta: f64,
    pub kappa: f64,
}

impl<'a> HddEvaluator<'a> {
    pub fn new(engine: BoundEngine<'a>, tuning: &TuningParams) -> Self {
        Self { engine, eta: tuning.eta, kappa: tuning.kappa }
    }

    fn theta(&self) -> &ThetaHat {
        self.engine.theta
    }

    /// `q' gamma_hat'(u)`, `u` inside `[eps, 1 - eps]`.
    fn q_dgamma(&self, q: &[f64], u: f64) -> f64 {
        dot(q, &self.theta().qr.gamma_derivative_unchecked(u, self.eta))
    }

    fn q_h2(&self, q: &[f64], h2: &Matrix, u: f64) -> f64 {
        let mut row = vec![0.0; h2.cols()];
        interpolate_row(h2, self.theta().qr.locate(u), &mut row);
        dot(q, &row)
    }

    fn gamma1_parts(&self, q: &[f64], s: f64, p: f64, tau: f64, c: f64, dir: &Direction) -> HddValue {
        let pt = CasePoint::new(tau, c, p, self.theta().eps);
        let s2 = pt.s(SIndex::S2);
        let s4 = pt.s(SIndex::S4);
        HddValue {
            upper: self.q_h2(q, &dir.h2, s2) + self.q_dgamma(q, s2) * pt.t2(s, self.kappa),
            lower: self.q_h2(q, &dir.h2, s4) + self.q_dgamma(q, s4) * pt.t4(s, self.kappa),
        }
    }

    fn row_inputs(&self, x: bool, w_row: &[f64], dir: &Direction) -> (Vec<f64>, f64, f64) {
        let r = self.engine.design.r_row(w_row);
        let theta = self.theta();
        let s = dot(&l_beta_ratio(theta.link(), x, &r, theta.beta()), &dir.h1);
        (self.engine.design.q_row(x, w_row), s, self.engine.propensity(x, w_row))
    }

    /// Derivative of the conditional quantile bounds.
    pub fn gamma1_hdd(&self, x: bool, w_row: &[f64], tau: f64, c: f64, dir: &Direction) -> HddValue {
        let (q, s, p) = self.row_inputs(x, w_row, dir);
        self.gamma1_parts(&q, s, p, tau, c, dir)
    }

    /// Derivative of the conditional mean bounds.
    pub fn gamma2_hdd(&self, x: bool, w_row: &[f64], c: f64, dir: &Direction) -> HddValue {
        let (q, s, p) = self.row_inputs(x, w_row, dir);
        let nq = self.engine.n_quad;
        let mut up = CompensatedSum::new();
        let mut lo = CompensatedSum::new();
        for m in 0..nq {
            let tau = (m as f64 + 0.5) / nq as f64;
            let v = self.gamma1_parts(&q, s, p, tau, c, dir);
            up.add(v.upper);
            lo.add(v.lower);
        }
        HddValue { upper: up.total() / nq as f64, lower: lo.total() / nq as f64 }
    }

    /// Derivative of the mean bounds: the sample average of
    /// [`gamma2_hdd`](Self::gamma2_hdd).
    pub fn gamma3_hdd(&self, x: bool, c: f64, dir: &Direction) -> HddValue {
        let sample = self.engine.sample;
        let mut up = CompensatedSum::new();
        let mut lo = CompensatedSum::new();
        for i in 0..sample.n() {
            let v = self.gamma2_hdd(x, sample.w_row(i), c, dir);
            up.add(v.upper);
            lo.add(v.lower);
        }
        let n = sample.n() as f64;
        HddValue { upper: up.total() / n, lower: lo.total() / n }
    }

    /// Precomputes [`gamma3_hdd`](Self::gamma3_hdd) at fixed `(x, c)` so that
    /// each new direction costs `O(grid * d_q + n * d_W)`.
    pub fn mean_plan(&self, x: bool, c: f64) -> MeanHddPlan {
        let theta = self.theta();
        let sample = self.engine.sample;
        let design = self.engine.design;
        let n = sample.n();
        let nq = self.engine.n_quad;
        let grid_len = theta.qr.tau_grid.len();
        let dq = design.dq();
        let eps = theta.eps;
        let mut v_up = Matrix::zeros(grid_len, dq);
        let mut v_lo = Matrix::zeros(grid_len, dq);
        let mut rows = Vec::with_capacity(n);
        let mut gamma2 = Vec::with_capacity(n);
        // grid weights accumulated per row, then spread over q
        let mut wu = vec![0.0; grid_len];
        let mut wl = vec![0.0; grid_len];
        let scale = 1.0 / (n as f64 * nq as f64);
        for i in 0..n {
            let w = sample.w_row(i);
            let q = design.q_row(x, w);
            let r = design.r_row(w);
            let p = self.engine.propensity(x, w);
            let ratio = l_beta_ratio(theta.link(), x, &r, theta.beta());
            let fitted: Vec<f64> = (0..grid_len).map(|j| dot(&q, theta.qr.gamma.row(j))).collect();
            let interp = |u: f64| {
                let gp = theta.qr.locate(u);
                if gp.w == 0.0 {
                    fitted[gp.lo]
                } else {
                    (1.0 - gp.w) * fitted[gp.lo] + gp.w * fitted[gp.lo + 1]
                }
            };
            let dfit = |u: f64| (interp(u + self.eta) - interp(u - self.eta)) / (2.0 * self.eta);
            wu.iter_mut().for_each(|v| *v = 0.0);
            wl.iter_mut().for_each(|v| *v = 0.0);
            let mut acc = [CompensatedSum::new(); 6];
            for m in 0..nq {
                let tau = (m as f64 + 0.5) / nq as f64;
                let pt = CasePoint::new(tau, c, p, eps);
                let s2 = pt.s(SIndex::S2);
                let s4 = pt.s(SIndex::S4);
                let gu = theta.qr.locate(s2);
                let gl = theta.qr.locate(s4);
                wu[gu.lo] += 1.0 - gu.w;
                if gu.w != 0.0 {
                    wu[gu.lo + 1] += gu.w;
                }
                wl[gl.lo] += 1.0 - gl.w;
                if gl.w != 0.0 {
                    wl[gl.lo + 1] += gl.w;
                }
                let du = dfit(s2);
                let dl = dfit(s4);
                acc[0].add(du * pt.t2(1.0, self.kappa));
                acc[1].add(du * pt.t2(-1.0, self.kappa));
                acc[2].add(dl * pt.t4(1.0, self.kappa));
                acc[3].add(dl * pt.t4(-1.0, self.kappa));
                acc[4].add(interp(s2));
                acc[5].add(interp(s4));
            }
            for j in 0..grid_len {
                if wu[j] != 0.0 {
                    for (v, qk) in v_up.row_mut(j).iter_mut().zip(&q) {
                        *v += scale * wu[j] * qk;
                    }
                }
                if wl[j] != 0.0 {
                    for (v, qk) in v_lo.row_mut(j).iter_mut().zip(&q) {
                        *v += scale * wl[j] * qk;
                    }
                }
            }
            let inv = 1.0 / nq as f64;
            rows.push(PlanRow {
                ratio,
                up_pos: acc[0].total() * inv,
                up_neg: acc[1].total() * inv,
                lo_pos: acc[2].total() * inv,
                lo_neg: acc[3].total() * inv,
            });
            gamma2.push(BoundPair { upper: acc[4].total() * inv, lower: acc[5].total() * inv });
        }
        MeanHddPlan { v_up, v_lo, rows, gamma2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PlanRow {
    ratio: Vec<f64>,
    up_pos: f64,
    up_neg: f64,
    lo_pos: f64,
    lo_neg: f64,
}

/// [`HddEvaluator::gamma3_hdd`] at fixed `(x, c)` as a function of the
/// direction. The `beta` part is positively homogeneous in `s = ratio' h1`
/// row by row, so it is stored for `s = +1` and `s = -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanHddPlan {
    v_up: Matrix,
    v_lo: Matrix,
    rows: Vec<PlanRow>,
    /// Conditional mean bounds at each sample row.
    pub gamma2: Vec<BoundPair>,
}

impl MeanHddPlan {
    pub fn apply(&self, dir: &Direction) -> HddValue {
        let h2 = dir.h2.as_slice();
        let mut up = CompensatedSum::new();
        let mut lo = CompensatedSum::new();
        for (k, &h) in h2.iter().enumerate() {
            if h != 0.0 {
                up.add(self.v_up.as_slice()[k] * h);
                lo.add(self.v_lo.as_slice()[k] * h);
            }
        }
        let n = self.rows.len() as f64;
        for row in &self.rows {
            let s = dot(&row.ratio, &dir.h1);
            if s >= 0.0 {
                up.add(s * row.up_pos / n);
                lo.add(s * row.lo_pos / n);
            } else {
                up.add(-s * row.up_neg / n);
                lo.add(-s * row.lo_neg / n);
            }
        }
        HddValue { upper: up.total(), lower: lo.total() }
    }
}
