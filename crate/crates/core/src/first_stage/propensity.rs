//! Parametric propensity score `P(X = 1 | W = w) = F(r(w)'beta)` fitted by
//! maximum likelihood.

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::DesignMatrices;
use crate::linalg::{self, dot, Matrix};
use crate::numeric::{logistic, norm_cdf, norm_pdf, softplus, CompensatedSum, FRAC_1_SQRT_2PI};
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
/// Tolerance on the column-scaled mean score.
pub const GRADIENT_TOL: f64 = 1e-8;
/// Coefficient norm beyond which the fit is declared separated.
pub const SEPARATION_NORM: f64 = 1e3;
/// Fitted probabilities closer than this to 0 or 1 indicate separation.
pub const PROBABILITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Logit,
    Probit,
}

impl Link {
    /// `F(z)`.
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            Link::Logit => logistic(z),
            Link::Probit => norm_cdf(z),
        }
    }

    /// `F'(z)`.
    pub fn pdf(self, z: f64) -> f64 {
        match self {
            Link::Logit => {
                let f = logistic(z);
                f * (1.0 - f)
            }
            Link::Probit => norm_pdf(z),
        }
    }

    /// `ln F(z)`.
    fn log_cdf(self, z: f64) -> f64 {
        match self {
            Link::Logit => -softplus(-z),
            Link::Probit => {
                if z > -35.0 {
                    norm_cdf(z).ln()
                } else {
                    let z2 = z * z;
                    FRAC_1_SQRT_2PI.ln() - 0.5 * z2 - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
                }
            }
        }
    }

    /// `F'(z) / F(z)` and its derivative in `z`.
    fn score_terms(self, z: f64) -> (f64, f64) {
        match self {
            Link::Logit => {
                let g = logistic(-z);
                (g, -g * logistic(z))
            }
            Link::Probit => {
                let lambda = if z > -35.0 {
                    norm_pdf(z) / norm_cdf(z)
                } else {
                    let z2 = z * z;
                    -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
                };
                (lambda, -lambda * (z + lambda))
            }
        }
    }

    /// `L(x, z) = F(z)^x (1 - F(z))^(1-x)`.
    pub fn likelihood(self, x: bool, z: f64) -> f64 {
        if x {
            self.cdf(z)
        } else {
            self.cdf(-z)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub link: Link,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PropensityFit {
    pub fn index(&self, r_row: &[f64]) -> f64 {
        dot(r_row, &self.beta)
    }

    /// `P(X = 1 | W = w)`.
    pub fn prob_treated(&self, r_row: &[f64]) -> f64 {
        self.link.cdf(self.index(r_row))
    }

    /// `P(X = x | W = w)`.
    pub fn predict(&self, r_row: &[f64], x: bool) -> f64 {
        self.link.likelihood(x, self.index(r_row))
    }
}

/// `L(x, r(w)'beta)` for a fitted model.
pub fn predict_propensity(fit: &PropensityFit, r_row: &[f64], x: bool) -> f64 {
    fit.predict(r_row, x)
}

pub fn fit_propensity(design: &DesignMatrices, x: &[bool], link: Link) -> Result<PropensityFit> {
    fit_binary_response(&design.rmat, x, link)
}

fn log_likelihood(r: &Matrix, x: &[bool], beta: &[f64], link: Link) -> f64 {
    let mut acc = CompensatedSum::new();
    for (i, &xi) in x.iter().enumerate() {
        let z = dot(r.row(i), beta);
        acc.add(link.log_cdf(if xi { z } else { -z }));
    }
    acc.total()
}

/// Newton–Raphson with step halving on the binary-response log likelihood.
pub fn fit_binary_response(r: &Matrix, x: &[bool], link: Link) -> Result<PropensityFit> {
    let n = r.rows();
    let k = r.cols();
    assert_eq!(x.len(), n);
    if !x.iter().any(|&b| b) || x.iter().all(|&b| b) {
        return Err(Error::InvalidSample("treatment has a single arm".into()));
    }
    if !linalg::has_full_column_rank(r, crate::dataset::COLLINEARITY_TOL) {
        return Err(Error::SingularDesign);
    }
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let ms = (0..n).map(|i| r[(i, j)] * r[(i, j)]).sum::<f64>() / n as f64;
            ms.sqrt().max(1.0)
        })
        .collect();

    let mut beta = vec![0.0; k];
    let mut ll = log_likelihood(r, x, &beta, link);
    let mut grad = vec![0.0; k];
    let mut neg_hess = Matrix::zeros(k, k);
    for iteration in 0..=MAX_ITERATIONS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        neg_hess.as_mut_slice().iter_mut().for_each(|h| *h = 0.0);
        for i in 0..n {
            let ri = r.row(i);
            let z = dot(ri, &beta);
            // d/dz ln L(x, z) and d^2/dz^2 ln L(x, z)
            let (s, h) = if x[i] {
                link.score_terms(z)
            } else {
                let (l, dl) = link.score_terms(-z);
                (-l, dl)
            };
            for a in 0..k {
                grad[a] += s * ri[a];
                let hra = -h * ri[a];
                for b in a..k {
                    neg_hess[(a, b)] += hra * ri[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                neg_hess[(a, b)] = neg_hess[(b, a)];
            }
        }
        let scaled = grad
            .iter()
            .zip(&scale)
            .fold(0.0f64, |m, (g, s)| m.max((g / n as f64).abs() / s));
        if scaled <= GRADIENT_TOL {
            // One more Newton step buys quadratic accuracy beyond the tolerance.
            if let Some(step) = linalg::solve(&neg_hess, &grad) {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
                let ll_new = log_likelihood(r, x, &cand, link);
                // the likelihood is flat to rounding here
                if ll_new.is_finite() && ll_new >= ll - 1e-12 * (1.0 + ll.abs()) {
                    beta = cand;
                    ll = ll_new;
                }
            }
            check_probabilities(r, &beta, link)?;
            return Ok(PropensityFit { link, beta, loglik: ll, iterations: iteration, converged: true });
        }
        if iteration == MAX_ITERATIONS {
            return Err(Error::NotConverged { iterations: iteration, gradient: scaled });
        }
        let step = linalg::solve(&neg_hess, &grad).ok_or(Error::SingularHessian { iteration })?;
        let mut t = 1.0;
        let mut accepted = false;
        let mut cand = vec![0.0; k];
        for _ in 0..50 {
            for j in 0..k {
                cand[j] = beta[j] + t * step[j];
            }
            let ll_new = log_likelihood(r, x, &cand, link);
            if ll_new.is_finite() && ll_new >= ll - 1e-12 * (1.0 + ll.abs()) {
                beta.copy_from_slice(&cand);
                ll = ll_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged { iterations: iteration, gradient: scaled });
        }
        let norm = linalg::norm2(&beta);
        if norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
    }
    unreachable!("loop returns at the iteration cap")
}

fn check_probabilities(r: &Matrix, beta: &[f64], link: Link) -> Result<()> {
    for i in 0..r.rows() {
        let p = link.cdf(dot(r.row(i), beta));
        if !(PROBABILITY_FLOOR..=1.0 - PROBABILITY_FLOOR).contains(&p) {
            return Err(Error::Separation { norm: linalg::norm2(beta) });
        }
    }
    Ok(())
}
