//! First-stage estimators: propensity score and quantile-regression process.

mod propensity;
mod quantile;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

pub use propensity::{
    fit_binary_response, fit_propensity, predict_propensity, Link, PropensityFit, GRADIENT_TOL, MAX_ITERATIONS,
    SEPARATION_NORM,
};
pub use quantile::{
    check_loss, fit_quantile, fit_quantile_matrix, fit_quantile_process, interpolate_row, locate, uniform_tau_grid,
    GridPoint, QuantileProcessFit,
};

use crate::dataset::{DesignMatrices, Sample};
use crate::{Error, Result};

/// Tuning constants of the estimators and the analytical bootstrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningParams {
    /// Trimming of the quantile indices to `[eps, 1 - eps]`.
    pub eps: f64,
    /// Range `[eps_small, 1 - eps_small]` of the quantile-regression grid.
    pub eps_small: f64,
    /// Step of the central-difference derivative of `gamma_hat`.
    pub eta: f64,
    /// Slackness of the case indicators.
    pub kappa: f64,
    pub tau_step: f64,
    /// Midpoints used for integrals over `tau`.
    pub n_quad: usize,
}

impl TuningParams {
    /// `eps = 0.05`, `eps_small = eps / 2`, `eta = 0.05 n^(-1/4)`,
    /// `kappa = n^(-1/3)`, grid step 0.005, 500 quadrature points.
    ///
    /// `eta` is capped at `0.9 (eps - eps_small)` so that the derivative
    /// step stays inside the fitted grid for very small samples.
    pub fn defaults(n: usize) -> Self {
        Self::with_eps(n, 0.05)
    }

    pub fn with_eps(n: usize, eps: f64) -> Self {
        let nf = n.max(1) as f64;
        let eps_small = eps / 2.0;
        Self {
            eps,
            eps_small,
            eta: (0.05 * nf.powf(-0.25)).min(0.9 * (eps - eps_small)),
            kappa: nf.powf(-1.0 / 3.0),
            tau_step: 0.005,
            n_quad: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidTuning(m));
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("eps = {} must lie in (0, 0.5)", self.eps));
        }
        if !(self.eps_small > 0.0 && self.eps_small < self.eps) {
            return bad(format!("eps_small = {} must lie in (0, eps)", self.eps_small));
        }
        if !(self.eta > 0.0 && self.eta < self.eps - self.eps_small) {
            return bad(format!(
                "eta = {} must lie in (0, eps - eps_small) = (0, {})",
                self.eta,
                self.eps - self.eps_small
            ));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be positive", self.kappa));
        }
        if !(self.tau_step > 0.0 && self.tau_step <= 0.5) {
            return bad(format!("tau_step = {} must lie in (0, 0.5]", self.tau_step));
        }
        if self.n_quad < 2 {
            return bad(format!("n_quad = {} must be at least 2", self.n_quad));
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        uniform_tau_grid(self.eps_small, self.tau_step)
    }
}

/// Fitted first stages `theta_hat = (beta_hat, gamma_hat(.))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaHat {
    pub prop: PropensityFit,
    pub qr: QuantileProcessFit,
    pub eps: f64,
    pub eps_small: f64,
}

impl ThetaHat {
    pub fn fit(sample: &Sample, design: &DesignMatrices, link: Link, tuning: &TuningParams) -> Result<Self> {
        tuning.validate()?;
        let prop = fit_propensity(design, sample.x(), link)?;
        let qr = fit_quantile_process(design, sample.y(), &tuning.tau_grid())?;
        Ok(Self { prop, qr, eps: tuning.eps, eps_small: tuning.eps_small })
    }

    pub fn link(&self) -> Link {
        self.prop.link
    }

    pub fn beta(&self) -> &[f64] {
        &self.prop.beta
    }
}
