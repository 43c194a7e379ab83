//! Monte Carlo harness: built-in data generating processes, their true
//! trimmed identified sets, and coverage of the bootstrap bands.

use cdep_core::bounds::{quadrature_nodes, s_index, SIndex};
use cdep_core::inference::{pointwise_band, uniform_band};
use cdep_core::linalg::Matrix;
use cdep_core::numeric::{compensated_mean, logistic};
use cdep_core::{BoundPair, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{ModeName, RunConfig};
use crate::pipeline::{run_curves, Fitted};
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dgp {
    /// `W ~ N(0, 1)`, `X ~ Bernoulli(logistic(W / 2))`, `Y = 1 + X + W + U`.
    LinearNormal,
    /// `W ~ Bernoulli(1/2)`, `P(X = 1 | W) = 0.3 + 0.4 W`, `Y = 1 + X + W + U`.
    MassPoint,
}

impl Dgp {
    pub fn sample<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Sample {
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            let (wi, p) = match self {
                Dgp::LinearNormal => {
                    let wi: f64 = rng.sample(StandardNormal);
                    (wi, logistic(0.5 * wi))
                }
                Dgp::MassPoint => {
                    let wi = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    (wi, 0.3 + 0.4 * wi)
                }
            };
            let xi = rng.random::<f64>() < p;
            let u: f64 = rng.sample(StandardNormal);
            y.push(1.0 + f64::from(u8::from(xi)) + wi + u);
            x.push(xi);
            w.push(wi);
        }
        // Both arms are present with overwhelming probability; redraw otherwise.
        Sample::new(y, x, Matrix::from_row_major(n, 1, w), vec!["w".into()]).unwrap_or_else(|_| self.sample(n, rng))
    }

    /// Support points and probabilities of `W` (probability midpoints for
    /// the continuous design).
    fn covariate_law(self) -> Vec<(f64, f64)> {
        match self {
            Dgp::LinearNormal => {
                let k = 2000;
                let std = Normal::standard();
                (0..k).map(|j| (std.inverse_cdf((j as f64 + 0.5) / k as f64), 1.0 / k as f64)).collect()
            }
            Dgp::MassPoint => vec![(0.0, 0.5), (1.0, 0.5)],
        }
    }

    fn propensity(self, w: f64) -> f64 {
        match self {
            Dgp::LinearNormal => logistic(0.5 * w),
            Dgp::MassPoint => 0.3 + 0.4 * w,
        }
    }

    /// True ATE bounds, integrating over `tau` with the estimator's own
    /// quadrature. Both designs have `Y_x | W ~ N(1 + x + W, 1)`.
    pub fn true_ate_bounds(self, c: f64, eps: f64, n_quad: usize) -> BoundPair {
        let std = Normal::standard();
        let taus = quadrature_nodes(n_quad);
        let law = self.covariate_law();
        let mean_w: f64 = law.iter().map(|(w, pr)| w * pr).sum();
        let arm = |x: bool| {
            let mut lo = 0.0;
            let mut up = 0.0;
            for &(w, pr) in &law {
                let p1 = self.propensity(w);
                let p = if x { p1 } else { 1.0 - p1 };
                let l = compensated_mean(
                    &taus.iter().map(|&t| std.inverse_cdf(s_index(SIndex::S4, t, c, p, eps))).collect::<Vec<_>>(),
                );
                let u = compensated_mean(
                    &taus.iter().map(|&t| std.inverse_cdf(s_index(SIndex::S2, t, c, p, eps))).collect::<Vec<_>>(),
                );
                lo += pr * l;
                up += pr * u;
            }
            let shift = 1.0 + f64::from(u8::from(x)) + mean_w;
            BoundPair::new(shift + lo, shift + up)
        };
        BoundPair::difference(arm(true), arm(false))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: Dgp,
    pub n: usize,
    pub reps: usize,
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    pub c_grid: Vec<f64>,
    pub n_quad: usize,
    pub tau_step: f64,
    pub mode: ModeName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub dgp: Dgp,
    pub n: usize,
    pub reps: usize,
    /// Replications whose estimation failed; excluded from the rates.
    pub failed: usize,
    pub c_grid: Vec<f64>,
    pub truth: Vec<(f64, f64)>,
    /// Share of replications whose pointwise band contains the true set.
    pub pointwise: Vec<f64>,
    /// Share whose uniform band contains the true set at every grid point.
    pub uniform: f64,
    pub mean_lower: Vec<f64>,
    pub mean_upper: Vec<f64>,
    /// Replications in which the mass-point warning fired, per grid point.
    pub mass_point_warnings: Vec<usize>,
}

impl CoverageTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c,truth_lower,truth_upper,mean_lower,mean_upper,coverage_pointwise,mass_point_warnings\n");
        for k in 0..self.c_grid.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.c_grid[k],
                self.truth[k].0,
                self.truth[k].1,
                self.mean_lower[k],
                self.mean_upper[k],
                self.pointwise[k],
                self.mass_point_warnings[k]
            ));
        }
        s
    }
}

struct RepOutcome {
    pointwise: Vec<bool>,
    uniform: bool,
    pairs: Vec<BoundPair>,
    mass_point: Vec<bool>,
}

impl SimConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            covariates: vec!["w".into()],
            c_grid: self.c_grid.clone(),
            n_quad: self.n_quad,
            tau_step: self.tau_step,
            draws: self.draws,
            alpha: self.alpha,
            mode: self.mode,
            estimands: vec!["ate".into()],
            ..RunConfig::default()
        }
    }

    /// Data of replication `rep` and the bootstrap seed used with it.
    pub fn replication(&self, rep: usize) -> (Sample, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        let sample = self.dgp.sample(self.n, &mut rng);
        (sample, rng.random())
    }

    fn one(&self, rep: usize, truth: &[BoundPair]) -> Result<RepOutcome, AppError> {
        let (sample, seed) = self.replication(rep);
        let cfg = RunConfig { seed, ..self.run_config() };
        let f = Fitted::new(&cfg, sample)?;
        let a = run_curves(&cfg, &f)?;
        let curve = &a.curves[0];
        let devs = &a.draws.as_ref().expect("draws > 0").devs[0];
        let pw = pointwise_band(curve, devs, self.alpha, self.n)?;
        let un = uniform_band(curve, devs, self.alpha, self.n)?;
        let covers = |lb: &[f64], ub: &[f64], k: usize| lb[k] <= truth[k].lower && truth[k].upper <= ub[k];
        let kappa = f.tuning.kappa;
        let pre = cdep_core::inference::precondition_report(&f.design, &f.theta, &self.c_grid, kappa);
        Ok(RepOutcome {
            pointwise: (0..truth.len()).map(|k| covers(&pw.lb, &pw.ub, k)).collect(),
            uniform: (0..truth.len()).all(|k| covers(&un.grid.lb, &un.grid.ub, k)),
            pairs: curve.pairs.clone(),
            mass_point: pre.mass_point,
        })
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.reps == 0 || self.n < 10 {
            return Err(AppError::Config("need reps >= 1 and n >= 10".into()));
        }
        self.run_config().validate()
    }

    /// Runs every replication on the current rayon pool.
    pub fn run(&self) -> Result<CoverageTable, AppError> {
        self.validate()?;
        let eps = self.run_config().epsilon;
        let truth: Vec<BoundPair> =
            self.c_grid.iter().map(|&c| self.dgp.true_ate_bounds(c, eps, self.n_quad)).collect();
        let outcomes: Vec<Result<RepOutcome, AppError>> =
            (0..self.reps).into_par_iter().map(|r| {
                let o = self.one(r, &truth);
                log::info!("replication {r} done");
                o
            }).collect();
        let k = self.c_grid.len();
        let mut ok = Vec::new();
        let mut failed = 0;
        for (r, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(o) => ok.push(o),
                Err(AppError::Config(m)) => return Err(AppError::Config(m)),
                Err(e) => {
                    log::warn!("replication {r} failed: {e}");
                    failed += 1;
                }
            }
        }
        let m = ok.len().max(1) as f64;
        let share = |f: &dyn Fn(&RepOutcome) -> bool| ok.iter().filter(|o| f(o)).count() as f64 / m;
        Ok(CoverageTable {
            dgp: self.dgp,
            n: self.n,
            reps: self.reps,
            failed,
            c_grid: self.c_grid.clone(),
            truth: truth.iter().map(|p| (p.lower, p.upper)).collect(),
            pointwise: (0..k).map(|j| share(&|o| o.pointwise[j])).collect(),
            uniform: share(&|o| o.uniform),
            mean_lower: (0..k).map(|j| ok.iter().map(|o| o.pairs[j].lower).sum::<f64>() / m).collect(),
            mean_upper: (0..k).map(|j| ok.iter().map(|o| o.pairs[j].upper).sum::<f64>() / m).collect(),
            mass_point_warnings: (0..k).map(|j| ok.iter().filter(|o| o.mass_point[j]).count()).collect(),
        })
    }
}
