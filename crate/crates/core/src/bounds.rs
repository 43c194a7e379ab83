//! Bounds on quantiles, CQTE, CATE, mean potential outcomes, ATE and ATT under
//! conditional c-dependence, evaluated at fitted first stages.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::dataset::{DesignMatrices, Sample};
use crate::first_stage::{GridPoint, PropensityFit, ThetaHat};
use crate::linalg::dot;
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Sensitivity parameter `c` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SensitivityParam(f64);

impl SensitivityParam {
    pub fn new(c: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&c) {
            Ok(Self(c))
        } else {
            Err(Error::InvalidArgument(format!("sensitivity parameter c = {c} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Validates a grid of sensitivity parameters: strictly increasing, inside `[0, 1]`.
pub fn validate_c_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty c grid".into()));
    }
    for &c in grid {
        SensitivityParam::new(c)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("c grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `k + 1` equally spaced points on `[0, 1]`.
pub fn uniform_c_grid(points: usize) -> Vec<f64> {
    let k = points.max(2) - 1;
    (0..=k).map(|j| j as f64 / k as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `[a.lower - b.upper, a.upper - b.lower]`.
    pub fn difference(a: BoundPair, b: BoundPair) -> BoundPair {
        BoundPair { lower: a.lower - b.upper, upper: a.upper - b.lower }
    }
}

/// `min{tau + (c/p) min(tau, 1 - tau), tau / p, 1}`.
pub fn t_upper(tau: f64, c: f64, p: f64) -> f64 {
    (tau + c / p * tau.min(1.0 - tau)).min(tau / p).min(1.0)
}

/// `max{tau - (c/p) min(tau, 1 - tau), (tau - 1)/p + 1, 0}`.
pub fn t_lower(tau: f64, c: f64, p: f64) -> f64 {
    (tau - c / p * tau.min(1.0 - tau)).max((tau - 1.0) / p + 1.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SIndex {
    /// `t_upper` with 1 replaced by `1 - eps`.
    S1,
    /// `max{S1, eps}`.
    S2,
    /// `t_lower` with 0 replaced by `eps`.
    S3,
    /// `min{S3, 1 - eps}`.
    S4,
}

/// The three arguments of `S1` (`upper = true`) or `S3`.
#[inline]
pub fn index_args(upper: bool, tau: f64, c: f64, p: f64, eps: f64) -> [f64; 3] {
    let m = tau.min(1.0 - tau);
    if upper {
        [tau + c * m / p, tau / p, 1.0 - eps]
    } else {
        [tau - c * m / p, (tau - 1.0) / p + 1.0, eps]
    }
}

pub fn s_index(kind: SIndex, tau: f64, c: f64, p: f64, eps: f64) -> f64 {
    match kind {
        SIndex::S1 => {
            let [a, b, cc] = index_args(true, tau, c, p, eps);
            a.min(b).min(cc)
        }
        SIndex::S2 => s_index(SIndex::S1, tau, c, p, eps).max(eps),
        SIndex::S3 => {
            let [a, b, cc] = index_args(false, tau, c, p, eps);
            a.max(b).max(cc)
        }
        SIndex::S4 => s_index(SIndex::S3, tau, c, p, eps).min(1.0 - eps),
    }
}

/// Midpoints `(m + 1/2) / n_quad`.
pub fn quadrature_nodes(n_quad: usize) -> Vec<f64> {
    (0..n_quad).map(|m| (m as f64 + 0.5) / n_quad as f64).collect()
}

/// What a bound curve describes.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimand {
    Ate,
    Att,
    /// CATE at the raw covariate row `w`.
    Cate { w: Vec<f64> },
    /// CQTE at quantile `tau` and covariate row `w`.
    Cqte { tau: f64, w: Vec<f64> },
    /// Mean potential outcome `E[Y_x]`.
    Mean { x: bool },
}

impl Estimand {
    pub fn label(&self) -> String {
        match self {
            Estimand::Ate => "ate".into(),
            Estimand::Att => "att".into(),
            Estimand::Cate { .. } => "cate".into(),
            Estimand::Cqte { tau, .. } => format!("cqte_{tau}"),
            Estimand::Mean { x } => format!("mean{}", u8::from(*x)),
        }
    }

    /// Whether bounds average over the covariate distribution.
    pub fn is_unconditional(&self) -> bool {
        matches!(self, Estimand::Ate | Estimand::Att | Estimand::Mean { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub estimand: Estimand,
    pub c_grid: Vec<f64>,
    pub pairs: Vec<BoundPair>,
    pub monotonized: bool,
}

impl BoundCurve {
    pub fn lower(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.upper).collect()
    }
}

/// Sorts upper endpoints ascending and lower endpoints descending along the grid.
pub fn rearrange_monotone(curve: &BoundCurve) -> BoundCurve {
    let mut lo = curve.lower();
    let mut up = curve.upper();
    lo.sort_by(|a, b| b.total_cmp(a));
    up.sort_by(|a, b| a.total_cmp(b));
    BoundCurve {
        estimand: curve.estimand.clone(),
        c_grid: curve.c_grid.clone(),
        pairs: lo.into_iter().zip(up).map(|(l, u)| BoundPair::new(l, u)).collect(),
        monotonized: true,
    }
}

/// The conclusion whose robustness is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conclusion {
    /// The whole identified set lies in `[t, inf)`.
    LowerAtLeast,
    /// The whole identified set lies in `(-inf, t]`.
    UpperAtMost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakdownResult {
    pub c_bp: f64,
    pub conclusion: Conclusion,
    pub threshold: f64,
}

/// Largest `c` at which the conclusion holds, linearly interpolated between
/// the last grid point where it holds and the first where it fails. Returns
/// 0 when it fails at the first grid point and the last grid point when it
/// never fails.
pub fn breakdown_point(curve: &BoundCurve, conclusion: Conclusion, t: f64) -> BreakdownResult {
    let edge: Vec<f64> = match conclusion {
        Conclusion::LowerAtLeast => curve.pairs.iter().map(|p| p.lower - t).collect(),
        Conclusion::UpperAtMost => curve.pairs.iter().map(|p| t - p.upper).collect(),
    };
    BreakdownResult { c_bp: crossing(&curve.c_grid, &edge), conclusion, threshold: t }
}

/// Crossing point of a margin series that is nonnegative while the
/// conclusion holds.
pub(crate) fn crossing(grid: &[f64], margin: &[f64]) -> f64 {
    if margin[0] < 0.0 {
        return 0.0;
    }
    for k in 1..grid.len() {
        if margin[k] < 0.0 {
            let (f0, f1) = (margin[k - 1], margin[k]);
            return grid[k - 1] + (grid[k] - grid[k - 1]) * f0 / (f0 - f1);
        }
    }
    grid[grid.len() - 1]
}

/// `max_i max{p(W_i), 1 - p(W_i)}`, the empirical surrogate of the
/// smallest `c` at which bounds reach the no-assumption bounds.
pub fn cbar(design: &DesignMatrices, fit: &PropensityFit) -> f64 {
    (0..design.rmat.rows())
        .map(|i| {
            let p = fit.prob_treated(design.rmat.row(i));
            p.max(1.0 - p)
        })
        .fold(0.5, f64::max)
}

/// Bound functionals evaluated at fixed first-stage estimates.
#[derive(Debug, Clone, Copy)]
pub struct BoundEngine<'a> {
    pub sample: &'a Sample,
    pub design: &'a DesignMatrices,
    pub theta: &'a ThetaHat,
    pub n_quad: usize,
}

/// Per-arm summaries used by the ATT bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMeans {
    /// Sample share of each arm, indexed by `x`.
    pub p: [f64; 2],
    /// `E(Y | X = x)`, indexed by `x`.
    pub mean_y: [f64; 2],
}

impl ArmMeans {
    pub fn of(sample: &Sample) -> Result<Self> {
        let n = sample.n() as f64;
        let mut cnt = [0usize; 2];
        let mut sum = [CompensatedSum::new(), CompensatedSum::new()];
        for (&y, &x) in sample.y().iter().zip(sample.x()) {
            cnt[x as usize] += 1;
            sum[x as usize].add(y);
        }
        if cnt[1] == 0 {
            return Err(Error::NoTreatedUnits);
        }
        if cnt[0] == 0 {
            return Err(Error::InvalidSample("no untreated units".into()));
        }
        Ok(Self {
            p: [cnt[0] as f64 / n, cnt[1] as f64 / n],
            mean_y: [sum[0].total() / cnt[0] as f64, sum[1].total() / cnt[1] as f64],
        })
    }
}

/// `E(Y|X=1) - (E0 - p0 E(Y|X=0)) / p1` for either mean bound of `Y_0`.
pub fn att_from_mean0(arms: &ArmMeans, mean0: BoundPair) -> BoundPair {
    let f = |e0: f64| arms.mean_y[1] - (e0 - arms.p[0] * arms.mean_y[0]) / arms.p[1];
    BoundPair { lower: f(mean0.upper), upper: f(mean0.lower) }
}

impl<'a> BoundEngine<'a> {
    pub fn new(sample: &'a Sample, design: &'a DesignMatrices, theta: &'a ThetaHat, n_quad: usize) -> Self {
        Self { sample, design, theta, n_quad }
    }

    pub fn eps(&self) -> f64 {
        self.theta.eps
    }

    /// `L(x, r(w)'beta)`.
    pub fn propensity(&self, x: bool, w_row: &[f64]) -> f64 {
        self.theta.prop.predict(&self.design.r_row(w_row), x)
    }

    pub fn s_index(&self, kind: SIndex, x: bool, w_row: &[f64], tau: f64, c: f64) -> f64 {
        s_index(kind, tau, c, self.propensity(x, w_row), self.eps())
    }

    /// `q(x, w)' gamma_hat(j)` for every grid row `j`.
    fn fitted_quantiles(&self, q: &[f64]) -> Vec<f64> {
        let g = &self.theta.qr.gamma;
        (0..g.rows()).map(|j| dot(q, g.row(j))).collect()
    }

    fn interp(values: &[f64], gp: GridPoint) -> f64 {
        if gp.w == 0.0 {
            values[gp.lo]
        } else {
            (1.0 - gp.w) * values[gp.lo] + gp.w * values[gp.lo + 1]
        }
    }

    fn cq_from(&self, fitted: &[f64], tau: f64, c: f64, p: f64) -> BoundPair {
        let eps = self.eps();
        let up = s_index(SIndex::S2, tau, c, p, eps);
        let lo = s_index(SIndex::S4, tau, c, p, eps);
        let qr = &self.theta.qr;
        BoundPair { lower: Self::interp(fitted, qr.locate(lo)), upper: Self::interp(fitted, qr.locate(up)) }
    }

    /// Bounds on the `tau`-quantile of `Y_x` given `W = w`.
    pub fn cq_bound(&self, x: bool, w_row: &[f64], tau: f64, c: f64) -> BoundPair {
        let fitted = self.fitted_quantiles(&self.design.q_row(x, w_row));
        self.cq_from(&fitted, tau, c, self.propensity(x, w_row))
    }

    pub fn cqte_bounds(&self, w_row: &[f64], tau: f64, c: f64) -> BoundPair {
        BoundPair::difference(self.cq_bound(true, w_row, tau, c), self.cq_bound(false, w_row, tau, c))
    }

    fn e_from(&self, fitted: &[f64], c: f64, p: f64) -> BoundPair {
        let mut lo = CompensatedSum::new();
        let mut up = CompensatedSum::new();
        let nq = self.n_quad as f64;
        for m in 0..self.n_quad {
            let tau = (m as f64 + 0.5) / nq;
            let b = self.cq_from(fitted, tau, c, p);
            lo.add(b.lower);
            up.add(b.upper);
        }
        BoundPair { lower: lo.total() / nq, upper: up.total() / nq }
    }

    /// Bounds on `E[Y_x | W = w]`: the midpoint-rule integral of
    /// [`cq_bound`](Self::cq_bound) over `tau`.
    pub fn e_bounds(&self, x: bool, w_row: &[f64], c: f64) -> BoundPair {
        let fitted = self.fitted_quantiles(&self.design.q_row(x, w_row));
        self.e_from(&fitted, c, self.propensity(x, w_row))
    }

    pub fn cate_bounds(&self, w_row: &[f64], c: f64) -> BoundPair {
        BoundPair::difference(self.e_bounds(true, w_row, c), self.e_bounds(false, w_row, c))
    }

    /// [`e_bounds`](Self::e_bounds) at every sample row.
    pub fn row_e_bounds(&self, x: bool, c: f64) -> Vec<BoundPair> {
        (0..self.sample.n()).map(|i| self.e_bounds(x, self.sample.w_row(i), c)).collect()
    }

    /// Bounds on `E[Y_x]`: the sample average of the conditional bounds.
    pub fn mean_bounds(&self, x: bool, c: f64) -> BoundPair {
        mean_pair(&self.row_e_bounds(x, c))
    }

    pub fn ate_bounds(&self, c: f64) -> BoundPair {
        BoundPair::difference(self.mean_bounds(true, c), self.mean_bounds(false, c))
    }

    pub fn att_bounds(&self, c: f64) -> Result<BoundPair> {
        let arms = ArmMeans::of(self.sample)?;
        Ok(att_from_mean0(&arms, self.mean_bounds(false, c)))
    }

    pub fn bound(&self, estimand: &Estimand, c: f64) -> Result<BoundPair> {
        self.check_estimand(estimand)?;
        Ok(match estimand {
            Estimand::Ate => self.ate_bounds(c),
            Estimand::Att => self.att_bounds(c)?,
            Estimand::Cate { w } => self.cate_bounds(w, c),
            Estimand::Cqte { tau, w } => self.cqte_bounds(w, *tau, c),
            Estimand::Mean { x } => self.mean_bounds(*x, c),
        })
    }

    pub fn check_estimand(&self, estimand: &Estimand) -> Result<()> {
        let d = self.sample.w().cols();
        match estimand {
            Estimand::Cate { w } | Estimand::Cqte { w, .. } if w.len() != d => Err(Error::InvalidArgument(
                format!("covariate row has {} entries, expected {d}", w.len()),
            )),
            Estimand::Cqte { tau, .. } if !(*tau > 0.0 && *tau < 1.0) => {
                Err(Error::InvalidArgument(format!("quantile index {tau} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Bounds at every grid point. The curve is not monotonized.
    pub fn bound_curve(&self, estimand: &Estimand, c_grid: &[f64]) -> Result<BoundCurve> {
        validate_c_grid(c_grid)?;
        self.check_estimand(estimand)?;
        let pairs = match estimand {
            Estimand::Ate | Estimand::Att | Estimand::Mean { .. } => {
                // Share the per-row quantile fits across the grid.
                let fitted: [Vec<(Vec<f64>, f64)>; 2] = [false, true].map(|x| {
                    (0..self.sample.n())
                        .map(|i| {
                            let w = self.sample.w_row(i);
                            (self.fitted_quantiles(&self.design.q_row(x, w)), self.propensity(x, w))
                        })
                        .collect()
                });
                let mean = |x: bool, c: f64| {
                    let rows: Vec<BoundPair> =
                        fitted[x as usize].iter().map(|(f, p)| self.e_from(f, c, *p)).collect();
                    mean_pair(&rows)
                };
                let arms = ArmMeans::of(self.sample)?;
                c_grid
                    .iter()
                    .map(|&c| match estimand {
                        Estimand::Ate => BoundPair::difference(mean(true, c), mean(false, c)),
                        Estimand::Att => att_from_mean0(&arms, mean(false, c)),
                        Estimand::Mean { x } => mean(*x, c),
                        _ => unreachable!(),
                    })
                    .collect()
            }
            _ => c_grid.iter().map(|&c| self.bound(estimand, c)).collect::<Result<Vec<_>>>()?,
        };
        Ok(BoundCurve { estimand: estimand.clone(), c_grid: c_grid.to_vec(), pairs, monotonized: false })
    }
}

/// Compensated average of both endpoints.
pub fn mean_pair(rows: &[BoundPair]) -> BoundPair {
    let mut lo = CompensatedSum::new();
    let mut up = CompensatedSum::new();
    for r in rows {
        lo.add(r.lower);
        up.add(r.upper);
    }
    let n = rows.len() as f64;
    BoundPair { lower: lo.total() / n, upper: up.total() / n }
}
