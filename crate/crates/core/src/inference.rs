//! Bootstrap inference on bound curves.
//!
//! Each draw resamples the rows once. In [`BootstrapMode::Hdd`] the resample
//! feeds two components: the refitted first stages, pushed through the
//! analytical derivative estimators of [`crate::hdd`], and the resampled
//! average of the conditional mean bounds at the original fit. In
//! [`BootstrapMode::Standard`] the full bound estimator is recomputed on the
//! resample, which is valid only when the propensity score has no mass at
//! `c` or `1 - c` (see [`precondition_report`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{
    crossing, mean_pair, validate_c_grid, ArmMeans, BoundCurve, BoundEngine, BoundPair, Conclusion, Estimand,
};
use crate::dataset::{DesignMatrices, Sample};
use crate::first_stage::{ThetaHat, TuningParams};
use crate::hdd::{Direction, HddEvaluator, HddValue, MeanHddPlan};
use crate::numeric::{sample_sd, CompensatedSum};
use crate::{Error, ErrorCategory, Result};

/// Consecutive degenerate resamples tolerated within one draw.
pub const MAX_REDRAWS: usize = 100;
/// Minimum number of draws for a critical value.
pub const MIN_DRAWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BootstrapMode {
    /// Analytical directional-derivative bootstrap.
    Hdd,
    /// Nonparametric bootstrap of the bound estimator itself.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub seed: u64,
    pub mode: BootstrapMode,
    pub alpha: f64,
    pub tuning: TuningParams,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::InvalidArgument("need at least one bootstrap draw".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        self.tuning.validate()
    }
}

/// `sqrt(n)`-scaled deviations of the lower and upper bound in one draw.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DevPair {
    pub lower: f64,
    pub upper: f64,
}

impl DevPair {
    /// `max{dev_lower, -dev_upper}`: the draw covers the estimated interval
    /// widened by `z` exactly when this is at most `z`.
    pub fn excess(&self) -> f64 {
        self.lower.max(-self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub mode: BootstrapMode,
    pub c_grid: Vec<f64>,
    pub estimands: Vec<Estimand>,
    /// `devs[e][k][b]`: estimand `e`, grid point `k`, draw `b`.
    pub devs: Vec<Vec<Vec<DevPair>>>,
    /// Degenerate resamples that were rejected and redrawn.
    pub rejected: usize,
}

impl BootstrapDraws {
    pub fn draws(&self) -> usize {
        self.devs.first().and_then(|e| e.first()).map_or(0, Vec::len)
    }
}

/// Independent random stream of draw `b`.
pub fn draw_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn resample_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn multiplicities(indices: &[usize], n: usize) -> Vec<u32> {
    let mut m = vec![0u32; n];
    for &i in indices {
        m[i] += 1;
    }
    m
}

/// First stages refitted on a resample.
#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    pub sample: Sample,
    pub design: DesignMatrices,
    pub theta: ThetaHat,
}

/// Refits both first stages on the rows `indices`, on the same grids and
/// design terms as `theta`.
pub fn bootstrap_theta(
    sample: &Sample,
    design: &DesignMatrices,
    theta: &ThetaHat,
    tuning: &TuningParams,
    indices: &[usize],
) -> Result<Refit> {
    let rs = sample.resample(indices)?;
    let rd = design.for_sample(&rs)?;
    let th = ThetaHat::fit(&rs, &rd, theta.link(), tuning)?;
    Ok(Refit { sample: rs, design: rd, theta: th })
}

/// Whether a refit failure means the resample was degenerate (and should be
/// redrawn) rather than a configuration problem.
pub fn is_degenerate_resample(err: &Error) -> bool {
    !matches!(err.category(), ErrorCategory::Config)
}

/// `sqrt(n) (mean over the resample - mean over the sample)` of the
/// conditional bounds, as `(upper, lower)`.
pub fn ep_component(gamma2: &[BoundPair], indices: &[usize]) -> HddValue {
    ep_from_multiplicities(gamma2, &multiplicities(indices, gamma2.len()))
}

pub fn ep_from_multiplicities(gamma2: &[BoundPair], mult: &[u32]) -> HddValue {
    let n = gamma2.len() as f64;
    let mut up = CompensatedSum::new();
    let mut lo = CompensatedSum::new();
    for (g, &m) in gamma2.iter().zip(mult) {
        if m != 1 {
            let f = m as f64 - 1.0;
            up.add(f * g.upper);
            lo.add(f * g.lower);
        }
    }
    let k = n.sqrt() / n;
    HddValue { upper: k * up.total(), lower: k * lo.total() }
}

/// Mean-bound draw: derivative along `dir` plus the empirical-process part.
pub fn mean_bound_draw(plan: &MeanHddPlan, dir: &Direction, mult: &[u32]) -> HddValue {
    let d = plan.apply(dir);
    let e = ep_from_multiplicities(&plan.gamma2, mult);
    HddValue { upper: d.upper + e.upper, lower: d.lower + e.lower }
}

/// ATE deviations from the mean-bound draws of both arms.
pub fn ate_draw(m1: HddValue, m0: HddValue) -> DevPair {
    DevPair { lower: m1.lower - m0.upper, upper: m1.upper - m0.lower }
}

/// Bootstrap fluctuations of the arm shares and arm means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmFluctuation {
    /// `Z_{E(Y|X=x)}`.
    pub z_mean: [f64; 2],
    /// `Z_{p_x}`.
    pub z_p: [f64; 2],
}

impl ArmFluctuation {
    pub fn compute(sample: &Sample, arms: &ArmMeans, mult: &[u32]) -> Self {
        let n = sample.n() as f64;
        let mut gy = [CompensatedSum::new(), CompensatedSum::new()];
        let mut g1 = [CompensatedSum::new(), CompensatedSum::new()];
        for ((&y, &x), &m) in sample.y().iter().zip(sample.x()).zip(mult) {
            let f = m as f64 - 1.0;
            gy[x as usize].add(f * y);
            g1[x as usize].add(f);
        }
        let k = n.sqrt() / n;
        let mut out = Self { z_mean: [0.0; 2], z_p: [0.0; 2] };
        for x in 0..2 {
            let gyx = k * gy[x].total();
            let g1x = k * g1[x].total();
            out.z_p[x] = g1x;
            out.z_mean[x] = (gyx - arms.mean_y[x] * g1x) / arms.p[x];
        }
        out
    }
}

/// ATT deviations from the mean-bound draw of the control arm.
pub fn att_draw(m0: HddValue, mean0: BoundPair, arms: &ArmMeans, z: &ArmFluctuation) -> DevPair {
    let (p0, p1) = (arms.p[0], arms.p[1]);
    let e0 = arms.mean_y[0];
    let dev = |m: f64, bound: f64| {
        z.z_mean[1] - m / p1 + p0 / p1 * z.z_mean[0] + e0 / p1 * z.z_p[0] + (bound - e0 * p0) / (p1 * p1) * z.z_p[1]
    };
    DevPair { lower: dev(m0.upper, mean0.upper), upper: dev(m0.lower, mean0.lower) }
}

/// Conditional-level deviations (CQTE, CATE) from the two arms' derivatives.
pub fn conditional_draw(d1: HddValue, d0: HddValue) -> DevPair {
    DevPair { lower: d1.lower - d0.upper, upper: d1.upper - d0.lower }
}

/// Everything a draw needs that does not depend on the resample.
pub struct BootstrapSetup<'a> {
    sample: &'a Sample,
    design: &'a DesignMatrices,
    theta: &'a ThetaHat,
    config: BootstrapConfig,
    estimands: Vec<Estimand>,
    c_grid: Vec<f64>,
    arms: ArmMeans,
    /// `plans[k][x]` at grid point `k`, present when an estimand averages over `W`.
    plans: Vec<[MeanHddPlan; 2]>,
    /// Point estimates `curves[e].pairs[k]` (not monotonized).
    curves: Vec<BoundCurve>,
}

impl<'a> BootstrapSetup<'a> {
    pub fn new(
        sample: &'a Sample,
        design: &'a DesignMatrices,
        theta: &'a ThetaHat,
        config: &BootstrapConfig,
        estimands: &[Estimand],
        c_grid: &[f64],
    ) -> Result<Self> {
        config.validate()?;
        validate_c_grid(c_grid)?;
        let engine = BoundEngine::new(sample, design, theta, config.tuning.n_quad);
        let curves = estimands.iter().map(|e| engine.bound_curve(e, c_grid)).collect::<Result<Vec<_>>>()?;
        let need_plans =
            config.mode == BootstrapMode::Hdd && estimands.iter().any(Estimand::is_unconditional);
        let plans = if need_plans {
            let ev = HddEvaluator::new(engine, &config.tuning);
            c_grid.iter().map(|&c| [ev.mean_plan(false, c), ev.mean_plan(true, c)]).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            sample,
            design,
            theta,
            config: *config,
            estimands: estimands.to_vec(),
            c_grid: c_grid.to_vec(),
            arms: ArmMeans::of(sample)?,
            plans,
            curves,
        })
    }

    pub fn curves(&self) -> &[BoundCurve] {
        &self.curves
    }

    fn engine(&self) -> BoundEngine<'a> {
        BoundEngine::new(self.sample, self.design, self.theta, self.config.tuning.n_quad)
    }

    /// Draw `b`: resamples from its own stream until the refit succeeds.
    /// Returns `devs[e][k]` and the number of rejected resamples.
    pub fn draw(&self, b: usize) -> Result<(Vec<Vec<DevPair>>, usize)> {
        let mut rng = draw_rng(self.config.seed, b);
        let n = self.sample.n();
        for attempt in 0..MAX_REDRAWS {
            let idx = resample_indices(n, &mut rng);
            match self.draw_with_indices(&idx) {
                Ok(d) => return Ok((d, attempt)),
                Err(e) if is_degenerate_resample(&e) => {
                    log::debug!("draw {b}: rejected resample ({e})");
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::DegenerateResamples { attempts: MAX_REDRAWS })
    }

    /// Deviations for a given resample.
    pub fn draw_with_indices(&self, idx: &[usize]) -> Result<Vec<Vec<DevPair>>> {
        let refit = bootstrap_theta(self.sample, self.design, self.theta, &self.config.tuning, idx)?;
        match self.config.mode {
            BootstrapMode::Hdd => Ok(self.hdd_devs(&refit, idx)),
            BootstrapMode::Standard => self.standard_devs(&refit),
        }
    }

    fn hdd_devs(&self, refit: &Refit, idx: &[usize]) -> Vec<Vec<DevPair>> {
        let n = self.sample.n();
        let dir = Direction::between(&refit.theta, self.theta, n);
        let mult = multiplicities(idx, n);
        let ev = HddEvaluator::new(self.engine(), &self.config.tuning);
        let means: Vec<[HddValue; 2]> =
            self.plans.iter().map(|p| [mean_bound_draw(&p[0], &dir, &mult), mean_bound_draw(&p[1], &dir, &mult)]).collect();
        let z = ArmFluctuation::compute(self.sample, &self.arms, &mult);
        let mean0: Vec<BoundPair> = self.plans.iter().map(|p| mean_pair(&p[0].gamma2)).collect();
        self.estimands
            .iter()
            .map(|est| {
                self.c_grid
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| match est {
                        Estimand::Ate => ate_draw(means[k][1], means[k][0]),
                        Estimand::Att => att_draw(means[k][0], mean0[k], &self.arms, &z),
                        Estimand::Mean { x } => {
                            let m = means[k][*x as usize];
                            DevPair { lower: m.lower, upper: m.upper }
                        }
                        Estimand::Cate { w } => {
                            conditional_draw(ev.gamma2_hdd(true, w, c, &dir), ev.gamma2_hdd(false, w, c, &dir))
                        }
                        Estimand::Cqte { tau, w } => conditional_draw(
                            ev.gamma1_hdd(true, w, *tau, c, &dir),
                            ev.gamma1_hdd(false, w, *tau, c, &dir),
                        ),
                    })
                    .collect()
            })
            .collect()
    }

    fn standard_devs(&self, refit: &Refit) -> Result<Vec<Vec<DevPair>>> {
        let rn = (self.sample.n() as f64).sqrt();
        let engine = BoundEngine::new(&refit.sample, &refit.design, &refit.theta, self.config.tuning.n_quad);
        self.estimands
            .iter()
            .zip(&self.curves)
            .map(|(est, base)| {
                let star = engine.bound_curve(est, &self.c_grid)?;
                Ok(star
                    .pairs
                    .iter()
                    .zip(&base.pairs)
                    .map(|(s, b)| DevPair { lower: rn * (s.lower - b.lower), upper: rn * (s.upper - b.upper) })
                    .collect())
            })
            .collect()
    }

    /// Collects per-draw outputs (in draw order) into [`BootstrapDraws`].
    pub fn assemble(&self, outcomes: Vec<(Vec<Vec<DevPair>>, usize)>) -> BootstrapDraws {
        let b = outcomes.len();
        let mut devs = vec![vec![Vec::with_capacity(b); self.c_grid.len()]; self.estimands.len()];
        let mut rejected = 0;
        for (d, r) in outcomes {
            rejected += r;
            for (e, per_c) in d.into_iter().enumerate() {
                for (k, v) in per_c.into_iter().enumerate() {
                    devs[e][k].push(v);
                }
            }
        }
        BootstrapDraws {
            mode: self.config.mode,
            c_grid: self.c_grid.clone(),
            estimands: self.estimands.clone(),
            devs,
            rejected,
        }
    }
}

/// Serial bootstrap. Draw `b` depends only on `(seed, b)`, so any parallel
/// schedule over [`BootstrapSetup::draw`] gives the same result.
pub fn run_bootstrap(
    sample: &Sample,
    design: &DesignMatrices,
    theta: &ThetaHat,
    config: &BootstrapConfig,
    estimands: &[Estimand],
    c_grid: &[f64],
) -> Result<BootstrapDraws> {
    let setup = BootstrapSetup::new(sample, design, theta, config, estimands, c_grid)?;
    let outcomes = (0..config.draws).map(|b| setup.draw(b)).collect::<Result<Vec<_>>>()?;
    Ok(setup.assemble(outcomes))
}

/// Standard-mode bootstrap of one estimand.
pub fn standard_bootstrap(
    sample: &Sample,
    design: &DesignMatrices,
    theta: &ThetaHat,
    config: &BootstrapConfig,
    estimand: &Estimand,
    c_grid: &[f64],
) -> Result<BootstrapDraws> {
    let config = BootstrapConfig { mode: BootstrapMode::Standard, ..*config };
    run_bootstrap(sample, design, theta, &config, core::slice::from_ref(estimand), c_grid)
}

/// Index (0-based) of the `ceil((1 - alpha) B)`-th order statistic.
fn order_index(b: usize, alpha: f64) -> usize {
    let k = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    k.clamp(1, b) - 1
}

/// Smallest `z` with empirical `P(dev_lower <= z and dev_upper >= -z) >= 1 - alpha`.
pub fn critical_value(devs: &[DevPair], alpha: f64) -> Result<f64> {
    if devs.len() < MIN_DRAWS {
        return Err(Error::TooFewDraws { got: devs.len(), need: MIN_DRAWS });
    }
    let mut m: Vec<f64> = devs.iter().map(DevPair::excess).collect();
    m.sort_by(f64::total_cmp);
    Ok(m[order_index(m.len(), alpha)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Pointwise,
    UniformGrid,
    UniformInterpolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub kind: BandKind,
    pub alpha: f64,
    pub c_grid: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// Critical value `d_hat(c)` at each grid point.
    pub crit: Vec<f64>,
}

impl ConfidenceBand {
    /// Band at an arbitrary `c`. Grid bands are only defined on the grid;
    /// the interpolated uniform band is a step function that takes the value
    /// of the nearest grid point at or above `c`.
    pub fn eval(&self, c: f64) -> Option<(f64, f64)> {
        match self.kind {
            BandKind::UniformInterpolated => {
                let k = self.c_grid.partition_point(|&g| g < c);
                (k < self.c_grid.len()).then(|| (self.lb[k], self.ub[k]))
            }
            _ => self.c_grid.iter().position(|&g| g == c).map(|k| (self.lb[k], self.ub[k])),
        }
    }
}

fn check_shapes(curve: &BoundCurve, devs: &[Vec<DevPair>]) -> Result<()> {
    if devs.len() != curve.c_grid.len() {
        return Err(Error::InvalidArgument(format!(
            "draws cover {} grid points, curve has {}",
            devs.len(),
            curve.c_grid.len()
        )));
    }
    Ok(())
}

/// `[lower(c) - d(c)/sqrt(n), upper(c) + d(c)/sqrt(n)]` with a critical
/// value per grid point.
pub fn pointwise_band(curve: &BoundCurve, devs: &[Vec<DevPair>], alpha: f64, n: usize) -> Result<ConfidenceBand> {
    check_shapes(curve, devs)?;
    let crit = devs.iter().map(|d| critical_value(d, alpha)).collect::<Result<Vec<_>>>()?;
    Ok(widen(curve, crit, alpha, n, BandKind::Pointwise))
}

fn widen(curve: &BoundCurve, crit: Vec<f64>, alpha: f64, n: usize, kind: BandKind) -> ConfidenceBand {
    let rn = (n as f64).sqrt();
    ConfidenceBand {
        kind,
        alpha,
        c_grid: curve.c_grid.clone(),
        lb: curve.pairs.iter().zip(&crit).map(|(p, d)| p.lower - d / rn).collect(),
        ub: curve.pairs.iter().zip(&crit).map(|(p, d)| p.upper + d / rn).collect(),
        crit,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformBands {
    /// Simultaneous over the grid points.
    pub grid: ConfidenceBand,
    /// Monotone step-function extension covering every `c` in `[0, c_K]`.
    pub interpolated: ConfidenceBand,
    /// Studentized sup-t critical value.
    pub t_star: f64,
    /// Bootstrap standard deviation of the excess at each grid point.
    pub sigma: Vec<f64>,
}

/// Band simultaneous over the grid, from the studentized maximum of the
/// excesses across grid points.
pub fn uniform_band(curve: &BoundCurve, devs: &[Vec<DevPair>], alpha: f64, n: usize) -> Result<UniformBands> {
    check_shapes(curve, devs)?;
    let b = devs[0].len();
    if b < MIN_DRAWS {
        return Err(Error::TooFewDraws { got: b, need: MIN_DRAWS });
    }
    if devs.iter().any(|d| d.len() != b) {
        return Err(Error::InvalidArgument("ragged bootstrap draws".into()));
    }
    let grid = &curve.c_grid;
    if grid.first() != Some(&0.0) || grid.last() != Some(&1.0) {
        log::warn!("uniform band over a c grid without both endpoints 0 and 1");
    }
    let excess: Vec<Vec<f64>> = devs.iter().map(|d| d.iter().map(DevPair::excess).collect()).collect();
    let sigma: Vec<f64> = excess.iter().map(|m| sample_sd(m).max(1e-12)).collect();
    let mut sup: Vec<f64> = (0..b)
        .map(|j| excess.iter().zip(&sigma).map(|(m, s)| m[j] / s).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    sup.sort_by(f64::total_cmp);
    let t_star = sup[order_index(b, alpha)];
    let crit: Vec<f64> = sigma.iter().map(|s| t_star * s).collect();
    let grid_band = widen(curve, crit, alpha, n, BandKind::UniformGrid);
    let mut interpolated = grid_band.clone();
    interpolated.kind = BandKind::UniformInterpolated;
    for k in 1..grid.len() {
        interpolated.ub[k] = interpolated.ub[k].max(interpolated.ub[k - 1]);
        interpolated.lb[k] = interpolated.lb[k].min(interpolated.lb[k - 1]);
    }
    Ok(UniformBands { grid: grid_band, interpolated, t_star, sigma })
}

/// Lower confidence bound for the breakdown point: where the band's binding
/// edge crosses `t`.
pub fn breakdown_ci(band: &ConfidenceBand, conclusion: Conclusion, t: f64) -> f64 {
    let margin: Vec<f64> = match conclusion {
        Conclusion::LowerAtLeast => band.lb.iter().map(|v| v - t).collect(),
        Conclusion::UpperAtMost => band.ub.iter().map(|v| t - v).collect(),
    };
    crossing(&band.c_grid, &margin)
}

/// Diagnostics for the standard bootstrap's validity condition at each `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionReport {
    pub c_grid: Vec<f64>,
    pub kappa: f64,
    /// Share of rows with fitted propensity within `kappa` of `c` or `1 - c`.
    pub near_fraction: Vec<f64>,
    /// A cluster of identical fitted propensities lies within `kappa` of `c`
    /// or `1 - c`.
    pub mass_point: Vec<bool>,
}

impl PreconditionReport {
    pub fn any_mass_point(&self) -> bool {
        self.mass_point.iter().any(|&m| m)
    }
}

pub fn precondition_report(
    design: &DesignMatrices,
    theta: &ThetaHat,
    c_grid: &[f64],
    kappa: f64,
) -> PreconditionReport {
    let n = design.rmat.rows();
    let mut p: Vec<f64> = (0..n).map(|i| theta.prop.prob_treated(design.rmat.row(i))).collect();
    p.sort_by(f64::total_cmp);
    // clusters of numerically equal values
    let min_size = 2usize.max((0.01 * n as f64).ceil() as usize);
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || p[i] - p[i - 1] > 1e-9 {
            if i - start >= min_size {
                clusters.push(p[start]);
            }
            start = i;
        }
    }
    let near = |v: f64, c: f64| (v - c).abs() <= kappa || (v - (1.0 - c)).abs() <= kappa;
    PreconditionReport {
        c_grid: c_grid.to_vec(),
        kappa,
        near_fraction: c_grid.iter().map(|&c| p.iter().filter(|&&v| near(v, c)).count() as f64 / n as f64).collect(),
        mass_point: c_grid.iter().map(|&c| clusters.iter().any(|&v| near(v, c))).collect(),
    }
}
