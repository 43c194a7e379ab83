//! End-to-end runs behind the subcommands.

use std::path::Path;

use cdep_core::bounds::{breakdown_point, rearrange_monotone, BoundCurve};
use cdep_core::diagnostics::{
    delta_density, delta_k, ipw_baseline, ipw_estimates, leave_out_table, overlap_report, LeaveOutRow,
};
use cdep_core::inference::{
    breakdown_ci, pointwise_band, precondition_report, uniform_band, BootstrapSetup, PreconditionReport,
};
use cdep_core::{
    build_design, BootstrapConfig, BootstrapDraws, BootstrapMode, BoundEngine, BoundPair, Conclusion, DesignMatrices,
    DesignSpec, Estimand, Sample, ThetaHat, TuningParams,
};

use crate::config::{parse_estimand, parse_threshold, RunConfig, Threshold};
use crate::parallel::par_bootstrap;
use crate::report::*;
use crate::AppError;

/// Sample, design and first-stage fits shared by every subcommand.
pub struct Fitted {
    pub sample: Sample,
    pub spec: DesignSpec,
    pub design: DesignMatrices,
    pub tuning: TuningParams,
    pub theta: ThetaHat,
}

impl Fitted {
    pub fn new(cfg: &RunConfig, sample: Sample) -> Result<Self, AppError> {
        let spec = cfg.design_spec()?;
        let design = build_design(&sample, &spec)?;
        let tuning = cfg.tuning(sample.n());
        tuning.validate()?;
        let theta = ThetaHat::fit(&sample, &design, cfg.link.into(), &tuning)?;
        Ok(Self { sample, spec, design, tuning, theta })
    }

    pub fn engine(&self) -> BoundEngine<'_> {
        BoundEngine::new(&self.sample, &self.design, &self.theta, self.tuning.n_quad)
    }
}

pub fn load_sample(cfg: &RunConfig) -> Result<Sample, AppError> {
    let path = cfg.input.as_ref().ok_or_else(|| AppError::Config("no input file given (--input)".into()))?;
    crate::io::load_csv(path, &cfg.outcome, &cfg.treatment, &cfg.covariates)
}

/// File-name friendly label of a requested estimand.
pub fn file_label(spec: &str) -> String {
    spec.trim()
        .chars()
        .map(|ch| match ch {
            ':' | ',' => '_',
            '=' => '-',
            c if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' => c,
            _ => '_',
        })
        .collect()
}

fn conclusion_name(c: Conclusion) -> &'static str {
    match c {
        Conclusion::LowerAtLeast => "lower>=",
        Conclusion::UpperAtMost => "upper<=",
    }
}

/// Thresholds to evaluate: the configured ones, or by default the sign of
/// every estimand's point estimate at the smallest grid `c`.
fn thresholds(cfg: &RunConfig, curves: &[BoundCurve]) -> Result<Vec<Threshold>, AppError> {
    if !cfg.thresholds.is_empty() {
        return cfg.thresholds.iter().map(|t| parse_threshold(t)).collect();
    }
    Ok(cfg
        .estimands
        .iter()
        .zip(curves)
        .map(|(e, curve)| {
            let p = curve.pairs[0];
            let conclusion =
                if p.lower >= 0.0 || p.upper > 0.0 { Conclusion::LowerAtLeast } else { Conclusion::UpperAtMost };
            Threshold { estimand: e.trim().to_string(), conclusion, value: 0.0 }
        })
        .collect())
}

fn delta_rows(rows: Vec<LeaveOutRow>) -> Vec<DeltaRow> {
    rows.into_iter()
        .map(|r| DeltaRow {
            covariate: r.covariate,
            p50: r.quantiles.p50,
            p75: r.quantiles.p75,
            p90: r.quantiles.p90,
            max: r.quantiles.max,
            cdf_at_cbp: r.quantiles.cdf_at_cbp,
            loo_ate_change_pct: r.loo_ate_change.and_then(finite),
        })
        .collect()
}

fn overlap_summary(f: &Fitted) -> OverlapSummary {
    let o = overlap_report(&f.design, &f.theta.prop);
    OverlapSummary { min: o.min, max: o.max, deciles: o.deciles.to_vec(), cbar: o.cbar, flagged: o.flagged }
}

fn preconditions(r: &PreconditionReport, mode: BootstrapMode) -> Preconditions {
    let mut warnings = Vec::new();
    for (k, &c) in r.c_grid.iter().enumerate() {
        if r.mass_point[k] {
            let extra = if mode == BootstrapMode::Standard {
                "; the standard bootstrap is invalid here, use mode hdd"
            } else {
                ""
            };
            let msg = format!(
                "fitted propensity scores have a mass point within kappa = {:.4} of c or 1 - c at c = {c}{extra}",
                r.kappa
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Preconditions { kappa: r.kappa, near_fraction: r.near_fraction.clone(), mass_point: r.mass_point.clone(), warnings }
}

fn fitted_propensities(f: &Fitted) -> Vec<f64> {
    (0..f.sample.n()).map(|i| f.theta.prop.prob_treated(f.design.rmat.row(i))).collect()
}

/// Curves, draws and bands for every requested estimand.
pub struct Analysis {
    pub estimands: Vec<Estimand>,
    pub curves: Vec<BoundCurve>,
    pub draws: Option<BootstrapDraws>,
}

pub fn bootstrap_config(cfg: &RunConfig, tuning: &TuningParams) -> BootstrapConfig {
    BootstrapConfig { draws: cfg.draws, seed: cfg.seed, mode: cfg.mode.into(), alpha: cfg.alpha, tuning: *tuning }
}

pub fn run_curves(cfg: &RunConfig, f: &Fitted) -> Result<Analysis, AppError> {
    let estimands = cfg
        .estimands
        .iter()
        .map(|e| parse_estimand(e)?.resolve(&f.sample))
        .collect::<Result<Vec<_>, _>>()?;
    if cfg.draws == 0 {
        let engine = f.engine();
        let curves = estimands.iter().map(|e| engine.bound_curve(e, &cfg.c_grid)).collect::<Result<Vec<_>, _>>()?;
        return Ok(Analysis { estimands, curves, draws: None });
    }
    let bc = bootstrap_config(cfg, &f.tuning);
    let setup = BootstrapSetup::new(&f.sample, &f.design, &f.theta, &bc, &estimands, &cfg.c_grid)?;
    let draws = par_bootstrap(&setup, cfg.draws)?;
    log::info!("{} bootstrap draws, {} degenerate resamples redrawn", cfg.draws, draws.rejected);
    Ok(Analysis { estimands, curves: setup.curves().to_vec(), draws: Some(draws) })
}

pub fn analyze_sample(cfg: &RunConfig, sample: Sample) -> Result<SensitivityReport, AppError> {
    cfg.validate()?;
    let f = Fitted::new(cfg, sample)?;
    let n = f.sample.n();
    log::info!("fitted first stages on n = {n}, {} treated", f.sample.treated_count());
    let a = run_curves(cfg, &f)?;
    let mut notes = Vec::new();

    let mut curves = Vec::new();
    let mut uniform_bands = Vec::new();
    for (e, (spec, curve)) in cfg.estimands.iter().zip(&a.curves).enumerate() {
        let mono = rearrange_monotone(curve);
        let (pointwise, uniform) = match &a.draws {
            Some(d) => {
                let pw = pointwise_band(curve, &d.devs[e], cfg.alpha, n)?;
                let un = uniform_band(curve, &d.devs[e], cfg.alpha, n)?;
                let band = Band { lb: pw.lb, ub: pw.ub, crit: pw.crit };
                let ub = UniformBand {
                    lb: un.grid.lb.clone(),
                    ub: un.grid.ub.clone(),
                    crit: un.grid.crit.clone(),
                    lb_step: un.interpolated.lb.clone(),
                    ub_step: un.interpolated.ub.clone(),
                    t_star: un.t_star,
                    sigma: un.sigma.clone(),
                };
                uniform_bands.push(Some(un.interpolated));
                (Some(band), Some(ub))
            }
            None => {
                uniform_bands.push(None);
                (None, None)
            }
        };
        let w = match &a.estimands[e] {
            Estimand::Cate { w } | Estimand::Cqte { w, .. } => Some(w.clone()),
            _ => None,
        };
        curves.push(CurveReport {
            label: file_label(spec),
            spec: spec.trim().to_string(),
            w,
            c: curve.c_grid.clone(),
            lower: curve.lower(),
            upper: curve.upper(),
            lower_monotone: mono.lower(),
            upper_monotone: mono.upper(),
            pointwise,
            uniform,
        });
    }

    let mut breakdown = Vec::new();
    for th in thresholds(cfg, &a.curves)? {
        let e = cfg.estimands.iter().position(|s| s.trim() == th.estimand).expect("validated");
        let bp = breakdown_point(&rearrange_monotone(&a.curves[e]), th.conclusion, th.value);
        let c_l = uniform_bands[e].as_ref().map(|b| breakdown_ci(b, th.conclusion, th.value));
        breakdown.push(BreakdownRow {
            estimand: th.estimand,
            conclusion: conclusion_name(th.conclusion).into(),
            threshold: th.value,
            c_bp: bp.c_bp,
            c_l,
        });
    }

    let c_bp = breakdown.first().map(|b| b.c_bp);
    let deltak = match leave_out_table(&f.sample, &f.spec, &f.design, &f.theta.prop, c_bp) {
        Ok(rows) => delta_rows(rows),
        Err(err) => {
            let msg = format!("leave-out-variable diagnostics unavailable: {err}");
            log::warn!("{msg}");
            notes.push(msg);
            Vec::new()
        }
    };

    let baseline = if cfg.draws >= 2 {
        let b = ipw_baseline(&f.sample, &f.design, cfg.link.into(), cfg.draws, cfg.seed)?;
        Baseline { ipw_ate: b.ate, ipw_att: b.att, se_ate: finite(b.se_ate), se_att: finite(b.se_att), draws: b.draws }
    } else {
        let (ate, att) = ipw_estimates(f.sample.y(), f.sample.x(), &fitted_propensities(&f));
        Baseline { ipw_ate: ate, ipw_att: att, se_ate: None, se_att: None, draws: 0 }
    };

    let overlap = overlap_summary(&f);
    let pre = precondition_report(&f.design, &f.theta, &cfg.c_grid, f.tuning.kappa);
    let preconditions = preconditions(&pre, cfg.mode.into());
    if cfg.c_grid.last().is_some_and(|&c| c >= overlap.cbar) {
        notes.push(format!(
            "for c >= {:.6} the bounds are the eps-trimmed no-assumption bounds (eps = {})",
            overlap.cbar, f.tuning.eps
        ));
    }

    Ok(SensitivityReport {
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            seed: cfg.seed,
            n,
            n_treated: f.sample.treated_count(),
            tuning: (&f.tuning).into(),
            q_terms: f.design.q_terms.iter().map(|t| t.to_string()).collect(),
            r_terms: f.design.r_terms.iter().map(|t| t.to_string()).collect(),
            dropped_columns: f.design.dropped.iter().map(|d| format!("{:?}: {}", d.design, d.term)).collect(),
        },
        baseline: Some(baseline),
        curves,
        breakdown,
        deltak,
        overlap,
        preconditions,
        bootstrap: a.draws.as_ref().map(|d| BootstrapSummary {
            mode: match d.mode {
                BootstrapMode::Hdd => "hdd".into(),
                BootstrapMode::Standard => "standard".into(),
            },
            draws: d.draws(),
            rejected: d.rejected,
            alpha: cfg.alpha,
        }),
        notes,
    })
}

pub fn write_analysis(dir: &Path, report: &SensitivityReport) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    write_file(dir, "report.json", &report.to_json())?;
    for c in &report.curves {
        write_file(dir, &format!("curve_{}.csv", c.label), &curve_csv(c))?;
    }
    write_file(dir, "deltak.csv", &deltak_csv(&report.deltak))?;
    write_file(dir, "loo_ate.csv", &loo_csv(&report.deltak))?;
    write_file(dir, "breakdown.csv", &breakdown_csv(&report.breakdown))
}

pub fn analyze(cfg: &RunConfig) -> Result<SensitivityReport, AppError> {
    let report = analyze_sample(cfg, load_sample(cfg)?)?;
    write_analysis(&cfg.out_dir, &report)?;
    Ok(report)
}

pub struct Diagnosis {
    pub deltak: Vec<DeltaRow>,
    pub overlap: OverlapSummary,
    /// Kernel density of `Delta_k` per covariate.
    pub densities: Vec<(String, Vec<(f64, f64)>)>,
}

/// Leave-out-variable-k and overlap tables. The CDF column is filled when a
/// threshold is configured, using the breakdown point of the point curve.
pub fn diagnose_sample(cfg: &RunConfig, sample: Sample) -> Result<Diagnosis, AppError> {
    let f = Fitted::new(cfg, sample)?;
    let c_bp = match cfg.thresholds.first() {
        Some(t) => {
            let th = parse_threshold(t)?;
            let est = parse_estimand(&th.estimand)?.resolve(&f.sample)?;
            let curve = f.engine().bound_curve(&est, &cfg.c_grid)?;
            Some(breakdown_point(&rearrange_monotone(&curve), th.conclusion, th.value).c_bp)
        }
        None => None,
    };
    let rows = leave_out_table(&f.sample, &f.spec, &f.design, &f.theta.prop, c_bp)?;
    let mut densities = Vec::new();
    for r in &rows {
        let d = delta_k(&f.sample, &f.spec, &f.design, &f.theta.prop, &r.covariate)?;
        densities.push((r.covariate.clone(), delta_density(&d, None)?));
    }
    Ok(Diagnosis { deltak: delta_rows(rows), overlap: overlap_summary(&f), densities })
}

pub fn diagnose(cfg: &RunConfig) -> Result<Diagnosis, AppError> {
    let d = diagnose_sample(cfg, load_sample(cfg)?)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    write_file(dir, "deltak.csv", &deltak_csv(&d.deltak))?;
    write_file(dir, "loo_ate.csv", &loo_csv(&d.deltak))?;
    write_file(dir, "overlap.csv", &overlap_csv(&d.overlap))?;
    for (k, pts) in &d.densities {
        write_file(dir, &format!("density_{}.csv", file_label(k)), &density_csv(pts))?;
    }
    Ok(d)
}

/// One bound pair without inference.
pub fn bounds_sample(cfg: &RunConfig, sample: Sample, estimand: &str, c: f64) -> Result<BoundPair, AppError> {
    let spec = parse_estimand(estimand)?;
    cdep_core::bounds::SensitivityParam::new(c)?;
    let f = Fitted::new(cfg, sample)?;
    let est = spec.resolve(&f.sample)?;
    Ok(f.engine().bound(&est, c)?)
}
