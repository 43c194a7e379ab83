//! Calibration and baseline tools: leave-out-variable-k propensity
//! comparisons, IPW point estimates, overlap summaries.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::bounds::cbar;
use crate::dataset::{build_design, DesignMatrices, DesignSpec, Sample};
use crate::first_stage::{fit_propensity, Link, PropensityFit};
use crate::inference::{draw_rng, is_degenerate_resample, resample_indices, MAX_REDRAWS};
use crate::numeric::{norm_pdf, quantile_sorted, sample_sd, CompensatedSum};
use crate::{Error, Result};

/// Fitted propensities at or beyond this distance from 0 and 1 count as
/// overlap failures for IPW.
pub const OVERLAP_FLOOR: f64 = 1e-10;

fn fitted_propensities(design: &DesignMatrices, fit: &PropensityFit) -> Vec<f64> {
    (0..design.rmat.rows()).map(|i| fit.prob_treated(design.rmat.row(i))).collect()
}

/// `|p(W_i) - p_{-k}(W_{-k,i})|` where the second fit drops every design
/// term that references covariate `k`.
pub fn delta_k(
    sample: &Sample,
    spec: &DesignSpec,
    design: &DesignMatrices,
    fit_full: &PropensityFit,
    k: &str,
) -> Result<Vec<f64>> {
    sample.covariate_index(k)?;
    let reduced = spec.without_covariate(k);
    if reduced.r_terms.is_empty() {
        return Err(Error::InvalidDesign(alloc::format!("dropping `{k}` leaves an empty propensity design")));
    }
    let rd = build_design(sample, &reduced)?;
    let fit_k = fit_propensity(&rd, sample.x(), fit_full.link)?;
    let full = fitted_propensities(design, fit_full);
    let part = fitted_propensities(&rd, &fit_k);
    Ok(full.iter().zip(&part).map(|(a, b)| (a - b).abs()).collect())
}

/// Quantiles of a leave-out sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaQuantiles {
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    /// `max_i Delta_{k,i}`.
    pub max: f64,
    /// Empirical CDF at the breakdown point, when one is supplied.
    pub cdf_at_cbp: Option<f64>,
}

pub fn delta_quantiles(delta: &[f64], c_bp: Option<f64>) -> DeltaQuantiles {
    let mut s = delta.to_vec();
    s.sort_by(f64::total_cmp);
    DeltaQuantiles {
        p50: quantile_sorted(&s, 0.5),
        p75: quantile_sorted(&s, 0.75),
        p90: quantile_sorted(&s, 0.9),
        max: s[s.len() - 1],
        cdf_at_cbp: c_bp.map(|c| s.partition_point(|&v| v <= c) as f64 / s.len() as f64),
    }
}

/// Grid size of [`delta_density`].
pub const DENSITY_POINTS: usize = 512;

/// Silverman's rule of thumb, with a small fallback for samples without
/// spread.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let sd = sample_sd(values);
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        (0.01 * s[s.len() - 1].abs()).max(1e-3)
    }
}

/// Gaussian kernel density on `[0, max + 4 h]`, reflected at 0.
pub fn delta_density(delta: &[f64], bandwidth: Option<f64>) -> Result<Vec<(f64, f64)>> {
    if delta.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidArgument(alloc::format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(delta),
    };
    let max = delta.iter().fold(0.0f64, |m, &v| m.max(v));
    let top = max + 4.0 * h;
    let norm = 1.0 / (delta.len() as f64 * h);
    Ok((0..DENSITY_POINTS)
        .map(|j| {
            let x = top * j as f64 / (DENSITY_POINTS - 1) as f64;
            let mut acc = CompensatedSum::new();
            for &v in delta {
                acc.add(norm_pdf((x - v) / h) + norm_pdf((x + v) / h));
            }
            (x, norm * acc.total())
        })
        .collect())
}

/// Normalized IPW estimates `(ATE, ATT)` from fitted propensities.
pub fn ipw_estimates(y: &[f64], x: &[bool], p: &[f64]) -> (f64, f64) {
    // treated: sum y/p, sum 1/p, sum y; controls: sum y/(1-p), sum 1/(1-p),
    // sum y p/(1-p), sum p/(1-p)
    let mut s = [CompensatedSum::new(); 7];
    let mut treated = 0usize;
    for ((&yi, &xi), &pi) in y.iter().zip(x).zip(p) {
        if xi {
            s[0].add(yi / pi);
            s[1].add(1.0 / pi);
            s[2].add(yi);
            treated += 1;
        } else {
            let w = 1.0 / (1.0 - pi);
            let o = pi * w;
            s[3].add(yi * w);
            s[4].add(w);
            s[5].add(yi * o);
            s[6].add(o);
        }
    }
    let t = s.map(|a| a.total());
    let ate = t[0] / t[1] - t[3] / t[4];
    let att = t[2] / treated as f64 - t[5] / t[6];
    (ate, att)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpwBaseline {
    pub ate: f64,
    pub att: f64,
    pub se_ate: f64,
    pub se_att: f64,
    pub draws: usize,
    pub seed: u64,
}

fn check_overlap(p: &[f64]) -> Result<()> {
    let rows: Vec<usize> = p
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(OVERLAP_FLOOR..=1.0 - OVERLAP_FLOOR).contains(&v))
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        Ok(())
    } else {
        Err(Error::OverlapFailure { rows })
    }
}

fn ipw_on(sample: &Sample, design: &DesignMatrices, link: Link) -> Result<(f64, f64)> {
    let fit = fit_propensity(design, sample.x(), link)?;
    let p = fitted_propensities(design, &fit);
    check_overlap(&p)?;
    Ok(ipw_estimates(sample.y(), sample.x(), &p))
}

/// IPW point estimates with bootstrap standard errors; the propensity score
/// is refitted in every draw.
pub fn ipw_baseline(sample: &Sample, design: &DesignMatrices, link: Link, draws: usize, seed: u64) -> Result<IpwBaseline> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws for standard errors".into()));
    }
    let (ate, att) = ipw_on(sample, design, link)?;
    let mut ates = Vec::with_capacity(draws);
    let mut atts = Vec::with_capacity(draws);
    for b in 0..draws {
        let mut rng = draw_rng(seed, b);
        let mut done = false;
        for _ in 0..MAX_REDRAWS {
            let idx = resample_indices(sample.n(), &mut rng);
            let attempt = sample.resample(&idx).and_then(|rs| {
                let rd = design.for_sample(&rs)?;
                ipw_on(&rs, &rd, link)
            });
            match attempt {
                Ok((a, t)) => {
                    ates.push(a);
                    atts.push(t);
                    done = true;
                    break;
                }
                Err(e) if is_degenerate_resample(&e) => continue,
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(Error::DegenerateResamples { attempts: MAX_REDRAWS });
        }
    }
    Ok(IpwBaseline { ate, att, se_ate: sample_sd(&ates), se_att: sample_sd(&atts), draws, seed })
}

/// Percentage change `100 |ATE - ATE_{-k}| / |ATE|` of the IPW ATE when
/// covariate `k` is left out; `None` when the baseline ATE is zero.
pub fn loo_ate_change(sample: &Sample, spec: &DesignSpec, k: &str, link: Link) -> Result<Option<f64>> {
    sample.covariate_index(k)?;
    let (ate, _) = ipw_on(sample, &build_design(sample, spec)?, link)?;
    let reduced = spec.without_covariate(k);
    if reduced.r_terms.is_empty() {
        return Err(Error::InvalidDesign(alloc::format!("dropping `{k}` leaves an empty propensity design")));
    }
    let (ate_k, _) = ipw_on(sample, &build_design(sample, &reduced)?, link)?;
    if ate.abs() < 1e-12 {
        return Ok(None);
    }
    Ok(Some(100.0 * (ate - ate_k).abs() / ate.abs()))
}

/// One row of the leave-out-variable-k table.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOutRow {
    pub covariate: String,
    pub quantiles: DeltaQuantiles,
    pub loo_ate_change: Option<f64>,
}

/// Leave-out rows for every covariate referenced by the propensity design.
pub fn leave_out_table(
    sample: &Sample,
    spec: &DesignSpec,
    design: &DesignMatrices,
    fit: &PropensityFit,
    c_bp: Option<f64>,
) -> Result<Vec<LeaveOutRow>> {
    sample
        .names()
        .iter()
        .filter(|k| spec.r_terms.iter().any(|t| t.references(k)))
        .map(|k| {
            let d = delta_k(sample, spec, design, fit, k)?;
            Ok(LeaveOutRow {
                covariate: k.clone(),
                quantiles: delta_quantiles(&d, c_bp),
                loo_ate_change: loo_ate_change(sample, spec, k, fit.link)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub min: f64,
    pub max: f64,
    /// Type-7 quantiles at 0.1, 0.2, ..., 0.9.
    pub deciles: [f64; 9],
    pub cbar: f64,
    /// Rows with fitted propensity outside `[0.01, 0.99]`.
    pub flagged: usize,
}

pub fn overlap_report(design: &DesignMatrices, fit: &PropensityFit) -> OverlapReport {
    let mut p = fitted_propensities(design, fit);
    p.sort_by(f64::total_cmp);
    let deciles = core::array::from_fn(|j| quantile_sorted(&p, (j + 1) as f64 / 10.0));
    OverlapReport {
        min: p[0],
        max: p[p.len() - 1],
        deciles,
        cbar: cbar(design, fit),
        flagged: p.iter().filter(|&&v| !(0.01..=0.99).contains(&v)).count(),
    }
}
