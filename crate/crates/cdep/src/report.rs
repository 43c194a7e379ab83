//! The JSON report and the CSV tables written next to it.
//!
//! Every float is finite; quantities that can be undefined are `Option`s and
//! serialize as `null`. Serialization is deterministic, so a report parsed
//! back and written again is byte-identical.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub provenance: Provenance,
    pub baseline: Option<Baseline>,
    pub curves: Vec<CurveReport>,
    pub breakdown: Vec<BreakdownRow>,
    pub deltak: Vec<DeltaRow>,
    pub overlap: OverlapSummary,
    pub preconditions: Preconditions,
    pub bootstrap: Option<BootstrapSummary>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub n: usize,
    pub n_treated: usize,
    pub tuning: TuningEcho,
    pub q_terms: Vec<String>,
    pub r_terms: Vec<String>,
    pub dropped_columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningEcho {
    pub eps: f64,
    pub eps_small: f64,
    pub eta: f64,
    pub kappa: f64,
    pub tau_step: f64,
    pub n_quad: usize,
}

impl From<&cdep_core::TuningParams> for TuningEcho {
    fn from(t: &cdep_core::TuningParams) -> Self {
        Self { eps: t.eps, eps_small: t.eps_small, eta: t.eta, kappa: t.kappa, tau_step: t.tau_step, n_quad: t.n_quad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub ipw_ate: f64,
    pub ipw_att: f64,
    pub se_ate: Option<f64>,
    pub se_att: Option<f64>,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub label: String,
    /// Estimand as requested.
    pub spec: String,
    /// Covariate row of a conditional estimand.
    pub w: Option<Vec<f64>>,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_monotone: Vec<f64>,
    pub upper_monotone: Vec<f64>,
    pub pointwise: Option<Band>,
    pub uniform: Option<UniformBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub crit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBand {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub crit: Vec<f64>,
    /// Monotone extension valid between grid points.
    pub lb_step: Vec<f64>,
    pub ub_step: Vec<f64>,
    pub t_star: f64,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub estimand: String,
    /// `lower>=` or `upper<=`.
    pub conclusion: String,
    pub threshold: f64,
    pub c_bp: f64,
    /// Lower confidence bound from the uniform band.
    pub c_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub covariate: String,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub max: f64,
    pub cdf_at_cbp: Option<f64>,
    /// Percentage change of the IPW ATE without this covariate.
    pub loo_ate_change_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub min: f64,
    pub max: f64,
    pub deciles: Vec<f64>,
    pub cbar: f64,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preconditions {
    pub kappa: f64,
    pub near_fraction: Vec<f64>,
    pub mass_point: Vec<bool>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mode: String,
    pub draws: usize,
    pub rejected: usize,
    pub alpha: f64,
}

impl SensitivityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, AppError> {
        serde_json::from_str(s).map_err(|e| AppError::Data(format!("malformed report: {e}")))
    }
}

pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `c,lower,upper,lb,ub,lb_uniform,ub_uniform`; band columns are empty
/// without bootstrap draws.
pub fn curve_csv(curve: &CurveReport) -> String {
    let mut s = String::from("c,lower,upper,lb,ub,lb_uniform,ub_uniform\n");
    for k in 0..curve.c.len() {
        let pw = curve.pointwise.as_ref();
        let un = curve.uniform.as_ref();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            curve.c[k],
            curve.lower[k],
            curve.upper[k],
            cell(pw.map(|b| b.lb[k])),
            cell(pw.map(|b| b.ub[k])),
            cell(un.map(|b| b.lb[k])),
            cell(un.map(|b| b.ub[k])),
        )
        .unwrap();
    }
    s
}

pub fn deltak_csv(rows: &[DeltaRow]) -> String {
    let mut s = String::from("covariate,p50,p75,p90,max,cdf_at_cbp\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.covariate, r.p50, r.p75, r.p90, r.max, cell(r.cdf_at_cbp)).unwrap();
    }
    s
}

pub fn loo_csv(rows: &[DeltaRow]) -> String {
    let mut s = String::from("covariate,ate_change_pct\n");
    for r in rows {
        writeln!(s, "{},{}", r.covariate, cell(r.loo_ate_change_pct)).unwrap();
    }
    s
}

pub fn breakdown_csv(rows: &[BreakdownRow]) -> String {
    let mut s = String::from("estimand,conclusion,threshold,c_bp,c_l\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.estimand, r.conclusion, r.threshold, r.c_bp, cell(r.c_l)).unwrap();
    }
    s
}

pub fn overlap_csv(o: &OverlapSummary) -> String {
    let mut s = String::from("statistic,value\n");
    writeln!(s, "min,{}", o.min).unwrap();
    for (j, d) in o.deciles.iter().enumerate() {
        writeln!(s, "p{},{}", 10 * (j + 1), d).unwrap();
    }
    writeln!(s, "max,{}", o.max).unwrap();
    writeln!(s, "cbar,{}", o.cbar).unwrap();
    writeln!(s, "flagged,{}", o.flagged).unwrap();
    s
}

pub fn density_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("delta,density\n");
    for (x, f) in points {
        writeln!(s, "{x},{f}").unwrap();
    }
    s
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), AppError> {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).map_err(|e| AppError::io(&path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| AppError::io(&path, e))
}
