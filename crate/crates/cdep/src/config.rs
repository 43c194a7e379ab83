//! Run configuration: a JSON file whose fields can be overridden by flags.

use std::path::{Path, PathBuf};

use cdep_core::bounds::uniform_c_grid;
use cdep_core::{BootstrapMode, Conclusion, DesignSpec, Estimand, Link, Sample, TuningParams};
use serde::{Deserialize, Serialize};

use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkName {
    Logit,
    Probit,
}

impl From<LinkName> for Link {
    fn from(l: LinkName) -> Link {
        match l {
            LinkName::Logit => Link::Logit,
            LinkName::Probit => Link::Probit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Hdd,
    Standard,
}

impl From<ModeName> for BootstrapMode {
    fn from(m: ModeName) -> BootstrapMode {
        match m {
            ModeName::Hdd => BootstrapMode::Hdd,
            ModeName::Standard => BootstrapMode::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    /// Quantile-regression design, e.g. `1 + x + age + x:age`. Main effects
    /// of treatment and every covariate when absent.
    pub q_formula: Option<String>,
    /// Propensity design. Main effects of every covariate when absent.
    pub r_formula: Option<String>,
    pub link: LinkName,
    pub epsilon: f64,
    pub c_grid: Vec<f64>,
    pub tau_step: f64,
    pub n_quad: usize,
    /// Bootstrap draws; 0 skips inference.
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    pub mode: ModeName,
    /// `eta = eta_scale * n^(-1/4)`; the capped default when absent.
    pub eta_scale: Option<f64>,
    /// `kappa = kappa_scale * n^(-1/3)`.
    pub kappa_scale: f64,
    /// `ate`, `att`, `mean0`, `mean1`, `cate:w1=v,...`, `cqte:tau:w1=v,...`.
    pub estimands: Vec<String>,
    /// `<estimand>:lower>=t` or `<estimand>:upper<=t`.
    pub thresholds: Vec<String>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            outcome: "y".into(),
            treatment: "x".into(),
            covariates: Vec::new(),
            q_formula: None,
            r_formula: None,
            link: LinkName::Logit,
            epsilon: 0.05,
            c_grid: uniform_c_grid(21),
            tau_step: 0.005,
            n_quad: 500,
            draws: 1000,
            seed: 0,
            alpha: 0.05,
            mode: ModeName::Hdd,
            eta_scale: None,
            kappa_scale: 1.0,
            estimands: vec!["ate".into(), "att".into()],
            thresholds: Vec::new(),
            out_dir: PathBuf::from("cdep-out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    pub fn design_spec(&self) -> Result<DesignSpec, AppError> {
        let mut spec = DesignSpec::main_effects(&self.covariates);
        if self.q_formula.is_some() || self.r_formula.is_some() {
            let q = self.q_formula.clone().unwrap_or_else(|| main_formula(true, &self.covariates));
            let r = self.r_formula.clone().unwrap_or_else(|| main_formula(false, &self.covariates));
            spec = DesignSpec::parse(&q, &r)?;
        }
        Ok(spec)
    }

    pub fn tuning(&self, n: usize) -> TuningParams {
        let nf = n as f64;
        let mut t = TuningParams::with_eps(n, self.epsilon);
        if let Some(s) = self.eta_scale {
            t.eta = s * nf.powf(-0.25);
        }
        t.kappa = self.kappa_scale * nf.powf(-1.0 / 3.0);
        t.tau_step = self.tau_step;
        t.n_quad = self.n_quad;
        t
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |m: String| Err(AppError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.draws > 0 && self.draws < cdep_core::inference::MIN_DRAWS {
            return bad(format!("--draws must be 0 or at least {}", cdep_core::inference::MIN_DRAWS));
        }
        if self.estimands.is_empty() {
            return bad("no estimands requested".into());
        }
        cdep_core::bounds::validate_c_grid(&self.c_grid)?;
        for e in &self.estimands {
            parse_estimand(e)?;
        }
        for t in &self.thresholds {
            let th = parse_threshold(t)?;
            if !self.estimands.iter().any(|e| e.trim() == th.estimand) {
                return bad(format!("threshold `{t}` refers to an estimand that is not requested"));
            }
        }
        Ok(())
    }
}

fn main_formula(q: bool, covariates: &[String]) -> String {
    let mut terms = vec!["1".to_string()];
    if q {
        terms.push("x".into());
    }
    terms.extend(covariates.iter().cloned());
    terms.join(" + ")
}

/// Parsed estimand whose covariate values are not yet resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimandSpec {
    Ate,
    Att,
    Mean(bool),
    Cate(Vec<(String, f64)>),
    Cqte(f64, Vec<(String, f64)>),
}

impl EstimandSpec {
    /// Covariates not listed take their sample mean.
    pub fn resolve(&self, sample: &Sample) -> Result<Estimand, AppError> {
        let row = |given: &[(String, f64)]| -> Result<Vec<f64>, AppError> {
            let mut w: Vec<f64> = (0..sample.w().cols())
                .map(|j| sample.w().column(j).iter().sum::<f64>() / sample.n() as f64)
                .collect();
            for (name, v) in given {
                w[sample.covariate_index(name)?] = *v;
            }
            Ok(w)
        };
        Ok(match self {
            EstimandSpec::Ate => Estimand::Ate,
            EstimandSpec::Att => Estimand::Att,
            EstimandSpec::Mean(x) => Estimand::Mean { x: *x },
            EstimandSpec::Cate(g) => Estimand::Cate { w: row(g)? },
            EstimandSpec::Cqte(tau, g) => Estimand::Cqte { tau: *tau, w: row(g)? },
        })
    }
}

pub fn parse_estimand(s: &str) -> Result<EstimandSpec, AppError> {
    let bad = || AppError::Config(format!("cannot parse estimand `{s}`"));
    let mut parts = s.trim().splitn(3, ':');
    let head = parts.next().unwrap_or("");
    let assignments = |a: Option<&str>| -> Result<Vec<(String, f64)>, AppError> {
        let Some(a) = a else { return Ok(Vec::new()) };
        a.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                let (k, v) = t.split_once('=').ok_or_else(bad)?;
                let v: f64 = v.trim().parse().map_err(|_| bad())?;
                Ok((k.trim().to_string(), v))
            })
            .collect()
    };
    let spec = match head {
        "ate" | "att" | "mean0" | "mean1" if parts.next().is_some() => return Err(bad()),
        "ate" => EstimandSpec::Ate,
        "att" => EstimandSpec::Att,
        "mean0" => EstimandSpec::Mean(false),
        "mean1" => EstimandSpec::Mean(true),
        "cate" => {
            let rest: Vec<&str> = parts.collect();
            EstimandSpec::Cate(assignments(rest.first().copied())?)
        }
        "cqte" => {
            let tau: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if !(tau > 0.0 && tau < 1.0) {
                return Err(AppError::Config(format!("quantile index {tau} in `{s}` outside (0, 1)")));
            }
            EstimandSpec::Cqte(tau, assignments(parts.next())?)
        }
        _ => return Err(bad()),
    };
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub estimand: String,
    pub conclusion: Conclusion,
    pub value: f64,
}

/// `ate:lower>=0`, `att:upper<=1500`. The estimand part may itself contain
/// colons (`cqte:0.5:age=30:lower>=0`).
pub fn parse_threshold(s: &str) -> Result<Threshold, AppError> {
    let bad = || AppError::Config(format!("cannot parse threshold `{s}`; expected <estimand>:lower>=t or <estimand>:upper<=t"));
    let (est, cond) = s.trim().rsplit_once(':').ok_or_else(bad)?;
    let (conclusion, value) = if let Some(v) = cond.strip_prefix("lower>=") {
        (Conclusion::LowerAtLeast, v)
    } else if let Some(v) = cond.strip_prefix("upper<=") {
        (Conclusion::UpperAtMost, v)
    } else {
        return Err(bad());
    };
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    if !value.is_finite() {
        return Err(bad());
    }
    parse_estimand(est)?;
    Ok(Threshold { estimand: est.trim().to_string(), conclusion, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimand_syntax() {
        assert_eq!(parse_estimand("ate").unwrap(), EstimandSpec::Ate);
        assert_eq!(parse_estimand("mean1").unwrap(), EstimandSpec::Mean(true));
        assert_eq!(parse_estimand("cate:age=30").unwrap(), EstimandSpec::Cate(vec![("age".into(), 30.0)]));
        assert_eq!(
            parse_estimand("cqte:0.5:age=30,educ=12").unwrap(),
            EstimandSpec::Cqte(0.5, vec![("age".into(), 30.0), ("educ".into(), 12.0)])
        );
        assert_eq!(parse_estimand("cate").unwrap(), EstimandSpec::Cate(vec![]));
        for s in ["ite", "cqte:1.5", "cqte", "ate:1", "cate:age"] {
            assert!(parse_estimand(s).is_err(), "{s}");
        }
    }

    #[test]
    fn threshold_syntax() {
        let t = parse_threshold("ate:lower>=0").unwrap();
        assert_eq!((t.estimand.as_str(), t.conclusion, t.value), ("ate", Conclusion::LowerAtLeast, 0.0));
        let t = parse_threshold("cqte:0.5:age=30:upper<=2").unwrap();
        assert_eq!((t.estimand.as_str(), t.conclusion, t.value), ("cqte:0.5:age=30", Conclusion::UpperAtMost, 2.0));
        assert!(parse_threshold("ate>=0").is_err());
        assert!(parse_threshold("ate:lower>0").is_err());
    }

    #[test]
    fn json_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"covariates": ["w"], "draws": 50}"#).unwrap();
        assert_eq!(c.c_grid.len(), 21);
        assert_eq!((c.epsilon, c.alpha, c.draws), (0.05, 0.05, 50));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
