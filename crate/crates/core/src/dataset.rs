//! Validated samples and the design matrices `q(x, w)` and `r(w)`.

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;


use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Relative tolerance of the collinearity screen.
pub const COLLINEARITY_TOL: f64 = 1e-10;

/// Outcome, binary treatment and raw covariates of `n` units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    x: Vec<bool>,
    w: Matrix,
    names: Vec<String>,
}

impl Sample {
    pub fn new(y: Vec<f64>, x: Vec<bool>, w: Matrix, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidSample(format!("need at least 2 rows, got {n}")));
        }
        if x.len() != n || w.rows() != n {
            return Err(Error::InvalidSample(format!(
                "length mismatch: y has {n} rows, x {}, w {}",
                x.len(),
                w.rows()
            )));
        }
        if names.len() != w.cols() {
            return Err(Error::InvalidSample(format!(
                "{} covariate names for {} columns",
                names.len(),
                w.cols()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || names[..i].contains(name) {
                return Err(Error::InvalidSample(format!("covariate name `{name}` is empty or repeated")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("non-finite outcome at row {i}")));
        }
        for i in 0..n {
            if let Some(j) = w.row(i).iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidSample(format!(
                    "non-finite value at row {i}, column `{}`",
                    names[j]
                )));
            }
        }
        let treated = x.iter().filter(|&&b| b).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidSample("treatment has a single arm".into()));
        }
        Ok(Self { y, x, w, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[bool] {
        &self.x
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn w_row(&self, i: usize) -> &[f64] {
        self.w.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn treated_count(&self) -> usize {
        self.x.iter().filter(|&&b| b).count()
    }

    /// Rows `idx` (with repetition). Fails when the resample has one arm.
    pub fn resample(&self, idx: &[usize]) -> Result<Sample> {
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let x = idx.iter().map(|&i| self.x[i]).collect();
        Sample::new(y, x, self.w.select_rows(idx), self.names.clone())
    }

    /// The same data with treatment labels swapped.
    pub fn with_swapped_treatment(&self) -> Sample {
        Sample {
            y: self.y.clone(),
            x: self.x.iter().map(|b| !b).collect(),
            w: self.w.clone(),
            names: self.names.clone(),
        }
    }
}

/// One column of a design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Intercept,
    /// The treatment indicator (only meaningful in `q`).
    Treatment,
    Covariate(String),
    /// `x * w_k`.
    TreatmentInteraction(String),
    /// `w_k ^ degree`, `degree >= 2`.
    Power(String, u32),
    /// `w_a * w_b`.
    Product(String, String),
}

impl Term {
    pub fn references(&self, name: &str) -> bool {
        match self {
            Term::Intercept | Term::Treatment => false,
            Term::Covariate(a) | Term::TreatmentInteraction(a) | Term::Power(a, _) => a == name,
            Term::Product(a, b) => a == name || b == name,
        }
    }

    fn uses_treatment(&self) -> bool {
        matches!(self, Term::Treatment | Term::TreatmentInteraction(_))
    }

    /// Parses a single term: `1`, `x`, `w`, `x:w`, `w^2`, `a:b`. The token
    /// `x` denotes the treatment.
    pub fn parse(s: &str) -> Result<Term> {
        let s = s.trim();
        let bad = || Error::InvalidDesign(format!("cannot parse term `{s}`"));
        if s == "1" {
            return Ok(Term::Intercept);
        }
        if s == "x" {
            return Ok(Term::Treatment);
        }
        if let Some((a, b)) = s.split_once(':') {
            let (a, b) = (a.trim(), b.trim());
            if a.is_empty() || b.is_empty() || b.contains(':') {
                return Err(bad());
            }
            return Ok(match (a == "x", b == "x") {
                (true, true) => return Err(bad()),
                (true, false) => Term::TreatmentInteraction(b.into()),
                (false, true) => Term::TreatmentInteraction(a.into()),
                (false, false) => Term::Product(a.into(), b.into()),
            });
        }
        if let Some((a, d)) = s.split_once('^') {
            let a = a.trim();
            let d: u32 = d.trim().parse().map_err(|_| bad())?;
            if a.is_empty() || a == "x" || d == 0 {
                return Err(bad());
            }
            return Ok(match d {
                1 => Term::Covariate(a.into()),
                _ => Term::Power(a.into(), d),
            });
        }
        if s.is_empty() || s.contains(char::is_whitespace) {
            return Err(bad());
        }
        Ok(Term::Covariate(s.into()))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::Treatment => f.write_str("x"),
            Term::Covariate(a) => f.write_str(a),
            Term::TreatmentInteraction(a) => write!(f, "x:{a}"),
            Term::Power(a, d) => write!(f, "{a}^{d}"),
            Term::Product(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// Term lists for `q(x, w)` and `r(w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    pub q_terms: Vec<Term>,
    pub r_terms: Vec<Term>,
}

impl DesignSpec {
    /// `q = (1, x, w)`, `r = (1, w)`.
    pub fn main_effects<S: AsRef<str>>(names: &[S]) -> Self {
        let cov = names.iter().map(|s| Term::Covariate(s.as_ref().into()));
        let mut q = alloc::vec![Term::Intercept, Term::Treatment];
        q.extend(cov.clone());
        let mut r = alloc::vec![Term::Intercept];
        r.extend(cov);
        Self { q_terms: q, r_terms: r }
    }

    /// `q = (1, x, w, x*w)`, `r = (1, w)`.
    pub fn with_interactions<S: AsRef<str>>(names: &[S]) -> Self {
        let mut spec = Self::main_effects(names);
        spec.q_terms
            .extend(names.iter().map(|s| Term::TreatmentInteraction(s.as_ref().into())));
        spec
    }

    /// Parses formulas such as `1 + x + age + x:age + age^2`. An intercept is
    /// added unless the formula contains `0` or `-1`.
    pub fn parse(q_formula: &str, r_formula: &str) -> Result<Self> {
        Ok(Self { q_terms: parse_formula(q_formula)?, r_terms: parse_formula(r_formula)? })
    }

    /// Removes every term referencing covariate `name`.
    pub fn without_covariate(&self, name: &str) -> Self {
        Self {
            q_terms: self.q_terms.iter().filter(|t| !t.references(name)).cloned().collect(),
            r_terms: self.r_terms.iter().filter(|t| !t.references(name)).cloned().collect(),
        }
    }

    pub fn references(&self, name: &str) -> bool {
        self.q_terms.iter().chain(&self.r_terms).any(|t| t.references(name))
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        if self.q_terms.is_empty() || self.r_terms.is_empty() {
            return Err(Error::InvalidDesign("empty term list".into()));
        }
        if self.r_terms.iter().any(Term::uses_treatment) {
            return Err(Error::InvalidDesign("r(w) cannot contain the treatment".into()));
        }
        for t in self.q_terms.iter().chain(&self.r_terms) {
            resolve(t, sample)?;
        }
        Ok(())
    }
}

fn parse_formula(s: &str) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    let mut intercept = true;
    let mut rest = s.trim();
    if let Some(r) = rest.strip_suffix("-1").or_else(|| rest.strip_suffix("- 1")) {
        intercept = false;
        rest = r.trim_end();
    }
    for tok in rest.split('+').map(str::trim).filter(|t| !t.is_empty()) {
        if tok == "0" {
            intercept = false;
            continue;
        }
        let t = Term::parse(tok)?;
        if t == Term::Intercept {
            continue;
        }
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    if intercept {
        terms.insert(0, Term::Intercept);
    }
    Ok(terms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Col {
    One,
    X,
    W(usize),
    XW(usize),
    Pow(usize, u32),
    Prod(usize, usize),
}

impl Col {
    #[inline]
    fn eval(self, x: bool, w: &[f64]) -> f64 {
        let xf = if x { 1.0 } else { 0.0 };
        match self {
            Col::One => 1.0,
            Col::X => xf,
            Col::W(k) => w[k],
            Col::XW(k) => xf * w[k],
            Col::Pow(k, d) => w[k].powi(d as i32),
            Col::Prod(a, b) => w[a] * w[b],
        }
    }
}

fn resolve(t: &Term, s: &Sample) -> Result<Col> {
    Ok(match t {
        Term::Intercept => Col::One,
        Term::Treatment => Col::X,
        Term::Covariate(a) => Col::W(s.covariate_index(a)?),
        Term::TreatmentInteraction(a) => Col::XW(s.covariate_index(a)?),
        Term::Power(a, d) => Col::Pow(s.covariate_index(a)?, *d),
        Term::Product(a, b) => Col::Prod(s.covariate_index(a)?, s.covariate_index(b)?),
    })
}

/// Which design a dropped column belonged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Q,
    R,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Q => "q",
            DesignKind::R => "r",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedColumn {
    pub design: DesignKind,
    pub term: Term,
}

/// Row builders for `q(x, w)` and `r(w)`. Evaluates the surviving terms of a
/// [`DesignMatrices`] on arbitrary covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBuilder {
    q_cols: Vec<Col>,
    r_cols: Vec<Col>,
}

impl DesignBuilder {
    pub fn dq(&self) -> usize {
        self.q_cols.len()
    }

    pub fn dw(&self) -> usize {
        self.r_cols.len()
    }

    pub fn q_row_into(&self, x: bool, w: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.q_cols) {
            *o = c.eval(x, w);
        }
    }

    pub fn q_row(&self, x: bool, w: &[f64]) -> Vec<f64> {
        self.q_cols.iter().map(|c| c.eval(x, w)).collect()
    }

    pub fn r_row(&self, w: &[f64]) -> Vec<f64> {
        self.r_cols.iter().map(|c| c.eval(false, w)).collect()
    }

    /// Builds `(qmat, rmat)` for arbitrary data.
    pub fn matrices(&self, x: &[bool], w: &Matrix) -> (Matrix, Matrix) {
        let n = x.len();
        let mut q = Matrix::zeros(n, self.dq());
        let mut r = Matrix::zeros(n, self.dw());
        for i in 0..n {
            self.q_row_into(x[i], w.row(i), q.row_mut(i));
            let wi = w.row(i);
            for (o, c) in r.row_mut(i).iter_mut().zip(&self.r_cols) {
                *o = c.eval(false, wi);
            }
        }
        (q, r)
    }
}

/// Design matrices of a sample together with the builders that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub qmat: Matrix,
    pub rmat: Matrix,
    pub q_terms: Vec<Term>,
    pub r_terms: Vec<Term>,
    pub dropped: Vec<DroppedColumn>,
    builder: DesignBuilder,
}

impl DesignMatrices {
    pub fn builder(&self) -> &DesignBuilder {
        &self.builder
    }

    pub fn dq(&self) -> usize {
        self.qmat.cols()
    }

    pub fn dw(&self) -> usize {
        self.rmat.cols()
    }

    pub fn q_row(&self, x: bool, w: &[f64]) -> Vec<f64> {
        self.builder.q_row(x, w)
    }

    pub fn r_row(&self, w: &[f64]) -> Vec<f64> {
        self.builder.r_row(w)
    }

    /// The design of a resample: same surviving terms, no collinearity screen.
    /// Fails when either matrix loses full column rank.
    pub fn for_sample(&self, sample: &Sample) -> Result<DesignMatrices> {
        let (qmat, rmat) = self.builder.matrices(sample.x(), sample.w());
        if !linalg::has_full_column_rank(&qmat, COLLINEARITY_TOL)
            || !linalg::has_full_column_rank(&rmat, COLLINEARITY_TOL)
        {
            return Err(Error::DegenerateDesign("resampled design is rank deficient".into()));
        }
        Ok(DesignMatrices {
            qmat,
            rmat,
            q_terms: self.q_terms.clone(),
            r_terms: self.r_terms.clone(),
            dropped: Vec::new(),
            builder: self.builder.clone(),
        })
    }
}

/// Evaluates the design terms on the sample and drops columns that are
/// collinear with earlier ones.
pub fn build_design(sample: &Sample, spec: &DesignSpec) -> Result<DesignMatrices> {
    spec.validate(sample)?;
    let mut q_cols: Vec<Col> = Vec::new();
    let mut r_cols: Vec<Col> = Vec::new();
    for t in &spec.q_terms {
        q_cols.push(resolve(t, sample)?);
    }
    for t in &spec.r_terms {
        r_cols.push(resolve(t, sample)?);
    }
    let full = DesignBuilder { q_cols, r_cols };
    let (q_all, r_all) = full.matrices(sample.x(), sample.w());
    if !q_all.is_finite() || !r_all.is_finite() {
        return Err(Error::InvalidDesign("design terms produce non-finite values".into()));
    }
    let q_keep = linalg::independent_columns(&q_all, COLLINEARITY_TOL);
    let r_keep = linalg::independent_columns(&r_all, COLLINEARITY_TOL);
    if q_keep.is_empty() {
        return Err(Error::AllColumnsDropped("q"));
    }
    if r_keep.is_empty() {
        return Err(Error::AllColumnsDropped("r"));
    }
    let mut dropped = Vec::new();
    for (j, t) in spec.q_terms.iter().enumerate() {
        if !q_keep.contains(&j) {
            dropped.push(DroppedColumn { design: DesignKind::Q, term: t.clone() });
        }
    }
    for (j, t) in spec.r_terms.iter().enumerate() {
        if !r_keep.contains(&j) {
            dropped.push(DroppedColumn { design: DesignKind::R, term: t.clone() });
        }
    }
    for d in &dropped {
        log::warn!("dropping collinear column `{}` from the {} design", d.term, d.design);
    }
    let builder = DesignBuilder {
        q_cols: q_keep.iter().map(|&j| full.q_cols[j]).collect(),
        r_cols: r_keep.iter().map(|&j| full.r_cols[j]).collect(),
    };
    Ok(DesignMatrices {
        qmat: q_all.select_cols(&q_keep),
        rmat: r_all.select_cols(&r_keep),
        q_terms: q_keep.iter().map(|&j| spec.q_terms[j].clone()).collect(),
        r_terms: r_keep.iter().map(|&j| spec.r_terms[j].clone()).collect(),
        dropped,
        builder,
    })
}
