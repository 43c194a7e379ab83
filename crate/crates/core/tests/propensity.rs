mod common;

use cdep_core::first_stage::fit_binary_response;
use cdep_core::linalg::Matrix;
use cdep_core::{build_design, fit_propensity, DesignSpec, Error, Link};
use rand::Rng;

/// Saturated design over two binary covariates: one indicator per cell.
fn cell_design(a: &[u8], b: &[u8]) -> Matrix {
    let rows: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(&a, &b)| {
            let (a, b) = (f64::from(a), f64::from(b));
            vec![1.0, a, b, a * b]
        })
        .collect();
    Matrix::from_rows(&rows)
}

#[test]
fn saturated_fit_reproduces_cell_frequencies() {
    for (k, link) in [Link::Logit, Link::Probit].into_iter().enumerate() {
        for inst in 0..25 {
            let mut rng = common::rng(1000 * k as u64 + inst);
            let n = rng.random_range(60..200);
            let probs: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut x = Vec::new();
            for _ in 0..n {
                let (ai, bi) = (rng.random_range(0..2u8), rng.random_range(0..2u8));
                a.push(ai);
                b.push(bi);
                x.push(rng.random::<f64>() < probs[(2 * ai + bi) as usize]);
            }
            let cells: Vec<usize> = (0..n).map(|i| (2 * a[i] + b[i]) as usize).collect();
            // every cell needs both outcomes for a finite MLE
            let ok = (0..4).all(|c| {
                let t = (0..n).filter(|&i| cells[i] == c && x[i]).count();
                let m = (0..n).filter(|&i| cells[i] == c).count();
                t > 0 && t < m
            });
            if !ok {
                continue;
            }
            let r = cell_design(&a, &b);
            let fit = fit_binary_response(&r, &x, link).unwrap();
            for c in 0..4 {
                let members: Vec<usize> = (0..n).filter(|&i| cells[i] == c).collect();
                let freq = members.iter().filter(|&&i| x[i]).count() as f64 / members.len() as f64;
                let p = fit.prob_treated(r.row(members[0]));
                assert!((p - freq).abs() < 1e-8, "{link:?} instance {inst} cell {c}: {p} vs {freq}");
            }
        }
    }
}

#[test]
fn intercept_only_matches_mean() {
    let s = common::linear_sample(300, 0.5, 3);
    let d = build_design(&s, &DesignSpec::parse("1 + x", "1").unwrap()).unwrap();
    let share = s.treated_count() as f64 / s.n() as f64;
    let fit = fit_propensity(&d, s.x(), Link::Logit).unwrap();
    let p = fit.prob_treated(d.rmat.row(0));
    assert!((p - share).abs() < 1e-12, "{p} vs {share} {fit:?}");
    assert!((fit.beta[0] - (share / (1.0 - share)).ln()).abs() < 1e-10);
}

#[test]
fn complete_separation_is_reported() {
    let w: Vec<f64> = (0..40).map(|i| i as f64 / 10.0).collect();
    let x: Vec<bool> = w.iter().map(|&v| v > 2.0).collect();
    let r = Matrix::from_rows(&w.iter().map(|&v| vec![1.0, v]).collect::<Vec<_>>());
    for link in [Link::Logit, Link::Probit] {
        let err = fit_binary_response(&r, &x, link).unwrap_err();
        assert!(matches!(err, Error::Separation { .. } | Error::NotConverged { .. }), "{err:?}");
    }
}

#[test]
fn probit_and_logit_agree_on_fitted_shares() {
    // Both links are saturated on a single binary covariate.
    let s = common::binary_sample(400, 8);
    let spec = DesignSpec::parse("1 + x + a", "1 + a").unwrap();
    let d = build_design(&s, &spec).unwrap();
    let pl = fit_propensity(&d, s.x(), Link::Logit).unwrap();
    let pp = fit_propensity(&d, s.x(), Link::Probit).unwrap();
    for i in 0..s.n() {
        assert!((pl.prob_treated(d.rmat.row(i)) - pp.prob_treated(d.rmat.row(i))).abs() < 1e-8);
    }
}
