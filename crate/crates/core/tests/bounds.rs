mod common;

use cdep_core::bounds::{breakdown_point, rearrange_monotone, uniform_c_grid, ArmMeans};
use cdep_core::{build_design, BoundEngine, Conclusion, DesignSpec, Estimand, Link, Sample, ThetaHat, TuningParams};

struct Fixture {
    sample: Sample,
    design: cdep_core::DesignMatrices,
    theta: ThetaHat,
    tuning: TuningParams,
}

fn fixture(sample: Sample, spec: DesignSpec) -> Fixture {
    let design = build_design(&sample, &spec).unwrap();
    let mut tuning = TuningParams::defaults(sample.n());
    tuning.n_quad = 200;
    let theta = ThetaHat::fit(&sample, &design, Link::Logit, &tuning).unwrap();
    Fixture { sample, design, theta, tuning }
}

impl Fixture {
    fn engine(&self) -> BoundEngine<'_> {
        BoundEngine::new(&self.sample, &self.design, &self.theta, self.tuning.n_quad)
    }
}

fn linear() -> Fixture {
    fixture(common::linear_sample(200, 0.5, 1), DesignSpec::main_effects(&["w"]))
}

#[test]
fn zero_c_collapses_every_estimand() {
    let f = linear();
    let e = f.engine();
    let w = vec![0.3];
    for est in [
        Estimand::Ate,
        Estimand::Att,
        Estimand::Mean { x: true },
        Estimand::Cate { w: w.clone() },
        Estimand::Cqte { tau: 0.4, w },
    ] {
        let b = e.bound(&est, 0.0).unwrap();
        assert!(b.width().abs() <= 1e-10, "{est:?}: {b:?}");
    }
}

/// Linear interpolation of fitted quantiles on the grid, coded apart from
/// the engine.
fn fitted_quantile(f: &Fixture, q: &[f64], u: f64) -> f64 {
    let g = &f.theta.qr.tau_grid;
    let j = g.iter().rposition(|&t| t <= u).unwrap().min(g.len() - 2);
    let wgt = (u - g[j]) / (g[j + 1] - g[j]);
    let at = |k: usize| q.iter().zip(f.theta.qr.gamma.row(k)).map(|(a, b)| a * b).sum::<f64>();
    (1.0 - wgt) * at(j) + wgt * at(j + 1)
}

#[test]
fn full_dependence_gives_trimmed_no_assumption_bounds() {
    let f = linear();
    let eps = f.theta.eps;
    let nq = f.tuning.n_quad;
    let mut mean = [[0.0; 2]; 2];
    for x in [false, true] {
        for i in 0..f.sample.n() {
            let w = f.sample.w_row(i);
            let q = f.design.q_row(x, w);
            let p1 = f.theta.prop.prob_treated(&f.design.r_row(w));
            let p = if x { p1 } else { 1.0 - p1 };
            for m in 0..nq {
                let tau = (m as f64 + 0.5) / nq as f64;
                let up = (tau / p).min(1.0).clamp(eps, 1.0 - eps);
                let lo = ((tau - 1.0) / p + 1.0).max(0.0).clamp(eps, 1.0 - eps);
                mean[x as usize][0] += fitted_quantile(&f, &q, lo);
                mean[x as usize][1] += fitted_quantile(&f, &q, up);
            }
        }
    }
    let scale = (f.sample.n() * nq) as f64;
    let lower = (mean[1][0] - mean[0][1]) / scale;
    let upper = (mean[1][1] - mean[0][0]) / scale;
    let b = f.engine().ate_bounds(1.0);
    assert!((b.lower - lower).abs() < 1e-10 && (b.upper - upper).abs() < 1e-10, "{b:?} vs {lower} {upper}");
}

#[test]
fn curves_nest_and_rearrangement_is_monotone() {
    let f = fixture(common::binary_sample(300, 4), DesignSpec::with_interactions(&["a", "b"]));
    let grid = uniform_c_grid(21);
    for est in [Estimand::Ate, Estimand::Att, Estimand::Cqte { tau: 0.3, w: vec![1.0, 0.0] }] {
        let curve = f.engine().bound_curve(&est, &grid).unwrap();
        let mono = rearrange_monotone(&curve);
        for k in 1..grid.len() {
            assert!(mono.pairs[k].lower <= mono.pairs[k - 1].lower + 1e-12);
            assert!(mono.pairs[k].upper >= mono.pairs[k - 1].upper - 1e-12);
        }
        for p in &curve.pairs {
            assert!(p.lower <= p.upper + 1e-12);
        }
    }
}

#[test]
fn swapping_treatment_negates_the_ate() {
    let s = common::linear_sample(150, 0.4, 9);
    let a = fixture(s.clone(), DesignSpec::main_effects(&["w"]));
    let b = fixture(s.with_swapped_treatment(), DesignSpec::main_effects(&["w"]));
    for c in [0.0, 0.1, 0.3, 1.0] {
        let x = a.engine().ate_bounds(c);
        let y = b.engine().ate_bounds(c);
        assert!((x.lower + y.upper).abs() < 1e-8 && (x.upper + y.lower).abs() < 1e-8, "c = {c}: {x:?} {y:?}");
    }
}

#[test]
fn att_follows_from_the_control_mean() {
    let f = linear();
    let arms = ArmMeans::of(&f.sample).unwrap();
    let e = f.engine();
    for c in [0.0, 0.15] {
        let m0 = e.mean_bounds(false, c);
        let att = e.att_bounds(c).unwrap();
        // E[Y_0 | X = 1] = (E[Y_0] - P(X = 0) E[Y | X = 0]) / P(X = 1)
        let y0_treated = |m: f64| (m - arms.p[0] * arms.mean_y[0]) / arms.p[1];
        assert!((att.lower - (arms.mean_y[1] - y0_treated(m0.upper))).abs() < 1e-12);
        assert!((att.upper - (arms.mean_y[1] - y0_treated(m0.lower))).abs() < 1e-12);
    }
}

#[test]
fn breakdown_interpolates_the_crossing() {
    let f = linear();
    let grid = uniform_c_grid(21);
    let curve = rearrange_monotone(&f.engine().bound_curve(&Estimand::Ate, &grid).unwrap());
    let bp = breakdown_point(&curve, Conclusion::LowerAtLeast, 0.0);
    let k = curve.pairs.iter().position(|p| p.lower < 0.0).unwrap();
    assert!(grid[k - 1] <= bp.c_bp && bp.c_bp <= grid[k]);
    // already violated at c = 0
    let t = curve.pairs[0].lower + 1.0;
    assert_eq!(breakdown_point(&curve, Conclusion::LowerAtLeast, t).c_bp, 0.0);
}
