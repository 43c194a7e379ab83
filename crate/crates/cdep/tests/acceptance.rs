//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always reach the terminal; exits nonzero when a
//! criterion fails.
//!
//! `CDEP_ACCEPTANCE=1,3` restricts the run to the listed criteria.
//! `CDEP_NSW_CSV=<path>` enables the NSW replication check (criterion 8).

use std::time::{Duration, Instant};

use cdep::config::{ModeName, RunConfig};
use cdep::pipeline::{run_curves, Fitted};
use cdep::simulate::{Dgp, SimConfig};
use cdep_core::bounds::{rearrange_monotone, s_index, t_lower, t_upper, uniform_c_grid, SIndex};
use cdep_core::first_stage::{check_loss, fit_binary_response, fit_quantile, uniform_tau_grid};
use cdep_core::hdd::{l_beta_ratio, CasePoint, HddEvaluator};
use cdep_core::inference::precondition_report;
use cdep_core::linalg::{dot, solve, Matrix};
use cdep_core::numeric::compensated_mean;
use cdep_core::{
    build_design, BoundEngine, DesignSpec, Direction, Estimand, Link, PropensityFit, QuantileProcessFit, Sample,
    ThetaHat, TuningParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1 ---------------------------------------------------------------------

/// Direct evaluation of the index maps, branch by branch.
fn direct_t(tau: f64, c: f64, p: f64) -> (f64, f64) {
    let m = if tau <= 0.5 { tau } else { 1.0 - tau };
    let mut up = [tau + c * m / p, tau / p, 1.0];
    let mut lo = [tau - c * m / p, (tau - 1.0) / p + 1.0, 0.0];
    up.sort_by(f64::total_cmp);
    lo.sort_by(f64::total_cmp);
    (lo[2], up[0])
}

fn formula_oracles() -> Outcome {
    let start = Instant::now();
    let mut max_diff = 0.0f64;
    let mut identity = true;
    for i in 0..10 {
        let tau = i as f64 / 9.0;
        for j in 0..10 {
            let c = j as f64 / 9.0;
            for k in 0..10 {
                let p = 0.05 + 0.95 * k as f64 / 9.0;
                let (lo, up) = direct_t(tau, c, p);
                max_diff = max_diff.max((t_lower(tau, c, p) - lo).abs()).max((t_upper(tau, c, p) - up).abs());
                if j == 0 {
                    identity &= t_lower(tau, 0.0, p) == tau && t_upper(tau, 0.0, p) == tau;
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        max_diff <= 1e-14 && identity && t < Duration::from_secs(1),
        format!("max |diff| {max_diff:.1e}, c = 0 identity {identity}, {t:.2?}"),
    )
}

// 2 ---------------------------------------------------------------------

fn qr_objective(x: &Matrix, y: &[f64], a: &[f64], tau: f64) -> f64 {
    (0..x.rows()).map(|i| check_loss(y[i] - dot(x.row(i), a), tau)).sum()
}

/// Smallest objective over every fit interpolating `d_q` observations.
fn basic_solutions_min(x: &Matrix, y: &[f64], tau: f64) -> f64 {
    let (n, p) = (x.rows(), x.cols());
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let rows: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        if let Some(a) = solve(&x.select_rows(&rows), &yb) {
            best = best.min(qr_objective(x, y, &a, tau));
        }
    }
    best
}

fn quantile_solver_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 200 {
        let n = r.random_range(2..=8);
        let p = r.random_range(1..=2usize);
        let ties = r.random_bool(0.3);
        let draw = |r: &mut ChaCha8Rng| if ties { r.random_range(0..3) as f64 } else { r.random_range(-3.0..3.0) };
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| if p == 1 { vec![1.0] } else { vec![1.0, draw(&mut r)] }).collect();
        let x = Matrix::from_rows(&rows);
        if !cdep_core::linalg::has_full_column_rank(&x, 1e-10) {
            continue;
        }
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let tau = r.random_range(0.02..0.98);
        let (_, obj) = match fit_quantile(&x, &y, tau) {
            Ok(v) => v,
            Err(e) => return outcome(false, format!("solver error {e}")),
        };
        let bf = basic_solutions_min(&x, &y, tau);
        // exact fits have a zero minimum
        let scale = bf.abs().max(1.0);
        worst = worst.max((obj - bf).abs() / scale);
        done += 1;
    }
    let t = start.elapsed();
    outcome(worst <= 1e-8 && t < Duration::from_secs(30), format!("worst relative gap {worst:.1e}, {t:.2?}"))
}

// 3 ---------------------------------------------------------------------

fn saturated_mle_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let link = if done % 2 == 0 { Link::Logit } else { Link::Probit };
        let n = r.random_range(80..300);
        let probs: [f64; 4] = std::array::from_fn(|_| r.random_range(0.1..0.9));
        let cells: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let x: Vec<bool> = cells.iter().map(|&c| r.random::<f64>() < probs[c]).collect();
        let ok = (0..4).all(|c| {
            let m = (0..n).filter(|&i| cells[i] == c).count();
            let t = (0..n).filter(|&i| cells[i] == c && x[i]).count();
            t > 0 && t < m
        });
        if !ok {
            continue;
        }
        let rows: Vec<Vec<f64>> = cells
            .iter()
            .map(|&c| {
                let (a, b) = ((c & 1) as f64, (c >> 1) as f64);
                vec![1.0, a, b, a * b]
            })
            .collect();
        let rm = Matrix::from_rows(&rows);
        let fit = match fit_binary_response(&rm, &x, link) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("{link:?} fit failed: {e}")),
        };
        for c in 0..4 {
            let members: Vec<usize> = (0..n).filter(|&i| cells[i] == c).collect();
            let freq = members.iter().filter(|&&i| x[i]).count() as f64 / members.len() as f64;
            worst = worst.max((fit.prob_treated(rm.row(members[0])) - freq).abs());
        }
        done += 1;
    }
    let t = start.elapsed();
    outcome(worst <= 1e-8 && t < Duration::from_secs(5), format!("max |p - frequency| {worst:.1e}, {t:.2?}"))
}

// 4 ---------------------------------------------------------------------

const HDD_KAPPA: f64 = 1e-4;

fn hdd_secants() -> Outcome {
    let start = Instant::now();
    let eps = 0.05;
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut count = [0usize; 3];
    let mut track = |a: f64, s: f64| {
        let tol = 1e-6f64.max(1e-3 * a.abs());
        worst = worst.max((a - s).abs() / tol);
    };

    // T2 and T4 along beta + t h1, step 1e-6
    while count[0] < 500 {
        let link = if count[0] % 2 == 0 { Link::Logit } else { Link::Probit };
        let beta = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let row = [1.0, r.random_range(-2.0..2.0)];
        let h = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let x = r.random::<bool>();
        let tau = r.random_range(0.0..1.0);
        let c = r.random_range(0.0..0.8);
        let p_at = |t: f64| link.likelihood(x, row[0] * (beta[0] + t * h[0]) + row[1] * (beta[1] + t * h[1]));
        let pt = CasePoint::new(tau, c, p_at(0.0), eps);
        if pt.upper_margin() <= 10.0 * HDD_KAPPA || pt.lower_margin() <= 10.0 * HDD_KAPPA {
            continue;
        }
        let s = dot(&l_beta_ratio(link, x, &row, &beta), &h);
        let step = 1e-6;
        for (kind, a) in [(SIndex::S2, pt.t2(s, HDD_KAPPA)), (SIndex::S4, pt.t4(s, HDD_KAPPA))] {
            track(a, (s_index(kind, tau, c, p_at(step), eps) - s_index(kind, tau, c, p_at(0.0), eps)) / step);
        }
        count[0] += 1;
    }

    // mean-bound derivative along theta + t h, step 1e-5, on synthetic first
    // stages whose quantile process is affine in tau
    let n_quad = 20;
    let grid = uniform_tau_grid(eps / 2.0, 0.005);
    let nodes = cdep_core::bounds::quadrature_nodes(n_quad);
    while count[1] < 500 {
        let w: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
        let sample =
            Sample::new(vec![0.0; 3], vec![true, false, true], Matrix::from_row_major(3, 1, w.clone()), vec!["w".into()])
                .unwrap();
        let design = build_design(&sample, &DesignSpec::main_effects(&["w"])).unwrap();
        let link = if count[1] % 2 == 0 { Link::Logit } else { Link::Probit };
        let beta = vec![r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        let x = r.random::<bool>();
        let c = r.random_range(0.0..0.6);
        let prop = PropensityFit { link, beta, loglik: 0.0, iterations: 0, converged: true };
        let clear = w.iter().all(|&wi| {
            let p = prop.predict(&design.r_row(&[wi]), x);
            nodes.iter().all(|&tau| {
                let pt = CasePoint::new(tau, c, p, eps);
                pt.upper_margin() > 10.0 * HDD_KAPPA && pt.lower_margin() > 10.0 * HDD_KAPPA
            })
        });
        if !clear {
            continue;
        }
        let a0: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let a1: Vec<f64> = (0..3).map(|_| r.random_range(0.5..3.0)).collect();
        let gamma = Matrix::from_rows(
            &grid.iter().map(|&t| (0..3).map(|j| a0[j] + a1[j] * t).collect()).collect::<Vec<Vec<f64>>>(),
        );
        let qr = QuantileProcessFit { tau_grid: grid.clone(), objective: vec![0.0; grid.len()], gamma };
        let theta = ThetaHat { prop, qr, eps, eps_small: eps / 2.0 };
        let mut tuning = TuningParams::defaults(1000);
        tuning.n_quad = n_quad;
        tuning.kappa = HDD_KAPPA;
        let h1: Vec<f64> = (0..2).map(|_| r.random_range(-0.5..0.5)).collect();
        // a smooth h2 keeps the secant's second-order term small
        let b: Vec<[f64; 3]> = (0..3).map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect();
        let h2 = Matrix::from_rows(
            &grid.iter().map(|&t| b.iter().map(|b| b[0] + b[1] * t + b[2] * t * t).collect()).collect::<Vec<Vec<f64>>>(),
        );
        let dir = Direction { h1, h2 };
        let engine = BoundEngine::new(&sample, &design, &theta, n_quad);
        let a = HddEvaluator::new(engine, &tuning).gamma3_hdd(x, c, &dir);
        let step = 1e-5;
        let moved = theta.perturbed(step, &dir);
        let b0 = engine.mean_bounds(x, c);
        let b1 = BoundEngine::new(&sample, &design, &moved, n_quad).mean_bounds(x, c);
        track(a.upper, (b1.upper - b0.upper) / step);
        track(a.lower, (b1.lower - b0.lower) / step);
        count[1] += 1;
    }
    count[2] = count[0] + count[1];
    let t = start.elapsed();
    outcome(
        worst <= 1.0 && t < Duration::from_secs(60),
        format!("{} index points, {} mean-bound points, worst error / tolerance {worst:.2}, {t:.2?}", count[0], count[1]),
    )
}

// 5 ---------------------------------------------------------------------

fn degeneracy_and_limits() -> Outcome {
    let start = Instant::now();
    let sample = Dgp::LinearNormal.sample(200, &mut rng(5));
    let design = build_design(&sample, &DesignSpec::main_effects(&["w"])).unwrap();
    let tuning = TuningParams::defaults(sample.n());
    let theta = ThetaHat::fit(&sample, &design, Link::Logit, &tuning).unwrap();
    let engine = BoundEngine::new(&sample, &design, &theta, tuning.n_quad);
    let estimands = [
        Estimand::Ate,
        Estimand::Att,
        Estimand::Mean { x: false },
        Estimand::Mean { x: true },
        Estimand::Cate { w: vec![0.5] },
        Estimand::Cqte { tau: 0.3, w: vec![-0.2] },
    ];
    let mut width0 = 0.0f64;
    for e in &estimands {
        width0 = width0.max(engine.bound(e, 0.0).unwrap().width().abs());
    }

    // c = 1 against the trimmed no-assumption bounds computed directly
    let eps = theta.eps;
    let g = &theta.qr.tau_grid;
    let fitted = |q: &[f64], u: f64| {
        let j = g.partition_point(|&t| t <= u).clamp(1, g.len() - 1) - 1;
        let wgt = (u - g[j]) / (g[j + 1] - g[j]);
        (1.0 - wgt) * dot(q, theta.qr.gamma.row(j)) + wgt * dot(q, theta.qr.gamma.row(j + 1))
    };
    let nodes = cdep_core::bounds::quadrature_nodes(tuning.n_quad);
    let arm = |x: bool| {
        let mut lo = Vec::new();
        let mut up = Vec::new();
        for i in 0..sample.n() {
            let w = sample.w_row(i);
            let q = design.q_row(x, w);
            let p = theta.prop.predict(&design.r_row(w), x);
            lo.push(compensated_mean(
                &nodes.iter().map(|&t| fitted(&q, ((t - 1.0) / p + 1.0).max(0.0).clamp(eps, 1.0 - eps))).collect::<Vec<_>>(),
            ));
            up.push(compensated_mean(
                &nodes.iter().map(|&t| fitted(&q, (t / p).min(1.0).clamp(eps, 1.0 - eps))).collect::<Vec<_>>(),
            ));
        }
        (compensated_mean(&lo), compensated_mean(&up))
    };
    let (l1, u1) = arm(true);
    let (l0, u0) = arm(false);
    let manski = engine.ate_bounds(1.0);
    let manski_diff = (manski.lower - (l1 - u0)).abs().max((manski.upper - (u1 - l0)).abs());

    let grid = uniform_c_grid(21);
    let mut mono_violation = 0.0f64;
    for e in &estimands {
        let m = rearrange_monotone(&engine.bound_curve(e, &grid).unwrap());
        for k in 1..grid.len() {
            mono_violation = mono_violation
                .max(m.pairs[k].lower - m.pairs[k - 1].lower)
                .max(m.pairs[k - 1].upper - m.pairs[k].upper);
        }
    }
    let t = start.elapsed();
    outcome(
        width0 <= 1e-10 && manski_diff <= 1e-10 && mono_violation <= 1e-12 && t < Duration::from_secs(10),
        format!(
            "max width at c = 0 {width0:.1e}, c = 1 vs direct {manski_diff:.1e}, monotonicity violation {mono_violation:.1e}, {t:.2?}"
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn bootstrap_coverage() -> Outcome {
    let start = Instant::now();
    let sim = SimConfig {
        dgp: Dgp::LinearNormal,
        n: 500,
        reps: 200,
        draws: 200,
        seed: 6,
        alpha: 0.05,
        c_grid: uniform_c_grid(21),
        n_quad: 500,
        tau_step: 0.005,
        mode: ModeName::Hdd,
    };
    let table = match sim.run() {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let pw: Vec<f64> = [0.0, 0.05, 0.1]
        .iter()
        .map(|&c| table.pointwise[table.c_grid.iter().position(|&g| (g - c).abs() < 1e-12).unwrap()])
        .collect();
    let t = start.elapsed();
    outcome(
        pw.iter().all(|&v| v >= 0.90) && table.uniform >= 0.90 && t <= Duration::from_secs(30 * 60),
        format!(
            "pointwise coverage at c = 0, 0.05, 0.1: {:.3}, {:.3}, {:.3}; uniform {:.3}; {} failed reps; {} threads, {t:.0?}",
            pw[0],
            pw[1],
            pw[2],
            table.uniform,
            table.failed,
            rayon::current_num_threads()
        ),
    )
}

// 7 ---------------------------------------------------------------------

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn mode_equivalence() -> Outcome {
    let start = Instant::now();
    let sample = Dgp::LinearNormal.sample(1000, &mut rng(7));
    let base = RunConfig {
        covariates: vec!["w".into()],
        c_grid: vec![0.1],
        draws: 500,
        seed: 77,
        estimands: vec!["ate".into()],
        ..RunConfig::default()
    };
    let mut summary = Vec::new();
    for mode in [ModeName::Hdd, ModeName::Standard] {
        let cfg = RunConfig { mode, ..base.clone() };
        let f = match Fitted::new(&cfg, sample.clone()) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("fit failed: {e}")),
        };
        let a = match run_curves(&cfg, &f) {
            Ok(a) => a,
            Err(e) => return outcome(false, format!("{mode:?} bootstrap failed: {e}")),
        };
        let d = &a.draws.unwrap().devs[0][0];
        let lo: Vec<f64> = d.iter().map(|p| p.lower).collect();
        let up: Vec<f64> = d.iter().map(|p| p.upper).collect();
        summary.push([mean_sd(&lo), mean_sd(&up)]);
    }
    // Means of the deviations are close to zero, so their gap is measured
    // in units of the analytical bootstrap's standard deviation.
    let mut worst_mean = 0.0f64;
    let mut worst_sd = 0.0f64;
    for side in 0..2 {
        let (mh, sh) = summary[0][side];
        let (ms, ss) = summary[1][side];
        worst_mean = worst_mean.max((ms - mh).abs() / sh);
        worst_sd = worst_sd.max((ss - sh).abs() / sh);
    }

    let mp = Dgp::MassPoint.sample(1000, &mut rng(70));
    let cfg = RunConfig { covariates: vec!["w".into()], c_grid: vec![0.3], ..RunConfig::default() };
    let fired = match Fitted::new(&cfg, mp) {
        Ok(f) => precondition_report(&f.design, &f.theta, &[0.3], f.tuning.kappa).mass_point[0],
        Err(_) => false,
    };
    let t = start.elapsed();
    let [(ml, sl), (mu, su)] = summary[0];
    let [(msl, ssl), (msu, ssu)] = summary[1];
    outcome(
        worst_mean <= 0.15 && worst_sd <= 0.15 && fired && t <= Duration::from_secs(600),
        format!(
            "hdd lower {ml:.3}/{sl:.3} upper {mu:.3}/{su:.3}; standard lower {msl:.3}/{ssl:.3} upper {msu:.3}/{ssu:.3} (mean/sd); \
             gaps {worst_mean:.3} (mean, in sd units), {worst_sd:.3} (sd, relative); mass-point warning {fired}; {t:.0?}"
        ),
    )
}

// 8 ---------------------------------------------------------------------

const NSW_COVARIATES: [&str; 9] = ["age", "educ", "black", "hispanic", "married", "re74", "re75", "u74", "u75"];

fn nsw_replication() -> Option<Outcome> {
    let path = std::env::var_os("CDEP_NSW_CSV")?;
    let start = Instant::now();
    let covariates: Vec<String> = NSW_COVARIATES.iter().map(|s| s.to_string()).collect();
    let cfg = RunConfig {
        input: Some(path.into()),
        outcome: "re78".into(),
        treatment: "treat".into(),
        covariates,
        c_grid: uniform_c_grid(101),
        draws: 0,
        estimands: vec!["ate".into(), "att".into()],
        ..RunConfig::default()
    };
    let sample = match cdep::pipeline::load_sample(&cfg) {
        Ok(s) => s,
        Err(e) => return Some(outcome(false, format!("cannot load data: {e}"))),
    };
    let report = match cdep::pipeline::analyze_sample(&cfg, sample) {
        Ok(r) => r,
        Err(e) => return Some(outcome(false, format!("analysis failed: {e}"))),
    };
    let b = report.baseline.unwrap();
    let within = |v: f64, t: f64| (v - t).abs() <= 0.05 * t.abs();
    let bp = |label: &str| report.breakdown.iter().find(|r| r.estimand == label).map_or(f64::NAN, |r| r.c_bp);
    let (bp_ate, bp_att) = (bp("ate"), bp("att"));
    let t = start.elapsed();
    Some(outcome(
        within(b.ipw_ate, 1633.0)
            && within(b.ipw_att, 1738.0)
            && (bp_ate - 0.082).abs() <= 0.01
            && (bp_att - 0.123).abs() <= 0.01,
        format!(
            "IPW ATE {:.0}, ATT {:.0}; breakdown ATE {bp_ate:.3}, ATT {bp_att:.3}; main-effects logit; {t:.0?}",
            b.ipw_ate, b.ipw_att
        ),
    ))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("CDEP_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let checks: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "formula oracles", formula_oracles),
        (2, "quantile solver vs brute force", quantile_solver_oracle),
        (3, "saturated MLE", saturated_mle_oracle),
        (4, "derivatives vs secants", hdd_secants),
        (5, "degeneracy and limits", degeneracy_and_limits),
        (6, "bootstrap coverage", bootstrap_coverage),
        (7, "hdd vs standard bootstrap", mode_equivalence),
    ];
    let mut failed = 0;
    for (k, name, check) in checks {
        if !wanted(k) {
            continue;
        }
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {k} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if wanted(8) {
        match nsw_replication() {
            Some(o) => {
                failed += usize::from(!o.pass);
                println!("criterion 8 (NSW replication): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            None => println!("criterion 8 (NSW replication): NOT EVALUATED | set CDEP_NSW_CSV to the NSW data"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
