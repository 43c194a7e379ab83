use cdep_core::first_stage::{check_loss, fit_quantile, fit_quantile_matrix, uniform_tau_grid};
use cdep_core::linalg::{solve, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn objective(x: &Matrix, y: &[f64], a: &[f64], tau: f64) -> f64 {
    (0..x.rows())
        .map(|i| check_loss(y[i] - x.row(i).iter().zip(a).map(|(u, v)| u * v).sum::<f64>(), tau))
        .sum()
}

/// Minimum over all fits interpolating `p` rows.
fn brute_force(x: &Matrix, y: &[f64], tau: f64) -> f64 {
    let n = x.rows();
    let p = x.cols();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let xb = x.select_rows(&idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let Some(a) = solve(&xb, &yb) {
            best = best.min(objective(x, y, &a, tau));
        }
        // next combination
        let mut k = p;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < n - p + k {
                idx[k] += 1;
                for j in k + 1..p {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=2usize.min(n));
        let discrete = rng.random_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| {
            if discrete {
                rng.random_range(0..4) as f64
            } else {
                rng.random_range(-2.0..2.0)
            }
        };
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r = vec![1.0];
                if p == 2 {
                    r.push(draw(&mut rng));
                }
                r
            })
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let tau = rng.random_range(0.01..0.99);
        match fit_quantile(&x, &y, tau) {
            Ok((a, obj)) => {
                let bf = brute_force(&x, &y, tau);
                assert!((obj - objective(&x, &y, &a, tau)).abs() <= 1e-10 * (1.0 + obj.abs()));
                assert!(obj <= bf + 1e-8 * (1.0 + bf.abs()), "obj {obj} brute {bf}");
            }
            Err(e) => {
                // only rank-deficient designs may fail
                assert!(matches!(e, cdep_core::Error::DegenerateDesign(_)), "{e}");
            }
        }
    }
}

#[test]
fn resample_with_duplicates_over_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 600;
    let base: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            let w: f64 = rng.random_range(-2.0..2.0);
            let x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            (w, x, 1.0 + x + w + rng.random_range(-1.0..1.0))
        })
        .collect();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let rows: Vec<[f64; 3]> = idx.iter().map(|&i| [1.0, base[i].1, base[i].0]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| base[i].2).collect();
    let x = Matrix::from_rows(&rows);
    let grid = uniform_tau_grid(0.025, 0.005);
    let fit = fit_quantile_matrix(&x, &y, &grid).unwrap();
    for (j, &tau) in grid.iter().enumerate().step_by(17) {
        let (a, obj) = fit_quantile(&x, &y, tau).unwrap();
        assert!((obj - fit.objective[j]).abs() <= 1e-9 * obj, "tau {tau}");
        // subgradient condition at the warm-started solution
        let g = fit.gamma.row(j);
        for col in 0..3 {
            let mut s = 0.0;
            let mut slack = 0.0;
            for i in 0..n {
                let r = y[i] - x.row(i).iter().zip(g).map(|(u, v)| u * v).sum::<f64>();
                if r.abs() < 1e-9 {
                    slack += x[(i, col)].abs();
                } else {
                    s += x[(i, col)] * (tau - if r < 0.0 { 1.0 } else { 0.0 });
                }
            }
            assert!(s.abs() <= slack + 1e-6 * n as f64, "tau {tau} col {col}");
        }
        let _ = a;
    }
}
