#![allow(dead_code)]

use cdep_core::linalg::Matrix;
use cdep_core::numeric::logistic;
use cdep_core::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-Muller; keeps the test fixtures independent of distribution crates.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `W ~ N(0,1)`, `X ~ Bernoulli(logistic(slope W))`, `Y = 1 + X + W + U`.
pub fn linear_sample(n: usize, slope: f64, seed: u64) -> Sample {
    let mut r = rng(seed);
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut w = Vec::new();
    for _ in 0..n {
        let wi = normal(&mut r);
        let xi = r.random::<f64>() < logistic(slope * wi);
        y.push(1.0 + f64::from(u8::from(xi)) + wi + normal(&mut r));
        x.push(xi);
        w.push(wi);
    }
    Sample::new(y, x, Matrix::from_row_major(n, 1, w), vec!["w".into()]).expect("both arms")
}

/// Two independent binary covariates.
pub fn binary_sample(n: usize, seed: u64) -> Sample {
    let mut r = rng(seed);
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut w = Vec::new();
    for _ in 0..n {
        let a = f64::from(u8::from(r.random::<bool>()));
        let b = f64::from(u8::from(r.random::<bool>()));
        let xi = r.random::<f64>() < 0.25 + 0.3 * a + 0.2 * b;
        y.push(a - b + 2.0 * f64::from(u8::from(xi)) + normal(&mut r));
        x.push(xi);
        w.push(a);
        w.push(b);
    }
    Sample::new(y, x, Matrix::from_row_major(n, 2, w), vec!["a".into(), "b".into()]).expect("both arms")
}
