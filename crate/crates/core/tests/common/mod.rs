#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pxlogit::model::sigmoid;
use pxlogit::Dataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Intercept plus standard normal covariates, `y ~ Binomial(m, expit(x'b))`
/// with `b ~ N(0, scale^2)`, `m` uniform on `1..=max_m`, `s ~ Exp(1)`.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, max_m: u32, scale: f64) -> Dataset {
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal(rng) });
    let b = DVector::from_fn(p, |_, _| scale * normal(rng));
    let eta = &x * &b;
    let m = DVector::from_fn(n, |_, _| rng.random_range(1..=max_m) as f64);
    let y = DVector::from_fn(n, |i, _| (0..m[i] as u32).filter(|_| rng.random::<f64>() < sigmoid(eta[i])).count() as f64);
    let s = DVector::from_fn(n, |_, _| Exp1.sample(rng));
    Dataset::new(x, y, m, s).expect("generated data is valid")
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Index of the first trace row whose penalized objective drops by more than
/// `1e-10 max(1, |previous|)`.
pub fn first_decrease(trace: &[pxlogit::TraceRow]) -> Option<usize> {
    trace.windows(2).position(|w| w[1].penalized_loglik < w[0].penalized_loglik - 1e-10 * w[0].penalized_loglik.abs().max(1.0))
}
