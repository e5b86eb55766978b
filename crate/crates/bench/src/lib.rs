//! Shared fixtures for the step benchmarks.

use pxlogit::data::gen_ar1;
use pxlogit::missing::MissingDataset;
use pxlogit::Dataset;

/// AR(1) design with Bernoulli outcomes, fixed seed.
pub fn ar1(n: usize, p: usize, rho: f64) -> Dataset {
    gen_ar1(n, p, rho, 20_240_501).expect("valid generator arguments").0
}

/// Binary covariates from an AR(1) fixture thresholded at zero, with every
/// fifth non-intercept cell dropped.
pub fn missing_binary(n: usize, p: usize) -> MissingDataset {
    let d = ar1(n, p, 0.3);
    let x = d.x().map_with_location(|i, j, v| match j {
        0 => 1.0,
        _ if (i + j) % 5 == 0 => f64::NAN,
        _ => f64::from(u8::from(v > 0.0)),
    });
    MissingDataset::new(x, d.y().clone(), d.m().clone(), d.s().clone()).expect("binary fixture is valid")
}
