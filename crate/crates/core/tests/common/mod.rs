#![allow(dead_code)]

use dyadic_core::chain::shifted_chain;
use dyadic_core::cubature::{admissible_volatility, build_chain, calibrate_drift, gauss_d1_deg3, product};
use dyadic_core::verify::VerifyConfig;
use dyadic_core::{Basket, ChainSpec, PayoffSpec};

/// d = 1 put, h = T/32, calibrated chain at the largest σ keeping every
/// increment ≥ 0.
pub fn vanilla() -> VerifyConfig {
    let f = gauss_d1_deg3();
    let (r, delta, t) = (0.1, 0.02, 4.0);
    let h = t / 32.0;
    let sigma = admissible_volatility(&f, r - delta, h);
    let mu = calibrate_drift(&f, r, delta, &sigma, h);
    let (chain, _) = build_chain(&f, &mu, &sigma, h).unwrap();
    let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
    let mut c = VerifyConfig::new(chain, p, r, t);
    c.levels = (0, 5);
    c
}

/// d = 1 put with increments of both signs.
pub fn two_sided() -> VerifyConfig {
    let f = gauss_d1_deg3();
    let (r, delta, sigma, t) = (0.05, 0.01, 0.2, 1.0);
    let h = t / 8.0;
    let mu = calibrate_drift(&f, r, delta, &[sigma], h);
    let (chain, _) = build_chain(&f, &mu, &[sigma], h).unwrap();
    let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
    VerifyConfig::new(chain, p, r, t)
}

/// d = 2 max-put on the shifted product chain, box `[ln K − 1, ln K + 1]²`.
pub fn maxput() -> VerifyConfig {
    let f = product(2, &gauss_d1_deg3());
    let (r, sigma, t) = (0.1, 0.015, 8.0);
    let h = 0.25;
    let mu = calibrate_drift(&f, r, 0.0, &[sigma, sigma], h);
    let (chain, _) = build_chain(&f, &mu, &[sigma, sigma], h).unwrap();
    let chain = shifted_chain(&chain);
    let p = PayoffSpec::put(1.0, Basket::MaxExp).unwrap();
    let mut c = VerifyConfig::new(chain, p, r, t);
    c.pairs = vec![(1, 3), (2, 4)];
    c
}

/// `{−a, 0, a}` with weights `(¼, ½, ¼)`.
pub fn trinomial(h: f64, a: f64) -> ChainSpec {
    ChainSpec::one_dim(h, &[-a, 0.0, a], &[0.25, 0.5, 0.25]).unwrap()
}
