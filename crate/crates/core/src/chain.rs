//! Translation-invariant finite-state Markov chains on ℝ^d.
//!
//! A chain is a finite list of increments `y_i` with probabilities `α_i`
//! attached to a base step `h`. The `t = n·h` transition is the n-fold
//! convolution of the base step, see [`compose`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{detect_embedding, LatticeEmbedding};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::payoff::Basket;

pub const WEIGHT_SUM_TOL: f64 = 1e-12;
pub const MERGE_REL_TOL: f64 = 1e-12;
pub const EMBEDDING_TOL: f64 = 1e-10;
/// Default cap on the unmerged path count `m^n` for chains without a lattice embedding.
pub const DEFAULT_PATH_CAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain has no increments")]
    Empty,
    #[error("weight {index} is not strictly positive ({weight})")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("weights sum to {sum}, which is off from 1 by more than {tol:e}")]
    WeightSumOffByMoreThanTol { sum: f64, tol: f64 },
    #[error("increment {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("base step h = {0} is not positive")]
    NonPositiveStep(f64),
    #[error("increment {index} has a non-finite coordinate")]
    NonFiniteIncrement { index: usize },
    #[error("composition needs {paths:e} unmerged paths (cap {cap:e}) and the chain has no lattice embedding")]
    OverflowRisk { paths: f64, cap: f64 },
    #[error("basket {basket} is not supported for a chain of dimension {d}")]
    UnsupportedBasket { basket: String, d: usize },
}

/// Sign information computed on validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainFlags {
    /// Every coordinate of every increment is ≥ 0.
    pub all_increments_nonneg: bool,
    /// Some increment is exactly the zero vector.
    pub contains_zero: bool,
    /// Some increment is ≤ 0 in every coordinate.
    pub has_nonpos_increment: bool,
}

/// One-step law of a translation-invariant chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub d: usize,
    pub h: f64,
    pub increments: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub flags: ChainFlags,
}

impl ChainSpec {
    /// Builds and validates a chain.
    pub fn new(
        d: usize,
        h: f64,
        increments: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self, ChainError> {
        validate_chain(ChainSpec {
            d,
            h,
            increments,
            weights,
            flags: ChainFlags::default(),
        })
    }

    /// Convenience constructor for one-dimensional chains.
    pub fn one_dim(h: f64, increments: &[f64], weights: &[f64]) -> Result<Self, ChainError> {
        Self::new(
            1,
            h,
            increments.iter().map(|&y| vec![y]).collect(),
            weights.to_vec(),
        )
    }

    pub fn m(&self) -> usize {
        self.increments.len()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest value of coordinate `j` over all increments.
    pub fn max_coord(&self, j: usize) -> f64 {
        self.increments
            .iter()
            .map(|y| y[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest value of coordinate `j` over all increments.
    pub fn min_coord(&self, j: usize) -> f64 {
        self.increments
            .iter()
            .map(|y| y[j])
            .fold(f64::INFINITY, f64::min)
    }

    /// `Σ α_i e^{(y_i)_j}` for coordinate `j`.
    pub fn exp_moment(&self, j: usize) -> f64 {
        compensated_sum(
            self.weights
                .iter()
                .zip(&self.increments)
                .map(|(a, y)| a * y[j].exp()),
        )
    }
}

/// Checks the structural invariants and recomputes the sign flags.
pub fn validate_chain(raw: ChainSpec) -> Result<ChainSpec, ChainError> {
    if !(raw.h > 0.0) || !raw.h.is_finite() {
        return Err(ChainError::NonPositiveStep(raw.h));
    }
    if raw.increments.is_empty() {
        return Err(ChainError::Empty);
    }
    if raw.weights.len() != raw.increments.len() {
        return Err(ChainError::DimensionMismatch {
            index: raw.weights.len().min(raw.increments.len()),
            expected: raw.increments.len(),
            found: raw.weights.len(),
        });
    }
    for (index, y) in raw.increments.iter().enumerate() {
        if y.len() != raw.d {
            return Err(ChainError::DimensionMismatch {
                index,
                expected: raw.d,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ChainError::NonFiniteIncrement { index });
        }
    }
    for (index, &weight) in raw.weights.iter().enumerate() {
        if !(weight > 0.0) {
            return Err(ChainError::NonPositiveWeight { index, weight });
        }
    }
    let sum = compensated_sum(raw.weights.iter().copied());
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ChainError::WeightSumOffByMoreThanTol {
            sum,
            tol: WEIGHT_SUM_TOL,
        });
    }
    let flags = ChainFlags {
        all_increments_nonneg: raw.increments.iter().flatten().all(|&v| v >= 0.0),
        contains_zero: raw.increments.iter().any(|y| y.iter().all(|&v| v == 0.0)),
        has_nonpos_increment: raw.increments.iter().any(|y| y.iter().all(|&v| v <= 0.0)),
    };
    Ok(ChainSpec { flags, ..raw })
}

/// The `t = n·h` transition law with duplicate increments merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedChain {
    pub steps: usize,
    pub horizon: f64,
    pub increments: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ComposedChain {
    /// `Σ_k α_k f(x + y_k)` in the stored (lexicographic) order.
    pub fn expectation<F>(&self, f: F, x: &[f64]) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        self.try_expectation(|p| Ok::<f64, std::convert::Infallible>(f(p)), x)
            .unwrap_or_else(|e| match e {})
    }

    pub fn try_expectation<F, E>(&self, f: F, x: &[f64]) -> Result<f64, E>
    where
        F: Fn(&[f64]) -> Result<f64, E>,
    {
        let mut acc = CompensatedSum::new();
        let mut point = vec![0.0; x.len()];
        for (y, a) in self.increments.iter().zip(&self.weights) {
            for ((p, xi), yi) in point.iter_mut().zip(x).zip(y) {
                *p = xi + yi;
            }
            acc.add(a * f(&point)?);
        }
        Ok(acc.value())
    }

    pub fn max_coord(&self, j: usize) -> f64 {
        self.increments
            .iter()
            .map(|y| y[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_coord(&self, j: usize) -> f64 {
        self.increments
            .iter()
            .map(|y| y[j])
            .fold(f64::INFINITY, f64::min)
    }
}

/// n-fold composition with the default path cap.
pub fn compose(spec: &ChainSpec, n: usize) -> Result<ComposedChain, ChainError> {
    compose_with_cap(spec, n, DEFAULT_PATH_CAP)
}

/// n-fold composition. Lattice chains are merged on exact integer keys;
/// other chains are merged with a relative tolerance of 1e−12 per coordinate
/// and refused when `m^n` exceeds `cap`.
pub fn compose_with_cap(
    spec: &ChainSpec,
    n: usize,
    cap: f64,
) -> Result<ComposedChain, ChainError> {
    let horizon = n as f64 * spec.h;
    if n == 0 {
        return Ok(ComposedChain {
            steps: 0,
            horizon,
            increments: vec![vec![0.0; spec.d]],
            weights: vec![1.0],
        });
    }
    if let Ok(emb) = detect_embedding(spec, EMBEDDING_TOL) {
        return Ok(compose_on_lattice(spec, &emb, n));
    }
    let paths = (spec.m() as f64).powi(n as i32);
    if paths > cap {
        return Err(ChainError::OverflowRisk { paths, cap });
    }
    let mut incs: Vec<Vec<f64>> = vec![vec![0.0; spec.d]];
    let mut ws: Vec<f64> = vec![1.0];
    for _ in 0..n {
        let mut next: Vec<(Vec<f64>, f64)> = Vec::with_capacity(incs.len() * spec.m());
        for (y, a) in incs.iter().zip(&ws) {
            for (z, b) in spec.increments.iter().zip(&spec.weights) {
                next.push((y.iter().zip(z).map(|(u, v)| u + v).collect(), a * b));
            }
        }
        let (i, w) = merge_close(next);
        incs = i;
        ws = w;
    }
    Ok(ComposedChain {
        steps: n,
        horizon,
        increments: incs,
        weights: ws,
    })
}

fn compose_on_lattice(spec: &ChainSpec, emb: &LatticeEmbedding, n: usize) -> ComposedChain {
    let table = emb.composed_offsets(&spec.weights, n);
    let increments = table
        .iter()
        .map(|(k, _)| {
            (0..spec.d)
                .map(|j| n as f64 * emb.drift[j] + emb.scale[j] * k[j] as f64)
                .collect()
        })
        .collect();
    let weights = table.iter().map(|(_, w)| *w).collect();
    ComposedChain {
        steps: n,
        horizon: n as f64 * spec.h,
        increments,
        weights,
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= MERGE_REL_TOL * x.abs().max(y.abs()).max(1.0))
}

/// Sorts lexicographically and merges neighbours within tolerance.
fn merge_close(mut items: Vec<(Vec<f64>, f64)>) -> (Vec<Vec<f64>>, Vec<f64>) {
    items.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut incs: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<CompensatedSum> = Vec::new();
    for (y, w) in items {
        match incs.iter().rposition(|z| close(z, &y)) {
            Some(i) => sums[i].add(w),
            None => {
                let mut s = CompensatedSum::new();
                s.add(w);
                incs.push(y);
                sums.push(s);
            }
        }
    }
    (incs, sums.iter().map(|s| s.value()).collect())
}

/// `P_{nh} f (x)`; `n = 0` returns `f(x)`.
pub fn expected_value<F>(spec: &ChainSpec, n: usize, f: F, x: &[f64]) -> Result<f64, ChainError>
where
    F: Fn(&[f64]) -> f64,
{
    Ok(compose(spec, n)?.expectation(f, x))
}

/// Subtracts the componentwise minimum so that every coordinate of every
/// increment is ≥ 0 and 0 is attained in each coordinate.
pub fn shifted_chain(spec: &ChainSpec) -> ChainSpec {
    let mins: Vec<f64> = (0..spec.d).map(|j| spec.min_coord(j)).collect();
    let increments = spec
        .increments
        .iter()
        .map(|y| y.iter().zip(&mins).map(|(v, m)| v - m).collect())
        .collect();
    validate_chain(ChainSpec {
        increments,
        ..spec.clone()
    })
    .expect("shifting keeps a valid chain valid")
}

/// Per-year growth factors `(γ₀, γ₁)` with `γ₀^t f̄ ≤ P_t f̄ ≤ γ₁^t f̄`.
pub fn growth_factors(spec: &ChainSpec, basket: &Basket) -> Result<(f64, f64), ChainError> {
    let per_year = |c: f64| c.powf(1.0 / spec.h);
    match basket {
        Basket::Exp1D => {
            if spec.d != 1 {
                return Err(ChainError::UnsupportedBasket {
                    basket: basket.name().into(),
                    d: spec.d,
                });
            }
            let g = per_year(spec.exp_moment(0));
            Ok((g, g))
        }
        Basket::MaxExp | Basket::MinExp => {
            let hi = compensated_sum(spec.weights.iter().zip(&spec.increments).map(|(a, y)| {
                a * y.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
            }));
            let lo = compensated_sum(spec.weights.iter().zip(&spec.increments).map(|(a, y)| {
                a * y.iter().copied().fold(f64::INFINITY, f64::min).exp()
            }));
            Ok((per_year(lo), per_year(hi)))
        }
        Basket::WeightedSumExp(w) => {
            if w.len() != spec.d {
                return Err(ChainError::UnsupportedBasket {
                    basket: basket.name().into(),
                    d: spec.d,
                });
            }
            let moments: Vec<f64> = (0..spec.d)
                .filter(|&j| w[j] > 0.0)
                .map(|j| spec.exp_moment(j))
                .collect();
            let hi = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = moments.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((per_year(lo), per_year(hi)))
        }
    }
}

/// Collapses a list of `(key, weight)` contributions into a sorted table.
pub(crate) fn accumulate_keys<I>(items: I) -> Vec<(Vec<i64>, f64)>
where
    I: IntoIterator<Item = (Vec<i64>, f64)>,
{
    let mut map: BTreeMap<Vec<i64>, CompensatedSum> = BTreeMap::new();
    for (k, w) in items {
        map.entry(k).or_default().add(w);
    }
    map.into_iter().map(|(k, s)| (k, s.value())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_point() -> ChainSpec {
        ChainSpec::one_dim(0.5, &[0.0, 0.2], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn validation_flags() {
        let c = two_point();
        assert!(c.flags.all_increments_nonneg);
        assert!(c.flags.contains_zero);
        assert!(c.flags.has_nonpos_increment);

        let c = ChainSpec::new(2, 1.0, vec![vec![0.0, 0.0], vec![0.1, -0.1]], vec![0.5, 0.5])
            .unwrap();
        assert!(!c.flags.all_increments_nonneg);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            ChainSpec::one_dim(0.5, &[0.0, 0.2], &[0.6, 0.5]),
            Err(ChainError::WeightSumOffByMoreThanTol { .. })
        ));
        assert!(matches!(
            ChainSpec::one_dim(0.5, &[0.0, 0.2], &[1.0, 0.0]),
            Err(ChainError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            ChainSpec::one_dim(0.0, &[0.0], &[1.0]),
            Err(ChainError::NonPositiveStep(_))
        ));
        assert!(matches!(
            ChainSpec::new(2, 1.0, vec![vec![0.0]], vec![1.0]),
            Err(ChainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn binomial_composition() {
        let c = ChainSpec::one_dim(1.0, &[0.0, 0.3], &[0.25, 0.75]).unwrap();
        let two = compose(&c, 2).unwrap();
        assert_eq!(two.weights.len(), 3);
        for (y, e) in two.increments.iter().zip([0.0, 0.3, 0.6]) {
            assert_relative_eq!(y[0], e, epsilon = 1e-15);
        }
        for (w, e) in two.weights.iter().zip([0.0625, 0.375, 0.5625]) {
            assert_relative_eq!(*w, e, epsilon = 1e-15);
        }
        assert_eq!(compose(&c, 1).unwrap().weights, vec![0.25, 0.75]);
    }

    #[test]
    fn three_fold_composition_matches_path_enumeration() {
        let c = two_point();
        let three = compose(&c, 3).unwrap();
        // 8 paths: the sum k·0.2 is reached by C(3,k) of them.
        let mut paths = BTreeMap::new();
        for bits in 0..8u32 {
            let k = bits.count_ones() as i64;
            *paths.entry(k).or_insert(0.0) += 0.125;
        }
        assert_eq!(three.increments.len(), paths.len());
        for ((y, w), (k, p)) in three.increments.iter().zip(&three.weights).zip(&paths) {
            assert_relative_eq!(y[0], 0.2 * *k as f64, epsilon = 1e-15);
            assert_relative_eq!(*w, *p, epsilon = 1e-15);
        }
    }

    #[test]
    fn tolerance_merge_for_irrational_chain() {
        let c = ChainSpec::one_dim(1.0, &[0.0, 0.1, 0.1 * 2f64.sqrt()], &[0.2, 0.3, 0.5]).unwrap();
        let two = compose(&c, 2).unwrap();
        // 0.1+0.1√2 is reached twice, everything else distinct.
        assert_eq!(two.increments.len(), 6);
        assert_relative_eq!(two.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(matches!(
            compose_with_cap(&c, 20, 1e6),
            Err(ChainError::OverflowRisk { .. })
        ));
    }

    #[test]
    fn expectation_of_exp() {
        let c = two_point();
        let e1 = expected_value(&c, 1, |x| x[0].exp(), &[0.0]).unwrap();
        assert_relative_eq!(e1, 0.5 * (1.0 + 0.2f64.exp()), epsilon = 1e-15);
        assert_relative_eq!(e1, 1.110701379, epsilon = 1e-9);
        let e2 = expected_value(&c, 2, |x| x[0].exp(), &[0.0]).unwrap();
        assert_relative_eq!(e2, e1 * e1, epsilon = 1e-15);
        assert_relative_eq!(e2, 1.233657, epsilon = 1e-6);
        assert_eq!(expected_value(&c, 0, |x| x[0] + 7.0, &[1.0]).unwrap(), 8.0);
    }

    #[test]
    fn identity_chain() {
        let c = ChainSpec::one_dim(0.1, &[0.0], &[1.0]).unwrap();
        for n in 0..5 {
            let v = expected_value(&c, n, |x| x[0].sin(), &[0.7]).unwrap();
            assert_eq!(v, 0.7f64.sin());
        }
    }

    #[test]
    fn shifting() {
        let c = ChainSpec::one_dim(1.0, &[0.05, 0.25], &[0.5, 0.5]).unwrap();
        let s = shifted_chain(&c);
        assert_relative_eq!(s.increments[0][0], 0.0);
        assert_relative_eq!(s.increments[1][0], 0.2, epsilon = 1e-15);
        assert!(s.flags.all_increments_nonneg);

        let z = two_point();
        assert_eq!(shifted_chain(&z), z);

        let c2 = ChainSpec::new(2, 1.0, vec![vec![0.1, 0.3], vec![0.2, 0.1]], vec![0.5, 0.5])
            .unwrap();
        let s2 = shifted_chain(&c2);
        assert_relative_eq!(s2.increments[0][1], 0.2, epsilon = 1e-15);
        assert_relative_eq!(s2.increments[1][0], 0.1, epsilon = 1e-15);
        assert_eq!(s2.increments[0][0], 0.0);
        assert_eq!(s2.increments[1][1], 0.0);
    }

    #[test]
    fn growth_factor_examples() {
        let (g0, g1) = growth_factors(&two_point(), &Basket::Exp1D).unwrap();
        assert_eq!(g0, g1);
        assert_relative_eq!(g1, 1.233657, epsilon = 1e-6);

        let id = ChainSpec::one_dim(0.3, &[0.0], &[1.0]).unwrap();
        assert_eq!(growth_factors(&id, &Basket::Exp1D).unwrap(), (1.0, 1.0));

        let c = ChainSpec::new(2, 1.0, vec![vec![0.0, 0.0], vec![0.1, 0.2]], vec![0.5, 0.5])
            .unwrap();
        let (g0, g1) = growth_factors(&c, &Basket::MaxExp).unwrap();
        assert_relative_eq!(g1, 1.110701, epsilon = 1e-6);
        assert_relative_eq!(g0, 1.052585, epsilon = 1e-6);

        assert!(growth_factors(&c, &Basket::Exp1D).is_err());
    }
}
