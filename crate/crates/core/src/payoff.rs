//! Put and call payoffs on exponential baskets, and the exercise-probability
//! regions `E^t = {P_t(g∨0) > P_t g}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayoffError {
    #[error("strike must be ≥ 0, got {0}")]
    NegativeStrike(f64),
    #[error("basket weights must be nonnegative and sum to 1 ({0})")]
    InvalidWeights(String),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("payoff basket has dimension {basket}, chain has dimension {chain}")]
    DimensionMismatch { basket: usize, chain: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Put,
    Call,
}

/// Basket function `f̄` on log-prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basket {
    /// `e^x`, d = 1.
    Exp1D,
    /// `max_j e^{x_j}`.
    MaxExp,
    /// `min_j e^{x_j}`.
    MinExp,
    /// `Σ_j w_j e^{x_j}`.
    WeightedSumExp(Vec<f64>),
}

impl Basket {
    pub fn name(&self) -> &'static str {
        match self {
            Basket::Exp1D => "exp",
            Basket::MaxExp => "max_exp",
            Basket::MinExp => "min_exp",
            Basket::WeightedSumExp(_) => "weighted_sum_exp",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Basket::Exp1D => x[0].exp(),
            Basket::MaxExp => x.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp(),
            Basket::MinExp => x.iter().copied().fold(f64::INFINITY, f64::min).exp(),
            Basket::WeightedSumExp(w) => w.iter().zip(x).map(|(w, x)| w * x.exp()).sum(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<(), PayoffError> {
        let basket = match self {
            Basket::Exp1D => 1,
            Basket::WeightedSumExp(w) => w.len(),
            _ => return Ok(()),
        };
        if basket != d {
            return Err(PayoffError::DimensionMismatch { basket, chain: d });
        }
        Ok(())
    }
}

/// `g = K − f̄` for puts, `g = f̄ − K` for calls. The option pays `g ∨ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub side: Side,
    pub strike: f64,
    pub basket: Basket,
}

impl PayoffSpec {
    pub fn new(side: Side, strike: f64, basket: Basket) -> Result<Self, PayoffError> {
        if !(strike >= 0.0) || !strike.is_finite() {
            return Err(PayoffError::NegativeStrike(strike));
        }
        if let Basket::WeightedSumExp(w) = &basket {
            let sum: f64 = w.iter().sum();
            if w.is_empty() || w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(PayoffError::InvalidWeights(format!("{w:?}")));
            }
        }
        Ok(Self {
            side,
            strike,
            basket,
        })
    }

    pub fn put(strike: f64, basket: Basket) -> Result<Self, PayoffError> {
        Self::new(Side::Put, strike, basket)
    }

    pub fn call(strike: f64, basket: Basket) -> Result<Self, PayoffError> {
        Self::new(Side::Call, strike, basket)
    }

    /// `g(x)`.
    pub fn g(&self, x: &[f64]) -> f64 {
        let f = self.basket.eval(x);
        match self.side {
            Side::Put => self.strike - f,
            Side::Call => f - self.strike,
        }
    }

    /// `(g ∨ 0)(x)`.
    pub fn payoff(&self, x: &[f64]) -> f64 {
        self.g(x).max(0.0)
    }

    pub fn check_chain(&self, chain: &ChainSpec) -> Result<(), PayoffError> {
        self.basket.check_dim(chain.d)
    }
}

/// `g(x)` as a free function.
pub fn evaluate_g(p: &PayoffSpec, x: &[f64]) -> f64 {
    p.g(x)
}

/// Subsets of ℝ^d with a total membership predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `(lo, ∞)` if `open`, else `[lo, ∞)`; d = 1.
    HalfLine { lo: f64, open: bool },
    /// `{x : x_j > c_j for some j}`.
    UnionOfUpperHalfSpaces { thresholds: Vec<f64> },
    /// Closed box; bounds may be infinite.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Intersection(Vec<Region>),
    Complement(std::boxed::Box<Region>),
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::HalfLine { lo, open } => {
                if *open {
                    x[0] > *lo
                } else {
                    x[0] >= *lo
                }
            }
            Region::UnionOfUpperHalfSpaces { thresholds } => {
                x.iter().zip(thresholds).any(|(x, c)| x > c)
            }
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h),
            Region::Intersection(parts) => parts.iter().all(|r| r.contains(x)),
            Region::Complement(inner) => !inner.contains(x),
        }
    }

    pub fn complement(self) -> Region {
        match self {
            Region::Complement(inner) => *inner,
            other => Region::Complement(std::boxed::Box::new(other)),
        }
    }

    pub fn intersect(self, other: Region) -> Region {
        match (self, other) {
            (Region::Intersection(mut a), Region::Intersection(b)) => {
                a.extend(b);
                Region::Intersection(a)
            }
            (Region::Intersection(mut a), r) | (r, Region::Intersection(mut a)) => {
                a.push(r);
                Region::Intersection(a)
            }
            (a, b) => Region::Intersection(vec![a, b]),
        }
    }

    /// The whole space in dimension `d`.
    pub fn everything(d: usize) -> Region {
        Region::Box {
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
        }
    }
}

/// Closed form of `E^t` for puts on `exp` (d = 1) and `max_exp` baskets.
/// Points where `P_t(g∨0) = P_t g` holds with equality belong to the complement.
pub fn exercise_region(p: &PayoffSpec, chain: &ChainSpec, t: f64) -> Result<Region, PayoffError> {
    p.check_chain(chain)?;
    if p.side != Side::Put {
        return Err(PayoffError::UnsupportedCombination(
            "closed-form exercise regions exist for puts only".into(),
        ));
    }
    let n = t / chain.h;
    let ln_k = p.strike.ln();
    match p.basket {
        Basket::Exp1D => Ok(Region::HalfLine {
            lo: ln_k - n * chain.max_coord(0),
            open: true,
        }),
        Basket::MaxExp => Ok(Region::UnionOfUpperHalfSpaces {
            thresholds: (0..chain.d).map(|j| ln_k - n * chain.max_coord(j)).collect(),
        }),
        _ => Err(PayoffError::UnsupportedCombination(format!(
            "no closed-form exercise region for basket {}",
            p.basket.name()
        ))),
    }
}

/// Largest distance from `(ln K, …, ln K)` to the faces of a box.
pub fn box_radius(p: &PayoffSpec, lo: &[f64], hi: &[f64]) -> f64 {
    let ln_k = p.strike.ln();
    lo.iter()
        .zip(hi)
        .map(|(l, h)| (l - ln_k).abs().max((h - ln_k).abs()))
        .fold(0.0, f64::max)
}

/// Upper bound on the measure of `{e^{rs} g > P_s(g∨0) > P_s g}` (d = 1) or
/// of the corresponding max-put set inside the box `bx`.
pub fn region_measure_bound(
    p: &PayoffSpec,
    chain: &ChainSpec,
    s: f64,
    bx: Option<(&[f64], &[f64])>,
) -> Result<f64, PayoffError> {
    p.check_chain(chain)?;
    if p.side != Side::Put {
        return Err(PayoffError::UnsupportedCombination(
            "measure bounds exist for puts only".into(),
        ));
    }
    match p.basket {
        Basket::Exp1D => Ok(s * chain.max_coord(0).max(0.0) / chain.h),
        Basket::MaxExp => {
            let (lo, hi) = bx.ok_or_else(|| {
                PayoffError::UnsupportedCombination("max-put measure bound needs a box".into())
            })?;
            let r = box_radius(p, lo, hi);
            let lattice: f64 = (0..chain.d).map(|j| chain.max_coord(j).max(0.0)).sum();
            Ok(s * r.powi(chain.d as i32 - 1) * lattice / chain.h)
        }
        _ => Err(PayoffError::UnsupportedCombination(format!(
            "no measure bound for basket {}",
            p.basket.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_point() -> ChainSpec {
        ChainSpec::one_dim(0.5, &[0.0, 0.2], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn g_examples() {
        let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
        assert_relative_eq!(p.g(&[-0.1]), 0.0951626, epsilon = 1e-7);
        let z = PayoffSpec::put(0.0, Basket::Exp1D).unwrap();
        assert!(z.g(&[0.3]) < 0.0);
        assert_eq!(z.payoff(&[0.3]), 0.0);
        let m = PayoffSpec::put(1.0, Basket::MaxExp).unwrap();
        assert_eq!(m.g(&[-1.0, 0.0]), 0.0);
        let c = PayoffSpec::call(1.0, Basket::MinExp).unwrap();
        assert_relative_eq!(c.g(&[0.5, 0.2]), 0.2f64.exp() - 1.0);
        let w = PayoffSpec::put(2.0, Basket::WeightedSumExp(vec![0.25, 0.75])).unwrap();
        assert_relative_eq!(w.g(&[0.0, 0.0]), 1.0);
        assert!(PayoffSpec::put(-1.0, Basket::Exp1D).is_err());
        assert!(PayoffSpec::put(1.0, Basket::WeightedSumExp(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn region_examples() {
        let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
        let c = two_point();
        match exercise_region(&p, &c, 0.5).unwrap() {
            Region::HalfLine { lo, open } => {
                assert_relative_eq!(lo, -0.2, epsilon = 1e-15);
                assert!(open);
            }
            r => panic!("{r:?}"),
        }
        match exercise_region(&p, &c, 1.0).unwrap() {
            Region::HalfLine { lo, .. } => assert_relative_eq!(lo, -0.4, epsilon = 1e-15),
            r => panic!("{r:?}"),
        }
        let m = PayoffSpec::put(1.0, Basket::MaxExp).unwrap();
        let c2 = ChainSpec::new(2, 1.0, vec![vec![0.0, 0.0], vec![0.1, 0.3]], vec![0.5, 0.5])
            .unwrap();
        match exercise_region(&m, &c2, 1.0).unwrap() {
            Region::UnionOfUpperHalfSpaces { thresholds } => {
                assert_relative_eq!(thresholds[0], -0.1, epsilon = 1e-15);
                assert_relative_eq!(thresholds[1], -0.3, epsilon = 1e-15);
            }
            r => panic!("{r:?}"),
        }
        let call = PayoffSpec::call(1.0, Basket::Exp1D).unwrap();
        assert!(exercise_region(&call, &c, 0.5).is_err());
    }

    #[test]
    fn boundary_belongs_to_complement() {
        let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
        let r = exercise_region(&p, &two_point(), 0.5).unwrap();
        assert!(!r.contains(&[-0.2]));
        assert!(r.contains(&[-0.19]));
        assert!(r.clone().complement().contains(&[-0.2]));
    }

    #[test]
    fn measure_bounds() {
        let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
        let b = region_measure_bound(&p, &two_point(), 0.5, None).unwrap();
        assert_relative_eq!(b, 0.2, epsilon = 1e-15);
        assert_eq!(region_measure_bound(&p, &two_point(), 0.0, None).unwrap(), 0.0);

        let m = PayoffSpec::put(1.0, Basket::MaxExp).unwrap();
        let c2 = ChainSpec::new(
            2,
            0.25,
            vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![0.1, 0.1]],
            vec![0.25; 4],
        )
        .unwrap();
        let b = region_measure_bound(&m, &c2, 0.5, Some((&[-1.0, -1.0], &[1.0, 1.0]))).unwrap();
        assert_relative_eq!(b, 0.4, epsilon = 1e-15);
    }
}
