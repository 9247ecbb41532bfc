//! Analytic constants of the first-order and dyadic error bounds.
//!
//! Suprema over `(0,T] ∩ hℕ` are evaluated on that finite grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{growth_factors, ChainError, ChainSpec};
use crate::numeric::steps_in;
use crate::payoff::{box_radius, exercise_region, Basket, PayoffError, PayoffSpec, Region, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("expected a {expected} payoff")]
    WrongSide { expected: &'static str },
    #[error("horizon {horizon} is not a positive multiple of h = {h}")]
    HorizonNotMultipleOfH { horizon: f64, h: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
}

/// A constant that may be undefined (an ingredient is infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Quantity {
    Value { value: f64 },
    NotApplicable { reason: String },
}

impl Quantity {
    pub fn value(&self) -> Option<f64> {
        match self {
            Quantity::Value { value } => Some(*value),
            Quantity::NotApplicable { .. } => None,
        }
    }

    fn require(&self, what: &str) -> Result<f64, BoundsError> {
        match self {
            Quantity::Value { value } => Ok(*value),
            Quantity::NotApplicable { reason } => {
                Err(BoundsError::NotApplicable(format!("{what}: {reason}")))
            }
        }
    }

    fn na(reason: impl Into<String>) -> Self {
        Quantity::NotApplicable {
            reason: reason.into(),
        }
    }
}

fn horizon_steps(chain: &ChainSpec, horizon: f64) -> Result<usize, BoundsError> {
    match steps_in(horizon, chain.h) {
        Some(n) if n >= 1 => Ok(n),
        _ => Err(BoundsError::HorizonNotMultipleOfH {
            horizon,
            h: chain.h,
        }),
    }
}

/// `sup_{t ∈ {h,…,nh}} f(t)`.
fn grid_sup(h: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (1..=n)
        .map(|k| f(k as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `K·sup_t (γ^t − 1)/t` over the grid.
pub fn r_constant(strike: f64, ln_gamma: f64, h: f64, n: usize) -> f64 {
    strike * grid_sup(h, n, |t| (t * ln_gamma).exp_m1() / t)
}

/// Constants of the put first-order bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderConstants {
    pub gamma0: f64,
    pub gamma1: f64,
    /// `K·sup_t (γ₁^t − 1)/t` with the chain's own `γ₁`.
    pub r: f64,
    /// Same with `γ₁ ∨ e^r`, the factor under which the L∞ bound is stated.
    pub r_linf: f64,
    pub d_tilde: Quantity,
    pub c0: Quantity,
    pub notes: Vec<String>,
}

/// Infimum of `f̄` over `⋃_{t ≤ T} E^t` for puts, when a closed form exists.
fn put_region_inf(p: &PayoffSpec, chain: &ChainSpec, n: usize) -> Option<f64> {
    let k = p.strike;
    // max over t ∈ {h..nh} of (t/h)·a
    let reach = |a: f64| if a >= 0.0 { n as f64 * a } else { a };
    match p.basket {
        Basket::Exp1D => Some(k * (-reach(chain.max_coord(0))).exp()),
        Basket::MaxExp => Some(
            (0..chain.d)
                .map(|j| k * (-reach(chain.max_coord(j))).exp())
                .fold(f64::INFINITY, f64::min),
        ),
        _ => None,
    }
}

/// Supremum of `f̄` over `⋃_{t ≤ T} E^t` for calls, when a closed form exists.
fn call_region_sup(p: &PayoffSpec, chain: &ChainSpec, n: usize) -> Option<f64> {
    let k = p.strike;
    // max over t of −(t/h)·a
    let reach = |a: f64| if a <= 0.0 { -(n as f64) * a } else { -a };
    match p.basket {
        Basket::Exp1D => Some(k * reach(chain.min_coord(0)).exp()),
        Basket::MaxExp => {
            let lowest = (0..chain.d)
                .map(|j| chain.min_coord(j))
                .fold(f64::INFINITY, f64::min);
            Some(k * reach(lowest).exp())
        }
        _ => None,
    }
}

/// `K(sup (1−e^{−rs})/s − r) + D·(sup (γ^s e^{−rs} − 1)/s − ln γ + r)`.
fn c_constant(strike: f64, r: f64, ln_gamma: f64, dd: f64, h: f64, n: usize) -> f64 {
    let first = grid_sup(h, n, |s| -(-r * s).exp_m1() / s) - r;
    let second = grid_sup(h, n, |s| (s * (ln_gamma - r)).exp_m1() / s) - ln_gamma + r;
    strike * first + dd * second
}

pub fn first_order_constants(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
) -> Result<FirstOrderConstants, BoundsError> {
    if p.side != Side::Put {
        return Err(BoundsError::WrongSide { expected: "put" });
    }
    p.check_chain(chain)?;
    let n = horizon_steps(chain, horizon)?;
    let (gamma0, gamma1) = growth_factors(chain, &p.basket)?;
    let ln_g1 = gamma1.ln();
    let mut notes = Vec::new();
    let rr = r_constant(p.strike, ln_g1, chain.h, n);
    let r_linf = r_constant(p.strike, ln_g1.max(r), chain.h, n);
    let e_r = r.exp();
    let d_tilde = if gamma1 < e_r {
        match put_region_inf(p, chain, n) {
            Some(v) => Quantity::Value { value: v },
            None => Quantity::na(format!(
                "no closed-form exercise region for basket {}",
                p.basket.name()
            )),
        }
    } else if gamma1 > e_r {
        Quantity::na("γ₁ > e^r: supremum of f̄ over the unbounded exercise region is infinite")
    } else {
        notes.push("γ₁ = e^r exactly: both indicators vanish and D̃ = 0".into());
        Quantity::Value { value: 0.0 }
    };
    let c0 = match &d_tilde {
        Quantity::Value { value } => Quantity::Value {
            value: c_constant(p.strike, r, ln_g1, *value, chain.h, n),
        },
        Quantity::NotApplicable { reason } => Quantity::na(format!("D̃ undefined ({reason})")),
    };
    match p.basket {
        Basket::Exp1D => notes.push("γ₀ = γ₁ is the exact eigenfactor of exp".into()),
        _ => notes.push("γ₀, γ₁ are derived product-form bounds".into()),
    }
    if gamma1 < e_r {
        notes.push("γ₁ < e^r: the L∞ bound uses γ₁ ∨ e^r = e^r".into());
    }
    Ok(FirstOrderConstants {
        gamma0,
        gamma1,
        r: rr,
        r_linf,
        d_tilde,
        c0,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallConstants {
    pub gamma0: f64,
    pub gamma1: f64,
    pub d_bar: Quantity,
    pub c1: Quantity,
}

pub fn call_constants(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
) -> Result<CallConstants, BoundsError> {
    if p.side != Side::Call {
        return Err(BoundsError::WrongSide { expected: "call" });
    }
    p.check_chain(chain)?;
    let n = horizon_steps(chain, horizon)?;
    let (gamma0, gamma1) = growth_factors(chain, &p.basket)?;
    let e_r = r.exp();
    let d_bar = if gamma0 < e_r {
        match call_region_sup(p, chain, n) {
            Some(v) => Quantity::Value { value: v },
            None => Quantity::na(format!(
                "no closed-form exercise region for basket {}",
                p.basket.name()
            )),
        }
    } else if gamma0 > e_r {
        // The call region is south-west unbounded, so inf f̄ = 0 there.
        match p.basket {
            Basket::Exp1D | Basket::MaxExp => Quantity::Value { value: 0.0 },
            _ => Quantity::na(format!("no closed form for basket {}", p.basket.name())),
        }
    } else {
        Quantity::Value { value: 0.0 }
    };
    let c1 = match &d_bar {
        Quantity::Value { value } => Quantity::Value {
            value: c_constant(p.strike, r, gamma0.ln(), *value, chain.h, n),
        },
        Quantity::NotApplicable { reason } => Quantity::na(format!("D̄ undefined ({reason})")),
    };
    Ok(CallConstants {
        gamma0,
        gamma1,
        d_bar,
        c1,
    })
}

/// `D` together with its factors `D = coefficient · lattice_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstant {
    pub d: f64,
    /// `(ln γ₁ − r)·D̃ + rK + C₀`.
    pub coefficient: f64,
    pub lattice_factor: f64,
    /// Box radius for the max-put variant.
    pub box_radius: Option<f64>,
    pub first_order: FirstOrderConstants,
}

fn coefficient(c: &FirstOrderConstants, strike: f64, r: f64) -> Result<f64, BoundsError> {
    let dt = c.d_tilde.require("D̃")?;
    let c0 = c.c0.require("C₀")?;
    Ok((c.gamma1.ln() - r) * dt + r * strike + c0)
}

/// `D = ((ln γ₁ − r)D̃ + rK + C₀)·max_i y_i / h` for the one-dimensional put.
pub fn convergence_constant_vanilla(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
) -> Result<ConvergenceConstant, BoundsError> {
    if chain.d != 1 || p.basket != Basket::Exp1D || p.side != Side::Put {
        return Err(BoundsError::PreconditionViolated(
            "needs a one-dimensional exp put".into(),
        ));
    }
    if !chain.flags.all_increments_nonneg {
        return Err(BoundsError::PreconditionViolated(
            "chain has a negative increment".into(),
        ));
    }
    let fo = first_order_constants(chain, p, r, horizon)?;
    let coefficient = coefficient(&fo, p.strike, r)?;
    let lattice_factor = chain.max_coord(0) / chain.h;
    Ok(ConvergenceConstant {
        d: coefficient * lattice_factor,
        coefficient,
        lattice_factor,
        box_radius: None,
        first_order: fo,
    })
}

/// `D = ((ln γ₁ − r)D̃ + rK + C₀)·R^{d−1}·Σ_j max_i (y_ij ∨ 0) / h` for the
/// max-put restricted to the box `[lo, hi]`.
pub fn convergence_constant_maxput(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
    lo: &[f64],
    hi: &[f64],
) -> Result<ConvergenceConstant, BoundsError> {
    if p.basket != Basket::MaxExp || p.side != Side::Put {
        return Err(BoundsError::PreconditionViolated("needs a max-exp put".into()));
    }
    if !chain.flags.all_increments_nonneg {
        return Err(BoundsError::PreconditionViolated(
            "chain has a negative increment coordinate".into(),
        ));
    }
    if !chain.flags.contains_zero {
        return Err(BoundsError::PreconditionViolated(
            "0 is not among the increments".into(),
        ));
    }
    if lo.len() != chain.d || hi.len() != chain.d || lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(BoundsError::PreconditionViolated("invalid box".into()));
    }
    let fo = first_order_constants(chain, p, r, horizon)?;
    let coefficient = coefficient(&fo, p.strike, r)?;
    let radius = box_radius(p, lo, hi);
    let sum: f64 = (0..chain.d).map(|j| chain.max_coord(j).max(0.0)).sum();
    let lattice_factor = radius.powi(chain.d as i32 - 1) * sum / chain.h;
    Ok(ConvergenceConstant {
        d: coefficient * lattice_factor,
        coefficient,
        lattice_factor,
        box_radius: Some(radius),
        first_order: fo,
    })
}

/// `(min α)^{T/h}·e^{−rt/2}·K·(ln γ₀ − ε₁)·t/2`.
pub fn lower_bound_value(
    gamma0: f64,
    strike: f64,
    min_alpha: f64,
    horizon_steps: f64,
    r: f64,
    t: f64,
    eps1: f64,
) -> f64 {
    min_alpha.powf(horizon_steps) * (-r * t / 2.0).exp() * strike * (gamma0.ln() - eps1) * t / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    /// `γ₀ ∧ e^r`.
    pub gamma0: f64,
    pub eps1: f64,
    pub t: f64,
}

/// Lower bound on `‖(B_{t/2})²(g∨0) − B_t(g∨0)‖_∞` off `E^{t/2}`.
pub fn lower_bound_firstorder(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
    t: f64,
    eps1: f64,
) -> Result<LowerBound, BoundsError> {
    if p.side != Side::Put {
        return Err(BoundsError::WrongSide { expected: "put" });
    }
    p.check_chain(chain)?;
    let n = horizon_steps(chain, horizon)?;
    match steps_in(t / 2.0, chain.h) {
        Some(k) if k >= 1 && 2 * k <= n => {}
        _ => {
            return Err(BoundsError::NotApplicable(format!(
                "t/2 = {} is not in (0, T/2] ∩ hℕ",
                t / 2.0
            )))
        }
    }
    let (g0, _) = growth_factors(chain, &p.basket)?;
    let gamma0 = g0.min(r.exp());
    if !(gamma0 > 1.0) {
        return Err(BoundsError::NotApplicable(format!("γ₀ ∧ e^r = {gamma0} ≤ 1")));
    }
    if !chain.flags.has_nonpos_increment {
        return Err(BoundsError::NotApplicable(
            "no increment ≤ 0 componentwise".into(),
        ));
    }
    if !chain.increments.iter().any(|y| y.iter().all(|&v| v >= 0.0)) {
        return Err(BoundsError::NotApplicable(
            "no increment ≥ 0 componentwise".into(),
        ));
    }
    let ln_g0 = gamma0.ln();
    if !(eps1 > 0.0 && eps1 < ln_g0) {
        return Err(BoundsError::NotApplicable(format!(
            "ε₁ = {eps1} outside (0, ln γ₀)"
        )));
    }
    let s = t / 2.0;
    if (s * ln_g0).exp_m1() < (ln_g0 - eps1) * s {
        return Err(BoundsError::NotApplicable(format!(
            "γ₀^s − 1 < (ln γ₀ − ε₁)s at s = {s}"
        )));
    }
    Ok(LowerBound {
        value: lower_bound_value(gamma0, p.strike, chain.min_weight(), n as f64, r, t, eps1),
        gamma0,
        eps1,
        t,
    })
}

/// Telescoped bound on `‖V_N − V_M‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceBound {
    /// `Σ_{k=M}^{N−1} D s² 2^{−(k+1)}`.
    pub partial_sum: f64,
    /// `D s² 2^{−M}(1 − 2^{−(N−M−1)})`, one term short of `partial_sum`.
    pub closed_form: f64,
    /// `D s² 2^{−M}`.
    pub relaxed: f64,
}

pub fn predicted_difference_bound(d: f64, s: f64, m: u32, n: u32) -> DifferenceBound {
    assert!(n > m, "need N > M");
    let base = d * s * s * 0.5f64.powi(m as i32);
    DifferenceBound {
        partial_sum: base * (1.0 - 0.5f64.powi((n - m) as i32)),
        closed_form: base * (1.0 - 0.5f64.powi((n - m - 1) as i32)),
        relaxed: base,
    }
}

/// Everything the `bounds` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub gamma0: f64,
    pub gamma1: f64,
    pub growth_provenance: String,
    pub first_order: Option<FirstOrderConstants>,
    pub call: Option<CallConstants>,
    pub d: Quantity,
    pub d_variant: String,
    pub exercise_region_h: Option<Region>,
    pub exercise_region_t: Option<Region>,
    pub hypotheses: Vec<(String, bool)>,
    pub notes: Vec<String>,
}

pub fn bounds_report(
    chain: &ChainSpec,
    p: &PayoffSpec,
    r: f64,
    horizon: f64,
    bx: Option<(&[f64], &[f64])>,
) -> Result<BoundsReport, BoundsError> {
    p.check_chain(chain)?;
    horizon_steps(chain, horizon)?;
    let (gamma0, gamma1) = growth_factors(chain, &p.basket)?;
    let growth_provenance = match p.basket {
        Basket::Exp1D => "exact eigenfactor".to_string(),
        _ => "derived bound".to_string(),
    };
    let mut notes = Vec::new();
    let e_r = r.exp();
    let mut hypotheses = vec![
        ("γ₁ ≤ e^r".to_string(), gamma1 <= e_r),
        ("γ₀ > 1".to_string(), gamma0 > 1.0),
        (
            "all increments ≥ 0".to_string(),
            chain.flags.all_increments_nonneg,
        ),
        ("0 among increments".to_string(), chain.flags.contains_zero),
    ];
    let (first_order, call, d, d_variant) = match p.side {
        Side::Put => {
            let fo = first_order_constants(chain, p, r, horizon)?;
            notes.extend(fo.notes.iter().cloned());
            let (d, variant) = match (&p.basket, bx) {
                (Basket::MaxExp, Some((lo, hi))) => (
                    convergence_constant_maxput(chain, p, r, horizon, lo, hi),
                    "max-put",
                ),
                (Basket::MaxExp, None) => (
                    Err(BoundsError::PreconditionViolated("max-put D needs a box".into())),
                    "max-put",
                ),
                _ => (convergence_constant_vanilla(chain, p, r, horizon), "vanilla"),
            };
            let d = match d {
                Ok(c) => Quantity::Value { value: c.d },
                Err(e) => Quantity::na(e.to_string()),
            };
            (Some(fo), None, d, variant.to_string())
        }
        Side::Call => {
            let cc = call_constants(chain, p, r, horizon)?;
            (None, Some(cc), Quantity::na("D is stated for puts"), "none".into())
        }
    };
    hypotheses.push((
        "increments of both signs".into(),
        chain.flags.has_nonpos_increment
            && chain.increments.iter().any(|y| y.iter().all(|&v| v >= 0.0)),
    ));
    let exercise_region_h = exercise_region(p, chain, chain.h).ok();
    let exercise_region_t = exercise_region(p, chain, horizon).ok();
    Ok(BoundsReport {
        gamma0,
        gamma1,
        growth_provenance,
        first_order,
        call,
        d,
        d_variant,
        exercise_region_h,
        exercise_region_t,
        hypotheses,
        notes,
    })
}

fn fmt_q(q: &Quantity) -> String {
    match q {
        Quantity::Value { value } => format!("{value:.17e}"),
        Quantity::NotApplicable { reason } => format!("not applicable ({reason})"),
    }
}

impl BoundsReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}: {v}\n"));
        kv("gamma0", format!("{:.17e}", self.gamma0));
        kv("gamma1", format!("{:.17e}", self.gamma1));
        kv("growth_provenance", self.growth_provenance.clone());
        if let Some(fo) = &self.first_order {
            kv("R", format!("{:.17e}", fo.r));
            kv("R_linf", format!("{:.17e}", fo.r_linf));
            kv("D_tilde", fmt_q(&fo.d_tilde));
            kv("C0", fmt_q(&fo.c0));
        }
        if let Some(c) = &self.call {
            kv("D_bar", fmt_q(&c.d_bar));
            kv("C1", fmt_q(&c.c1));
        }
        kv("D", fmt_q(&self.d));
        kv("D_variant", self.d_variant.clone());
        if let Some(r) = &self.exercise_region_h {
            kv("E_h", serde_json::to_string(r).unwrap_or_default());
        }
        if let Some(r) = &self.exercise_region_t {
            kv("E_T", serde_json::to_string(r).unwrap_or_default());
        }
        for (h, ok) in &self.hypotheses {
            kv(&format!("hypothesis [{h}]"), ok.to_string());
        }
        for n in &self.notes {
            kv("note", n.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_point() -> ChainSpec {
        ChainSpec::one_dim(0.5, &[0.0, 0.2], &[0.5, 0.5]).unwrap()
    }

    fn put() -> PayoffSpec {
        PayoffSpec::put(1.0, Basket::Exp1D).unwrap()
    }

    #[test]
    fn r_example() {
        let c = first_order_constants(&two_point(), &put(), 0.5, 1.0).unwrap();
        assert_relative_eq!(c.gamma1, 1.233657, epsilon = 1e-6);
        let a = c.gamma1.powf(0.5) - 1.0;
        let b = c.gamma1 - 1.0;
        assert_relative_eq!(c.r, (a / 0.5).max(b), epsilon = 1e-14);
        assert_relative_eq!(c.r, 0.233657, epsilon = 1e-6);
        // (γ^t − 1)/t increases for γ > 1: the endpoint attains the sup.
        assert_relative_eq!(c.r, c.gamma1 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn d_tilde_example() {
        let c = first_order_constants(&two_point(), &put(), 0.5, 1.0).unwrap();
        assert!(c.gamma1 < 0.5f64.exp());
        assert_relative_eq!(c.d_tilde.value().unwrap(), (-0.4f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.d_tilde.value().unwrap(), 0.670320, epsilon = 1e-6);
        // Sampling f̄ on E^T from the right approaches the closed form.
        let region = exercise_region(&put(), &two_point(), 1.0).unwrap();
        let sampled = (1..1000)
            .map(|i| -0.4 + i as f64 * 1e-6)
            .filter(|&x| region.contains(&[x]))
            .map(f64::exp)
            .fold(f64::INFINITY, f64::min);
        assert!(sampled >= c.d_tilde.value().unwrap());
        assert!(sampled - c.d_tilde.value().unwrap() < 1e-5);

        let hot = first_order_constants(&two_point(), &put(), 0.1, 1.0).unwrap();
        assert!(hot.d_tilde.value().is_none());
        assert!(hot.c0.value().is_none());
    }

    #[test]
    fn zero_increment_chain() {
        let z = ChainSpec::one_dim(0.5, &[0.0], &[1.0]).unwrap();
        let c = first_order_constants(&z, &put(), 0.05, 1.0).unwrap();
        assert_eq!(c.r, 0.0);
        let d = convergence_constant_vanilla(&z, &put(), 0.05, 1.0).unwrap();
        assert_eq!(d.d, 0.0);
    }

    #[test]
    fn zero_strike() {
        let p = PayoffSpec::put(0.0, Basket::Exp1D).unwrap();
        let d = convergence_constant_vanilla(&two_point(), &p, 0.5, 1.0).unwrap();
        assert_eq!(d.first_order.r, 0.0);
        assert_eq!(d.first_order.d_tilde.value(), Some(0.0));
        assert_eq!(d.first_order.c0.value(), Some(0.0));
        assert_eq!(d.d, 0.0);
    }

    #[test]
    fn vanilla_d_pipeline() {
        let d = convergence_constant_vanilla(&two_point(), &put(), 0.5, 1.0).unwrap();
        let fo = &d.first_order;
        let expect = ((fo.gamma1.ln() - 0.5) * fo.d_tilde.value().unwrap()
            + 0.5
            + fo.c0.value().unwrap())
            * 0.2
            / 0.5;
        assert_relative_eq!(d.d, expect, epsilon = 1e-15);
        assert!(d.d > 0.0);

        let neg = ChainSpec::one_dim(0.5, &[-0.1, 0.2], &[0.5, 0.5]).unwrap();
        assert!(matches!(
            convergence_constant_vanilla(&neg, &put(), 0.5, 1.0),
            Err(BoundsError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn maxput_d() {
        let c = ChainSpec::new(
            2,
            0.25,
            vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![0.1, 0.1]],
            vec![0.25; 4],
        )
        .unwrap();
        let p = PayoffSpec::put(1.0, Basket::MaxExp).unwrap();
        let r = 0.5;
        let d = convergence_constant_maxput(&c, &p, r, 1.0, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(d.lattice_factor, 0.8, epsilon = 1e-15);
        assert_relative_eq!(d.d, d.coefficient * 0.8, epsilon = 1e-15);
        let point = convergence_constant_maxput(&c, &p, r, 1.0, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(point.d, 0.0);
        let z = ChainSpec::new(2, 0.25, vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let zd = convergence_constant_maxput(&z, &p, r, 1.0, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(zd.d, 0.0);
    }

    #[test]
    fn call_examples() {
        let z = ChainSpec::one_dim(0.5, &[0.0], &[1.0]).unwrap();
        let call = PayoffSpec::call(1.0, Basket::Exp1D).unwrap();
        let c = call_constants(&z, &call, 0.05, 1.0).unwrap();
        assert_eq!(c.gamma0, 1.0);
        assert_relative_eq!(c.d_bar.value().unwrap(), 1.0);

        // γ₀ = e^r exactly.
        let r = 0.2f64.ln() + 1.0;
        let ch = ChainSpec::one_dim(1.0, &[r], &[1.0]).unwrap();
        let c = call_constants(&ch, &call, ch.increments[0][0], 1.0).unwrap();
        assert_eq!(c.d_bar.value(), Some(0.0));
    }

    #[test]
    fn call_mirrors_put() {
        let up = two_point();
        let down = ChainSpec::one_dim(0.5, &[0.0, -0.2], &[0.5, 0.5]).unwrap();
        let k = 1.3;
        let put = PayoffSpec::put(k, Basket::Exp1D).unwrap();
        let call = PayoffSpec::call(k, Basket::Exp1D).unwrap();
        let dt = first_order_constants(&up, &put, 0.5, 1.0).unwrap().d_tilde.value().unwrap();
        let db = call_constants(&down, &call, 0.5, 1.0).unwrap().d_bar.value().unwrap();
        // Under x ↦ −x the region bound for f̄ maps to K²/f̄.
        assert_relative_eq!(dt * db, k * k, epsilon = 1e-13);
    }

    #[test]
    fn lower_bound_examples() {
        let v = lower_bound_value(1.05, 1.0, 0.5, 2.0, 0.0, 0.1, 0.01);
        assert_relative_eq!(v, 0.25 * (1.05f64.ln() - 0.01) * 0.05, epsilon = 1e-16);
        assert_relative_eq!(v, 4.847e-4, epsilon = 1e-6);
        assert_eq!(lower_bound_value(1.05, 0.0, 0.5, 2.0, 0.0, 0.1, 0.01), 0.0);
        assert!(lower_bound_value(1.05, 1.0, 0.5, 2.0, 0.0, 0.1, 1.05f64.ln()).abs() < 1e-18);

        let c = ChainSpec::one_dim(0.25, &[-0.05, 0.07], &[0.5, 0.5]).unwrap();
        let p = put();
        let lb = lower_bound_firstorder(&c, &p, 0.05, 1.0, 0.5, 0.01).unwrap();
        assert!(lb.value > 0.0);
        assert!(lower_bound_firstorder(&c, &p, 0.05, 1.0, 0.3, 0.01).is_err());
        let pos = ChainSpec::one_dim(0.25, &[0.0, 0.07], &[0.5, 0.5]).unwrap();
        assert!(lower_bound_firstorder(&pos, &p, 0.05, 1.0, 0.5, 0.01).is_ok());
        let up = ChainSpec::one_dim(0.25, &[0.01, 0.07], &[0.5, 0.5]).unwrap();
        assert!(matches!(
            lower_bound_firstorder(&up, &p, 0.05, 1.0, 0.5, 0.01),
            Err(BoundsError::NotApplicable(_))
        ));
    }

    #[test]
    fn telescoping() {
        let b = predicted_difference_bound(1.0, 1.0, 1, 3);
        assert_relative_eq!(b.partial_sum, 0.375, epsilon = 1e-15);
        assert_relative_eq!(b.closed_form, 0.25, epsilon = 1e-15);
        assert_relative_eq!(b.relaxed, 0.5, epsilon = 1e-15);
        let single = predicted_difference_bound(2.0, 0.5, 2, 3);
        assert_relative_eq!(single.partial_sum, 2.0 * 0.25 * 0.125, epsilon = 1e-15);
        assert_eq!(single.closed_form, 0.0);
        let far = predicted_difference_bound(1.0, 1.0, 0, 60);
        assert!(far.partial_sum <= far.relaxed);
        assert_relative_eq!(far.partial_sum, far.relaxed, epsilon = 1e-15);
    }
}
