//! Browser bindings. Every entry point takes and returns JSON text so the
//! page can stay plain JavaScript.

use dyadic_core::bounds::first_order_constants;
use dyadic_core::cubature::{build_chain, builtin_formula, calibrate_drift};
use dyadic_core::lattice::{detect_embedding, dyadic_sequence, node_growth, price_many};
use dyadic_core::payoff::exercise_region;
use dyadic_core::{Basket, ChainSpec, PayoffSpec, Region, Side};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// A one-dimensional option on a calibrated cubature chain.
#[derive(Debug, Clone, Deserialize)]
pub struct Market {
    #[serde(default = "default_formula")]
    pub formula: String,
    pub sigma: f64,
    pub r: f64,
    #[serde(default)]
    pub delta: f64,
    pub horizon: f64,
    pub h: f64,
    pub strike: f64,
    #[serde(default = "default_side")]
    pub side: Side,
    pub x_lo: f64,
    pub x_hi: f64,
    pub count: usize,
}

fn default_formula() -> String {
    "gauss_d1_deg3".into()
}

fn default_side() -> Side {
    Side::Put
}

#[derive(Debug, Deserialize)]
struct CurveRequest {
    #[serde(flatten)]
    market: Market,
    levels: (u32, u32),
}

#[derive(Debug, Deserialize)]
struct ProfileRequest {
    #[serde(flatten)]
    market: Market,
    s: f64,
}

#[derive(Debug, Deserialize)]
struct GrowthRequest {
    h: f64,
    increments: Vec<Vec<f64>>,
    weights: Vec<f64>,
    steps: usize,
}

#[derive(Debug, Serialize)]
struct Level {
    n: u32,
    values: Vec<f64>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Market {
    fn chain(&self) -> Result<ChainSpec, String> {
        let f = builtin_formula(&self.formula).map_err(err)?;
        if f.d != 1 {
            return Err(format!("{} is not one-dimensional", self.formula));
        }
        let mu = calibrate_drift(&f, self.r, self.delta, &[self.sigma], self.h);
        let (chain, _) = build_chain(&f, &mu, &[self.sigma], self.h).map_err(err)?;
        Ok(chain)
    }

    fn payoff(&self) -> Result<PayoffSpec, String> {
        PayoffSpec::new(self.side, self.strike, Basket::Exp1D).map_err(err)
    }

    fn xs(&self) -> Result<Vec<f64>, String> {
        if self.count < 2 || self.count > 5000 || !(self.x_hi > self.x_lo) {
            return Err("need 2..=5000 points on a non-empty interval".into());
        }
        let step = (self.x_hi - self.x_lo) / (self.count - 1) as f64;
        Ok((0..self.count).map(|i| self.x_lo + step * i as f64).collect())
    }
}

/// `V_n(x)` for each level and the payoff, along a line of log-prices.
pub fn dyadic_curve_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = serde_json::from_str(request).map_err(err)?;
    let m = &req.market;
    let chain = m.chain()?;
    let payoff = m.payoff()?;
    let xs = m.xs()?;
    let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let table = dyadic_sequence(&chain, &payoff, m.r, m.horizon, req.levels, &points).map_err(err)?;
    let levels: Vec<Level> = table
        .levels
        .iter()
        .zip(table.values)
        .map(|(&n, values)| Level { n, values })
        .collect();
    let out = json!({
        "x": xs,
        "payoff": points.iter().map(|p| payoff.payoff(p)).collect::<Vec<_>>(),
        "levels": levels,
        "increments": chain.increments.iter().map(|y| y[0]).collect::<Vec<_>>(),
    });
    Ok(out.to_string())
}

/// `(B_{s/2})²(g∨0) − B_s(g∨0)` along a line, with the L∞ bound and the
/// exercise-region threshold for puts.
pub fn first_order_profile_json(request: &str) -> Result<String, String> {
    let req: ProfileRequest = serde_json::from_str(request).map_err(err)?;
    let m = &req.market;
    let chain = m.chain()?;
    let payoff = m.payoff()?;
    let xs = m.xs()?;
    let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let two = price_many(&chain, &payoff, m.r, req.s, 2, &points).map_err(err)?;
    let one = price_many(&chain, &payoff, m.r, req.s, 1, &points).map_err(err)?;
    let diff: Vec<f64> = two.iter().zip(&one).map(|(a, b)| a - b).collect();
    let (bound, threshold) = match payoff.side {
        Side::Put => {
            let c = first_order_constants(&chain, &payoff, m.r, m.horizon).map_err(err)?;
            let threshold = match exercise_region(&payoff, &chain, chain.h).map_err(err)? {
                Region::HalfLine { lo, .. } => Some(lo),
                _ => None,
            };
            (Some(c.r_linf * req.s / 2.0), threshold)
        }
        Side::Call => (None, None),
    };
    let out = json!({
        "x": xs,
        "difference": diff,
        "sup": diff.iter().fold(0.0f64, |a, d| a.max(d.abs())),
        "bound": bound,
        "exercise_threshold": threshold,
    });
    Ok(out.to_string())
}

/// Distinct lattice nodes against naive path counts.
pub fn lattice_growth_json(request: &str) -> Result<String, String> {
    let req: GrowthRequest = serde_json::from_str(request).map_err(err)?;
    if req.steps > 200 {
        return Err("at most 200 steps".into());
    }
    let d = req.increments.first().map_or(0, Vec::len);
    let chain = ChainSpec::new(d, req.h, req.increments, req.weights).map_err(err)?;
    let emb = detect_embedding(&chain, 1e-10).map_err(err)?;
    let growth = node_growth(&emb, req.steps);
    Ok(json!({ "offsets": emb.offsets, "growth": growth }).to_string())
}

#[wasm_bindgen]
pub fn dyadic_curve(request: &str) -> Result<String, JsValue> {
    dyadic_curve_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn first_order_profile(request: &str) -> Result<String, JsValue> {
    first_order_profile_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn lattice_growth(request: &str) -> Result<String, JsValue> {
    lattice_growth_json(request).map_err(|e| JsValue::from_str(&e))
}
