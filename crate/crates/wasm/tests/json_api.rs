use dyadic_core::lattice::tree_oracle;
use dyadic_core::{Basket, ChainSpec, PayoffSpec};
use dyadic_wasm::{dyadic_curve_json, first_order_profile_json, lattice_growth_json};
use serde_json::Value;

const MARKET: &str = r#""sigma": 0.2, "r": 0.05, "delta": 0.01, "horizon": 1.0, "h": 0.125,
    "strike": 1.0, "x_lo": -0.3, "x_hi": 0.3, "count": 7"#;

#[test]
fn curve_matches_tree() {
    let out: Value = serde_json::from_str(&dyadic_curve_json(&format!(r#"{{{MARKET}, "levels": [0, 3]}}"#)).unwrap()).unwrap();
    let ys: Vec<f64> = out["increments"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let chain = ChainSpec::one_dim(0.125, &ys, &[0.5, 0.5]).unwrap();
    let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
    let levels = out["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 4);
    for (i, x) in out["x"].as_array().unwrap().iter().enumerate() {
        let x = x.as_f64().unwrap();
        for l in levels {
            let n = l["n"].as_u64().unwrap();
            let want = tree_oracle(&chain, &p, 0.05, 1.0, 1 << n, &[x]).unwrap();
            assert!((l["values"][i].as_f64().unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn profile_respects_bound() {
    let out: Value =
        serde_json::from_str(&first_order_profile_json(&format!(r#"{{{MARKET}, "s": 0.5}}"#)).unwrap()).unwrap();
    let sup = out["sup"].as_f64().unwrap();
    assert!(sup > 0.0);
    assert!(sup <= out["bound"].as_f64().unwrap());
    assert!(out["exercise_threshold"].as_f64().is_some());
}

#[test]
fn growth_is_linear_for_trinomial() {
    let out: Value = serde_json::from_str(
        &lattice_growth_json(r#"{"h": 0.1, "increments": [[-0.1], [0.0], [0.1]], "weights": [0.25, 0.5, 0.25], "steps": 10}"#)
            .unwrap(),
    )
    .unwrap();
    let g = out["growth"].as_array().unwrap();
    assert_eq!(g[10]["distinct"], 21);
}

#[test]
fn bad_requests_are_errors() {
    assert!(dyadic_curve_json("{}").is_err());
    assert!(dyadic_curve_json(&format!(r#"{{{MARKET}, "levels": [0, 4]}}"#)).is_err());
    assert!(lattice_growth_json(r#"{"h": 0.1, "increments": [], "weights": [], "steps": 3}"#).is_err());
}
