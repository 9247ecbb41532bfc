use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dyadic_core::chain::shifted_chain;
use dyadic_core::cubature::{
    admissible_volatility, build_chain, builtin_formula, calibrate_drift, load_formula, lognormal_drift,
    CubatureFormula,
};
use dyadic_core::numeric::steps_in;
use dyadic_core::verify::{Suite, VerifyConfig};
use dyadic_core::{Basket, ChainSpec, PayoffSpec, Side};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Horizon `T` in years.
    pub horizon: f64,
    pub r: f64,
    #[serde(default)]
    pub delta: f64,
    /// `"M..N"`.
    #[serde(default)]
    pub levels: Option<String>,
    /// Exercise dates for `price`; defaults to `2^N`.
    #[serde(default)]
    pub dates: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub chain: ChainBlock,
    pub payoff: PayoffBlock,
    #[serde(default)]
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub window: Option<WindowBlock>,
    #[serde(default)]
    pub verify: VerifyBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainBlock {
    Inline {
        d: usize,
        h: f64,
        increments: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Cubature {
        /// Builtin name such as `gauss_d1_deg3` or `product(2, gauss_d1_deg5)`.
        #[serde(default)]
        formula: Option<String>,
        /// Node file, relative to the config file.
        #[serde(default)]
        nodes: Option<PathBuf>,
        h: f64,
        sigma: Sigma,
        #[serde(default)]
        mu: Option<Vec<f64>>,
        #[serde(default)]
        drift: Drift,
        /// Subtract the componentwise minimum increment.
        #[serde(default)]
        shift: bool,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Values(Vec<f64>),
    /// `"admissible"`: largest σ keeping every increment ≥ 0.
    Named(String),
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    #[default]
    Calibrated,
    Lognormal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffBlock {
    pub side: Side,
    pub strike: f64,
    pub basket: String,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    #[serde(default)]
    pub dx: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default)]
    pub suites: Option<Vec<String>>,
    #[serde(default)]
    pub s_values: Option<Vec<f64>>,
    #[serde(default)]
    pub pairs: Option<Vec<(u32, u32)>>,
    #[serde(default)]
    pub lower_ts: Option<Vec<f64>>,
    #[serde(default)]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub box_hi: Option<Vec<f64>>,
    #[serde(default)]
    pub max_refinements: Option<u32>,
}

/// Everything a subcommand needs, resolved from the file.
pub struct Resolved {
    pub file: RunConfig,
    pub formula: Option<CubatureFormula>,
    pub chain: ChainSpec,
    pub payoff: PayoffSpec,
    pub levels: (u32, u32),
}

pub fn parse_levels(s: &str) -> Result<(u32, u32)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow!("levels must look like M..N, got {s:?}"))?;
    let lo = a.trim().parse().with_context(|| format!("bad level {a:?}"))?;
    let hi = b.trim().parse().with_context(|| format!("bad level {b:?}"))?;
    if lo > hi {
        bail!("levels {lo}..{hi} are decreasing");
    }
    Ok((lo, hi))
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let ChainBlock::Cubature { nodes: Some(p), .. } = &mut cfg.chain {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn basket(b: &PayoffBlock) -> Result<Basket> {
    Ok(match b.basket.as_str() {
        "exp" => Basket::Exp1D,
        "max_exp" => Basket::MaxExp,
        "min_exp" => Basket::MinExp,
        "weighted_sum_exp" => Basket::WeightedSumExp(
            b.weights
                .clone()
                .ok_or_else(|| anyhow!("weighted_sum_exp needs payoff.weights"))?,
        ),
        other => bail!("unknown basket {other:?} (exp, max_exp, min_exp, weighted_sum_exp)"),
    })
}

pub fn formula(block: &ChainBlock) -> Result<Option<CubatureFormula>> {
    match block {
        ChainBlock::Inline { .. } => Ok(None),
        ChainBlock::Cubature { formula, nodes, .. } => match (formula, nodes) {
            (Some(name), None) => Ok(Some(builtin_formula(name)?)),
            (None, Some(p)) => Ok(Some(load_formula(p)?)),
            _ => bail!("chain needs exactly one of `formula` and `nodes`"),
        },
    }
}

pub fn sigma_for(f: &CubatureFormula, sigma: &Sigma, r: f64, delta: f64, h: f64) -> Result<Vec<f64>> {
    match sigma {
        Sigma::Values(v) => Ok(v.clone()),
        Sigma::Named(s) if s == "admissible" => Ok(admissible_volatility(f, r - delta, h)),
        Sigma::Named(s) => bail!("sigma must be a list or \"admissible\", got {s:?}"),
    }
}

pub fn resolve(file: RunConfig, levels: Option<(u32, u32)>) -> Result<Resolved> {
    let formula = formula(&file.chain)?;
    let chain = match (&file.chain, &formula) {
        (ChainBlock::Inline { d, h, increments, weights }, _) => {
            ChainSpec::new(*d, *h, increments.clone(), weights.clone())?
        }
        (ChainBlock::Cubature { h, sigma, mu, drift, shift, .. }, Some(f)) => {
            let sigma = sigma_for(f, sigma, file.r, file.delta, *h)?;
            let mu = match (mu, drift) {
                (Some(m), _) => m.clone(),
                (None, Drift::Calibrated) => calibrate_drift(f, file.r, file.delta, &sigma, *h),
                (None, Drift::Lognormal) => lognormal_drift(file.r - file.delta, &sigma),
            };
            let (c, _) = build_chain(f, &mu, &sigma, *h)?;
            if *shift {
                shifted_chain(&c)
            } else {
                c
            }
        }
        _ => unreachable!("cubature chains always carry a formula"),
    };
    let payoff = PayoffSpec::new(file.payoff.side, file.payoff.strike, basket(&file.payoff)?)?;
    payoff.check_chain(&chain)?;
    if !(file.horizon > 0.0) || steps_in(file.horizon, chain.h).is_none() {
        bail!("horizon {} is not a positive multiple of h = {}", file.horizon, chain.h);
    }
    let levels = match (levels, &file.levels) {
        (Some(l), _) => l,
        (None, Some(s)) => parse_levels(s)?,
        (None, None) => (0, 0),
    };
    Ok(Resolved {
        file,
        formula,
        chain,
        payoff,
        levels,
    })
}

impl Resolved {
    /// Evaluation points: explicit list, or `count` points on `[lo, hi]`
    /// (along the diagonal for d > 1).
    pub fn points(&self) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(g) = &self.file.grid else { return Ok(None) };
        let d = self.chain.d;
        if let Some(p) = &g.points {
            if p.is_empty() || p.iter().any(|x| x.len() != d) {
                bail!("grid.points must be a non-empty list of {d}-vectors");
            }
            return Ok(Some(p.clone()));
        }
        let (Some(lo), Some(hi), Some(n)) = (g.lo, g.hi, g.count) else {
            bail!("grid needs either points or lo, hi and count");
        };
        if n == 0 {
            bail!("grid.count must be ≥ 1");
        }
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        Ok(Some((0..n).map(|i| vec![lo + step * i as f64; d]).collect()))
    }

    pub fn verify_config(&self, dx: Option<f64>) -> Result<VerifyConfig> {
        let f = &self.file;
        let mut c = VerifyConfig::new(self.chain.clone(), self.payoff.clone(), f.r, f.horizon);
        if f.levels.is_some() || self.levels != (0, 0) {
            c.levels = self.levels;
        }
        if let Some(p) = self.points()? {
            c.points = p;
        }
        if let Some(w) = &f.window {
            if let Some(lo) = &w.lo {
                c.window.0 = lo.clone();
            }
            if let Some(hi) = &w.hi {
                c.window.1 = hi.clone();
            }
            if let Some(dx) = w.dx {
                c.dx = dx;
            }
        }
        if let Some(dx) = dx {
            c.dx = dx;
        }
        let v = &f.verify;
        if let Some(s) = &v.s_values {
            c.s_values = s.clone();
        }
        if let Some(p) = &v.pairs {
            c.pairs = p.clone();
        }
        if let Some(t) = &v.lower_ts {
            c.lower_ts = t.clone();
        }
        match (&v.box_lo, &v.box_hi) {
            (Some(lo), Some(hi)) => c.bx = Some((lo.clone(), hi.clone())),
            (None, None) => {}
            _ => bail!("verify.box_lo and verify.box_hi go together"),
        }
        if let Some(m) = v.max_refinements {
            c.max_refinements = m;
        }
        let d = self.chain.d;
        if c.window.0.len() != d || c.window.1.len() != d || !(c.dx > 0.0) {
            bail!("window needs {d}-vectors and dx > 0");
        }
        Ok(c)
    }

    pub fn suites(&self) -> Result<Vec<Suite>> {
        match &self.file.verify.suites {
            None => Ok(Suite::ALL.to_vec()),
            Some(names) => names.iter().map(|n| Ok(n.parse::<Suite>()?)).collect(),
        }
    }
}
