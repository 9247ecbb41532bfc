//! Grid-quadrature measurements of operator differences, and checks that
//! compare them with the constants of [`crate::bounds`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bounds::{
    convergence_constant_maxput, convergence_constant_vanilla, first_order_constants,
    lower_bound_firstorder, predicted_difference_bound, BoundsError, ConvergenceConstant,
};
use crate::chain::{compose, growth_factors, ChainError, ChainSpec};
use crate::lattice::{dyadic_sequence, AlignedGrid, Engine, Func, LatticeError, Program};
use crate::numeric::{steps_in, CompensatedSum};
use crate::payoff::{exercise_region, Basket, PayoffError, PayoffSpec, Region, Side};

pub const BASE_ATOL: f64 = 1e-9;
pub const MONOTONE_ATOL: f64 = 1e-12;
/// Tail monitor limit relative to the measured norm.
pub const TAIL_REL: f64 = 1e-6;
pub const TAIL_ABS: f64 = 1e-15;
/// Relative change under halving of `Δ` at which a quadrature is trusted.
pub const REFINE_REL: f64 = 0.01;
pub const DEFAULT_REFINEMENTS: u32 = 3;
/// Upper limit on `measured(s/2)/measured(s)` for the quadratic-scaling check.
pub const SCALING_RATIO: f64 = 0.35;
/// Below this the scaling ratio is rounding noise over rounding noise.
pub const SCALING_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown suite '{0}'")]
    UnknownSuite(String),
    #[error("window ∩ region contains no grid point")]
    EmptyRegion,
    #[error("boundary tail {monitor:e} exceeds {TAIL_REL:e} of the measured norm {measured:e}; enlarge the window")]
    TailNotNegligible { monitor: f64, measured: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VerifyError {
    /// Reason text if the error means a precondition does not hold.
    fn not_applicable(&self) -> Option<String> {
        match self {
            VerifyError::NotApplicable(s) => Some(s.clone()),
            VerifyError::Bounds(BoundsError::NotApplicable(s))
            | VerifyError::Bounds(BoundsError::PreconditionViolated(s)) => Some(s.clone()),
            VerifyError::Bounds(e @ BoundsError::WrongSide { .. }) => Some(e.to_string()),
            VerifyError::Payoff(e @ PayoffError::UnsupportedCombination(_)) => Some(e.to_string()),
            VerifyError::Lattice(e @ LatticeError::StepNotMultipleOfH { .. }) => Some(e.to_string()),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------- norms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    LInf,
}

/// Batch integrand: values at a list of points.
pub type Integrand<'a> = &'a (dyn Fn(&[Vec<f64>]) -> Result<Vec<f64>, VerifyError> + Sync);

pub struct NormTask<'a> {
    pub integrand: Integrand<'a>,
    pub region: Region,
    /// Truncation box `(lo, hi)`.
    pub window: (Vec<f64>, Vec<f64>),
    pub dx: f64,
    pub norm: Norm,
    /// Lattice scales the grid is aligned to; `None` aligns to `dx`.
    pub scales: Option<Vec<f64>>,
    pub max_refinements: u32,
    /// Raise [`VerifyError::TailNotNegligible`] for L¹ truncations that
    /// cut off a non-negligible part of the region.
    pub audit_tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    /// Largest grid spacing of the final pass.
    pub dx: f64,
    pub refinements: u32,
    /// Largest `|integrand|` at window faces the region extends past.
    pub tail: f64,
    /// `|I(Δ/2) − I(Δ)|` of the last halving, 0 without refinement.
    pub error: f64,
    pub points: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormValue {
    pub value: f64,
    pub quadrature: QuadratureInfo,
}

fn measure_once(grid: &AlignedGrid, task: &NormTask) -> Result<(f64, f64, usize), VerifyError> {
    let (lo, hi) = &task.window;
    let d = lo.len();
    let counts: Vec<usize> = grid.axes.iter().map(|a| a.count()).collect();
    let mut pts = Vec::new();
    let mut on_face = Vec::new();
    for (i, x) in grid.points().into_iter().enumerate() {
        if !task.region.contains(&x) {
            continue;
        }
        let mut rem = i;
        let mut face = false;
        for j in (0..d).rev() {
            let k = rem % counts[j];
            rem /= counts[j];
            let half = 0.5 * grid.axes[j].spacing();
            let mut y = x.clone();
            if k == 0 {
                y[j] = lo[j] - half;
                face |= task.region.contains(&y);
            }
            if k + 1 == counts[j] {
                y[j] = hi[j] + half;
                face |= task.region.contains(&y);
            }
        }
        pts.push(x);
        on_face.push(face);
    }
    if pts.is_empty() {
        return Err(VerifyError::EmptyRegion);
    }
    let vals = (task.integrand)(&pts)?;
    let tail = vals
        .iter()
        .zip(&on_face)
        .filter(|(_, f)| **f)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);
    let value = match task.norm {
        Norm::L1 => {
            let mut acc = CompensatedSum::new();
            acc.extend(vals.iter().map(|v| v.abs()));
            grid.cell_volume() * acc.value()
        }
        Norm::LInf => vals.iter().map(|v| v.abs()).fold(0.0, f64::max),
    };
    Ok((value, tail, pts.len()))
}

/// Midpoint-rule L¹ norm or grid maximum over `region ∩ window`, with
/// automatic halving of `Δ` until successive values agree within 1%.
pub fn measure_norm(task: &NormTask) -> Result<NormValue, VerifyError> {
    let (lo, hi) = &task.window;
    if !(task.dx > 0.0) || !task.dx.is_finite() {
        return Err(VerifyError::InvalidConfig(format!("Δ = {} must be > 0", task.dx)));
    }
    if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(VerifyError::InvalidConfig("window must satisfy lo < hi".into()));
    }
    let scales = task.scales.clone().unwrap_or_else(|| vec![task.dx; lo.len()]);
    let mut grid = AlignedGrid::new(lo, hi, task.dx, &scales);
    let (mut value, mut tail, mut points) = measure_once(&grid, task)?;
    let mut error = 0.0;
    let mut refinements = 0;
    let mut converged = false;
    while refinements < task.max_refinements {
        let finer = grid.halved();
        let (v, t, n) = measure_once(&finer, task)?;
        refinements += 1;
        error = (v - value).abs();
        grid = finer;
        value = v;
        tail = t;
        points = n;
        if error <= REFINE_REL * v.abs() || error <= 1e-14 {
            converged = true;
            break;
        }
    }
    if task.audit_tail && task.norm == Norm::L1 && tail > TAIL_REL * value + TAIL_ABS {
        return Err(VerifyError::TailNotNegligible {
            monitor: tail,
            measured: value,
        });
    }
    Ok(NormValue {
        value,
        quadrature: QuadratureInfo {
            dx: grid.max_spacing(),
            refinements,
            tail,
            error,
            points,
            converged,
        },
    })
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// Pass iff `measured ≤ bound + atol`.
    Upper,
    /// Pass iff `measured ≥ bound`.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub status: Status,
    pub kind: BoundKind,
    pub bound: Option<f64>,
    pub measured: Option<f64>,
    /// `bound − measured` (upper) or `measured − bound` (lower).
    pub margin: Option<f64>,
    pub atol: Option<f64>,
    pub params: BTreeMap<String, Value>,
    pub runtime_ms: f64,
    pub quadrature: Option<QuadratureInfo>,
    pub note: Option<String>,
}

impl CheckResult {
    fn decided(
        check: String,
        kind: BoundKind,
        bound: f64,
        measured: f64,
        atol: f64,
        params: BTreeMap<String, Value>,
        quadrature: Option<QuadratureInfo>,
    ) -> Self {
        let (margin, ok) = match kind {
            BoundKind::Upper => (bound - measured, measured <= bound + atol),
            BoundKind::Lower => (measured - bound, measured >= bound),
        };
        let note = quadrature
            .as_ref()
            .filter(|q| q.refinements > 0 && !q.converged)
            .map(|_| "quadrature did not settle within the refinement budget".to_string());
        CheckResult {
            check,
            status: if ok { Status::Pass } else { Status::Fail },
            kind,
            bound: Some(bound),
            measured: Some(measured),
            margin: Some(margin),
            atol: Some(atol),
            params,
            runtime_ms: 0.0,
            quadrature,
            note,
        }
    }

    fn not_applicable(check: String, reason: String, params: BTreeMap<String, Value>) -> Self {
        CheckResult {
            check,
            status: Status::NotApplicable,
            kind: BoundKind::Upper,
            bound: None,
            measured: None,
            margin: None,
            atol: None,
            params,
            runtime_ms: 0.0,
            quadrature: None,
            note: Some(reason),
        }
    }

    fn failed(check: String, reason: String, params: BTreeMap<String, Value>) -> Self {
        CheckResult {
            status: Status::Fail,
            ..Self::not_applicable(check, reason, params)
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

// ---------------------------------------------------------------- config

/// Everything a check run needs.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub chain: ChainSpec,
    pub payoff: PayoffSpec,
    pub r: f64,
    pub horizon: f64,
    /// Levels `lo..=hi` of the dyadic sequence for `monotone` and `higher_order`.
    pub levels: (u32, u32),
    /// Evaluation points for `monotone`.
    pub points: Vec<Vec<f64>>,
    pub window: (Vec<f64>, Vec<f64>),
    pub dx: f64,
    pub s_values: Vec<f64>,
    /// `(M, N)` pairs for `convergence` and `maxput`.
    pub pairs: Vec<(u32, u32)>,
    pub lower_ts: Vec<f64>,
    /// Compact box `B` for `maxput`.
    pub bx: Option<(Vec<f64>, Vec<f64>)>,
    pub max_refinements: u32,
}

fn centre(p: &PayoffSpec) -> f64 {
    if p.strike > 0.0 {
        p.strike.ln()
    } else {
        0.0
    }
}

impl VerifyConfig {
    /// Defaults: levels up to 5 (as far as `h` allows), 401 points on
    /// `[ln K − 1, ln K + 1]` (along the diagonal for d > 1), window
    /// `[ln K − max y·T/h − 1, ln K + 3]` per coordinate.
    pub fn new(chain: ChainSpec, payoff: PayoffSpec, r: f64, horizon: f64) -> Self {
        let d = chain.d;
        let c = centre(&payoff);
        let n = steps_in(horizon, chain.h).unwrap_or(1).max(1);
        let mut top = 0;
        while top < 5 && n % (1 << (top + 1)) == 0 {
            top += 1;
        }
        let points = (0..401)
            .map(|i| vec![c - 1.0 + 2.0 * i as f64 / 400.0; d])
            .collect();
        let lo = (0..d)
            .map(|j| c - chain.max_coord(j).max(0.0) * n as f64 - 1.0)
            .collect();
        let hi = vec![c + 3.0; d];
        let bx = (payoff.basket == Basket::MaxExp).then(|| (vec![c - 1.0; d], vec![c + 1.0; d]));
        let h = chain.h;
        VerifyConfig {
            levels: (0, top),
            points,
            window: (lo, hi),
            dx: if d == 1 { 5e-3 } else { 2e-2 },
            s_values: vec![horizon, horizon / 2.0, horizon / 4.0],
            pairs: vec![(1, 3), (2, 4), (3, 5)],
            lower_ts: vec![2.0 * h, 4.0 * h],
            bx,
            max_refinements: DEFAULT_REFINEMENTS,
            chain,
            payoff,
            r,
            horizon,
        }
    }
}

impl VerifyConfig {
    pub fn test_functions(&self) -> Vec<TestFunction> {
        TestFunction::for_payoff(&self.payoff)
    }
}

// ---------------------------------------------------------------- suites

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Monotone,
    Ordering,
    Contraction,
    FirstOrderLinf,
    FirstOrderL1,
    LowerBound,
    HigherOrder,
    Convergence,
    #[serde(rename = "maxput")]
    MaxPut,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Monotone,
        Suite::Ordering,
        Suite::Contraction,
        Suite::FirstOrderLinf,
        Suite::FirstOrderL1,
        Suite::LowerBound,
        Suite::HigherOrder,
        Suite::Convergence,
        Suite::MaxPut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Monotone => "monotone",
            Suite::Ordering => "ordering",
            Suite::Contraction => "contraction",
            Suite::FirstOrderLinf => "first_order_linf",
            Suite::FirstOrderL1 => "first_order_l1",
            Suite::LowerBound => "lower_bound",
            Suite::HigherOrder => "higher_order",
            Suite::Convergence => "convergence",
            Suite::MaxPut => "maxput",
        }
    }
}

impl FromStr for Suite {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| VerifyError::UnknownSuite(s.to_string()))
    }
}

/// Functions `f ≥ g∨0` the first-order checks quantify over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    /// `g∨0`.
    Payoff,
    /// `g∨0 + 0.1K`.
    Lifted,
    /// `K·e^{−(ln f̄ − ln K)⁺}`, decreasing, puts only.
    Envelope,
}

impl TestFunction {
    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Payoff => "g_plus",
            TestFunction::Lifted => "g_plus_0.1K",
            TestFunction::Envelope => "envelope",
        }
    }

    pub fn eval(self, p: &PayoffSpec, x: &[f64]) -> f64 {
        match self {
            TestFunction::Payoff => p.payoff(x),
            TestFunction::Lifted => p.payoff(x) + 0.1 * p.strike,
            TestFunction::Envelope => {
                let b = p.basket.eval(x);
                if b <= p.strike {
                    p.strike
                } else {
                    p.strike * p.strike / b
                }
            }
        }
    }

    pub fn for_payoff(p: &PayoffSpec) -> Vec<TestFunction> {
        match p.side {
            Side::Put => vec![TestFunction::Payoff, TestFunction::Lifted, TestFunction::Envelope],
            Side::Call => vec![TestFunction::Payoff, TestFunction::Lifted],
        }
    }
}

type Params = BTreeMap<String, Value>;

fn params<const N: usize>(items: [(&str, Value); N]) -> Params {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

struct Ctx<'c> {
    cfg: &'c VerifyConfig,
    engine: Engine<'c>,
}

impl<'c> Ctx<'c> {
    fn new(cfg: &'c VerifyConfig) -> Self {
        Ctx {
            cfg,
            engine: Engine::new(&cfg.chain),
        }
    }

    fn h(&self) -> f64 {
        self.cfg.chain.h
    }

    fn steps(&self, tau: f64) -> Result<usize, VerifyError> {
        match steps_in(tau, self.h()) {
            Some(n) if n >= 1 => Ok(n),
            _ => Err(VerifyError::NotApplicable(format!(
                "{tau} is not a positive multiple of h = {}",
                self.h()
            ))),
        }
    }

    /// `(B_{s/dates})^{∘dates} f` at `pts`.
    fn iterate(&self, s: f64, dates: usize, f: Func, pts: &[Vec<f64>]) -> Result<Vec<f64>, VerifyError> {
        let n_tau = self.steps(s / dates as f64)?;
        let g = |x: &[f64]| self.cfg.payoff.g(x);
        let prog = Program::bermudan(self.cfg.r, dates, n_tau, f, &g);
        Ok(self.engine.evaluate(&prog, pts)?)
    }

    /// `(B_{s/2})²f − B_s f` at `pts`.
    fn first_order_diff(&self, s: f64, f: TestFunction, pts: &[Vec<f64>]) -> Result<Vec<f64>, VerifyError> {
        let p = &self.cfg.payoff;
        let fe = |x: &[f64]| f.eval(p, x);
        let two = self.iterate(s, 2, &fe, pts)?;
        let one = self.iterate(s, 1, &fe, pts)?;
        Ok(two.iter().zip(&one).map(|(a, b)| a - b).collect())
    }

    /// `(B_{s2^{−hi}})^{∘2^{hi}}(g∨0) − (B_{s2^{−lo}})^{∘2^{lo}}(g∨0)` at `pts`.
    fn level_diff(&self, s: f64, lo: u32, hi: u32, pts: &[Vec<f64>]) -> Result<Vec<f64>, VerifyError> {
        let p = &self.cfg.payoff;
        let gp = |x: &[f64]| p.payoff(x);
        let fine = self.iterate(s, 1 << hi, &gp, pts)?;
        let coarse = self.iterate(s, 1 << lo, &gp, pts)?;
        Ok(fine.iter().zip(&coarse).map(|(a, b)| a - b).collect())
    }

    fn scales(&self) -> Option<Vec<f64>> {
        self.engine.embedding().map(|e| e.scale.clone())
    }

    fn task<'a>(&self, integrand: Integrand<'a>, region: Region, norm: Norm) -> NormTask<'a> {
        NormTask {
            integrand,
            region,
            window: self.cfg.window.clone(),
            dx: self.cfg.dx,
            norm,
            scales: self.scales(),
            max_refinements: self.cfg.max_refinements,
            audit_tail: true,
        }
    }


    fn e_h(&self) -> Result<Region, VerifyError> {
        Ok(exercise_region(&self.cfg.payoff, &self.cfg.chain, self.h())?)
    }

    fn vanilla_d(&self) -> Result<ConvergenceConstant, VerifyError> {
        let c = &self.cfg;
        Ok(convergence_constant_vanilla(&c.chain, &c.payoff, c.r, c.horizon)?)
    }
}

/// Runs one check body, turning precondition failures into not-applicable
/// results and tail failures into failed results.
fn guarded(
    name: String,
    p: Params,
    body: impl FnOnce(String, Params) -> Result<Vec<CheckResult>, VerifyError>,
) -> Result<Vec<CheckResult>, VerifyError> {
    let start = Instant::now();
    let out = match body(name.clone(), p.clone()) {
        Ok(v) => v,
        Err(e @ VerifyError::TailNotNegligible { .. }) => vec![CheckResult::failed(name, e.to_string(), p)],
        Err(e) => match e.not_applicable() {
            Some(reason) => vec![CheckResult::not_applicable(name, reason, p)],
            None => return Err(e),
        },
    };
    let ms = start.elapsed().as_secs_f64() * 1e3 / out.len().max(1) as f64;
    Ok(out
        .into_iter()
        .map(|mut c| {
            c.runtime_ms = ms;
            c
        })
        .collect())
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    if s.len() > 10 {
        format!("{x:.6}")
    } else {
        s
    }
}

fn monotone(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let (lo, hi) = c.levels;
    let mut out = Vec::new();
    for n in lo..hi {
        let name = format!("monotone[n={n}]");
        let p = params([("n", json!(n)), ("points", json!(c.points.len()))]);
        out.extend(guarded(name, p, |name, p| {
            let t = dyadic_sequence(&c.chain, &c.payoff, c.r, c.horizon, (n, n + 1), &c.points)?;
            let measured = t.values[0]
                .iter()
                .zip(&t.values[1])
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(vec![CheckResult::decided(name, BoundKind::Upper, 0.0, measured, MONOTONE_ATOL, p, None)])
        })?);
    }
    Ok(out)
}

fn ordering(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let pay = &c.payoff;
    let mut out = Vec::new();
    for &s in &c.s_values {
        for f in c.test_functions() {
            let name = format!("ordering[s={},f={}]", fmt_num(s), f.name());
            let p = params([("s", json!(s)), ("f", json!(f.name())), ("dx", json!(c.dx))]);
            out.extend(guarded(name, p, |name, mut p| {
                let n_half = ctx.steps(s / 2.0)?;
                let grid = AlignedGrid::new(&c.window.0, &c.window.1, c.dx, &ctx.scales().unwrap_or(vec![c.dx; c.chain.d]));
                let pts = grid.points();
                let diff_f = ctx.first_order_diff(s, f, &pts)?;
                let diff_g = ctx.first_order_diff(s, TestFunction::Payoff, &pts)?;
                let g = |x: &[f64]| pay.g(x);
                let gp = |x: &[f64]| pay.payoff(x);
                let two = Program {
                    r: c.r,
                    dates: 2,
                    steps_per_date: n_half,
                    terminal: &gp,
                    exercise: Some(&g),
                    outer_max: false,
                };
                let one = Program {
                    r: c.r,
                    dates: 1,
                    steps_per_date: 2 * n_half,
                    terminal: &gp,
                    exercise: None,
                    outer_max: false,
                };
                let a = ctx.engine.evaluate(&two, &pts)?;
                let b = ctx.engine.evaluate(&one, &pts)?;
                let mut measured = f64::NEG_INFINITY;
                let mut excess = f64::NEG_INFINITY;
                for i in 0..pts.len() {
                    measured = measured.max(diff_f[i] - (a[i] - b[i]));
                    excess = excess.max(diff_f[i] - diff_g[i]);
                }
                p.insert("max_excess_over_g_plus".into(), json!(excess));
                p.insert("points".into(), json!(pts.len()));
                Ok(vec![CheckResult::decided(name, BoundKind::Upper, 0.0, measured, BASE_ATOL, p, None)])
            })?);
        }
    }
    Ok(out)
}

fn contraction(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let pay = &c.payoff;
    let d = c.chain.d;
    let mut out = Vec::new();
    let mut ts = vec![c.chain.h, c.horizon / 2.0];
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let ln_k = centre(pay);
    for &t in &ts {
        let mut pairs = vec![TestFunction::Lifted];
        if pay.side == Side::Put {
            pairs.push(TestFunction::Envelope);
        }
        for f1 in pairs {
            let name = format!("contraction_linf[t={},f1={}]", fmt_num(t), f1.name());
            let p = params([("t", json!(t)), ("f1", json!(f1.name())), ("f0", json!("g_plus"))]);
            out.extend(guarded(name, p, |name, p| {
                let n = ctx.steps(t)?;
                let f1e = |x: &[f64]| f1.eval(pay, x);
                let f0e = |x: &[f64]| pay.payoff(x);
                let delta = |x: &[f64]| (f1e(x) - f0e(x)).abs();
                let inner = |pts: &[Vec<f64>]| -> Result<Vec<f64>, VerifyError> {
                    let a = ctx.iterate(t, 1, &f1e, pts)?;
                    let b = ctx.iterate(t, 1, &f0e, pts)?;
                    Ok(a.iter().zip(&b).map(|(a, b)| a - b).collect())
                };
                let task = ctx.task(&inner, Region::everything(d), Norm::LInf);
                let m = measure_norm(&task)?;
                let grid = AlignedGrid::new(&c.window.0, &c.window.1, m.quadrature.dx, &vec![m.quadrature.dx; d]);
                let composed = compose(&c.chain, n)?;
                let mut sup = 0.0f64;
                for x in grid.points() {
                    for y in &composed.increments {
                        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
                        sup = sup.max(delta(&z));
                    }
                }
                let bound = (-c.r * t).exp() * sup;
                Ok(vec![CheckResult::decided(name, BoundKind::Upper, bound, m.value, BASE_ATOL, p, Some(m.quadrature))])
            })?);
        }

        // L¹ with an integrable perturbation, on the whole window and on E^h
        let bump = move |x: &[f64]| {
            0.1 * pay.strike * (-x.iter().map(|v| (v - ln_k).powi(2)).sum::<f64>()).exp()
        };
        for restricted in [false, true] {
            let tag = if restricted { "contraction_l1_eh" } else { "contraction_l1" };
            let name = format!("{tag}[t={}]", fmt_num(t));
            let p = params([("t", json!(t)), ("f1", json!("g_plus + 0.1K·exp(-|x-lnK|²)"))]);
            out.extend(guarded(name, p, |name, p| {
                let n = ctx.steps(t)? as f64;
                if restricted && !c.chain.flags.all_increments_nonneg {
                    return Err(VerifyError::NotApplicable("chain has a negative increment".into()));
                }
                let f1e = |x: &[f64]| pay.payoff(x) + bump(x);
                let f0e = |x: &[f64]| pay.payoff(x);
                let inner = |pts: &[Vec<f64>]| -> Result<Vec<f64>, VerifyError> {
                    let a = ctx.iterate(t, 1, &f1e, pts)?;
                    let b = ctx.iterate(t, 1, &f0e, pts)?;
                    Ok(a.iter().zip(&b).map(|(a, b)| a - b).collect())
                };
                let bump_batch = |pts: &[Vec<f64>]| Ok(pts.iter().map(|x| bump(x)).collect());
                let shrunk = Region::Box {
                    lo: (0..d).map(|j| c.window.0[j] - n * c.chain.min_coord(j)).collect(),
                    hi: (0..d).map(|j| c.window.1[j] - n * c.chain.max_coord(j)).collect(),
                };
                let (lhs_region, rhs_region) = if restricted {
                    let eh = ctx.e_h()?;
                    (eh.clone().intersect(shrunk), eh)
                } else {
                    (shrunk, Region::everything(d))
                };
                let mut lhs = ctx.task(&inner, lhs_region, Norm::L1);
                lhs.audit_tail = false;
                let mut rhs = ctx.task(&bump_batch, rhs_region, Norm::L1);
                rhs.audit_tail = false;
                let m = measure_norm(&lhs)?;
                let b = measure_norm(&rhs)?;
                let bound = (-c.r * t).exp() * b.value;
                let atol = BASE_ATOL + m.quadrature.error + b.quadrature.error;
                Ok(vec![CheckResult::decided(name, BoundKind::Upper, bound, m.value, atol, p, Some(m.quadrature))])
            })?);
        }
    }
    Ok(out)
}

fn first_order_linf(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let mut out = Vec::new();
    for &s in &c.s_values {
        for f in c.test_functions() {
            let name = format!("first_order_linf[s={},f={}]", fmt_num(s), f.name());
            let p = params([("s", json!(s)), ("f", json!(f.name()))]);
            out.extend(guarded(name, p, |name, mut p| {
                let fo = first_order_constants(&c.chain, &c.payoff, c.r, c.horizon)?;
                ctx.steps(s / 2.0)?;
                let inner = |pts: &[Vec<f64>]| ctx.first_order_diff(s, f, pts);
                let m = measure_norm(&ctx.task(&inner, Region::everything(c.chain.d), Norm::LInf))?;
                p.insert("R".into(), json!(fo.r_linf));
                let bound = fo.r_linf * s / 2.0;
                Ok(vec![CheckResult::decided(name, BoundKind::Upper, bound, m.value, BASE_ATOL, p, Some(m.quadrature))])
            })?);
        }
    }
    Ok(out)
}

fn first_order_l1(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let mut out = Vec::new();
    for f in c.test_functions() {
        let mut measured: Vec<(f64, Option<f64>)> = Vec::new();
        for &s in &c.s_values {
            let name = format!("first_order_l1[s={},f={}]", fmt_num(s), f.name());
            let p = params([("s", json!(s)), ("f", json!(f.name()))]);
            let res = guarded(name, p, |name, mut p| {
                let dd = ctx.vanilla_d()?;
                ctx.steps(s / 2.0)?;
                let inner = |pts: &[Vec<f64>]| ctx.first_order_diff(s, f, pts);
                let m = measure_norm(&ctx.task(&inner, ctx.e_h()?, Norm::L1))?;
                p.insert("D".into(), json!(dd.d));
                let bound = dd.d / 2.0 * s * s;
                let atol = BASE_ATOL + m.quadrature.error;
                Ok(vec![CheckResult::decided(name, BoundKind::Upper, bound, m.value, atol, p, Some(m.quadrature))])
            })?;
            let value = res[0].measured.filter(|_| res[0].status != Status::NotApplicable);
            measured.push((s, value));
            out.extend(res);
        }
        for &(s, a) in &measured {
            let Some(&(_, b)) = measured.iter().find(|(t, _)| (t * 2.0 - s).abs() < 1e-12 * s) else {
                continue;
            };
            let name = format!("first_order_l1_scaling[s={},f={}]", fmt_num(s), f.name());
            let p = params([("s", json!(s)), ("f", json!(f.name()))]);
            out.extend(guarded(name, p, |name, mut p| match (a, b) {
                (Some(a), Some(b)) if a > SCALING_FLOOR => {
                    p.insert("measured_s".into(), json!(a));
                    p.insert("measured_half_s".into(), json!(b));
                    Ok(vec![CheckResult::decided(name, BoundKind::Upper, SCALING_RATIO, b / a, 0.0, p, None)])
                }
                (Some(_), Some(_)) => Err(VerifyError::NotApplicable(format!(
                    "measured value at s is below {SCALING_FLOOR:e}, ratio undefined"
                ))),
                _ => Err(VerifyError::NotApplicable("no measurement at s or s/2".into())),
            })?);
        }
    }
    Ok(out)
}

fn lower_bound(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let mut out = Vec::new();
    for &t in &c.lower_ts {
        let name = format!("lower_bound[t={}]", fmt_num(t));
        let p = params([("t", json!(t))]);
        out.extend(guarded(name, p, |name, mut p| {
            let (g0, _) = growth_factors(&c.chain, &c.payoff.basket)?;
            let ln_g0 = g0.min(c.r.exp()).ln();
            let eps1 = ln_g0 / 2.0;
            let lb = lower_bound_firstorder(&c.chain, &c.payoff, c.r, c.horizon, t, eps1)?;
            let off = exercise_region(&c.payoff, &c.chain, t / 2.0)?.complement();
            let inner = |pts: &[Vec<f64>]| ctx.first_order_diff(t, TestFunction::Payoff, pts);
            // A = window, which must reach into the complement of E^{t/2}
            let on_off = match measure_norm(&ctx.task(&inner, off, Norm::LInf)) {
                Err(VerifyError::EmptyRegion) => {
                    return Err(VerifyError::NotApplicable(
                        "window does not reach outside the exercise region".into(),
                    ))
                }
                r => r?,
            };
            let m = measure_norm(&ctx.task(&inner, Region::everything(c.chain.d), Norm::LInf))?;
            p.insert("sup_off_exercise".into(), json!(on_off.value));
            p.insert("eps1".into(), json!(eps1));
            p.insert("gamma0".into(), json!(lb.gamma0));
            Ok(vec![CheckResult::decided(name, BoundKind::Lower, lb.value, m.value, 0.0, p, Some(m.quadrature))])
        })?);
    }
    Ok(out)
}

fn higher_order(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let s = c.horizon;
    let mut out = Vec::new();
    for k in c.levels.0..c.levels.1 {
        let name = format!("higher_order[k={k}]");
        let p = params([("k", json!(k)), ("s", json!(s))]);
        out.extend(guarded(name, p, |name, mut p| {
            let dd = ctx.vanilla_d()?;
            let inner = |pts: &[Vec<f64>]| ctx.level_diff(s, k, k + 1, pts);
            let m = measure_norm(&ctx.task(&inner, ctx.e_h()?, Norm::L1))?;
            p.insert("D".into(), json!(dd.d));
            let bound = dd.d * s * s * 0.5f64.powi(k as i32 + 1);
            let atol = BASE_ATOL + m.quadrature.error;
            Ok(vec![CheckResult::decided(name, BoundKind::Upper, bound, m.value, atol, p, Some(m.quadrature))])
        })?);
    }
    Ok(out)
}

/// Relaxed and partial-sum checks of `‖V_N − V_M‖` for one pair.
fn pair_checks(
    tag: &str,
    name: String,
    mut p: Params,
    dd: f64,
    s: f64,
    (m, n): (u32, u32),
    measured: NormValue,
) -> Vec<CheckResult> {
    let b = predicted_difference_bound(dd, s, m, n);
    p.insert("D".into(), json!(dd));
    p.insert("closed_form".into(), json!(b.closed_form));
    let atol = BASE_ATOL + measured.quadrature.error;
    let relaxed = CheckResult::decided(name, BoundKind::Upper, b.relaxed, measured.value, atol, p.clone(), Some(measured.quadrature.clone()));
    let partial = CheckResult::decided(
        format!("{tag}_partial_sum[M={m},N={n}]"),
        BoundKind::Upper,
        b.partial_sum,
        measured.value,
        atol,
        p,
        Some(measured.quadrature),
    );
    vec![relaxed, partial]
}

fn convergence(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let s = c.horizon;
    let mut out = Vec::new();
    for &(m, n) in &c.pairs {
        let name = format!("convergence[M={m},N={n}]");
        let p = params([("M", json!(m)), ("N", json!(n)), ("s", json!(s))]);
        out.extend(guarded(name, p, |name, p| {
            if n <= m {
                return Err(VerifyError::InvalidConfig(format!("pair ({m}, {n}) needs N > M")));
            }
            let dd = ctx.vanilla_d()?;
            ctx.steps(s / (1u64 << n) as f64)?;
            let inner = |pts: &[Vec<f64>]| ctx.level_diff(s, m, n, pts);
            let v = measure_norm(&ctx.task(&inner, ctx.e_h()?, Norm::L1))?;
            Ok(pair_checks("convergence", name, p, dd.d, s, (m, n), v))
        })?);
    }
    Ok(out)
}

fn maxput(ctx: &Ctx) -> Result<Vec<CheckResult>, VerifyError> {
    let c = ctx.cfg;
    let s = c.horizon / 2.0;
    let d = c.chain.d;
    let mut out = Vec::new();
    for &(m, n) in &c.pairs {
        let name = format!("maxput[M={m},N={n}]");
        let p = params([("M", json!(m)), ("N", json!(n)), ("s", json!(s))]);
        out.extend(guarded(name, p, |name, mut p| {
            if n <= m {
                return Err(VerifyError::InvalidConfig(format!("pair ({m}, {n}) needs N > M")));
            }
            let (lo, hi) = c
                .bx
                .clone()
                .ok_or_else(|| VerifyError::NotApplicable("no box configured".into()))?;
            let dd = convergence_constant_maxput(&c.chain, &c.payoff, c.r, c.horizon, &lo, &hi)?;
            let steps = ctx.steps(s)? as f64;
            ctx.steps(s / (1u64 << n) as f64)?;
            let wlo: Vec<f64> = (0..d).map(|j| lo[j] - steps * c.chain.min_coord(j)).collect();
            let whi: Vec<f64> = (0..d).map(|j| hi[j] - steps * c.chain.max_coord(j)).collect();
            if wlo.iter().zip(&whi).any(|(a, b)| a >= b) {
                return Err(VerifyError::NotApplicable(
                    "the box shrunk by the s-step increments is empty".into(),
                ));
            }
            let region = ctx.e_h()?.intersect(Region::Box {
                lo: wlo.clone(),
                hi: whi.clone(),
            });
            let inner = |pts: &[Vec<f64>]| ctx.level_diff(s, m, n, pts);
            let mut task = ctx.task(&inner, region, Norm::L1);
            task.window = (wlo.clone(), whi.clone());
            let v = measure_norm(&task)?;
            p.insert("region_lo".into(), json!(wlo));
            p.insert("region_hi".into(), json!(whi));
            p.insert("R".into(), json!(dd.box_radius));
            Ok(pair_checks("maxput", name, p, dd.d, s, (m, n), v))
        })?);
    }
    Ok(out)
}

/// Runs every check of `suite`.
pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Result<Vec<CheckResult>, VerifyError> {
    let ctx = Ctx::new(cfg);
    match suite {
        Suite::Monotone => monotone(&ctx),
        Suite::Ordering => ordering(&ctx),
        Suite::Contraction => contraction(&ctx),
        Suite::FirstOrderLinf => first_order_linf(&ctx),
        Suite::FirstOrderL1 => first_order_l1(&ctx),
        Suite::LowerBound => lower_bound(&ctx),
        Suite::HigherOrder => higher_order(&ctx),
        Suite::Convergence => convergence(&ctx),
        Suite::MaxPut => maxput(&ctx),
    }
}

/// [`run_suite`] by suite name.
pub fn run_check(name: &str, cfg: &VerifyConfig) -> Result<Vec<CheckResult>, VerifyError> {
    run_suite(name.parse()?, cfg)
}

pub fn run_suites(suites: &[Suite], cfg: &VerifyConfig) -> Result<Vec<CheckResult>, VerifyError> {
    let mut out = Vec::new();
    for &s in suites {
        out.extend(run_suite(s, cfg)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub not_applicable: usize,
}

pub fn summarize(results: &[CheckResult]) -> Summary {
    let mut s = Summary::default();
    for r in results {
        match r.status {
            Status::Pass => s.pass += 1,
            Status::Fail => s.fail += 1,
            Status::NotApplicable => s.not_applicable += 1,
        }
    }
    s
}

/// 0 if nothing failed, 1 otherwise.
pub fn exit_code(results: &[CheckResult]) -> i32 {
    i32::from(summarize(results).fail > 0)
}

pub fn report_json(results: &[CheckResult]) -> Result<String, VerifyError> {
    Ok(serde_json::to_string_pretty(&json!({
        "summary": summarize(results),
        "checks": results,
    }))?)
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
}

pub fn report_text(results: &[CheckResult]) -> String {
    let (na, decided): (Vec<&CheckResult>, Vec<&CheckResult>) =
        results.iter().partition(|r| r.status == Status::NotApplicable);
    let width = decided.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<6}  {:>13}  {:>13}  {:>13}",
        "check", "status", "bound", "measured", "margin"
    );
    for r in &decided {
        let status = if r.passed() { "pass" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{:<width$}  {:<6}  {:>13}  {:>13}  {:>13}",
            r.check,
            status,
            num(r.bound),
            num(r.measured),
            num(r.margin)
        );
        if let (Status::Fail, Some(note)) = (r.status, &r.note) {
            let _ = writeln!(out, "    {note}");
        }
    }
    if !na.is_empty() {
        let _ = writeln!(out, "\nnot applicable:");
        for r in &na {
            let _ = writeln!(out, "  {}: {}", r.check, r.note.as_deref().unwrap_or(""));
        }
    }
    let s = summarize(results);
    let _ = writeln!(
        out,
        "\n{} passed, {} failed, {} not applicable",
        s.pass, s.fail, s.not_applicable
    );
    out
}

/// Writes `report.json` and `checks.txt` into `dir`.
pub fn write_report(results: &[CheckResult], dir: &Path) -> Result<(), VerifyError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report_json(results)?)?;
    fs::write(dir.join("checks.txt"), report_text(results))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(pts: &[Vec<f64>]) -> Result<Vec<f64>, VerifyError> {
        Ok(vec![0.0; pts.len()])
    }

    fn task(integrand: Integrand, region: Region, norm: Norm) -> NormTask {
        NormTask {
            integrand,
            region,
            window: (vec![-2.0], vec![2.0]),
            dx: 1e-3,
            norm,
            scales: None,
            max_refinements: DEFAULT_REFINEMENTS,
            audit_tail: true,
        }
    }

    #[test]
    fn zero_integrand() {
        for norm in [Norm::L1, Norm::LInf] {
            let v = measure_norm(&task(&zero, Region::everything(1), norm)).unwrap();
            assert_eq!(v.value, 0.0);
        }
    }

    #[test]
    fn indicator_integral() {
        let ind = |pts: &[Vec<f64>]| {
            Ok(pts
                .iter()
                .map(|x| if (0.0..=1.0).contains(&x[0]) { 1.0 } else { 0.0 })
                .collect())
        };
        let region = Region::HalfLine { lo: -0.5, open: false };
        let v = measure_norm(&task(&ind, region, Norm::L1)).unwrap();
        assert!((v.value - 1.0).abs() <= 2e-3, "{}", v.value);
        assert!(v.quadrature.converged);
    }

    #[test]
    fn constant_on_bounded_region() {
        let c = 0.7;
        let konst = move |pts: &[Vec<f64>]| Ok(vec![c; pts.len()]);
        let region = Region::Box {
            lo: vec![-0.5],
            hi: vec![1.25],
        };
        let v = measure_norm(&task(&konst, region, Norm::L1)).unwrap();
        let dx = v.quadrature.dx;
        assert!((v.value - c * 1.75).abs() <= c * dx.max(1e-3), "{}", v.value);
    }

    #[test]
    fn tail_is_reported() {
        let one = |pts: &[Vec<f64>]| Ok(vec![1.0; pts.len()]);
        let err = measure_norm(&task(&one, Region::everything(1), Norm::L1)).unwrap_err();
        assert!(matches!(err, VerifyError::TailNotNegligible { .. }));
        let mut t = task(&one, Region::everything(1), Norm::L1);
        t.audit_tail = false;
        assert!((measure_norm(&t).unwrap().value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn empty_region_is_an_error() {
        let region = Region::HalfLine { lo: 5.0, open: true };
        assert!(matches!(
            measure_norm(&task(&zero, region, Norm::L1)),
            Err(VerifyError::EmptyRegion)
        ));
    }

    fn result(status: Status) -> CheckResult {
        let mut r = CheckResult::decided("x".into(), BoundKind::Upper, 1.0, 0.5, 0.0, Params::new(), None);
        r.status = status;
        r
    }

    #[test]
    fn report_aggregation() {
        assert_eq!(exit_code(&[]), 0);
        let json: Value = serde_json::from_str(&report_json(&[]).unwrap()).unwrap();
        assert_eq!(json["checks"].as_array().unwrap().len(), 0);

        let fail = CheckResult::decided("f".into(), BoundKind::Upper, 1.0, 2.0, 1e-9, Params::new(), None);
        assert_eq!(fail.status, Status::Fail);
        assert!(fail.margin.unwrap() < 0.0);
        assert_eq!(exit_code(&[fail]), 1);

        let mixed = [result(Status::Pass), result(Status::NotApplicable)];
        assert_eq!(exit_code(&mixed), 0);
        let mut na = result(Status::NotApplicable);
        na.check = "skipped".into();
        na.note = Some("reason".into());
        let text = report_text(&[result(Status::Pass), na]);
        assert!(text.contains("not applicable:\n  skipped: reason"));
    }

    #[test]
    fn lower_kind_passes_above_bound() {
        let r = CheckResult::decided("l".into(), BoundKind::Lower, 1.0, 2.0, 0.0, Params::new(), None);
        assert!(r.passed());
        assert_eq!(r.margin, Some(1.0));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn envelope_dominates_payoff() {
        let p = PayoffSpec::put(1.0, Basket::Exp1D).unwrap();
        for i in -300..300 {
            let x = [i as f64 / 100.0];
            assert!(TestFunction::Envelope.eval(&p, &x) >= p.payoff(&x));
        }
    }
}
