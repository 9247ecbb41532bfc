//! Recombining lattices and the Bellman sweep.
//!
//! A chain whose increments satisfy `y_i = b + diag(s)·κ_i` with integer
//! `κ_i` recombines: after `n` steps every node sits at
//! `x₀ + n·b + diag(s)·k` for an integer key `k`. Value layers are stored
//! densely over the bounding box of reachable keys.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{accumulate_keys, compose_with_cap, ChainError, ChainSpec, DEFAULT_PATH_CAP};
use crate::numeric::{par_map, steps_in, CompensatedSum};
use crate::payoff::PayoffSpec;

/// Largest dimension handled by the dense engine.
pub const MAX_DENSE_DIM: usize = 8;
/// Largest dense layer, in nodes.
pub const MAX_LAYER_NODES: usize = 50_000_000;
/// Largest integer offset accepted by [`detect_embedding`].
pub const MAX_OFFSET: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("increments do not lie on a scaled integer lattice within tolerance {tol:e}")]
    NoEmbedding { tol: f64 },
    #[error("chain has no lattice embedding and needs {paths:e} paths (cap {cap:e})")]
    EmbeddingMissing { paths: f64, cap: f64 },
    #[error("exercise step {step} is not a positive multiple of h = {h}")]
    StepNotMultipleOfH { step: f64, h: f64 },
    #[error("tree has {leaves:e} leaves, more than the oracle limit {limit:e}")]
    TooLarge { leaves: f64, limit: f64 },
    #[error("dense layer would hold {nodes} nodes")]
    LayerTooLarge { nodes: f64 },
    #[error("invalid levels {lo}..{hi}")]
    InvalidLevels { lo: u32, hi: u32 },
    #[error("number of exercise dates must be ≥ 1")]
    NoExerciseDates,
    #[error("point has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// `y_i = drift + diag(scale)·offsets_i`, nodes at `anchor + n·drift + diag(scale)·k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeEmbedding {
    pub anchor: Vec<f64>,
    pub drift: Vec<f64>,
    pub scale: Vec<f64>,
    pub offsets: Vec<Vec<i64>>,
}

impl LatticeEmbedding {
    pub fn d(&self) -> usize {
        self.drift.len()
    }

    /// Position of key `k` after `n` base steps.
    pub fn position(&self, n: usize, k: &[i64]) -> Vec<f64> {
        (0..self.d())
            .map(|j| self.anchor[j] + n as f64 * self.drift[j] + self.scale[j] * k[j] as f64)
            .collect()
    }

    /// Largest reconstruction error `|y_i − b − diag(s)κ_i|` over the chain.
    pub fn residual(&self, chain: &ChainSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for (y, k) in chain.increments.iter().zip(&self.offsets) {
            for j in 0..self.d() {
                worst = worst.max((y[j] - self.drift[j] - self.scale[j] * k[j] as f64).abs());
            }
        }
        worst
    }

    pub fn with_anchor(&self, anchor: Vec<f64>) -> Self {
        Self {
            anchor,
            ..self.clone()
        }
    }

    pub fn offset_min(&self, j: usize) -> i64 {
        self.offsets.iter().map(|k| k[j]).min().unwrap_or(0)
    }

    pub fn offset_max(&self, j: usize) -> i64 {
        self.offsets.iter().map(|k| k[j]).max().unwrap_or(0)
    }

    /// Integer offsets of the n-step chain with merged weights, sorted by key.
    pub fn composed_offsets(&self, weights: &[f64], n: usize) -> Vec<(Vec<i64>, f64)> {
        let mut table = vec![(vec![0i64; self.d()], 1.0)];
        for _ in 0..n {
            table = accumulate_keys(table.iter().flat_map(|(k, a)| {
                self.offsets.iter().zip(weights).map(move |(o, b)| {
                    (k.iter().zip(o).map(|(u, v)| u + v).collect::<Vec<_>>(), a * b)
                })
            }));
        }
        table
    }
}

fn float_gcd(a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a.abs().max(b.abs()), a.abs().min(b.abs()));
    while b > tol {
        let r = a % b;
        a = b;
        b = if b - r <= tol { 0.0 } else { r };
    }
    a
}

/// Fits `y_i = y_1 + diag(s)·κ_i` with the coarsest scale that snaps every
/// increment to an integer offset within `tol`.
pub fn detect_embedding(chain: &ChainSpec, tol: f64) -> Result<LatticeEmbedding, LatticeError> {
    let d = chain.d;
    let drift = chain.increments[0].clone();
    let mut scale = vec![1.0; d];
    let mut offsets = vec![vec![0i64; d]; chain.m()];
    for j in 0..d {
        let diffs: Vec<f64> = chain.increments.iter().map(|y| y[j] - drift[j]).collect();
        let g = diffs
            .iter()
            .filter(|v| v.abs() > tol)
            .fold(0.0, |acc, &v| if acc == 0.0 { v.abs() } else { float_gcd(acc, v, tol) });
        if g == 0.0 {
            continue;
        }
        let mut ks = Vec::with_capacity(diffs.len());
        for v in &diffs {
            let k = (v / g).round();
            if k.abs() > MAX_OFFSET as f64 {
                return Err(LatticeError::NoEmbedding { tol });
            }
            ks.push(k);
        }
        // Least-squares refinement of the scale given the integer offsets.
        let num: f64 = diffs.iter().zip(&ks).map(|(v, k)| v * k).sum();
        let den: f64 = ks.iter().map(|k| k * k).sum();
        let s = num / den;
        if diffs.iter().zip(&ks).any(|(v, k)| (v - s * k).abs() > tol) {
            return Err(LatticeError::NoEmbedding { tol });
        }
        scale[j] = s;
        for (o, k) in offsets.iter_mut().zip(&ks) {
            o[j] = *k as i64;
        }
    }
    Ok(LatticeEmbedding {
        anchor: vec![0.0; d],
        drift,
        scale,
        offsets,
    })
}

/// Distinct nodes after `n` steps against the naive path count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGrowth {
    pub steps: usize,
    pub distinct: usize,
    pub naive_paths: f64,
    /// `distinct / (2n+1)^d`.
    pub ratio: f64,
}

/// Node counts for `n = 0..=max_steps`.
pub fn node_growth(emb: &LatticeEmbedding, max_steps: usize) -> Vec<NodeGrowth> {
    let d = emb.d() as i32;
    let mut frontier: BTreeSet<Vec<i64>> = BTreeSet::new();
    frontier.insert(vec![0; emb.d()]);
    let mut out = Vec::with_capacity(max_steps + 1);
    for n in 0..=max_steps {
        if n > 0 {
            frontier = frontier
                .iter()
                .flat_map(|k| {
                    emb.offsets
                        .iter()
                        .map(move |o| k.iter().zip(o).map(|(a, b)| a + b).collect())
                })
                .collect();
        }
        out.push(NodeGrowth {
            steps: n,
            distinct: frontier.len(),
            naive_paths: (emb.offsets.len() as f64).powi(n as i32),
            ratio: frontier.len() as f64 / ((2 * n + 1) as f64).powi(d),
        });
    }
    out
}

/// Node count after exactly `n` steps.
pub fn reachable_nodes(emb: &LatticeEmbedding, n: usize) -> NodeGrowth {
    node_growth(emb, n).pop().expect("at least one entry")
}

pub type Func<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// One backward-induction problem: `dates` applications of
/// `f ↦ max{e^{−rτ} P_τ f, g}` with `τ = steps_per_date·h`, starting from
/// `terminal`. With `exercise = None` the max is dropped; `outer_max`
/// controls whether the last (valuation-date) application takes the max.
#[derive(Clone, Copy)]
pub struct Program<'a> {
    pub r: f64,
    pub dates: usize,
    pub steps_per_date: usize,
    pub terminal: Func<'a>,
    pub exercise: Option<Func<'a>>,
    pub outer_max: bool,
}

impl<'a> Program<'a> {
    pub fn bermudan(
        r: f64,
        dates: usize,
        steps_per_date: usize,
        terminal: Func<'a>,
        exercise: Func<'a>,
    ) -> Self {
        Self {
            r,
            dates,
            steps_per_date,
            terminal,
            exercise: Some(exercise),
            outer_max: true,
        }
    }

    fn applies_max(&self, date: usize) -> Option<Func<'a>> {
        if date > 0 || self.outer_max {
            self.exercise
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Dense {
        lo: Vec<i64>,
        dims: Vec<usize>,
        values: Vec<f64>,
    },
    Points {
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

/// Values at one exercise date.
#[derive(Debug, Clone)]
pub struct ValueLayer {
    /// Exercise-date index (0 = valuation date).
    pub date: usize,
    /// Base steps from the valuation date.
    pub step: usize,
    /// Set when the chain had no exact embedding and nodes were matched by
    /// quantized coordinates.
    pub approximate: bool,
    embedding: Option<LatticeEmbedding>,
    storage: Storage,
}

impl ValueLayer {
    /// Value at integer key `k` (lattice layers only).
    pub fn get(&self, k: &[i64]) -> Option<f64> {
        match &self.storage {
            Storage::Dense { lo, dims, values } => {
                let mut idx = 0usize;
                for j in 0..lo.len() {
                    let off = k[j] - lo[j];
                    if off < 0 || off as usize >= dims[j] {
                        return None;
                    }
                    idx = idx * dims[j] + off as usize;
                }
                Some(values[idx])
            }
            Storage::Points { .. } => None,
        }
    }

    pub fn embedding(&self) -> Option<&LatticeEmbedding> {
        self.embedding.as_ref()
    }

    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Dense { values, .. } | Storage::Points { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(position, value)` pairs in storage order.
    pub fn nodes(&self) -> Vec<(Vec<f64>, f64)> {
        match &self.storage {
            Storage::Dense { lo, dims, values } => {
                let emb = self.embedding.as_ref().expect("dense layers carry an embedding");
                (0..values.len())
                    .map(|i| {
                        let k = decode(i, lo, dims);
                        (emb.position(self.step, &k), values[i])
                    })
                    .collect()
            }
            Storage::Points { points, values } => {
                points.iter().cloned().zip(values.iter().copied()).collect()
            }
        }
    }
}

fn decode(mut i: usize, lo: &[i64], dims: &[usize]) -> Vec<i64> {
    let mut k = vec![0i64; lo.len()];
    for j in (0..lo.len()).rev() {
        k[j] = lo[j] + (i % dims[j]) as i64;
        i /= dims[j];
    }
    k
}

/// Pricing engine for one chain; detects the lattice embedding once.
#[derive(Debug, Clone)]
pub struct Engine<'c> {
    chain: &'c ChainSpec,
    embedding: Option<LatticeEmbedding>,
    path_cap: f64,
}

impl<'c> Engine<'c> {
    pub fn new(chain: &'c ChainSpec) -> Self {
        let embedding = detect_embedding(chain, crate::chain::EMBEDDING_TOL).ok();
        Self {
            chain,
            embedding,
            path_cap: DEFAULT_PATH_CAP,
        }
    }

    pub fn with_embedding(chain: &'c ChainSpec, embedding: LatticeEmbedding) -> Self {
        Self {
            chain,
            embedding: Some(embedding),
            path_cap: DEFAULT_PATH_CAP,
        }
    }

    pub fn with_path_cap(mut self, cap: f64) -> Self {
        self.path_cap = cap;
        self
    }

    pub fn embedding(&self) -> Option<&LatticeEmbedding> {
        self.embedding.as_ref()
    }

    pub fn chain(&self) -> &ChainSpec {
        self.chain
    }

    /// Layers for a single anchor, index 0 = valuation date.
    pub fn layers(&self, prog: &Program, anchor: &[f64]) -> Result<Vec<ValueLayer>, LatticeError> {
        self.check(prog, std::slice::from_ref(&anchor.to_vec()))?;
        match &self.embedding {
            Some(emb) => {
                let emb = emb.with_anchor(anchor.to_vec());
                let zero = vec![0i64; emb.d()];
                dense_sweep(&emb, &self.chain.weights, self.chain.h, prog, &zero, &zero, true)
            }
            None => self.sparse_sweep(prog, anchor, true),
        }
    }

    /// Valuation-date values at arbitrary points. Points sharing a lattice
    /// (differences in `diag(s)·ℤ^d`) are swept together.
    pub fn evaluate(&self, prog: &Program, points: &[Vec<f64>]) -> Result<Vec<f64>, LatticeError> {
        self.check(prog, points)?;
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let Some(emb) = &self.embedding else {
            let vals: Vec<Result<f64, LatticeError>> = par_map(points.len(), |i| {
                let layers = self.sparse_sweep(prog, &points[i], false)?;
                Ok(layers[0].nodes()[0].1)
            });
            return vals.into_iter().collect();
        };
        let groups = group_by_phase(emb, points);
        let results: Vec<Result<Vec<f64>, LatticeError>> = par_map(groups.len(), |gi| {
            let (anchor_idx, members) = &groups[gi];
            let anchored = emb.with_anchor(points[*anchor_idx].clone());
            let keys: Vec<Vec<i64>> = members.iter().map(|(_, k)| k.clone()).collect();
            let d = emb.d();
            let lo: Vec<i64> = (0..d).map(|j| keys.iter().map(|k| k[j]).min().unwrap()).collect();
            let hi: Vec<i64> = (0..d).map(|j| keys.iter().map(|k| k[j]).max().unwrap()).collect();
            let layers = dense_sweep(&anchored, &self.chain.weights, self.chain.h, prog, &lo, &hi, false)?;
            Ok(keys
                .iter()
                .map(|k| layers[0].get(k).expect("key inside its own box"))
                .collect())
        });
        let mut out = vec![0.0; points.len()];
        for (group, res) in groups.iter().zip(results) {
            for ((idx, _), v) in group.1.iter().zip(res?) {
                out[*idx] = v;
            }
        }
        Ok(out)
    }

    fn check(&self, prog: &Program, points: &[Vec<f64>]) -> Result<(), LatticeError> {
        if prog.dates == 0 {
            return Err(LatticeError::NoExerciseDates);
        }
        if prog.steps_per_date == 0 {
            return Err(LatticeError::StepNotMultipleOfH {
                step: 0.0,
                h: self.chain.h,
            });
        }
        for p in points {
            if p.len() != self.chain.d {
                return Err(LatticeError::DimensionMismatch {
                    expected: self.chain.d,
                    found: p.len(),
                });
            }
        }
        Ok(())
    }

    fn sparse_sweep(
        &self,
        prog: &Program,
        anchor: &[f64],
        keep: bool,
    ) -> Result<Vec<ValueLayer>, LatticeError> {
        let total = prog.dates * prog.steps_per_date;
        let paths = (self.chain.m() as f64).powi(total as i32);
        if paths > self.path_cap {
            return Err(LatticeError::EmbeddingMissing {
                paths,
                cap: self.path_cap,
            });
        }
        let step = compose_with_cap(self.chain, prog.steps_per_date, self.path_cap)?;
        let tau = prog.steps_per_date as f64 * self.chain.h;
        let discount = (-prog.r * tau).exp();
        let layer_points = |date: usize| -> Result<Vec<Vec<f64>>, LatticeError> {
            let c = compose_with_cap(self.chain, date * prog.steps_per_date, self.path_cap)?;
            Ok(c.increments
                .iter()
                .map(|y| y.iter().zip(anchor).map(|(a, b)| a + b).collect())
                .collect())
        };
        let mut points = layer_points(prog.dates)?;
        let mut values: Vec<f64> = points.iter().map(|x| (prog.terminal)(x)).collect();
        let mut kept = Vec::new();
        let make = |date: usize, points: Vec<Vec<f64>>, values: Vec<f64>| ValueLayer {
            date,
            step: date * prog.steps_per_date,
            approximate: true,
            embedding: None,
            storage: Storage::Points { points, values },
        };
        for date in (0..prog.dates).rev() {
            let index = QuantizedIndex::new(&points);
            let next_points = layer_points(date)?;
            let ex = prog.applies_max(date);
            let next_values: Vec<f64> = next_points
                .iter()
                .map(|x| {
                    let mut acc = CompensatedSum::new();
                    let mut p = vec![0.0; x.len()];
                    for (y, w) in step.increments.iter().zip(&step.weights) {
                        for j in 0..x.len() {
                            p[j] = x[j] + y[j];
                        }
                        let i = index.find(&points, &p).expect("successor node present");
                        acc.add(w * values[i]);
                    }
                    let cont = discount * acc.value();
                    match ex {
                        Some(g) => cont.max(g(x)),
                        None => cont,
                    }
                })
                .collect();
            if keep {
                kept.push(make(date + 1, points, values));
            }
            points = next_points;
            values = next_values;
        }
        kept.push(make(0, points, values));
        kept.reverse();
        Ok(kept)
    }
}

struct QuantizedIndex {
    quantum: f64,
    map: HashMap<Vec<i64>, Vec<usize>>,
}

impl QuantizedIndex {
    const QUANTUM: f64 = 1e-9;

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.quantum).round() as i64).collect()
    }

    fn new(points: &[Vec<f64>]) -> Self {
        let mut idx = Self {
            quantum: Self::QUANTUM,
            map: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let k = idx.key(p);
            idx.map.entry(k).or_default().push(i);
        }
        idx
    }

    fn find(&self, points: &[Vec<f64>], x: &[f64]) -> Option<usize> {
        let base = self.key(x);
        let d = x.len();
        let mut best: Option<(f64, usize)> = None;
        for code in 0..3usize.pow(d as u32) {
            let mut c = code;
            let key: Vec<i64> = base
                .iter()
                .map(|b| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    b + o
                })
                .collect();
            if let Some(list) = self.map.get(&key) {
                for &i in list {
                    let dist = points[i]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    if best.map_or(true, |(bd, _)| dist < bd) {
                        best = Some((dist, i));
                    }
                }
            }
        }
        best.filter(|(dist, _)| *dist <= self.quantum).map(|(_, i)| i)
    }
}

/// Groups points into shared lattices: `(anchor index, [(point index, key)])`.
fn group_by_phase(emb: &LatticeEmbedding, points: &[Vec<f64>]) -> Vec<(usize, Vec<(usize, Vec<i64>)>)> {
    const PHASES: f64 = 1e6;
    let d = emb.d();
    let mut by_phase: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut groups: Vec<(usize, Vec<(usize, Vec<i64>)>)> = Vec::new();
    for (i, x) in points.iter().enumerate() {
        let phase: Vec<i64> = (0..d)
            .map(|j| {
                let u = x[j] / emb.scale[j];
                let f = ((u - u.floor()) * PHASES).round() as i64;
                f % PHASES as i64
            })
            .collect();
        let placed = by_phase.get(&phase).and_then(|&g| {
            let anchor = &points[groups[g].0];
            let key: Vec<i64> = (0..d)
                .map(|j| ((x[j] - anchor[j]) / emb.scale[j]).round() as i64)
                .collect();
            let ok = (0..d).all(|j| {
                let back = anchor[j] + emb.scale[j] * key[j] as f64;
                (back - x[j]).abs() <= 1e-9 * emb.scale[j]
            });
            ok.then_some((g, key))
        });
        match placed {
            Some((g, key)) => groups[g].1.push((i, key)),
            None => {
                by_phase.entry(phase).or_insert(groups.len());
                groups.push((i, vec![(i, vec![0; d])]));
            }
        }
    }
    groups
}

/// Dense backward sweep. Layer-0 keys span `[lo0, hi0]`; the box grows by the
/// offset range at each later date so every successor stays inside it.
fn dense_sweep(
    emb: &LatticeEmbedding,
    weights: &[f64],
    h: f64,
    prog: &Program,
    lo0: &[i64],
    hi0: &[i64],
    keep: bool,
) -> Result<Vec<ValueLayer>, LatticeError> {
    let d = emb.d();
    if d > MAX_DENSE_DIM {
        return Err(LatticeError::LayerTooLarge { nodes: f64::INFINITY });
    }
    let n_tau = prog.steps_per_date;
    let composed = emb.composed_offsets(weights, n_tau);
    let discount = (-prog.r * n_tau as f64 * h).exp();
    let kmin: Vec<i64> = (0..d).map(|j| emb.offset_min(j)).collect();
    let kmax: Vec<i64> = (0..d).map(|j| emb.offset_max(j)).collect();
    let bounds = |date: usize| -> (Vec<i64>, Vec<usize>) {
        let n = (date * n_tau) as i64;
        let lo: Vec<i64> = (0..d).map(|j| lo0[j] + n * kmin[j]).collect();
        let dims: Vec<usize> = (0..d)
            .map(|j| (hi0[j] + n * kmax[j] - lo[j] + 1) as usize)
            .collect();
        (lo, dims)
    };
    let (top_lo, top_dims) = bounds(prog.dates);
    let top_nodes: f64 = top_dims.iter().map(|&v| v as f64).product();
    if top_nodes > MAX_LAYER_NODES as f64 {
        return Err(LatticeError::LayerTooLarge { nodes: top_nodes });
    }

    let eval_layer = |date: usize, lo: &[i64], dims: &[usize], f: &(dyn Fn(usize, &[f64]) -> f64 + Sync)| {
        let len: usize = dims.iter().product();
        let step = date * n_tau;
        par_map(len, |i| {
            let mut x = [0.0f64; MAX_DENSE_DIM];
            let mut rem = i;
            for j in (0..d).rev() {
                let k = lo[j] + (rem % dims[j]) as i64;
                rem /= dims[j];
                x[j] = emb.anchor[j] + step as f64 * emb.drift[j] + emb.scale[j] * k as f64;
            }
            f(i, &x[..d])
        })
    };

    let mut values = eval_layer(prog.dates, &top_lo, &top_dims, &|_, x| (prog.terminal)(x));
    let mut lo = top_lo;
    let mut dims = top_dims;
    let mut kept = Vec::new();
    let layer = |date: usize, lo: Vec<i64>, dims: Vec<usize>, values: Vec<f64>| ValueLayer {
        date,
        step: date * n_tau,
        approximate: false,
        embedding: Some(emb.clone()),
        storage: Storage::Dense { lo, dims, values },
    };
    for date in (0..prog.dates).rev() {
        let (new_lo, new_dims) = bounds(date);
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * dims[j + 1];
        }
        // Successor of key k under composed offset c sits at old index
        // base(k) + Σ_j c_j·stride_j.
        let deltas: Vec<(isize, f64)> = composed
            .iter()
            .map(|(c, w)| {
                let delta: isize = (0..d).map(|j| c[j] as isize * strides[j] as isize).sum();
                (delta, *w)
            })
            .collect();
        let ex = prog.applies_max(date);
        let old = &values;
        let (old_lo, nlo, ndims) = (&lo, &new_lo, &new_dims);
        let next = eval_layer(date, nlo, ndims, &|i, x| {
            let mut rem = i;
            let mut base = 0isize;
            for j in (0..d).rev() {
                let k = nlo[j] + (rem % ndims[j]) as i64;
                rem /= ndims[j];
                base += (k - old_lo[j]) as isize * strides[j] as isize;
            }
            let mut acc = CompensatedSum::new();
            for (delta, w) in &deltas {
                acc.add(w * old[(base + delta) as usize]);
            }
            let cont = discount * acc.value();
            match ex {
                Some(g) => cont.max(g(x)),
                None => cont,
            }
        });
        if keep {
            kept.push(layer(date + 1, lo, dims, values));
        }
        values = next;
        lo = new_lo;
        dims = new_dims;
    }
    kept.push(layer(0, lo, dims, values));
    kept.reverse();
    Ok(kept)
}

/// Steps of `h` per exercise date when `horizon` is split into `dates` dates.
pub fn steps_per_date(chain: &ChainSpec, horizon: f64, dates: usize) -> Result<usize, LatticeError> {
    if dates == 0 {
        return Err(LatticeError::NoExerciseDates);
    }
    let tau = horizon / dates as f64;
    match steps_in(tau, chain.h) {
        Some(n) if n >= 1 => Ok(n),
        _ => Err(LatticeError::StepNotMultipleOfH {
            step: tau,
            h: chain.h,
        }),
    }
}

/// Backward layers of `(B_τ)^{∘N}(g∨0)` from a single anchor, index 0 = valuation date.
pub fn bellman_sweep(
    chain: &ChainSpec,
    payoff: &PayoffSpec,
    r: f64,
    dates: usize,
    step_horizon: f64,
    anchor: &[f64],
) -> Result<Vec<ValueLayer>, LatticeError> {
    let n_tau = steps_per_date(chain, step_horizon, 1)?;
    let g = |x: &[f64]| payoff.g(x);
    let gp = |x: &[f64]| payoff.payoff(x);
    let prog = Program::bermudan(r, dates, n_tau, &gp, &g);
    Engine::new(chain).layers(&prog, anchor)
}

/// `(B_{T/N})^{∘N}(g∨0)(x₀)`.
pub fn price_bermudan(
    chain: &ChainSpec,
    payoff: &PayoffSpec,
    r: f64,
    horizon: f64,
    dates: usize,
    anchor: &[f64],
) -> Result<f64, LatticeError> {
    Ok(price_many(chain, payoff, r, horizon, dates, std::slice::from_ref(&anchor.to_vec()))?[0])
}

/// [`price_bermudan`] at many points at once.
pub fn price_many(
    chain: &ChainSpec,
    payoff: &PayoffSpec,
    r: f64,
    horizon: f64,
    dates: usize,
    points: &[Vec<f64>],
) -> Result<Vec<f64>, LatticeError> {
    let n_tau = steps_per_date(chain, horizon, dates)?;
    let g = |x: &[f64]| payoff.g(x);
    let gp = |x: &[f64]| payoff.payoff(x);
    let prog = Program::bermudan(r, dates, n_tau, &gp, &g);
    Engine::new(chain).evaluate(&prog, points)
}

/// `V_n(x)` for `n = lo..=hi` with `V_n = (B_{T2^{−n}})^{∘2ⁿ}(g∨0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicTable {
    pub levels: Vec<u32>,
    pub points: Vec<Vec<f64>>,
    /// `values[level][point]`.
    pub values: Vec<Vec<f64>>,
}

impl DyadicTable {
    /// `V_n − V_{n−1}` at every point, `None` on the first level.
    pub fn diff_prev(&self, level_idx: usize, point: usize) -> Option<f64> {
        (level_idx > 0).then(|| self.values[level_idx][point] - self.values[level_idx - 1][point])
    }

    /// Smallest successive difference over the table.
    pub fn min_increment(&self) -> f64 {
        (1..self.levels.len())
            .flat_map(|l| (0..self.points.len()).map(move |p| (l, p)))
            .filter_map(|(l, p)| self.diff_prev(l, p))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn dyadic_sequence(
    chain: &ChainSpec,
    payoff: &PayoffSpec,
    r: f64,
    horizon: f64,
    levels: (u32, u32),
    points: &[Vec<f64>],
) -> Result<DyadicTable, LatticeError> {
    let (lo, hi) = levels;
    if lo > hi || hi > 30 {
        return Err(LatticeError::InvalidLevels { lo, hi });
    }
    steps_per_date(chain, horizon, 1usize << hi)?;
    let engine = Engine::new(chain);
    let g = |x: &[f64]| payoff.g(x);
    let gp = |x: &[f64]| payoff.payoff(x);
    let mut values = Vec::new();
    for n in lo..=hi {
        let dates = 1usize << n;
        let n_tau = steps_per_date(chain, horizon, dates)?;
        let prog = Program::bermudan(r, dates, n_tau, &gp, &g);
        values.push(engine.evaluate(&prog, points)?);
    }
    Ok(DyadicTable {
        levels: (lo..=hi).collect(),
        points: points.to_vec(),
        values,
    })
}

/// Upper limit on leaves for [`tree_oracle`].
pub const TREE_ORACLE_LIMIT: f64 = 1e6;

/// Exhaustive backward induction over the non-recombined tree.
pub fn tree_oracle(
    chain: &ChainSpec,
    payoff: &PayoffSpec,
    r: f64,
    horizon: f64,
    dates: usize,
    anchor: &[f64],
) -> Result<f64, LatticeError> {
    let n_tau = steps_per_date(chain, horizon, dates)?;
    let leaves = (chain.m() as f64).powi((dates * n_tau) as i32);
    if leaves > TREE_ORACLE_LIMIT {
        return Err(LatticeError::TooLarge {
            leaves,
            limit: TREE_ORACLE_LIMIT,
        });
    }
    let discount = (-r * n_tau as f64 * chain.h).exp();

    fn walk(
        chain: &ChainSpec,
        payoff: &PayoffSpec,
        discount: f64,
        dates: usize,
        n_tau: usize,
        date: usize,
        depth: usize,
        prob: f64,
        x: &mut Vec<f64>,
    ) -> f64 {
        if depth == n_tau {
            return prob * node(chain, payoff, discount, dates, n_tau, date + 1, x);
        }
        let mut total = 0.0;
        for (y, a) in chain.increments.iter().zip(&chain.weights) {
            for j in 0..x.len() {
                x[j] += y[j];
            }
            total += walk(chain, payoff, discount, dates, n_tau, date, depth + 1, prob * a, x);
            for j in 0..x.len() {
                x[j] -= y[j];
            }
        }
        total
    }

    fn node(
        chain: &ChainSpec,
        payoff: &PayoffSpec,
        discount: f64,
        dates: usize,
        n_tau: usize,
        date: usize,
        x: &mut Vec<f64>,
    ) -> f64 {
        if date == dates {
            return payoff.payoff(x);
        }
        let cont = discount * walk(chain, payoff, discount, dates, n_tau, date, 0, 1.0, x);
        cont.max(payoff.g(x))
    }

    let mut x = anchor.to_vec();
    Ok(node(chain, payoff, discount, dates, n_tau, 0, &mut x))
}

/// Per-axis grid whose points fall on few lattice phases: spacing
/// `scale·p/q`, midpoints `lo + (i+½)·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedAxis {
    pub lo: f64,
    pub hi: f64,
    pub scale: f64,
    pub p: u64,
    pub q: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl AlignedAxis {
    /// Coarsest lattice-compatible spacing not exceeding `dx`.
    pub fn new(lo: f64, hi: f64, dx: f64, scale: f64) -> Self {
        let (p, q) = if scale >= dx {
            (1, (scale / dx).ceil() as u64)
        } else {
            ((dx / scale).floor() as u64, 1)
        };
        Self { lo, hi, scale, p, q }
    }

    pub fn spacing(&self) -> f64 {
        self.scale * self.p as f64 / self.q as f64
    }

    pub fn count(&self) -> usize {
        ((self.hi - self.lo) / self.spacing() + 1e-9).floor() as usize
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.spacing()
    }

    pub fn halved(&self) -> Self {
        let (p, q) = (self.p, self.q * 2);
        let g = gcd(p, q);
        Self {
            p: p / g,
            q: q / g,
            ..self.clone()
        }
    }
}

/// Tensor grid of [`AlignedAxis`], points in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedGrid {
    pub axes: Vec<AlignedAxis>,
}

impl AlignedGrid {
    /// Grid on the box `[lo, hi]`; `scales` are the lattice scales (use `dx`
    /// itself for chains without an embedding).
    pub fn new(lo: &[f64], hi: &[f64], dx: f64, scales: &[f64]) -> Self {
        Self {
            axes: (0..lo.len())
                .map(|j| AlignedAxis::new(lo[j], hi[j], dx, scales[j]))
                .collect(),
        }
    }

    pub fn for_engine(engine: &Engine, lo: &[f64], hi: &[f64], dx: f64) -> Self {
        let scales = match engine.embedding() {
            Some(e) => e.scale.clone(),
            None => vec![dx; lo.len()],
        };
        Self::new(lo, hi, dx, &scales)
    }

    pub fn halved(&self) -> Self {
        Self {
            axes: self.axes.iter().map(AlignedAxis::halved).collect(),
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(AlignedAxis::spacing).product()
    }

    /// Largest spacing over the axes.
    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(AlignedAxis::spacing).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(AlignedAxis::count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let counts: Vec<usize> = self.axes.iter().map(AlignedAxis::count).collect();
        let total: usize = counts.iter().product();
        (0..total)
            .map(|mut i| {
                let mut x = vec![0.0; counts.len()];
                for j in (0..counts.len()).rev() {
                    x[j] = self.axes[j].point(i % counts[j]);
                    i /= counts[j];
                }
                x
            })
            .collect()
    }
}
