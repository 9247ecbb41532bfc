//! Gaussian cubature formulas and the chains built from them.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainSpec};
use crate::lattice::LatticeEmbedding;
use crate::numeric::{compensated_sum, gaussian_moment};

pub const MAX_MOMENT_DEGREE: u32 = 8;
const SCALE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CubatureError {
    #[error("unknown builtin formula '{0}'")]
    UnknownName(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("weights sum to {sum}, expected 1 within 1e-12")]
    WeightSumError { sum: f64 },
    #[error("formula has no lattice scale")]
    NoLatticeScale,
    #[error("node {index} is not an integer multiple of the lattice scale (residual {residual:e})")]
    ScaleMismatch { index: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("GF(2) analysis supports d ≤ 64, got {0}")]
    DimensionTooLarge(usize),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Nodes and weights integrating polynomials up to `degree` exactly against
/// the standard Gaussian on ℝ^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubatureFormula {
    pub d: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub degree: u32,
    /// Per-coordinate `c` with `z_i / c ∈ ℤ^d`.
    pub lattice_scale: Option<Vec<f64>>,
}

const SQRT_3: f64 = 1.732_050_807_568_877_2;

impl CubatureFormula {
    pub fn validate(self) -> Result<Self, CubatureError> {
        for y in &self.nodes {
            if y.len() != self.d {
                return Err(CubatureError::DimensionMismatch {
                    expected: self.d,
                    found: y.len(),
                });
            }
        }
        if self.weights.len() != self.nodes.len() {
            return Err(CubatureError::DimensionMismatch {
                expected: self.nodes.len(),
                found: self.weights.len(),
            });
        }
        let sum = compensated_sum(self.weights.iter().copied());
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(CubatureError::WeightSumError { sum });
        }
        if let Some(c) = &self.lattice_scale {
            if c.len() != self.d {
                return Err(CubatureError::DimensionMismatch {
                    expected: self.d,
                    found: c.len(),
                });
            }
            for (index, z) in self.nodes.iter().enumerate() {
                for (zj, cj) in z.iter().zip(c) {
                    let residual = (zj / cj - (zj / cj).round()).abs();
                    if !(residual < SCALE_TOL) {
                        return Err(CubatureError::ScaleMismatch { index, residual });
                    }
                }
            }
        }
        Ok(self)
    }

    /// Integer node coordinates `z_i / c`.
    pub fn integer_nodes(&self) -> Result<Vec<Vec<i64>>, CubatureError> {
        let c = self
            .lattice_scale
            .as_ref()
            .ok_or(CubatureError::NoLatticeScale)?;
        Ok(self
            .nodes
            .iter()
            .map(|z| z.iter().zip(c).map(|(zj, cj)| (zj / cj).round() as i64).collect())
            .collect())
    }
}

/// Two-point rule `{±1}`, exact to degree 3.
pub fn gauss_d1_deg3() -> CubatureFormula {
    CubatureFormula {
        d: 1,
        nodes: vec![vec![-1.0], vec![1.0]],
        weights: vec![0.5, 0.5],
        degree: 3,
        lattice_scale: Some(vec![1.0]),
    }
}

/// Three-point rule `{−√3, 0, √3}`, exact to degree 5.
pub fn gauss_d1_deg5() -> CubatureFormula {
    CubatureFormula {
        d: 1,
        nodes: vec![vec![-SQRT_3], vec![0.0], vec![SQRT_3]],
        weights: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        degree: 5,
        lattice_scale: Some(vec![SQRT_3]),
    }
}

/// Tensor power of a one-dimensional rule.
pub fn product(d: usize, base: &CubatureFormula) -> CubatureFormula {
    let mut nodes: Vec<Vec<f64>> = vec![Vec::new()];
    let mut weights = vec![1.0];
    for _ in 0..d {
        let mut n2 = Vec::new();
        let mut w2 = Vec::new();
        for (x, a) in nodes.iter().zip(&weights) {
            for (z, b) in base.nodes.iter().zip(&base.weights) {
                let mut p = x.clone();
                p.extend_from_slice(z);
                n2.push(p);
                w2.push(a * b);
            }
        }
        nodes = n2;
        weights = w2;
    }
    CubatureFormula {
        d: d * base.d,
        nodes,
        weights,
        degree: base.degree,
        lattice_scale: base
            .lattice_scale
            .as_ref()
            .map(|c| c.iter().cycle().take(d * base.d).copied().collect()),
    }
}

/// `gauss_d1_deg3`, `gauss_d1_deg5`, or `product(d, base)`.
pub fn builtin_formula(name: &str) -> Result<CubatureFormula, CubatureError> {
    let name = name.trim();
    match name {
        "gauss_d1_deg3" => return Ok(gauss_d1_deg3()),
        "gauss_d1_deg5" => return Ok(gauss_d1_deg5()),
        _ => {}
    }
    let unknown = || CubatureError::UnknownName(name.to_string());
    let inner = name
        .strip_prefix("product(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(unknown)?;
    let (d, base) = inner.split_once(',').ok_or_else(unknown)?;
    let d: usize = d.trim().parse().map_err(|_| unknown())?;
    if d == 0 {
        return Err(unknown());
    }
    Ok(product(d, &builtin_formula(base)?))
}

pub fn load_formula(path: &Path) -> Result<CubatureFormula, CubatureError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CubatureError::Io(format!("{}: {e}", path.display())))?;
    parse_formula(&text)
}

/// Parses the node-file format: `d m`, then `m` lines `weight z_1 … z_d`,
/// then an optional `scale c_1 … c_d`. Blank lines and `#` comments are skipped.
/// The degree is inferred as the largest `k ≤ 8` for which all moments up to
/// `k` match the Gaussian within 1e−10.
pub fn parse_formula(text: &str) -> Result<CubatureFormula, CubatureError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, message: &str| CubatureError::ParseError {
        line,
        message: message.to_string(),
    };
    let nums = |line: usize, l: &str| -> Result<Vec<f64>, CubatureError> {
        l.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(line, &format!("invalid number '{t}'"))))
            .collect()
    };
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(err(hline, "header must be 'd m'"));
    }
    let d: usize = head[0].parse().map_err(|_| err(hline, "invalid dimension"))?;
    let m: usize = head[1].parse().map_err(|_| err(hline, "invalid node count"))?;
    if d == 0 || m == 0 {
        return Err(err(hline, "dimension and node count must be positive"));
    }
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        let (line, l) = lines
            .next()
            .ok_or_else(|| err(hline + i + 1, &format!("expected {m} node lines")))?;
        let v = nums(line, l)?;
        if v.len() != d + 1 {
            return Err(err(line, &format!("expected {} numbers", d + 1)));
        }
        weights.push(v[0]);
        nodes.push(v[1..].to_vec());
    }
    let mut lattice_scale = None;
    if let Some((line, l)) = lines.next() {
        let rest = l
            .strip_prefix("scale")
            .ok_or_else(|| err(line, "unexpected trailing line"))?;
        let c = nums(line, rest)?;
        if c.len() != d || c.iter().any(|&v| !(v > 0.0)) {
            return Err(err(line, "scale needs d positive numbers"));
        }
        lattice_scale = Some(c);
    }
    if let Some((line, _)) = lines.next() {
        return Err(err(line, "unexpected trailing line"));
    }
    let mut f = CubatureFormula {
        d,
        nodes,
        weights,
        degree: 0,
        lattice_scale,
    }
    .validate()?;
    f.degree = (0..=MAX_MOMENT_DEGREE)
        .take_while(|&k| moment_check(&f, k).max_error < 1e-10)
        .last()
        .unwrap_or(0);
    Ok(f)
}

/// Writes the node-file format with 17 significant digits.
pub fn format_formula(f: &CubatureFormula) -> String {
    let mut out = format!("{} {}\n", f.d, f.nodes.len());
    for (z, w) in f.nodes.iter().zip(&f.weights) {
        out.push_str(&format!("{w:.16e}"));
        for v in z {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    if let Some(c) = &f.lattice_scale {
        out.push_str("scale");
        for v in c {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub multi_index: Vec<u32>,
    pub quadrature: f64,
    pub gaussian: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub entries: Vec<MomentEntry>,
    pub max_error: f64,
}

fn multi_indices(d: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    fn rec(j: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if j == cur.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[j] = k;
            rec(j + 1, left - k, cur, out);
        }
        cur[j] = 0;
    }
    rec(0, max_total, &mut cur, &mut out);
    out.sort_by_key(|b| b.iter().sum::<u32>());
    out
}

/// Compares `Σ α_i z_i^β` with the Gaussian moment for every `|β| ≤ up_to_degree`.
pub fn moment_check(f: &CubatureFormula, up_to_degree: u32) -> MomentReport {
    let up_to = up_to_degree.min(MAX_MOMENT_DEGREE);
    let entries: Vec<MomentEntry> = multi_indices(f.d, up_to)
        .into_iter()
        .map(|beta| {
            let quadrature = compensated_sum(f.nodes.iter().zip(&f.weights).map(|(z, a)| {
                a * z
                    .iter()
                    .zip(&beta)
                    .map(|(zj, &b)| zj.powi(b as i32))
                    .product::<f64>()
            }));
            let gaussian: f64 = beta.iter().map(|&b| gaussian_moment(b)).product();
            MomentEntry {
                abs_error: (quadrature - gaussian).abs(),
                multi_index: beta,
                quadrature,
                gaussian,
            }
        })
        .collect();
    let max_error = entries.iter().map(|e| e.abs_error).fold(0.0, f64::max);
    MomentReport { entries, max_error }
}

/// Structure of the node set projected to `(ℤ/2ℤ)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mod2Report {
    pub d: usize,
    /// Distinct projected points, bit `j` = coordinate `j`.
    pub projected: Vec<u64>,
    pub projected_count: usize,
    pub rank: usize,
    /// Index sets into `projected` whose points sum to 0 mod 2 (support 3 and 4).
    pub relations: Vec<Vec<usize>>,
    /// Nonzero projected points form an invertible d×d matrix.
    pub only_trivial: bool,
    pub summary: String,
}

impl Mod2Report {
    /// Re-sums every relation over GF(2).
    pub fn relations_hold(&self) -> bool {
        self.relations
            .iter()
            .all(|rel| rel.iter().fold(0u64, |acc, &i| acc ^ self.projected[i]) == 0)
    }
}

/// Rank over GF(2) of bit-packed rows.
pub fn gf2_rank(rows: &[u64]) -> usize {
    let mut basis: Vec<u64> = Vec::new();
    for &r in rows {
        let mut v = r;
        for &b in &basis {
            v = v.min(v ^ b);
        }
        if v != 0 {
            basis.push(v);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    basis.len()
}

pub fn mod2_recombination_analysis(f: &CubatureFormula) -> Result<Mod2Report, CubatureError> {
    if f.d > 64 {
        return Err(CubatureError::DimensionTooLarge(f.d));
    }
    let ints = f.integer_nodes()?;
    let mut projected: Vec<u64> = Vec::new();
    for k in &ints {
        let bits = k
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, v)| acc | ((v.rem_euclid(2) as u64) << j));
        if !projected.contains(&bits) {
            projected.push(bits);
        }
    }
    let rank = gf2_rank(&projected);
    let nonzero: Vec<usize> = (0..projected.len()).filter(|&i| projected[i] != 0).collect();
    let position: HashMap<u64, usize> = nonzero.iter().map(|&i| (projected[i], i)).collect();
    // Distinct nonzero points admit no relation of support 1 or 2.
    let mut relations = Vec::new();
    for (a, &i) in nonzero.iter().enumerate() {
        for (b, &j) in nonzero.iter().enumerate().skip(a + 1) {
            for &k in nonzero.iter().skip(b + 1) {
                let x = projected[i] ^ projected[j] ^ projected[k];
                if x == 0 {
                    relations.push(vec![i, j, k]);
                } else if let Some(&l) = position.get(&x) {
                    if l > k {
                        relations.push(vec![i, j, k, l]);
                    }
                }
            }
        }
    }
    let only_trivial = nonzero.len() == f.d && rank == f.d;
    let summary = if only_trivial {
        "only trivial zero representation: no nontrivial recombination beyond lattice symmetry"
            .to_string()
    } else {
        format!(
            "{} distinct projected points, rank {}, {} relations of support ≤ 4",
            projected.len(),
            rank,
            relations.len()
        )
    };
    Ok(Mod2Report {
        d: f.d,
        projected_count: projected.len(),
        projected,
        rank,
        relations,
        only_trivial,
        summary,
    })
}

/// `μ_k = r − δ − (1/h)·ln Σ_i α_i e^{(z_i)_k σ_k √h}`, making
/// `e^{−(r−δ)h} Σ α e^{y_k} = 1` per coordinate.
pub fn calibrate_drift(f: &CubatureFormula, r: f64, delta: f64, sigma: &[f64], h: f64) -> Vec<f64> {
    let sq = h.sqrt();
    (0..f.d)
        .map(|k| {
            let excess = compensated_sum(
                f.nodes
                    .iter()
                    .zip(&f.weights)
                    .map(|(z, a)| a * (z[k] * sigma[k] * sq).exp_m1()),
            );
            r - delta - excess.ln_1p() / h
        })
        .collect()
}

/// `|e^{−(r−δ)h} Σ α e^{(y_i)_k} − 1|`, worst coordinate.
pub fn martingale_residual(chain: &ChainSpec, r: f64, delta: f64) -> f64 {
    (0..chain.d)
        .map(|k| {
            let excess = compensated_sum(
                chain
                    .weights
                    .iter()
                    .zip(&chain.increments)
                    .map(|(a, y)| a * (y[k] - (r - delta) * chain.h).exp_m1()),
            );
            excess.abs()
        })
        .fold(0.0, f64::max)
}

/// Drift `r − σ²/2` under which [`admissible_volatility`] is stated.
pub fn lognormal_drift(r: f64, sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| r - 0.5 * s * s).collect()
}

/// Largest `σ_k` for which `(r − σ_k²/2)h + σ_k√h·min_i (z_i)_k ≥ 0`.
pub fn admissible_volatility(f: &CubatureFormula, r: f64, h: f64) -> Vec<f64> {
    let c = 2.0 * r * h;
    (0..f.d)
        .map(|k| {
            let m = f.nodes.iter().map(|z| z[k]).fold(f64::INFINITY, f64::min);
            let root = (m * m + c).sqrt();
            let v = if m < 0.0 { c / (root - m) } else { m + root };
            v / h.sqrt()
        })
        .collect()
}

/// `y_i = μh + diag(σ)√h·z_i` plus the lattice embedding inherited from the
/// formula's scale.
pub fn build_chain(
    f: &CubatureFormula,
    mu: &[f64],
    sigma: &[f64],
    h: f64,
) -> Result<(ChainSpec, Option<LatticeEmbedding>), CubatureError> {
    for v in [mu.len(), sigma.len()] {
        if v != f.d {
            return Err(CubatureError::DimensionMismatch {
                expected: f.d,
                found: v,
            });
        }
    }
    let sq = h.sqrt();
    let drift: Vec<f64> = mu.iter().map(|m| m * h).collect();
    let increments: Vec<Vec<f64>> = f
        .nodes
        .iter()
        .map(|z| (0..f.d).map(|k| drift[k] + sigma[k] * sq * z[k]).collect())
        .collect();
    let chain = ChainSpec::new(f.d, h, increments, f.weights.clone())?;
    let embedding = match f.integer_nodes() {
        Ok(ints) => {
            let c = f.lattice_scale.as_ref().expect("integer nodes imply a scale");
            let mut scale = vec![1.0; f.d];
            let mut offsets = ints;
            for k in 0..f.d {
                if sigma[k] > 0.0 {
                    scale[k] = sigma[k] * sq * c[k];
                } else {
                    offsets.iter_mut().for_each(|o| o[k] = 0);
                }
            }
            Some(LatticeEmbedding {
                anchor: vec![0.0; f.d],
                drift,
                scale,
                offsets,
            })
        }
        Err(_) => None,
    };
    Ok((chain, embedding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::compose;
    use approx::assert_relative_eq;

    /// Roots of the probabilists' Hermite polynomial He_n by bisection on
    /// sign changes, and weights from the moment equations.
    fn hermite_oracle(n: usize) -> (Vec<f64>, Vec<f64>) {
        let he = |x: f64| {
            let (mut a, mut b) = (1.0, x);
            if n == 0 {
                return a;
            }
            for k in 1..n {
                let c = x * b - k as f64 * a;
                a = b;
                b = c;
            }
            b
        };
        let mut roots = Vec::new();
        let steps = 200_000;
        let (lo, hi) = (-10.0, 10.0);
        let dx = (hi - lo) / steps as f64;
        for i in 0..steps {
            let (mut a, mut b) = (lo + i as f64 * dx, lo + (i + 1) as f64 * dx);
            if he(a) == 0.0 {
                roots.push(a);
                continue;
            }
            if he(a).signum() != he(b).signum() && he(b) != 0.0 {
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if he(a).signum() == he(m).signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        // Solve Σ w_i x_i^k = E[z^k], k < n, by Gaussian elimination.
        let mut mat: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut row: Vec<f64> = roots.iter().map(|x| x.powi(k as i32)).collect();
                row.push(gaussian_moment(k as u32));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&a, &b| mat[a][c].abs().total_cmp(&mat[b][c].abs()))
                .unwrap();
            mat.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = mat[r][c] / mat[c][c];
                    for k in c..=n {
                        mat[r][k] -= f * mat[c][k];
                    }
                }
            }
        }
        let w = (0..n).map(|i| mat[i][n] / mat[i][i]).collect();
        (roots, w)
    }

    #[test]
    fn builtins_match_moment_oracle() {
        for (f, n) in [(gauss_d1_deg3(), 2), (gauss_d1_deg5(), 3)] {
            let (x, w) = hermite_oracle(n);
            for i in 0..n {
                assert_relative_eq!(f.nodes[i][0], x[i], epsilon = 1e-12);
                assert_relative_eq!(f.weights[i], w[i], epsilon = 1e-12);
            }
            assert!(moment_check(&f, f.degree).max_error < 1e-12);
        }
    }

    #[test]
    fn builtin_names() {
        let p = builtin_formula("product(2, gauss_d1_deg3)").unwrap();
        assert_eq!(p.nodes.len(), 4);
        assert!(p.weights.iter().all(|&w| w == 0.25));
        assert!(moment_check(&p, 3).max_error < 1e-12);
        assert!(matches!(
            builtin_formula("gauss_d1_deg7"),
            Err(CubatureError::UnknownName(_))
        ));
    }

    #[test]
    fn moment_examples() {
        let r = moment_check(&gauss_d1_deg3(), 4);
        let e4 = r.entries.iter().find(|e| e.multi_index == vec![4]).unwrap();
        assert_relative_eq!(e4.abs_error, 2.0);
        assert!(moment_check(&gauss_d1_deg5(), 5).max_error < 1e-12);
        assert!(moment_check(&gauss_d1_deg5(), 0).max_error < 1e-12);
    }

    #[test]
    fn node_file_round_trip() {
        let f = parse_formula("1 2\n0.5 -1\n0.5 1\n").unwrap();
        assert_eq!(f.nodes, gauss_d1_deg3().nodes);
        assert_eq!(f.degree, 3);
        let g = parse_formula(&format_formula(&gauss_d1_deg5())).unwrap();
        assert_eq!(g, gauss_d1_deg5());
        assert!(matches!(
            parse_formula("1 2\n0.45 -1\n0.45 1\n"),
            Err(CubatureError::WeightSumError { .. })
        ));
        assert!(matches!(parse_formula(""), Err(CubatureError::ParseError { line: 1, .. })));
        assert!(matches!(
            parse_formula("1 2\n0.5 -1\n0.5 x\n"),
            Err(CubatureError::ParseError { line: 3, .. })
        ));
    }

    #[test]
    fn mod2_examples() {
        let square = CubatureFormula {
            d: 2,
            nodes: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            weights: vec![0.25; 4],
            degree: 0,
            lattice_scale: Some(vec![1.0, 1.0]),
        };
        let r = mod2_recombination_analysis(&square).unwrap();
        assert_eq!(r.rank, 2);
        assert_eq!(r.relations, vec![vec![1, 2, 3]]);
        assert!(r.relations_hold());
        assert!(!r.only_trivial);

        let r = mod2_recombination_analysis(&gauss_d1_deg3()).unwrap();
        assert_eq!((r.projected_count, r.rank), (1, 1));
        assert!(r.relations.is_empty());

        let d = 5;
        let ident = CubatureFormula {
            d,
            nodes: (0..d).map(|i| (0..d).map(|j| (i == j) as u8 as f64).collect()).collect(),
            weights: vec![0.2; 5],
            degree: 0,
            lattice_scale: Some(vec![1.0; d]),
        };
        let r = mod2_recombination_analysis(&ident).unwrap();
        assert!(r.only_trivial);
        assert_eq!(r.rank, d);
        assert!(r.summary.contains("only trivial zero representation"));

        let no_scale = CubatureFormula {
            lattice_scale: None,
            ..gauss_d1_deg3()
        };
        assert!(matches!(
            mod2_recombination_analysis(&no_scale),
            Err(CubatureError::NoLatticeScale)
        ));
    }

    #[test]
    fn calibration_example() {
        let f = gauss_d1_deg3();
        let mu = calibrate_drift(&f, 0.05, 0.02, &[0.1], 0.25);
        assert_relative_eq!(mu[0], 0.03 - 4.0 * 0.05f64.cosh().ln(), epsilon = 1e-15);
        let (chain, _) = build_chain(&f, &mu, &[0.1], 0.25).unwrap();
        assert!(martingale_residual(&chain, 0.05, 0.02) < 1e-13);

        assert_eq!(calibrate_drift(&f, 0.05, 0.02, &[0.0], 0.25), vec![0.05 - 0.02]);
        let mu = calibrate_drift(&f, 0.03, 0.03, &[0.0], 0.25);
        assert_eq!(mu, vec![0.0]);
        let (chain, _) = build_chain(&f, &mu, &[0.0], 0.25).unwrap();
        assert!(chain.increments.iter().all(|y| y[0] == 0.0));
        assert_eq!(compose(&chain, 3).unwrap().increments.len(), 1);
    }

    #[test]
    fn build_chain_example() {
        let f = gauss_d1_deg3();
        let (c, e) = build_chain(&f, &[0.0250025], &[0.1], 0.25).unwrap();
        assert_relative_eq!(c.increments[0][0], -0.04375, epsilon = 1e-6);
        assert_relative_eq!(c.increments[1][0], 0.05625, epsilon = 1e-6);
        let e = e.unwrap();
        assert!(e.residual(&c) < 1e-15);
        assert_eq!(e.offsets, vec![vec![-1], vec![1]]);

        let p = product(2, &f);
        let (c, e) = build_chain(&p, &[0.01, 0.01], &[0.1, 0.2], 0.25).unwrap();
        assert_eq!(c.m(), 4);
        let e = e.unwrap();
        assert!(e.offsets.iter().flatten().all(|k| k.abs() == 1));
        assert!(build_chain(&p, &[0.0], &[0.1, 0.1], 0.25).is_err());
    }

    #[test]
    fn admissible_volatility_examples() {
        let f = gauss_d1_deg3();
        let s = admissible_volatility(&f, 0.02, 0.01)[0];
        assert_relative_eq!(s, 10.0 * (-1.0 + 1.0004f64.sqrt()), epsilon = 1e-15);
        assert!(s * s - 2.0 * 10.0 * (-1.0) * s - 2.0 * 0.02 <= 1e-15);

        let pos = CubatureFormula {
            d: 1,
            nodes: vec![vec![0.0], vec![2.0]],
            weights: vec![0.5, 0.5],
            degree: 1,
            lattice_scale: None,
        };
        let s = admissible_volatility(&pos, 0.02, 0.01)[0];
        assert_relative_eq!(s, (2.0f64 * 0.02 * 0.01).sqrt() / 0.1, epsilon = 1e-15);

        assert!(admissible_volatility(&f, 1e-14, 0.01)[0] < 1e-12);

        for (r, h) in [(0.02, 0.01), (0.05, 0.25), (0.1, 1.0 / 32.0)] {
            let s = admissible_volatility(&f, r, h);
            let (c, _) = build_chain(&f, &lognormal_drift(r, &s), &s, h).unwrap();
            assert!(c.min_coord(0).abs() < 1e-10);
            let s2: Vec<f64> = s.iter().map(|v| v * 1.01).collect();
            let (c, _) = build_chain(&f, &lognormal_drift(r, &s2), &s2, h).unwrap();
            assert!(c.min_coord(0) < 0.0);
        }
    }
}
