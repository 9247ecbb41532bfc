//! Small numerical helpers shared by the pricing and verification code.

/// Neumaier-compensated accumulator.
///
/// Summation order is whatever order values are pushed in; callers fix the
/// order to keep results bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// Compensated sum of an iterator, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.value()
}

/// Compensated dot product `Σ wᵢ·vᵢ`.
pub fn compensated_dot(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    compensated_sum(weights.iter().zip(values).map(|(w, v)| w * v))
}

/// Returns `n` if `x` is within `rel_tol` of the integer `n`, otherwise `None`.
pub fn as_integer(x: f64, rel_tol: f64) -> Option<i64> {
    let n = x.round();
    if (x - n).abs() <= rel_tol * x.abs().max(1.0) {
        Some(n as i64)
    } else {
        None
    }
}

/// Number of base steps contained in the horizon `t`, if `t ∈ hℕ₀`.
pub fn steps_in(t: f64, h: f64) -> Option<usize> {
    if !(t.is_finite() && h > 0.0) || t < 0.0 {
        return None;
    }
    as_integer(t / h, 1e-9).and_then(|n| usize::try_from(n).ok())
}

/// Double factorial `(n-1)!!` for even `n`, i.e. the `n`-th moment of the
/// standard normal distribution. Odd moments are zero.
pub fn gaussian_moment(n: u32) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut k = n as i64 - 1;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Ordered parallel map over `0..n`; the output order never depends on the
/// schedule.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().with_min_len(256).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
