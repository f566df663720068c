//! Compensated accumulation and order-fixed reductions.
//!
//! Everything here is deterministic: the result of a reduction depends only on
//! the input slice, never on how the slice was produced or how many workers
//! produced it.

/// Kahan compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Element-wise Kahan accumulator for vectors and row-major matrices.
#[derive(Debug, Clone)]
pub struct KahanBuf {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanBuf {
    pub fn zeros(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    #[inline]
    pub fn add_scaled(&mut self, values: &[f64], scale: f64) {
        debug_assert_eq!(values.len(), self.sum.len());
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let y = v * scale - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
    }

    #[inline]
    pub fn add(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.sum.len());
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let y = v - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.sum
    }

    pub fn into_values(self) -> Vec<f64> {
        self.sum
    }
}

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation with a fixed split rule: the tree shape is a
/// function of `values.len()` alone.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(x)` over `values`, same tree as [`pairwise_sum`].
pub fn pairwise_sum_by<F: Fn(f64) -> f64 + Copy>(values: &[f64], f: F) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &v in values {
            acc += f(v);
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum_by(&values[..mid], f) + pairwise_sum_by(&values[mid..], f)
}

/// Sample mean and standard error (sample standard deviation / sqrt(n)),
/// computed with two pairwise passes.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(samples) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = pairwise_sum_by(samples, |x| (x - mean) * (x - mean));
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_small_increments() {
        let mut k = Kahan::new();
        let mut naive = 0.0f64;
        k.add(1.0);
        naive += 1.0;
        for _ in 0..1_000_000 {
            k.add(1e-16);
            naive += 1e-16;
        }
        assert_eq!(naive, 1.0);
        assert!((k.value() - (1.0 + 1e-10)).abs() < 1e-15);
    }

    #[test]
    fn pairwise_matches_exact_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn constant_samples_have_zero_stderr() {
        let v = vec![1.0; 1234];
        let (m, se) = mean_stderr(&v);
        assert_eq!(m, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn stderr_matches_textbook_formula() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_stderr(&v);
        assert_eq!(m, 2.5);
        // sample variance 5/3
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
