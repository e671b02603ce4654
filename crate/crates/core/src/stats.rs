//! Streaming moments with deterministic merging.

use serde::{Deserialize, Serialize};

/// Running mean and sum of squared deviations (Welford / Chan).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn from_chunks<'a>(chunks: impl IntoIterator<Item = &'a Moments>) -> Moments {
        let mut m = Moments::default();
        for c in chunks {
            m.merge(c);
        }
        m
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// A Monte Carlo estimate with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
    /// Deterministic bias bound (quadrature, truncated horizon), 0 when exact.
    #[serde(default)]
    pub bias_bound: f64,
}

impl MCEstimate {
    pub fn from_moments(m: &Moments, seed: u64) -> Self {
        MCEstimate {
            value: m.mean,
            std_error: m.std_error(),
            samples: m.n,
            seed,
            bias_bound: 0.0,
        }
    }

    pub fn exact(value: f64, seed: u64) -> Self {
        MCEstimate { value, std_error: 0.0, samples: 0, seed, bias_bound: 0.0 }
    }

    /// `|value - target|` in units of standard error (infinite for a
    /// zero-variance mismatch).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            d / self.std_error
        }
    }

    /// True if `target` lies within `k` standard errors plus the bias bound.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + self.bias_bound
    }
}

/// Weighted least-squares line `y = a + b x`; returns `(b, se_b)` where the
/// standard error propagates the per-point `y` standard errors.
pub fn regression_slope(x: &[f64], y: &[f64], y_se: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let slope = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / sxx;
    let var: f64 = x
        .iter()
        .zip(y_se)
        .map(|(a, s)| ((a - xm) / sxx).powi(2) * s * s)
        .sum();
    (slope, var.sqrt())
}

/// Empirical quantile with linear interpolation; sorts a copy.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let whole: Moments = xs.iter().copied().collect();
        let parts: Vec<Moments> = xs.chunks(77).map(|c| c.iter().copied().collect()).collect();
        let merged = Moments::from_chunks(&parts);
        assert_eq!(merged.n, whole.n);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.variance() - whole.variance()).abs() < 1e-9);
    }

    #[test]
    fn slope_of_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (b, se) = regression_slope(&x, &y, &[0.1; 4]);
        assert!((b + 0.5).abs() < 1e-12);
        // var = sum c_i^2 * 0.01 with c_i = (x_i - 1.5)/5
        assert!((se - (0.01f64 * 5.0 / 25.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.95), 9.5);
    }
}
