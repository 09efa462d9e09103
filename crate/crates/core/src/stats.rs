//! Small statistics helpers shared by the estimators and tests.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl FunctionalEstimate {
    pub fn new(value: f64, std_error: f64, n_samples: usize) -> Self {
        Self {
            value,
            std_error,
            n_samples,
        }
    }

    /// True when `|value - target| <= k * std_error + slack`.
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + slack
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &FunctionalEstimate) -> FunctionalEstimate {
        FunctionalEstimate::new(
            self.value - other.value,
            self.std_error.hypot(other.std_error),
            self.n_samples.min(other.n_samples),
        )
    }

    pub fn scaled(&self, c: f64) -> FunctionalEstimate {
        FunctionalEstimate::new(self.value * c, self.std_error * c.abs(), self.n_samples)
    }
}

/// Running mean, variance (Welford) and range, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub n: usize,
    pub mean: f64,
    m2: f64,
    pub min: f64,
    pub max: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.n += other.n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> FunctionalEstimate {
        FunctionalEstimate::new(self.mean, self.std_error(), self.n)
    }
}

/// Mean and standard error of a slice.
pub fn mean_se(xs: &[f64]) -> FunctionalEstimate {
    let mut acc = MeanAcc::default();
    xs.iter().for_each(|&x| acc.push(x));
    acc.estimate()
}

/// Jackknife estimate from full-sample value and leave-one-group-out values.
pub fn jackknife(full: f64, leave_out: &[f64], n_samples: usize) -> FunctionalEstimate {
    let g = leave_out.len();
    if g < 2 {
        return FunctionalEstimate::new(full, f64::INFINITY, n_samples);
    }
    let gm = leave_out.iter().sum::<f64>() / g as f64;
    let var = leave_out.iter().map(|x| (x - gm).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64;
    FunctionalEstimate::new(full, var.sqrt(), n_samples)
}

/// Ordinary least squares slope and intercept with the slope standard error.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, intercept, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 * 0.3 - 1.0).collect();
        let mut all = MeanAcc::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = MeanAcc::default();
        let mut b = MeanAcc::default();
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn ols_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, i, se) = ols(&xs, &ys);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && se < 1e-12);
    }
}
