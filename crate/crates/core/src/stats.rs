//! Quadrature and Monte Carlo summary helpers.

use crate::model::TimeGrid;

/// Trapezoid rule over the nodes of `grid` for nodal values `f(k)`.
pub fn trapezoid(grid: &TimeGrid, f: impl Fn(usize) -> f64) -> f64 {
    let n = grid.steps();
    let inner: f64 = (1..n).map(&f).sum();
    grid.step() * (0.5 * (f(0) + f(n)) + inner)
}

/// Sample mean with its standard error. `stderr` is `None` for fewer than
/// two samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
}

impl Estimate {
    /// Standard error, treating an undefined one as zero.
    pub fn se(&self) -> f64 {
        self.stderr.unwrap_or(0.0)
    }

    /// Distance from `reference` in standard errors. Infinite when the
    /// standard error is zero and the mean differs.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.mean - reference).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se()
        }
    }

    /// True when the mean is within `k` standard errors of `reference`, or
    /// equal to it up to rounding.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        let diff = (self.mean - reference).abs();
        diff <= k * self.se() || diff <= 1e-12 * (1.0 + reference.abs() + self.mean.abs())
    }
}

/// Mean and standard error of `values`, summed in slice order.
pub fn estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            stderr: None,
            samples: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Estimate {
        mean,
        stderr,
        samples: n,
    }
}

/// Standard error of a difference of two independent estimates.
pub fn pooled_se(a: &Estimate, b: &Estimate) -> f64 {
    (a.se().powi(2) + b.se().powi(2)).sqrt()
}
