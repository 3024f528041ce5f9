//! Least-squares line fits and the model comparisons used by experiments.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Residual sum of squares.
    pub rss: f64,
    pub points: usize,
}

/// Relative spread below which data counts as constant.
const FLAT_TOL: f64 = 1e-12;

/// Ordinary least squares `y = intercept + slope * x`.
///
/// When `y` is constant to `1e-12` relative, the line reproduces it exactly
/// and `r2` is reported as 1 with a zero slope.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let spread = y.iter().map(|v| (v - my).abs()).fold(0.0, f64::max);
    if spread <= FLAT_TOL * my.abs().max(f64::MIN_POSITIVE) {
        return LineFit { slope: 0.0, intercept: my, r2: 1.0, rss: 0.0, points: x.len() };
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    LineFit { slope, intercept, r2, rss, points: x.len() }
}

/// Gaussian-likelihood AIC for a two-parameter least-squares fit.
pub fn aic(fit: &LineFit) -> f64 {
    let n = fit.points as f64;
    let rss = fit.rss.max(1e-300);
    n * (rss / n).ln() + 4.0
}
