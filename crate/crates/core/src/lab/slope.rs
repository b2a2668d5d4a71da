//! Ordinary least squares on log-log axes, for empirical convergence
//! rates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Fitted log-log line. `stderr` is the standard error of the slope; it
/// is zero for exact fits and for two-point fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// OLS of `log10(value)` on `log10(n)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(invalid("need at least two points"));
    }
    for (i, &(n, v)) in points.iter().enumerate() {
        if !(n > 0.0) || !(v > 0.0) || !n.is_finite() || !v.is_finite() {
            return Err(invalid(format!(
                "point {i} ({n}, {v}) is not strictly positive"
            )));
        }
    }
    let k = points.len() as f64;
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, v)| (n.log10(), v.log10()))
        .collect();
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(invalid("all points share one sample size"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let stderr = if points.len() > 2 {
        let sse: f64 = logs
            .iter()
            .map(|&(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        (sse / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
    })
}
