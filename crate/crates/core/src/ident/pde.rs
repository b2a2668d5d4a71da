//! Numerical checks of the gating-parameter interaction identities for
//! `F(x; a, b, eta) = exp(x'a x + b'x) h(x, eta)`.
//!
//! The quadratic coefficient and the linear coefficient interact: the
//! first derivative in an `a` entry equals the corresponding second
//! derivative in `b`. For linear experts there is a further interaction
//! tying the mixed `(b, intercept)` second derivative to the slope
//! gradient. Each residual compares the analytic side against central
//! finite differences; residuals shrink as `O(h^2)` in the step.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, numerical, Result};
use crate::model::ExpertParams;

fn exp_quad_lin(x: &ArrayView1<f64>, a: &ArrayView2<f64>, b: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (u, xu) in x.iter().enumerate() {
        s += b[u] * xu;
        for (v, xv) in x.iter().enumerate() {
            s += xu * a[[u, v]] * xv;
        }
    }
    let e = s.exp();
    if !e.is_finite() {
        return Err(numerical(format!("exp overflow at score {s}")));
    }
    Ok(e)
}

fn gated_expert(
    x: &ArrayView1<f64>,
    a: &ArrayView2<f64>,
    b: &[f64],
    eta: &ExpertParams,
) -> Result<f64> {
    Ok(exp_quad_lin(x, a, b)? * crate::model::expert_eval(x, eta)?)
}

fn check_dims(x: &ArrayView1<f64>, a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<usize> {
    let d = x.len();
    if a.dim() != (d, d) || b.len() != d {
        return Err(invalid("inconsistent gating shapes"));
    }
    Ok(d)
}

/// Residual matrix of the quadratic/linear gating interaction at one
/// point: entry `(u, v)` is the analytic `dF/da_uv = x_u x_v F` minus
/// the central finite-difference estimate of `d2F/db_u db_v`.
pub fn gating_interaction_residual_with_step(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    eta: &ExpertParams,
    x: &ArrayView1<f64>,
    h: f64,
) -> Result<Array2<f64>> {
    let d = check_dims(x, a, b)?;
    if !(h > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let b0: Vec<f64> = b.to_vec();
    let f_at = |bp: &[f64]| gated_expert(x, a, bp, eta);
    let f_center = f_at(&b0)?;

    let mut residual = Array2::zeros((d, d));
    let mut bp = b0.clone();
    for u in 0..d {
        for v in 0..d {
            let analytic = x[u] * x[v] * f_center;
            let second = if u == v {
                bp[u] = b0[u] + h;
                let plus = f_at(&bp)?;
                bp[u] = b0[u] - h;
                let minus = f_at(&bp)?;
                bp[u] = b0[u];
                (plus - 2.0 * f_center + minus) / (h * h)
            } else {
                bp[u] = b0[u] + h;
                bp[v] = b0[v] + h;
                let pp = f_at(&bp)?;
                bp[v] = b0[v] - h;
                let pm = f_at(&bp)?;
                bp[u] = b0[u] - h;
                bp[v] = b0[v] + h;
                let mp = f_at(&bp)?;
                bp[v] = b0[v] - h;
                let mm = f_at(&bp)?;
                bp[u] = b0[u];
                bp[v] = b0[v];
                (pp - pm - mp + mm) / (4.0 * h * h)
            };
            residual[[u, v]] = analytic - second;
        }
    }
    Ok(residual)
}

/// [`gating_interaction_residual_with_step`] at the default step `1e-4`.
pub fn gating_interaction_residual(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    eta: &ExpertParams,
    x: &ArrayView1<f64>,
) -> Result<Array2<f64>> {
    gating_interaction_residual_with_step(a, b, eta, x, 1e-4)
}

/// Residual vector of the linear-expert interaction at one point: entry
/// `u` is the central finite-difference estimate of the mixed
/// `d2F/db_u d(intercept)` minus the analytic slope derivative
/// `dF/d(slope_u) = x_u exp(x'a x + b'x)`.
pub fn linear_expert_interaction_residual_with_step(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    beta1: &ArrayView1<f64>,
    beta0: f64,
    x: &ArrayView1<f64>,
    h: f64,
) -> Result<Array1<f64>> {
    let d = check_dims(x, a, b)?;
    if beta1.len() != d {
        return Err(invalid("slope length differs from input dimension"));
    }
    if !(h > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let b0: Vec<f64> = b.to_vec();
    let f_at = |bp: &[f64], intercept: f64| -> Result<f64> {
        let eta = ExpertParams::Linear {
            beta1: beta1.to_owned(),
            beta0: intercept,
        };
        gated_expert(x, a, bp, &eta)
    };

    let gate = exp_quad_lin(x, a, &b0)?;
    let mut residual = Array1::zeros(d);
    let mut bp = b0.clone();
    for u in 0..d {
        bp[u] = b0[u] + h;
        let pp = f_at(&bp, beta0 + h)?;
        let pm = f_at(&bp, beta0 - h)?;
        bp[u] = b0[u] - h;
        let mp = f_at(&bp, beta0 + h)?;
        let mm = f_at(&bp, beta0 - h)?;
        bp[u] = b0[u];
        let mixed = (pp - pm - mp + mm) / (4.0 * h * h);
        residual[u] = mixed - x[u] * gate;
    }
    Ok(residual)
}

/// [`linear_expert_interaction_residual_with_step`] at the default step
/// `1e-4`.
pub fn linear_expert_interaction_residual(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    beta1: &ArrayView1<f64>,
    beta0: f64,
    x: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    linear_expert_interaction_residual_with_step(a, b, beta1, beta0, x, 1e-4)
}
