//! Derivative feature matrices and the linear-independence report.
//!
//! A feature column is the function `x -> x^nu * d^|gamma| h / d eta^gamma`
//! evaluated at sample rows, for one expert's parameters. The polynomial
//! mode at order `r` enumerates `|gamma| <= r` with the monomial budget
//! `|nu| <= 2r - |gamma|`; the monomial mode enumerates `|nu|` in
//! {0, 2, 4} with `|gamma| <= 2 - |nu|/2`.
//!
//! Derivatives are analytic, up to order 2. The enumeration is
//! architecture-aware: labels whose column is structurally redundant
//! would make every family trivially dependent, so they are left out.
//! For two-layer networks, `gamma` ranges over the hidden layer only:
//! output-layer derivatives are affine combinations of the value strand
//! (`d h/d a_j = (h - a0)/a_j` up to constants, `d h/d a0 = 1`), and
//! anything twice through the linear output layer vanishes. The ReLU
//! family additionally has no curvature columns (its second derivative
//! is zero almost everywhere). Hidden-weight derivatives factor as
//! `d h/d w_ju = x_u * d h/d v_j`, so labels are keyed by their total
//! shifted monomial and each distinct function appears once.
//!
//! Affine experts keep their full label set. Their parameter derivatives
//! are plain monomials, so the gating monomial budget reproduces them -
//! the degeneracy this diagnostic exists to expose - and collapsing
//! those collisions would hide it.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, numerical, Result};
use crate::model::{Activation, ExpertParams};
use crate::rng::stream_rng;
use crate::synth::InputDist;

/// Feature enumeration mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// Full-quadratic-gate set at the given order (1 or 2).
    Poly { order: u32 },
    /// Monomial-gate set (fixed budget).
    Mono,
}

/// Column label: expert index, monomial multi-index over inputs, and
/// derivative multi-index over that expert's parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FeatureLabel {
    pub expert: usize,
    pub nu: Vec<u32>,
    pub gamma: Vec<u32>,
}

impl std::fmt::Display for FeatureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "expert {} nu={:?} gamma={:?}",
            self.expert, self.nu, self.gamma
        )
    }
}

/// Sampled feature columns with their labels.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    /// `M x C`: one row per sample, one column per label.
    pub columns: Array2<f64>,
    pub labels: Vec<FeatureLabel>,
}

/// Multi-indices over `d` slots with total degree exactly `total`.
fn multi_indices(d: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if d == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first);
            rec(d - 1, total - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, total, &mut Vec::new(), &mut out);
    out
}

/// First-order derivative indices to enumerate, over the expert's flat
/// parameter layout.
fn first_order_indices(eta: &ExpertParams) -> Vec<usize> {
    match eta {
        ExpertParams::Linear { beta1, .. } => (0..beta1.len() + 1).collect(),
        // Hidden layer only; output-layer derivatives are affine
        // combinations of the value strand.
        ExpertParams::TwoLayer { w, .. } => {
            let m = w.nrows();
            let d = w.ncols();
            (0..m * d + m).collect()
        }
    }
}

/// Structurally independent second-derivative pairs `(k, l)` with
/// `k <= l`: the hidden-block curvature directions. Everything twice
/// through the linear output layer is identically zero, and mixed
/// output-weight derivatives are constant multiples of first-order
/// columns.
fn second_order_pairs(eta: &ExpertParams) -> Vec<(usize, usize)> {
    match eta {
        // Affine in every parameter: no curvature at all.
        ExpertParams::Linear { .. } => Vec::new(),
        ExpertParams::TwoLayer { w, activation, .. } => {
            if *activation == Activation::Relu {
                // Curvature vanishes almost everywhere.
                return Vec::new();
            }
            let m = w.nrows();
            let d = w.ncols();
            let w_idx = |j: usize, u: usize| j * d + u;
            let v_idx = |j: usize| m * d + j;
            let mut pairs = Vec::new();
            for j in 0..m {
                for u in 0..d {
                    for t in u..d {
                        pairs.push((w_idx(j, u), w_idx(j, t)));
                    }
                    pairs.push((w_idx(j, u), v_idx(j)));
                }
                pairs.push((v_idx(j), v_idx(j)));
            }
            pairs.sort_unstable();
            pairs
        }
    }
}

/// Value, gradient, and a second-derivative lookup for one expert at one
/// point.
struct DerivEval {
    value: f64,
    grad: Vec<f64>,
    /// Sparse second derivatives keyed by `(k, l)` with `k <= l`.
    hess: Vec<((usize, usize), f64)>,
}

fn eval_derivs(eta: &ExpertParams, x: &[f64], need_hess: bool) -> DerivEval {
    match eta {
        ExpertParams::Linear { beta1, beta0 } => {
            let d = beta1.len();
            let mut grad = Vec::with_capacity(d + 1);
            grad.extend_from_slice(x);
            grad.push(1.0);
            let value = beta1
                .iter()
                .zip(x)
                .map(|(b, xu)| b * xu)
                .sum::<f64>()
                + beta0;
            DerivEval {
                value,
                grad,
                hess: Vec::new(),
            }
        }
        ExpertParams::TwoLayer {
            w,
            v,
            a,
            a0,
            activation,
        } => {
            let m = w.nrows();
            let d = w.ncols();
            let ws = w.as_slice().expect("contiguous");
            let w_idx = |j: usize, u: usize| j * d + u;
            let v_idx = |j: usize| m * d + j;
            let a_idx = |j: usize| m * d + m + j;
            let q = m * d + 2 * m + 1;

            let mut value = *a0;
            let mut grad = vec![0.0; q];
            grad[q - 1] = 1.0;
            let mut hess = Vec::new();
            for j in 0..m {
                let mut z = v[j];
                for (wu, xu) in ws[j * d..(j + 1) * d].iter().zip(x) {
                    z += wu * xu;
                }
                let t = activation.apply(z);
                let d1 = activation.d1(z);
                value += a[j] * t;
                grad[a_idx(j)] = t;
                grad[v_idx(j)] = a[j] * d1;
                for u in 0..d {
                    grad[w_idx(j, u)] = a[j] * d1 * x[u];
                }
                if need_hess && *activation != Activation::Relu {
                    let d2 = activation.d2(z);
                    for u in 0..d {
                        for tt in u..d {
                            hess.push(((w_idx(j, u), w_idx(j, tt)), a[j] * d2 * x[u] * x[tt]));
                        }
                        hess.push(((w_idx(j, u), v_idx(j)), a[j] * d2 * x[u]));
                    }
                    hess.push(((v_idx(j), v_idx(j)), a[j] * d2));
                }
            }
            DerivEval { value, grad, hess }
        }
    }
}

fn gamma_vec(q: usize, entries: &[usize]) -> Vec<u32> {
    let mut g = vec![0u32; q];
    for &k in entries {
        g[k] += 1;
    }
    g
}

/// Canonical identity of a two-layer column: which functional strand it
/// lives on and the total monomial factor after pulling hidden-weight
/// shifts through `d h/d w_ju = x_u * d h/d v_j`.
#[derive(Clone, PartialEq, Eq, Hash)]
enum ColumnKey {
    /// `x^mu * h`
    Value(Vec<u32>),
    /// `x^mu * act(z_j)`
    OutputWeight(usize, Vec<u32>),
    /// `x^mu * a_j act'(z_j)`
    HiddenSlope(usize, Vec<u32>),
    /// `x^mu * a_j act''(z_j)`
    HiddenCurvature(usize, Vec<u32>),
}

fn two_layer_key(eta: &ExpertParams, gamma: &[u32], nu: &[u32]) -> ColumnKey {
    let (m, d) = match eta {
        ExpertParams::TwoLayer { w, .. } => (w.nrows(), w.ncols()),
        _ => unreachable!("two-layer keys only"),
    };
    let mut mu = nu.to_vec();
    let mut unit = 0usize;
    let mut curvature = 0u32;
    let mut output = false;
    for (k, &count) in gamma.iter().enumerate() {
        for _ in 0..count {
            if k < m * d {
                mu[k % d] += 1;
                unit = k / d;
                curvature += 1;
            } else if k < m * d + m {
                unit = k - m * d;
                curvature += 1;
            } else {
                unit = k - m * d - m;
                output = true;
            }
        }
    }
    if output {
        return ColumnKey::OutputWeight(unit, mu);
    }
    match curvature {
        0 => ColumnKey::Value(mu),
        1 => ColumnKey::HiddenSlope(unit, mu),
        _ => ColumnKey::HiddenCurvature(unit, mu),
    }
}

/// Enumerate the `(gamma, nu)` labels for one expert.
fn enumerate_labels(
    expert: usize,
    eta: &ExpertParams,
    d: usize,
    mode: FeatureMode,
) -> Result<Vec<FeatureLabel>> {
    let q = eta.param_count();
    // (gamma multi-index, gamma order) in enumeration order.
    let mut gammas: Vec<(Vec<u32>, u32)> = vec![(vec![0; q], 0)];
    let max_gamma = match mode {
        FeatureMode::Poly { order } => {
            if order == 0 {
                return Err(invalid("feature order must be at least 1"));
            }
            if order > 2 {
                return Err(invalid(format!(
                    "feature order {order} unsupported: analytic expert derivatives stop at order 2"
                )));
            }
            order
        }
        FeatureMode::Mono => 2,
    };
    if max_gamma >= 1 {
        for k in first_order_indices(eta) {
            gammas.push((gamma_vec(q, &[k]), 1));
        }
    }
    if max_gamma >= 2 {
        for (k, l) in second_order_pairs(eta) {
            gammas.push((gamma_vec(q, &[k, l]), 2));
        }
    }

    let two_layer = matches!(eta, ExpertParams::TwoLayer { .. });
    let mut seen: std::collections::HashSet<ColumnKey> = std::collections::HashSet::new();
    let mut labels = Vec::new();
    for (gamma, gorder) in gammas {
        let nu_degrees: Vec<u32> = match mode {
            FeatureMode::Poly { order } => (0..=(2 * order).saturating_sub(gorder)).collect(),
            FeatureMode::Mono => [0u32, 2, 4]
                .into_iter()
                .filter(|nu| gorder <= 2 - nu / 2)
                .collect(),
        };
        for degree in nu_degrees {
            for nu in multi_indices(d, degree) {
                if two_layer && !seen.insert(two_layer_key(eta, &gamma, &nu)) {
                    continue;
                }
                labels.push(FeatureLabel {
                    expert,
                    nu,
                    gamma: gamma.clone(),
                });
            }
        }
    }
    Ok(labels)
}

/// Build the feature matrix for a set of experts at the given sample
/// rows.
pub fn derivative_features(
    params: &[ExpertParams],
    x: &ArrayView2<f64>,
    mode: FeatureMode,
) -> Result<FeatureMatrix> {
    if params.is_empty() {
        return Err(invalid("need at least one expert"));
    }
    let d = x.ncols();
    let rows = x.nrows();
    if rows == 0 {
        return Err(invalid("need at least one sample row"));
    }
    for (j, eta) in params.iter().enumerate() {
        if eta.input_dim() != d {
            return Err(invalid(format!(
                "expert {j} expects dimension {}, samples have {d}",
                eta.input_dim()
            )));
        }
        if !eta.same_shape(&params[0]) {
            return Err(invalid(format!("expert {j} architecture differs")));
        }
    }

    let mut labels = Vec::new();
    for (j, eta) in params.iter().enumerate() {
        labels.extend(enumerate_labels(j, eta, d, mode)?);
    }
    let need_hess = labels.iter().any(|l| l.gamma.iter().sum::<u32>() == 2);

    let mut columns = Array2::zeros((rows, labels.len()));
    let mut xrow = vec![0.0; d];
    for s in 0..rows {
        for (u, value) in xrow.iter_mut().enumerate() {
            *value = x[[s, u]];
        }
        let evals: Vec<DerivEval> = params
            .iter()
            .map(|eta| eval_derivs(eta, &xrow, need_hess))
            .collect();
        for (col, label) in labels.iter().enumerate() {
            let eval = &evals[label.expert];
            let gorder: u32 = label.gamma.iter().sum();
            let deriv = match gorder {
                0 => eval.value,
                1 => {
                    let k = label.gamma.iter().position(|&g| g > 0).expect("order 1");
                    eval.grad[k]
                }
                2 => {
                    let mut idx = label.gamma.iter().enumerate().filter(|(_, &g)| g > 0);
                    let (k, &gk) = idx.next().expect("order 2");
                    let pair = if gk == 2 {
                        (k, k)
                    } else {
                        let (l, _) = idx.next().expect("order 2 pair");
                        (k, l)
                    };
                    eval.hess
                        .iter()
                        .find(|(p, _)| *p == pair)
                        .map(|(_, v)| *v)
                        .unwrap_or(0.0)
                }
                _ => unreachable!("orders above 2 rejected during enumeration"),
            };
            let mut monomial = 1.0;
            for (u, &power) in label.nu.iter().enumerate() {
                for _ in 0..power {
                    monomial *= xrow[u];
                }
            }
            columns[[s, col]] = monomial * deriv;
        }
    }
    Ok(FeatureMatrix { columns, labels })
}

/// Draw sample rows for feature evaluation. For ReLU experts, rows that
/// land within `1e-6` of a hidden-unit kink are redrawn so every
/// derivative exists at every sample.
pub fn draw_feature_points(
    params: &[ExpertParams],
    dist: InputDist,
    m: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(invalid("need at least one sample row"));
    }
    let d = params
        .first()
        .map(|p| p.input_dim())
        .ok_or_else(|| invalid("need at least one expert"))?;
    let mut rng = stream_rng(seed, "feature-points");
    let mut out = Array2::zeros((m, d));
    let mut row = vec![0.0; d];
    for s in 0..m {
        let mut attempts = 0;
        loop {
            for value in row.iter_mut() {
                *value = match dist {
                    InputDist::UniformCube { b } => rng.random::<f64>() * 2.0 * b - b,
                    InputDist::Gaussian => {
                        use rand_distr::Distribution;
                        rand_distr::StandardNormal.sample(&mut rng)
                    }
                };
            }
            let near_kink = params.iter().any(|eta| match eta {
                ExpertParams::TwoLayer {
                    w,
                    v,
                    activation: Activation::Relu,
                    ..
                } => (0..w.nrows()).any(|j| {
                    let z: f64 = w
                        .row(j)
                        .iter()
                        .zip(&row)
                        .map(|(wu, xu)| wu * xu)
                        .sum::<f64>()
                        + v[j];
                    z.abs() < 1e-6
                }),
                _ => false,
            });
            if !near_kink {
                break;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(numerical("could not sample away from ReLU kinks"));
            }
        }
        for (u, &value) in row.iter().enumerate() {
            out[[s, u]] = value;
        }
    }
    Ok(out)
}

/// Independence verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Independent,
    Dependent,
}

/// Outcome of the sampled linear-independence test.
#[derive(Clone, Debug, Serialize)]
pub struct IdentReport {
    /// Smallest singular value after unit-RMS column normalization.
    pub min_singular_value: f64,
    /// Singular values at or above the threshold.
    pub rank: usize,
    pub verdict: Verdict,
    /// Most collinear column pair, present for dependent verdicts.
    pub witness: Option<(FeatureLabel, FeatureLabel)>,
}

/// Normalize columns to unit root-mean-square, compute the smallest
/// singular value, and report dependence against threshold `tau`. The
/// witness is the column pair with the highest absolute correlation
/// (an all-zero column is its own witness).
pub fn strong_ident_report(features: &FeatureMatrix, tau: f64) -> Result<IdentReport> {
    if !(tau > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    let (rows, cols) = features.columns.dim();
    if cols == 0 {
        return Err(invalid("feature matrix has no columns"));
    }
    if rows < 2 * cols {
        return Err(invalid(format!(
            "need at least {} rows for {cols} columns, got {rows}",
            2 * cols
        )));
    }

    let mut normalized = features.columns.clone();
    let mut zero_column = None;
    for (c, mut col) in normalized.columns_mut().into_iter().enumerate() {
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / rows as f64).sqrt();
        if rms == 0.0 {
            zero_column = zero_column.or(Some(c));
        } else {
            col.iter_mut().for_each(|v| *v /= rms);
        }
    }

    let mat = nalgebra::DMatrix::from_fn(rows, cols, |i, j| normalized[[i, j]]);
    let svd = nalgebra::linalg::SVD::try_new(mat, false, false, f64::EPSILON, 100_000)
        .ok_or_else(|| numerical("singular value decomposition did not converge"))?;
    let mut min_singular_value = f64::INFINITY;
    let mut rank = 0;
    for &s in svd.singular_values.iter() {
        min_singular_value = min_singular_value.min(s);
        if s >= tau {
            rank += 1;
        }
    }
    if let Some(zc) = zero_column {
        return Ok(IdentReport {
            min_singular_value: 0.0,
            rank,
            verdict: Verdict::Dependent,
            witness: Some((features.labels[zc].clone(), features.labels[zc].clone())),
        });
    }

    let verdict = if min_singular_value < tau {
        Verdict::Dependent
    } else {
        Verdict::Independent
    };
    let witness = if verdict == Verdict::Dependent {
        // Highest absolute correlation over normalized columns, capped at
        // one so exactly collinear pairs tie and the first in scan order
        // wins.
        let mut best = (0usize, 1usize);
        let mut best_corr = -1.0;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let dot: f64 = normalized
                    .column(i)
                    .iter()
                    .zip(normalized.column(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let corr = (dot.abs() / rows as f64).min(1.0);
                if corr > best_corr {
                    best_corr = corr;
                    best = (i, j);
                }
            }
        }
        Some((
            features.labels[best.0].clone(),
            features.labels[best.1].clone(),
        ))
    } else {
        None
    };
    Ok(IdentReport {
        min_singular_value,
        rank,
        verdict,
        witness,
    })
}
