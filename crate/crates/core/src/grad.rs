//! Exact analytic gradients of the least-squares objective, a central
//! finite-difference oracle, and a checking harness.
//!
//! The objective is the *mean* of squared residuals, so learning rates
//! are scale-free in the sample size. Per-sample contributions are
//! accumulated in fixed chunks of [`GRAD_CHUNK`] samples and the chunk
//! partials are folded in index order, so results are bit-stable no
//! matter how the chunks are computed.
//!
//! Flattening order, which is part of the reporting contract: atoms in
//! sequence order; within an atom the quadratic coefficient row-major,
//! then the linear coefficient, then the log-weight, then the expert
//! parameters in declared field order (`beta1`, `beta0` for linear
//! experts; `w` row-major, `v`, `a`, `a0` for two-layer experts).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::model::{Activation, ExpertParams, MixingMeasure};
use crate::synth::Dataset;

/// Fixed chunk size for deterministic gradient reduction.
pub const GRAD_CHUNK: usize = 1024;

/// Gradient with respect to one expert's parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ExpertGrad {
    Linear {
        beta1: Array1<f64>,
        beta0: f64,
    },
    TwoLayer {
        w: Array2<f64>,
        v: Array1<f64>,
        a: Array1<f64>,
        a0: f64,
    },
}

/// Gradient with respect to one atom, mirroring its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomGrad {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: f64,
    pub eta: ExpertGrad,
}

/// Gradient of the objective with respect to every measure parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub atoms: Vec<AtomGrad>,
}

impl GradientRecord {
    /// Flatten in the documented coordinate order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for atom in &self.atoms {
            out.extend(atom.a.iter());
            out.extend(atom.b.iter());
            out.push(atom.c);
            match &atom.eta {
                ExpertGrad::Linear { beta1, beta0 } => {
                    out.extend(beta1.iter());
                    out.push(*beta0);
                }
                ExpertGrad::TwoLayer { w, v, a, a0 } => {
                    out.extend(w.iter());
                    out.extend(v.iter());
                    out.extend(a.iter());
                    out.push(*a0);
                }
            }
        }
        out
    }
}

/// Scalar parameters per atom in flattening order.
fn atom_stride(measure: &MixingMeasure) -> usize {
    let d = measure.d;
    d * d + d + 1 + measure.atoms[0].eta.param_count()
}

/// Total scalar parameter count of a measure.
pub fn param_count(measure: &MixingMeasure) -> usize {
    atom_stride(measure) * measure.atoms.len()
}

/// Flatten measure parameters in the documented coordinate order.
pub fn flatten_params(measure: &MixingMeasure) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(measure));
    for atom in &measure.atoms {
        out.extend(atom.a.iter());
        out.extend(atom.b.iter());
        out.push(atom.c);
        match &atom.eta {
            ExpertParams::Linear { beta1, beta0 } => {
                out.extend(beta1.iter());
                out.push(*beta0);
            }
            ExpertParams::TwoLayer { w, v, a, a0, .. } => {
                out.extend(w.iter());
                out.extend(v.iter());
                out.extend(a.iter());
                out.push(*a0);
            }
        }
    }
    out
}

/// Rebuild a measure from a flat parameter vector laid out like
/// [`flatten_params`]. No invariant validation is performed: the finite
/// difference oracle perturbs masked coordinates too (they do not affect
/// the forward pass).
pub fn measure_with_params(template: &MixingMeasure, flat: &[f64]) -> MixingMeasure {
    assert_eq!(flat.len(), param_count(template), "parameter count mismatch");
    let mut measure = template.clone();
    let mut k = 0;
    for atom in &mut measure.atoms {
        for entry in atom.a.iter_mut() {
            *entry = flat[k];
            k += 1;
        }
        for entry in atom.b.iter_mut() {
            *entry = flat[k];
            k += 1;
        }
        atom.c = flat[k];
        k += 1;
        match &mut atom.eta {
            ExpertParams::Linear { beta1, beta0 } => {
                for entry in beta1.iter_mut() {
                    *entry = flat[k];
                    k += 1;
                }
                *beta0 = flat[k];
                k += 1;
            }
            ExpertParams::TwoLayer { w, v, a, a0, .. } => {
                for entry in w.iter_mut() {
                    *entry = flat[k];
                    k += 1;
                }
                for entry in v.iter_mut() {
                    *entry = flat[k];
                    k += 1;
                }
                for entry in a.iter_mut() {
                    *entry = flat[k];
                    k += 1;
                }
                *a0 = flat[k];
                k += 1;
            }
        }
    }
    measure
}

fn unflatten_grad(measure: &MixingMeasure, flat: &[f64]) -> GradientRecord {
    let d = measure.d;
    let mut atoms = Vec::with_capacity(measure.atoms.len());
    let mut k = 0;
    for atom in &measure.atoms {
        let a = Array2::from_shape_vec((d, d), flat[k..k + d * d].to_vec()).expect("shape");
        k += d * d;
        let b = Array1::from_vec(flat[k..k + d].to_vec());
        k += d;
        let c = flat[k];
        k += 1;
        let eta = match &atom.eta {
            ExpertParams::Linear { beta1, .. } => {
                let q = beta1.len();
                let g = ExpertGrad::Linear {
                    beta1: Array1::from_vec(flat[k..k + q].to_vec()),
                    beta0: flat[k + q],
                };
                k += q + 1;
                g
            }
            ExpertParams::TwoLayer { w, v, a, .. } => {
                let (m, dc) = w.dim();
                let gw =
                    Array2::from_shape_vec((m, dc), flat[k..k + m * dc].to_vec()).expect("shape");
                k += m * dc;
                let gv = Array1::from_vec(flat[k..k + v.len()].to_vec());
                k += v.len();
                let ga = Array1::from_vec(flat[k..k + a.len()].to_vec());
                k += a.len();
                let ga0 = flat[k];
                k += 1;
                ExpertGrad::TwoLayer {
                    w: gw,
                    v: gv,
                    a: ga,
                    a0: ga0,
                }
            }
        };
        atoms.push(AtomGrad { a, b, c, eta });
    }
    GradientRecord { atoms }
}

/// Reusable per-sample buffers for the fitting hot loop.
struct Scratch {
    scores: Vec<f64>,
    probs: Vec<f64>,
    hvals: Vec<f64>,
    /// Hidden pre-activations, one block of `m` per atom.
    zs: Vec<f64>,
}

impl Scratch {
    fn new(measure: &MixingMeasure) -> Self {
        let n_atoms = measure.atoms.len();
        let m = measure.atoms[0].eta.hidden_units();
        Scratch {
            scores: vec![0.0; n_atoms],
            probs: vec![0.0; n_atoms],
            hvals: vec![0.0; n_atoms],
            zs: vec![0.0; n_atoms * m],
        }
    }
}

/// Forward pass at one sample, filling the scratch buffers. Returns the
/// mixture output.
fn sample_forward(measure: &MixingMeasure, x: &[f64], scratch: &mut Scratch) -> f64 {
    let n = measure.atoms.len();
    for i in 0..n {
        scratch.scores[i] = crate::model::atom_score(x, measure, i);
    }
    // Stable softmax with optional top-K masking, mirroring `gate_probs`.
    let retained_count = measure.gate.top_k.unwrap_or(n).min(n);
    if retained_count < n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            scratch.scores[j]
                .partial_cmp(&scratch.scores[i])
                .expect("finite scores")
                .then(i.cmp(&j))
        });
        scratch.probs.iter_mut().for_each(|p| *p = 0.0);
        let retained = &order[..retained_count];
        let max = retained
            .iter()
            .map(|&i| scratch.scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &i in retained {
            let e = (scratch.scores[i] - max).exp();
            scratch.probs[i] = e;
            sum += e;
        }
        for &i in retained {
            scratch.probs[i] /= sum;
        }
    } else {
        let max = scratch.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..n {
            let e = (scratch.scores[i] - max).exp();
            scratch.probs[i] = e;
            sum += e;
        }
        for p in scratch.probs.iter_mut() {
            *p /= sum;
        }
    }

    // Expert evaluation mirrors `expert_eval_slice` operation for
    // operation, so datasets generated through the public forward pass
    // have exactly zero residuals here.
    let mut f = 0.0;
    for (i, atom) in measure.atoms.iter().enumerate() {
        if scratch.probs[i] == 0.0 {
            scratch.hvals[i] = 0.0;
            continue;
        }
        let h = match &atom.eta {
            ExpertParams::Linear { beta1, beta0 } => {
                crate::model::forward_dot(beta1.as_slice().expect("contiguous"), x) + beta0
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
                let mut acc = *a0;
                for j in 0..m {
                    let z = crate::model::forward_dot(&ws[j * d..(j + 1) * d], x) + v[j];
                    scratch.zs[i * m + j] = z;
                    acc += a[j] * activation.apply(z);
                }
                acc
            }
        };
        scratch.hvals[i] = h;
        f += scratch.probs[i] * h;
    }
    f
}

fn check_data(measure: &MixingMeasure, data: &Dataset) -> Result<()> {
    if data.n() == 0 {
        return Err(invalid("empty dataset"));
    }
    if data.d() != measure.d {
        return Err(invalid(format!(
            "dataset dimension {} differs from measure dimension {}",
            data.d(),
            measure.d
        )));
    }
    Ok(())
}

/// Mean squared residual of the mixture on a dataset.
pub fn sq_loss(measure: &MixingMeasure, data: &Dataset) -> Result<f64> {
    check_data(measure, data)?;
    let mut scratch = Scratch::new(measure);
    let xs = data.x.as_slice().expect("contiguous");
    let d = data.d();
    let n = data.n();
    let mut total = 0.0;
    for chunk_start in (0..n).step_by(GRAD_CHUNK) {
        let chunk_end = (chunk_start + GRAD_CHUNK).min(n);
        let mut partial = 0.0;
        for i in chunk_start..chunk_end {
            let f = sample_forward(measure, &xs[i * d..(i + 1) * d], &mut scratch);
            let e = data.y[i] - f;
            partial += e * e;
        }
        total += partial;
    }
    Ok(total / n as f64)
}

/// Loss and its exact gradient in one pass.
///
/// Per-sample chain with gate probabilities `g`, expert outputs `h`,
/// mixture output `f`, and residual `e = y - f`:
/// `df/dc_i = g_i (h_i - f)`, `df/db_i = g_i (h_i - f) x`,
/// `df/dA_i = g_i (h_i - f) x x'`, `df/deta_i = g_i dh/deta`.
/// Blocks masked by the gate kind (the linear coefficient under the
/// monomial gate, the quadratic coefficient under the linear gate) stay
/// exactly zero.
pub fn sq_loss_and_grad(measure: &MixingMeasure, data: &Dataset) -> Result<(f64, GradientRecord)> {
    check_data(measure, data)?;
    let d = measure.d;
    let stride = atom_stride(measure);
    let total_params = stride * measure.atoms.len();
    let uses_quad = measure.gate.tag.uses_quad();
    let uses_lin = measure.gate.tag.uses_lin();

    let mut scratch = Scratch::new(measure);
    let xs = data.x.as_slice().expect("contiguous");
    let n = data.n();

    let mut loss = 0.0;
    let mut grad = vec![0.0; total_params];
    let mut chunk_grad = vec![0.0; total_params];

    for chunk_start in (0..n).step_by(GRAD_CHUNK) {
        let chunk_end = (chunk_start + GRAD_CHUNK).min(n);
        let mut chunk_loss = 0.0;
        chunk_grad.iter_mut().for_each(|g| *g = 0.0);

        for s in chunk_start..chunk_end {
            let x = &xs[s * d..(s + 1) * d];
            let f = sample_forward(measure, x, &mut scratch);
            let e = data.y[s] - f;
            chunk_loss += e * e;
            let coef = -2.0 * e;

            for (i, atom) in measure.atoms.iter().enumerate() {
                let gi = scratch.probs[i];
                if gi == 0.0 {
                    continue;
                }
                let base = i * stride;
                let gate_term = coef * gi * (scratch.hvals[i] - f);
                if uses_quad {
                    for u in 0..d {
                        let row = base + u * d;
                        let gxu = gate_term * x[u];
                        for v in 0..d {
                            chunk_grad[row + v] += gxu * x[v];
                        }
                    }
                }
                if uses_lin {
                    for u in 0..d {
                        chunk_grad[base + d * d + u] += gate_term * x[u];
                    }
                }
                chunk_grad[base + d * d + d] += gate_term;

                let eta_base = base + d * d + d + 1;
                let scale = coef * gi;
                match &atom.eta {
                    ExpertParams::Linear { beta1, .. } => {
                        for u in 0..beta1.len() {
                            chunk_grad[eta_base + u] += scale * x[u];
                        }
                        chunk_grad[eta_base + beta1.len()] += scale;
                    }
                    ExpertParams::TwoLayer {
                        w, a, activation, ..
                    } => {
                        let m = w.nrows();
                        for j in 0..m {
                            let z = scratch.zs[i * m + j];
                            let t = activation.apply(z);
                            let slope = a[j] * activation.d1(z);
                            for u in 0..d {
                                chunk_grad[eta_base + j * d + u] += scale * slope * x[u];
                            }
                            chunk_grad[eta_base + m * d + j] += scale * slope;
                            chunk_grad[eta_base + m * d + m + j] += scale * t;
                        }
                        chunk_grad[eta_base + m * d + 2 * m] += scale;
                    }
                }
            }
        }

        loss += chunk_loss;
        for (g, c) in grad.iter_mut().zip(&chunk_grad) {
            *g += c;
        }
    }

    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    Ok((loss, unflatten_grad(measure, &grad)))
}

/// Exact gradient of [`sq_loss`].
pub fn sq_loss_grad(measure: &MixingMeasure, data: &Dataset) -> Result<GradientRecord> {
    sq_loss_and_grad(measure, data).map(|(_, g)| g)
}

/// Central finite differences of a scalar objective over a flat
/// parameter vector.
pub fn finite_diff_grad<F>(objective: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut perturbed = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        perturbed[k] = point[k] + h;
        let plus = objective(&perturbed)?;
        perturbed[k] = point[k] - h;
        let minus = objective(&perturbed)?;
        perturbed[k] = point[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(numerical(format!(
                "objective not finite near coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Outcome of an analytic-versus-numerical gradient comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub pass: bool,
}

/// Relative error used by the harness: `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Coordinates whose finite difference would straddle a ReLU kink: for
/// each hidden unit with some sample's |pre-activation| below `1e-4`,
/// that unit's `w` row and `v` entry are excluded from the comparison.
fn relu_kink_skips(measure: &MixingMeasure, data: &Dataset) -> Vec<bool> {
    let stride = atom_stride(measure);
    let mut skip = vec![false; param_count(measure)];
    let d = measure.d;
    for (i, atom) in measure.atoms.iter().enumerate() {
        if let ExpertParams::TwoLayer {
            w,
            v,
            activation: Activation::Relu,
            ..
        } = &atom.eta
        {
            let m = w.nrows();
            for j in 0..m {
                let mut near_kink = false;
                for s in 0..data.n() {
                    let mut z = v[j];
                    for u in 0..d {
                        z += w[[j, u]] * data.x[[s, u]];
                    }
                    if z.abs() < 1e-4 {
                        near_kink = true;
                        break;
                    }
                }
                if near_kink {
                    let eta_base = i * stride + d * d + d + 1;
                    for u in 0..d {
                        skip[eta_base + j * d + u] = true;
                    }
                    skip[eta_base + m * d + j] = true;
                }
            }
        }
    }
    skip
}

/// Compare the analytic gradient against central finite differences
/// (step `1e-5`) and report the worst coordinate.
pub fn grad_check(measure: &MixingMeasure, data: &Dataset, tol: f64) -> Result<GradCheckReport> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let analytic = sq_loss_grad(measure, data)?.flatten();
    let point = flatten_params(measure);
    let numeric = finite_diff_grad(
        |p| sq_loss(&measure_with_params(measure, p), data),
        &point,
        1e-5,
    )?;
    let skip = relu_kink_skips(measure, data);
    let mut max_rel_err = 0.0;
    let mut worst = 0;
    for k in 0..analytic.len() {
        if skip[k] {
            continue;
        }
        let err = rel_err(analytic[k], numeric[k]);
        if err > max_rel_err {
            max_rel_err = err;
            worst = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_coordinate: worst,
        pass: max_rel_err <= tol,
    })
}
