//! Scaled dot-product attention, the active-attention variant, and the
//! attention-form gate with its induced quadratic coefficients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Result};

use super::forward::{expert_eval_slice, gate_probs};
use super::{ExpertParams, Nonlinearity};

/// Per-expert key embedding. `bk` is absent in monomial mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnKey {
    pub wk: Array2<f64>,
    pub bk: Option<Array1<f64>>,
}

/// Attention-form gate parameters: one shared query embedding and one key
/// embedding per expert. All embeddings are `r x d` with rank `r >= 1`;
/// bias vectors are either present on every embedding or on none
/// (monomial mode).
#[derive(Clone, Debug, PartialEq)]
pub struct AttnGateParams {
    pub wq: Array2<f64>,
    pub bq: Option<Array1<f64>>,
    pub keys: Vec<AttnKey>,
}

impl AttnGateParams {
    pub fn rank(&self) -> usize {
        self.wq.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.wq.ncols()
    }

    pub fn n_experts(&self) -> usize {
        self.keys.len()
    }

    pub fn monomial_mode(&self) -> bool {
        self.bq.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, d) = self.wq.dim();
        if r == 0 || d == 0 {
            return Err(invalid("query embedding needs rank >= 1 and d >= 1"));
        }
        if self.keys.is_empty() {
            return Err(invalid("attention gate needs at least one key"));
        }
        if let Some(bq) = &self.bq {
            if bq.len() != r {
                return Err(invalid("query bias length differs from rank"));
            }
        }
        for (i, key) in self.keys.iter().enumerate() {
            if key.wk.dim() != (r, d) {
                return Err(invalid(format!(
                    "key {i} is {:?}, expected ({r}, {d})",
                    key.wk.dim()
                )));
            }
            match (&self.bq, &key.bk) {
                (Some(_), Some(bk)) => {
                    if bk.len() != r {
                        return Err(invalid(format!("key {i} bias length differs from rank")));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(invalid(
                        "bias vectors must be present on all embeddings or none",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Gating scores from query/key embeddings: `s_i = q(x) . k_i(x)` with
/// `q(x) = Wq x + bq` and `k_i(x) = Wk_i x + bk_i` (biases omitted in
/// monomial mode). No scale factor is applied.
pub fn attn_gate_scores(x: &ArrayView1<f64>, attn: &AttnGateParams) -> Result<Array1<f64>> {
    attn.validate()?;
    if x.len() != attn.input_dim() {
        return Err(invalid(format!(
            "input has {} entries, gate expects {}",
            x.len(),
            attn.input_dim()
        )));
    }
    let mut q = attn.wq.dot(x);
    if let Some(bq) = &attn.bq {
        q += bq;
    }
    let mut scores = Array1::zeros(attn.n_experts());
    for (i, key) in attn.keys.iter().enumerate() {
        let mut k = key.wk.dot(x);
        if let Some(bk) = &key.bk {
            k += bk;
        }
        scores[i] = q.dot(&k);
    }
    Ok(scores)
}

/// Expand attention-form scores into per-expert quadratic coefficients
/// `(a_i, b_i, c_i)` such that `x' a_i x + b_i' x + c_i` reproduces the
/// query/key score exactly:
///
/// `a_i = Wq' Wk_i`, `b_i = Wk_i' bq + Wq' bk_i`, `c_i = bq . bk_i`.
///
/// Monomial mode returns zero `b_i` and `c_i`.
pub fn induced_quadratic(attn: &AttnGateParams) -> Result<Vec<(Array2<f64>, Array1<f64>, f64)>> {
    attn.validate()?;
    let d = attn.input_dim();
    let wq_t = attn.wq.t();
    let mut out = Vec::with_capacity(attn.n_experts());
    for key in &attn.keys {
        let a = wq_t.dot(&key.wk);
        let (b, c) = match (&attn.bq, &key.bk) {
            (Some(bq), Some(bk)) => {
                let b = key.wk.t().dot(bq) + wq_t.dot(bk);
                (b, bq.dot(bk))
            }
            _ => (Array1::zeros(d), 0.0),
        };
        out.push((a, b, c));
    }
    Ok(out)
}

/// Build the mixing measure whose score-based gate reproduces the
/// attention-form gate: quad-poly when biases are present, quad-mono
/// otherwise.
pub fn induced_measure(
    attn: &AttnGateParams,
    experts: &[ExpertParams],
) -> Result<super::MixingMeasure> {
    if experts.len() != attn.n_experts() {
        return Err(invalid(format!(
            "{} experts for {} keys",
            experts.len(),
            attn.n_experts()
        )));
    }
    let tag = if attn.monomial_mode() {
        super::GateTag::QuadMono
    } else {
        super::GateTag::QuadPoly
    };
    let atoms = induced_quadratic(attn)?
        .into_iter()
        .zip(experts.iter().cloned())
        .map(|((a, b, c), eta)| super::Atom { a, b, c, eta })
        .collect();
    super::MixingMeasure::new(super::GateKind::dense(tag), attn.input_dim(), atoms)
}

fn check_attention_shapes(
    q: &ArrayView1<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
) -> Result<()> {
    if q.is_empty() {
        return Err(invalid("query must have d >= 1"));
    }
    if k.ncols() != q.len() {
        return Err(invalid(format!(
            "keys have {} columns, query has {} entries",
            k.ncols(),
            q.len()
        )));
    }
    if k.nrows() == 0 || k.nrows() != v.nrows() {
        return Err(invalid(format!(
            "{} keys but {} value rows",
            k.nrows(),
            v.nrows()
        )));
    }
    Ok(())
}

/// Scaled dot-product attention: `softmax(q K' / sqrt(d)) V` for a single
/// query vector. Keys are the rows of `k`, values the rows of `v`.
pub fn attention(
    q: &ArrayView1<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
) -> Result<Array1<f64>> {
    check_attention_shapes(q, k, v)?;
    let scale = (q.len() as f64).sqrt();
    let scores = k.dot(q) / scale;
    let weights = gate_probs(&scores.view(), None)?;
    Ok(weights.dot(v))
}

/// Attention with an elementwise nonlinearity applied to the value matrix
/// before aggregation: `softmax(q K' / sqrt(d)) nl(V)`.
pub fn active_attention(
    q: &ArrayView1<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
    nl: Nonlinearity,
) -> Result<Array1<f64>> {
    check_attention_shapes(q, k, v)?;
    let mapped = v.mapv(|z| nl.apply(z));
    attention(q, k, &mapped.view())
}

/// Attention-gated mixture forward pass: weights from the query/key
/// scores, contracted with expert outputs. Equals `moe_forward` on the
/// induced quadratic measure.
pub fn att_moe_forward(
    x: &ArrayView1<f64>,
    attn: &AttnGateParams,
    experts: &[ExpertParams],
) -> Result<f64> {
    if experts.len() != attn.n_experts() {
        return Err(invalid(format!(
            "{} experts for {} keys",
            experts.len(),
            attn.n_experts()
        )));
    }
    for (i, eta) in experts.iter().enumerate() {
        if eta.input_dim() != attn.input_dim() {
            return Err(invalid(format!(
                "expert {i} expects dimension {}, gate expects {}",
                eta.input_dim(),
                attn.input_dim()
            )));
        }
    }
    let scores = attn_gate_scores(x, attn)?;
    let weights = gate_probs(&scores.view(), None)?;
    let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
    let mut out = 0.0;
    for (wi, eta) in weights.iter().zip(experts) {
        out += wi * expert_eval_slice(&xs, eta);
    }
    Ok(out)
}
