//! Parameter records and pure forward evaluation for gated mixtures of
//! experts: gate kinds, expert families, mixing measures, and the
//! attention-form gate.
//!
//! All values here are immutable after construction and safe to share
//! across threads; every operation is a pure function of its inputs.

mod attention;
mod forward;
mod json;

pub use attention::{
    active_attention, att_moe_forward, attention, attn_gate_scores, induced_measure,
    induced_quadratic, AttnGateParams, AttnKey,
};
pub use forward::{expert_eval, gate_probs, gate_scores, moe_forward};
pub(crate) use forward::atom_score;
pub(crate) use forward::dot as forward_dot;
pub use json::{measure_from_json, measure_to_json};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Gate scoring family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateTag {
    /// Affine score `b_i'x + c_i`.
    Linear,
    /// Full quadratic score `x'A_i x + b_i'x + c_i`.
    QuadPoly,
    /// Pure quadratic score `x'A_i x + c_i`.
    QuadMono,
    /// Scores produced by query/key embeddings; see [`AttnGateParams`].
    AttnForm,
}

impl GateTag {
    /// Whether the quadratic coefficient participates in the score.
    pub fn uses_quad(self) -> bool {
        !matches!(self, GateTag::Linear)
    }

    /// Whether the linear coefficient participates in the score.
    pub fn uses_lin(self) -> bool {
        !matches!(self, GateTag::QuadMono)
    }
}

/// Gate kind: scoring family plus optional top-K sparsification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateKind {
    pub tag: GateTag,
    /// When present, only the `top_k` highest scores keep nonzero
    /// probability (ties at the cutoff favor the lower index).
    pub top_k: Option<usize>,
}

impl GateKind {
    pub fn dense(tag: GateTag) -> Self {
        GateKind { tag, top_k: None }
    }

    pub fn sparse(tag: GateTag, top_k: usize) -> Self {
        GateKind {
            tag,
            top_k: Some(top_k),
        }
    }
}

/// Expert activation for the two-layer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative; the ReLU kink at zero takes the one-sided value 0.
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative; identically zero almost everywhere for ReLU.
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

/// Elementwise nonlinearity for the value side of attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    Silu,
}

impl Nonlinearity {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity => z,
            Nonlinearity::Relu => z.max(0.0),
            // Exact Gaussian-CDF form, not the tanh approximation.
            Nonlinearity::Gelu => 0.5 * z * (1.0 + libm::erf(z / 2f64.sqrt())),
            Nonlinearity::Tanh => z.tanh(),
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Nonlinearity::Silu => z / (1.0 + (-z).exp()),
        }
    }
}

/// Expert family tag, shared by all atoms of a measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertFamily {
    Linear,
    TwoLayer,
}

/// Expert parameters: an affine map or a one-hidden-layer network.
#[derive(Clone, Debug, PartialEq)]
pub enum ExpertParams {
    /// `h(x) = beta1'x + beta0`
    Linear { beta1: Array1<f64>, beta0: f64 },
    /// `h(x) = a' act(W x + v) + a0`
    TwoLayer {
        w: Array2<f64>,
        v: Array1<f64>,
        a: Array1<f64>,
        a0: f64,
        activation: Activation,
    },
}

impl ExpertParams {
    pub fn family(&self) -> ExpertFamily {
        match self {
            ExpertParams::Linear { .. } => ExpertFamily::Linear,
            ExpertParams::TwoLayer { .. } => ExpertFamily::TwoLayer,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ExpertParams::Linear { beta1, .. } => beta1.len(),
            ExpertParams::TwoLayer { w, .. } => w.ncols(),
        }
    }

    /// Hidden width for the two-layer family, 0 for linear experts.
    pub fn hidden_units(&self) -> usize {
        match self {
            ExpertParams::Linear { .. } => 0,
            ExpertParams::TwoLayer { w, .. } => w.nrows(),
        }
    }

    /// Number of scalar parameters, in flattening order
    /// (`beta1`, `beta0`) or (`w` row-major, `v`, `a`, `a0`).
    pub fn param_count(&self) -> usize {
        match self {
            ExpertParams::Linear { beta1, .. } => beta1.len() + 1,
            ExpertParams::TwoLayer { w, v, a, .. } => w.len() + v.len() + a.len() + 1,
        }
    }

    /// Architecture equality: same family, dimensions, and activation.
    pub fn same_shape(&self, other: &ExpertParams) -> bool {
        match (self, other) {
            (ExpertParams::Linear { beta1: p, .. }, ExpertParams::Linear { beta1: q, .. }) => {
                p.len() == q.len()
            }
            (
                ExpertParams::TwoLayer {
                    w: w1,
                    activation: act1,
                    ..
                },
                ExpertParams::TwoLayer {
                    w: w2,
                    activation: act2,
                    ..
                },
            ) => w1.dim() == w2.dim() && act1 == act2,
            _ => false,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            ExpertParams::Linear { beta1, beta0 } => {
                if beta1.len() != d {
                    return Err(invalid(format!(
                        "linear expert slope has {} entries, input dimension is {d}",
                        beta1.len()
                    )));
                }
                if !beta1.iter().all(|x| x.is_finite()) || !beta0.is_finite() {
                    return Err(invalid("linear expert has non-finite entries"));
                }
            }
            ExpertParams::TwoLayer { w, v, a, a0, .. } => {
                let m = w.nrows();
                if m == 0 {
                    return Err(invalid("two-layer expert needs at least one hidden unit"));
                }
                if w.ncols() != d {
                    return Err(invalid(format!(
                        "two-layer expert has {} input columns, input dimension is {d}",
                        w.ncols()
                    )));
                }
                if v.len() != m || a.len() != m {
                    return Err(invalid("two-layer expert has inconsistent hidden width"));
                }
                let finite = w.iter().all(|x| x.is_finite())
                    && v.iter().all(|x| x.is_finite())
                    && a.iter().all(|x| x.is_finite())
                    && a0.is_finite();
                if !finite {
                    return Err(invalid("two-layer expert has non-finite entries"));
                }
            }
        }
        Ok(())
    }
}

/// One gated-expert component: quadratic coefficient `a`, linear
/// coefficient `b`, log-weight `c` (the mixing weight is `exp(c)`),
/// and the expert parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: f64,
    pub eta: ExpertParams,
}

impl Atom {
    /// Mixing weight `exp(c)`.
    pub fn weight(&self) -> f64 {
        self.c.exp()
    }
}

/// A finite mixing measure: an ordered list of atoms plus the gate kind.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMeasure {
    pub gate: GateKind,
    pub d: usize,
    pub atoms: Vec<Atom>,
}

impl MixingMeasure {
    pub fn new(gate: GateKind, d: usize, atoms: Vec<Atom>) -> Result<Self> {
        let measure = MixingMeasure { gate, d, atoms };
        measure.validate()?;
        Ok(measure)
    }

    pub fn n_components(&self) -> usize {
        self.atoms.len()
    }

    pub fn expert_family(&self) -> ExpertFamily {
        self.atoms[0].eta.family()
    }

    /// Check all structural invariants: shapes, masks, finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(invalid("mixing measure needs at least one atom"));
        }
        if self.d == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        if let Some(k) = self.gate.top_k {
            if k == 0 || k > self.atoms.len() {
                return Err(invalid(format!(
                    "top_k={k} out of range for {} atoms",
                    self.atoms.len()
                )));
            }
        }
        let first = &self.atoms[0].eta;
        for (i, atom) in self.atoms.iter().enumerate() {
            if atom.a.dim() != (self.d, self.d) {
                return Err(invalid(format!(
                    "atom {i}: quadratic coefficient is {:?}, expected ({d}, {d})",
                    atom.a.dim(),
                    d = self.d
                )));
            }
            if atom.b.len() != self.d {
                return Err(invalid(format!(
                    "atom {i}: linear coefficient has {} entries, expected {}",
                    atom.b.len(),
                    self.d
                )));
            }
            if !atom.a.iter().all(|x| x.is_finite()) || !atom.b.iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("atom {i}: non-finite gating entries")));
            }
            if !atom.c.is_finite() || !atom.weight().is_finite() || atom.weight() <= 0.0 {
                return Err(invalid(format!(
                    "atom {i}: log-weight {} does not give a finite positive weight",
                    atom.c
                )));
            }
            if !self.gate.tag.uses_quad() && atom.a.iter().any(|&x| x != 0.0) {
                return Err(invalid(format!(
                    "atom {i}: linear gate requires a zero quadratic coefficient"
                )));
            }
            if !self.gate.tag.uses_lin() && atom.b.iter().any(|&x| x != 0.0) {
                return Err(invalid(format!(
                    "atom {i}: monomial gate requires a zero linear coefficient"
                )));
            }
            atom.eta.validate(self.d)?;
            if !atom.eta.same_shape(first) {
                return Err(invalid(format!(
                    "atom {i}: expert architecture differs from atom 0"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    pub(crate) fn linear_expert(beta1: &[f64], beta0: f64) -> ExpertParams {
        ExpertParams::Linear {
            beta1: arr1(beta1),
            beta0,
        }
    }

    #[test]
    fn linear_gate_rejects_nonzero_quadratic() {
        let atom = Atom {
            a: Array2::from_elem((1, 1), 0.5),
            b: Array1::zeros(1),
            c: 0.0,
            eta: linear_expert(&[1.0], 0.0),
        };
        let err = MixingMeasure::new(GateKind::dense(GateTag::Linear), 1, vec![atom]);
        assert!(err.is_err());
    }

    #[test]
    fn monomial_gate_rejects_nonzero_linear() {
        let atom = Atom {
            a: Array2::zeros((1, 1)),
            b: arr1(&[0.1]),
            c: 0.0,
            eta: linear_expert(&[1.0], 0.0),
        };
        let err = MixingMeasure::new(GateKind::dense(GateTag::QuadMono), 1, vec![atom]);
        assert!(err.is_err());
    }

    #[test]
    fn top_k_must_be_in_range() {
        let atom = Atom {
            a: Array2::zeros((1, 1)),
            b: Array1::zeros(1),
            c: 0.0,
            eta: linear_expert(&[1.0], 0.0),
        };
        assert!(
            MixingMeasure::new(GateKind::sparse(GateTag::QuadMono, 2), 1, vec![atom.clone()])
                .is_err()
        );
        assert!(MixingMeasure::new(GateKind::sparse(GateTag::QuadMono, 1), 1, vec![atom]).is_ok());
    }

    #[test]
    fn mixed_expert_families_rejected() {
        let lin = Atom {
            a: Array2::zeros((1, 1)),
            b: Array1::zeros(1),
            c: 0.0,
            eta: linear_expert(&[1.0], 0.0),
        };
        let two = Atom {
            a: Array2::zeros((1, 1)),
            b: Array1::zeros(1),
            c: 0.0,
            eta: ExpertParams::TwoLayer {
                w: Array2::zeros((1, 1)),
                v: Array1::zeros(1),
                a: Array1::zeros(1),
                a0: 0.0,
                activation: Activation::Relu,
            },
        };
        assert!(
            MixingMeasure::new(GateKind::dense(GateTag::QuadPoly), 1, vec![lin, two]).is_err()
        );
    }

    #[test]
    fn gelu_matches_reference_values() {
        // Reference: 0.5 x (1 + erf(x / sqrt(2))).
        let nl = Nonlinearity::Gelu;
        assert!((nl.apply(0.0)).abs() < 1e-15);
        assert!((nl.apply(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((nl.apply(-1.0) - (-0.15865525393145707)).abs() < 1e-12);
    }

    #[test]
    fn relu_kink_derivative_is_zero() {
        assert_eq!(Activation::Relu.d1(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(0.0), 0.0);
    }
}
