//! JSON schema for mixing measures.
//!
//! Document layout (matrices are flat arrays in row-major order):
//!
//! ```json
//! {
//!   "gate": "quad_poly",
//!   "top_k": 2,
//!   "d": 2,
//!   "expert_family": "linear",
//!   "atoms": [
//!     {"A": [0.0, 0.0, 0.0, 0.0], "b": [0.1, -0.2], "c": 0.0,
//!      "eta": {"beta1": [1.0, 0.5], "beta0": -0.3}}
//!   ]
//! }
//! ```
//!
//! Two-layer experts use
//! `{"m": 2, "w": [...], "v": [...], "a": [...], "a0": 0.0, "activation": "relu"}`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::{Activation, Atom, ExpertFamily, ExpertParams, GateKind, GateTag, MixingMeasure};

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    gate: GateTag,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    top_k: Option<usize>,
    d: usize,
    expert_family: ExpertFamily,
    atoms: Vec<AtomDoc>,
}

#[derive(Serialize, Deserialize)]
struct AtomDoc {
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    eta: EtaDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EtaDoc {
    Linear {
        beta1: Vec<f64>,
        beta0: f64,
    },
    TwoLayer {
        m: usize,
        w: Vec<f64>,
        v: Vec<f64>,
        a: Vec<f64>,
        a0: f64,
        activation: Activation,
    },
}

/// Serialize a measure to its JSON document.
pub fn measure_to_json(measure: &MixingMeasure) -> String {
    let doc = MeasureDoc {
        gate: measure.gate.tag,
        top_k: measure.gate.top_k,
        d: measure.d,
        expert_family: measure.expert_family(),
        atoms: measure
            .atoms
            .iter()
            .map(|atom| AtomDoc {
                a: atom.a.iter().copied().collect(),
                b: atom.b.to_vec(),
                c: atom.c,
                eta: match &atom.eta {
                    ExpertParams::Linear { beta1, beta0 } => EtaDoc::Linear {
                        beta1: beta1.to_vec(),
                        beta0: *beta0,
                    },
                    ExpertParams::TwoLayer {
                        w,
                        v,
                        a,
                        a0,
                        activation,
                    } => EtaDoc::TwoLayer {
                        m: w.nrows(),
                        w: w.iter().copied().collect(),
                        v: v.to_vec(),
                        a: a.to_vec(),
                        a0: *a0,
                        activation: *activation,
                    },
                },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("measure document serializes")
}

/// Parse and validate a measure from its JSON document.
pub fn measure_from_json(text: &str) -> Result<MixingMeasure> {
    let doc: MeasureDoc = serde_json::from_str(text)?;
    let d = doc.d;
    let mut atoms = Vec::with_capacity(doc.atoms.len());
    for (i, atom) in doc.atoms.into_iter().enumerate() {
        if atom.a.len() != d * d {
            return Err(invalid(format!(
                "atom {i}: quadratic coefficient has {} entries, expected {}",
                atom.a.len(),
                d * d
            )));
        }
        let eta = match atom.eta {
            EtaDoc::Linear { beta1, beta0 } => {
                if doc.expert_family != ExpertFamily::Linear {
                    return Err(invalid(format!("atom {i}: expert family mismatch")));
                }
                ExpertParams::Linear {
                    beta1: Array1::from_vec(beta1),
                    beta0,
                }
            }
            EtaDoc::TwoLayer {
                m,
                w,
                v,
                a,
                a0,
                activation,
            } => {
                if doc.expert_family != ExpertFamily::TwoLayer {
                    return Err(invalid(format!("atom {i}: expert family mismatch")));
                }
                if w.len() != m * d {
                    return Err(invalid(format!(
                        "atom {i}: hidden weights have {} entries, expected {}",
                        w.len(),
                        m * d
                    )));
                }
                ExpertParams::TwoLayer {
                    w: Array2::from_shape_vec((m, d), w)
                        .map_err(|e| invalid(format!("atom {i}: {e}")))?,
                    v: Array1::from_vec(v),
                    a: Array1::from_vec(a),
                    a0,
                    activation,
                }
            }
        };
        atoms.push(Atom {
            a: Array2::from_shape_vec((d, d), atom.a)
                .map_err(|e| invalid(format!("atom {i}: {e}")))?,
            b: Array1::from_vec(atom.b),
            c: atom.c,
            eta,
        });
    }
    MixingMeasure::new(
        GateKind {
            tag: doc.gate,
            top_k: doc.top_k,
        },
        d,
        atoms,
    )
}
