//! Gate scores, softmax routing, expert evaluation, and the mixture
//! forward pass.

use ndarray::{Array1, ArrayView1};

use crate::error::{invalid, Result};

use super::{ExpertParams, GateTag, MixingMeasure};

/// Quadratic form `x' A x` over a row-major coefficient slice.
pub(crate) fn quad_form(x: &[f64], a: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for (u, &xu) in x.iter().enumerate() {
        let row = &a[u * d..(u + 1) * d];
        let mut inner = 0.0;
        for (v, &auv) in row.iter().enumerate() {
            inner += auv * x[v];
        }
        acc += xu * inner;
    }
    acc
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Raw gating scores of `measure` at `x`, one per atom.
///
/// The attention-form gate is scored from its query/key embeddings (see
/// [`attn_gate_scores`](super::attn_gate_scores)), not from atoms, so it
/// is rejected here.
pub fn gate_scores(x: &ArrayView1<f64>, measure: &MixingMeasure) -> Result<Array1<f64>> {
    if x.len() != measure.d {
        return Err(invalid(format!(
            "input has {} entries, measure dimension is {}",
            x.len(),
            measure.d
        )));
    }
    if measure.gate.tag == GateTag::AttnForm {
        return Err(invalid(
            "attention-form gates are scored from query/key embeddings, not atoms",
        ));
    }
    let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
    let mut scores = Array1::zeros(measure.atoms.len());
    for i in 0..measure.atoms.len() {
        scores[i] = atom_score(&xs, measure, i);
    }
    Ok(scores)
}

pub(crate) fn atom_score(x: &[f64], measure: &MixingMeasure, i: usize) -> f64 {
    let atom = &measure.atoms[i];
    let mut s = atom.c;
    if measure.gate.tag.uses_lin() {
        s += dot(atom.b.as_slice().expect("contiguous"), x);
    }
    if measure.gate.tag.uses_quad() {
        s += quad_form(x, atom.a.as_slice().expect("contiguous"));
    }
    s
}

/// Numerically stable softmax with optional top-K masking.
///
/// The maximum score is subtracted before exponentiation. With `top_k`
/// present, only the `k` largest scores keep probability mass (ties at
/// the cutoff go to the lower index) and the retained entries are
/// renormalized.
pub fn gate_probs(scores: &ArrayView1<f64>, top_k: Option<usize>) -> Result<Array1<f64>> {
    let n = scores.len();
    if n == 0 {
        return Err(invalid("empty score vector"));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(invalid(format!("score {bad} is not finite")));
    }
    if let Some(k) = top_k {
        if k == 0 || k > n {
            return Err(invalid(format!("top_k={k} out of range for {n} scores")));
        }
    }
    let mut probs = Array1::zeros(n);
    match top_k {
        Some(k) if k < n => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                scores[j]
                    .partial_cmp(&scores[i])
                    .expect("scores are finite")
                    .then(i.cmp(&j))
            });
            let retained = &order[..k];
            softmax_into(scores, retained, &mut probs);
        }
        _ => {
            let all: Vec<usize> = (0..n).collect();
            softmax_into(scores, &all, &mut probs);
        }
    }
    Ok(probs)
}

fn softmax_into(scores: &ArrayView1<f64>, retained: &[usize], probs: &mut Array1<f64>) {
    let max = retained
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &i in retained {
        let e = (scores[i] - max).exp();
        probs[i] = e;
        sum += e;
    }
    for &i in retained {
        probs[i] /= sum;
    }
}

/// Evaluate an expert at `x`.
pub fn expert_eval(x: &ArrayView1<f64>, eta: &ExpertParams) -> Result<f64> {
    if x.len() != eta.input_dim() {
        return Err(invalid(format!(
            "input has {} entries, expert expects {}",
            x.len(),
            eta.input_dim()
        )));
    }
    let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
    Ok(expert_eval_slice(&xs, eta))
}

pub(crate) fn expert_eval_slice(x: &[f64], eta: &ExpertParams) -> f64 {
    match eta {
        ExpertParams::Linear { beta1, beta0 } => {
            dot(beta1.as_slice().expect("contiguous"), x) + beta0
        }
        ExpertParams::TwoLayer {
            w,
            v,
            a,
            a0,
            activation,
        } => {
            let d = w.ncols();
            let ws = w.as_slice().expect("contiguous");
            let mut out = *a0;
            for i in 0..w.nrows() {
                let z = dot(&ws[i * d..(i + 1) * d], x) + v[i];
                out += a[i] * activation.apply(z);
            }
            out
        }
    }
}

/// Mixture forward pass: gate probabilities contracted with expert
/// outputs.
pub fn moe_forward(x: &ArrayView1<f64>, measure: &MixingMeasure) -> Result<f64> {
    let scores = gate_scores(x, measure)?;
    let probs = gate_probs(&scores.view(), measure.gate.top_k)?;
    let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
    let mut out = 0.0;
    for (i, atom) in measure.atoms.iter().enumerate() {
        if probs[i] != 0.0 {
            out += probs[i] * expert_eval_slice(&xs, &atom.eta);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Atom, GateKind, MixingMeasure};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, Array2};
    use rand::Rng;

    fn scalar_atom(a: f64, b: f64, c: f64, slope: f64, intercept: f64) -> Atom {
        Atom {
            a: Array2::from_elem((1, 1), a),
            b: arr1(&[b]),
            c,
            eta: ExpertParams::Linear {
                beta1: arr1(&[slope]),
                beta0: intercept,
            },
        }
    }

    fn mono_pair() -> MixingMeasure {
        MixingMeasure::new(
            GateKind::dense(GateTag::QuadMono),
            1,
            vec![
                scalar_atom(0.5, 0.0, 0.0, 1.0, 0.0),
                scalar_atom(-0.5, 0.0, 0.0, -1.0, 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn monomial_scores_by_hand() {
        let g = mono_pair();
        let s = gate_scores(&arr1(&[1.0]).view(), &g).unwrap();
        assert_eq!(s[0], 0.5);
        assert_eq!(s[1], -0.5);
    }

    #[test]
    fn all_zero_atoms_score_zero() {
        let g = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![scalar_atom(0.0, 0.0, 0.0, 1.0, 0.0); 3],
        )
        .unwrap();
        let s = gate_scores(&arr1(&[0.7]).view(), &g).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_score_is_dot_plus_bias() {
        let atom = Atom {
            a: Array2::zeros((2, 2)),
            b: arr1(&[1.0, 0.0]),
            c: 2.0,
            eta: ExpertParams::Linear {
                beta1: arr1(&[0.0, 0.0]),
                beta0: 0.0,
            },
        };
        let g = MixingMeasure::new(GateKind::dense(GateTag::Linear), 2, vec![atom]).unwrap();
        let s = gate_scores(&arr1(&[3.0, 5.0]).view(), &g).unwrap();
        assert_eq!(s[0], 5.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = mono_pair();
        assert!(gate_scores(&arr1(&[1.0, 2.0]).view(), &g).is_err());
        assert!(expert_eval(&arr1(&[1.0, 2.0]).view(), &g.atoms[0].eta).is_err());
    }

    #[test]
    fn softmax_of_unit_gap_is_sigmoid() {
        let p = gate_probs(&arr1(&[0.5, -0.5]).view(), None).unwrap();
        assert_abs_diff_eq!(p[0], 0.7310585786300049, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.2689414213699951, epsilon = 1e-12);
    }

    #[test]
    fn equal_scores_give_uniform() {
        for n in [1, 2, 5, 9] {
            let p = gate_probs(&Array1::from_elem(n, 3.25).view(), None).unwrap();
            for &v in p.iter() {
                assert_abs_diff_eq!(v, 1.0 / n as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn top_k_masks_then_renormalizes() {
        let p = gate_probs(&arr1(&[3.0, 2.0, 1.0]).view(), Some(2)).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-14);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let p = gate_probs(&arr1(&[1.0, 2.0, 2.0, 1.0]).view(), Some(2)).unwrap();
        assert_eq!(p[3], 0.0);
        assert_eq!(p[0], 0.0);
        assert!(p[1] > 0.0 && p[2] > 0.0);
        // A 3-way tie at the cutoff keeps the two lowest indices.
        let q = gate_probs(&arr1(&[2.0, 2.0, 2.0]).view(), Some(2)).unwrap();
        assert!(q[0] > 0.0 && q[1] > 0.0);
        assert_eq!(q[2], 0.0);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(gate_probs(&arr1(&[1.0, f64::NAN]).view(), None).is_err());
        assert!(gate_probs(&arr1(&[f64::INFINITY, 0.0]).view(), None).is_err());
    }

    #[test]
    fn simplex_and_translation_invariance() {
        let mut rng = crate::rng::stream_rng(11, "simplex");
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let scores: Array1<f64> =
                Array1::from_iter((0..n).map(|_| rng.random_range(-40.0..40.0)));
            let p = gate_probs(&scores.view(), None).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.sum() - 1.0).abs() <= 1e-12);
            let t = rng.random_range(-100.0..100.0);
            let shifted = scores.mapv(|s| s + t);
            let q = gate_probs(&shifted.view(), None).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let p = gate_probs(&arr1(&[900.0, 899.0]).view(), None).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_expert_by_hand() {
        let eta = ExpertParams::Linear {
            beta1: arr1(&[2.0, -1.0]),
            beta0: 0.5,
        };
        assert_eq!(expert_eval(&arr1(&[1.0, 1.0]).view(), &eta).unwrap(), 1.5);
    }

    #[test]
    fn dead_hidden_layer_returns_output_bias() {
        let eta = ExpertParams::TwoLayer {
            w: Array2::from_shape_vec((2, 1), vec![1.0, -3.0]).unwrap(),
            v: arr1(&[0.2, 0.4]),
            a: arr1(&[0.0, 0.0]),
            a0: 7.0,
            activation: Activation::Tanh,
        };
        for x in [-2.0, 0.0, 1.5] {
            assert_eq!(expert_eval(&arr1(&[x]).view(), &eta).unwrap(), 7.0);
        }
    }

    #[test]
    fn relu_unit_by_hand() {
        let eta = ExpertParams::TwoLayer {
            w: Array2::from_elem((1, 1), 1.0),
            v: arr1(&[-2.0]),
            a: arr1(&[3.0]),
            a0: 0.0,
            activation: Activation::Relu,
        };
        assert_eq!(expert_eval(&arr1(&[1.0]).view(), &eta).unwrap(), 0.0);
        assert_eq!(expert_eval(&arr1(&[3.0]).view(), &eta).unwrap(), 3.0);
    }

    #[test]
    fn single_expert_mixture_is_the_expert() {
        let g = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![scalar_atom(0.3, -0.2, 0.9, 2.0, -1.0)],
        )
        .unwrap();
        let x = arr1(&[0.4]);
        let f = moe_forward(&x.view(), &g).unwrap();
        assert_eq!(f, expert_eval(&x.view(), &g.atoms[0].eta).unwrap());
    }

    #[test]
    fn identical_gating_means_plain_average() {
        let g = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![
                scalar_atom(0.3, -0.2, 0.9, 2.0, -1.0),
                scalar_atom(0.3, -0.2, 0.9, -4.0, 0.5),
            ],
        )
        .unwrap();
        let x = arr1(&[0.8]);
        let f = moe_forward(&x.view(), &g).unwrap();
        let h1 = expert_eval(&x.view(), &g.atoms[0].eta).unwrap();
        let h2 = expert_eval(&x.view(), &g.atoms[1].eta).unwrap();
        assert_abs_diff_eq!(f, 0.5 * (h1 + h2), epsilon = 1e-15);
    }

    #[test]
    fn mixture_composes_gate_and_experts() {
        let g = mono_pair();
        let f = moe_forward(&arr1(&[1.0]).view(), &g).unwrap();
        assert_abs_diff_eq!(f, 0.4621171572600098, epsilon = 1e-12);
    }

    #[test]
    fn quadpoly_with_shared_quadratic_reduces_to_linear_gate() {
        // Lattice-valued parameters make every product and sum exact, so
        // the reduction is bitwise.
        let quad = 0.25;
        let make = |tag: GateTag, a: f64| {
            MixingMeasure::new(
                GateKind::dense(tag),
                1,
                vec![
                    scalar_atom(a, 0.5, 0.25, 1.0, 0.0),
                    scalar_atom(a, -0.75, 0.5, -1.0, 0.0),
                    scalar_atom(a, 0.0, -1.0, 0.0, 1.0),
                ],
            )
            .unwrap()
        };
        let poly = make(GateTag::QuadPoly, quad);
        let lin = make(GateTag::Linear, 0.0);
        let x = arr1(&[0.5]);
        let sp = gate_scores(&x.view(), &poly).unwrap();
        let sl = gate_scores(&x.view(), &lin).unwrap();
        let pp = gate_probs(&sp.view(), None).unwrap();
        let pl = gate_probs(&sl.view(), None).unwrap();
        for (a, b) in pp.iter().zip(pl.iter()) {
            assert_eq!(a, b);
        }

        // Generic values agree to rounding error.
        let mut rng = crate::rng::stream_rng(5, "reduce");
        for _ in 0..50 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let poly = make(GateTag::QuadPoly, a);
            let x = arr1(&[rng.random_range(-1.0..1.0)]);
            let pp = gate_probs(&gate_scores(&x.view(), &poly).unwrap().view(), None).unwrap();
            let pl = gate_probs(&gate_scores(&x.view(), &lin).unwrap().view(), None).unwrap();
            for (a, b) in pp.iter().zip(pl.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_locally_lipschitz() {
        use crate::grad::{flatten_params, measure_with_params, sq_loss_grad};
        use crate::synth::Dataset;

        let mut rng = crate::rng::stream_rng(23, "lipschitz");
        let g = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![
                scalar_atom(0.4, 0.1, 0.2, 1.5, -0.3),
                scalar_atom(-0.2, 0.3, -0.1, -0.7, 0.8),
            ],
        )
        .unwrap();
        let eps = 1e-6;
        for _ in 0..20 {
            let x = arr1(&[rng.random_range(-1.0..1.0_f64)]);
            let f0 = moe_forward(&x.view(), &g).unwrap();
            // Bound the parameter gradient of x -> f at this instance via
            // the squared-loss gradient with a unit residual.
            let data = Dataset::from_parts(
                Array2::from_shape_vec((1, 1), vec![x[0]]).unwrap(),
                arr1(&[f0 + 0.5]),
            );
            let grad = sq_loss_grad(&g, &data).unwrap();
            let gnorm = grad
                .flatten()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let lip = 1.5 * gnorm + 1.0;

            let mut p = flatten_params(&g);
            let dir: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (pi, di) in p.iter_mut().zip(&dir) {
                *pi += eps * di / norm;
            }
            let g2 = measure_with_params(&g, &p);
            let f1 = moe_forward(&x.view(), &g2).unwrap();
            assert!(
                (f1 - f0).abs() <= lip * eps,
                "|df|={} exceeds {}*eps",
                (f1 - f0).abs(),
                lip
            );
        }
    }
}
