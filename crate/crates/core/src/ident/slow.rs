//! Explicit slow sequences for linear experts: measures that drive the
//! linear-expert Voronoi loss to zero polynomially while the regression
//! functions collapse an order faster, so no loss-versus-function bound
//! can hold uniformly.
//!
//! The construction duplicates the first true atom, splits its intercept
//! by `1/n` in opposite directions (the affine expert makes the split
//! cancel exactly in function space), and inflates the duplicated pair's
//! total weight by `1/n^{r+1}`; the remaining atoms are copied verbatim.
//! The loss then has the closed form
//! `1/n^{r+1} + (w_1 + 1/n^{r+1}) / n^r` with `w_1` the first true
//! weight.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fit::fn_l2_distance;
use crate::model::{ExpertFamily, ExpertParams, GateTag, MixingMeasure};
use crate::synth::InputDist;
use crate::voronoi::linear_expert_loss;

/// One point of the slow-sequence sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SlowSequencePoint {
    pub n: u64,
    pub r: u32,
    pub loss_closed_form: f64,
    pub loss_computed: f64,
    pub fn_dist: f64,
}

/// Build the drifting measure at index `n` for loss order `r` and
/// evaluate both the closed-form and the computed loss, plus the
/// Monte-Carlo function distance.
///
/// The closed form is evaluated from the duplicated atoms' realized
/// weight (`exp` of the stored log-weight), so it shares no code with
/// the Voronoi loss path but does not round through the log-weight
/// twice.
pub fn slow_sequence(
    truth: &MixingMeasure,
    n: u64,
    r: u32,
    input_dist: InputDist,
    mc_points: usize,
    seed: u64,
) -> Result<(MixingMeasure, SlowSequencePoint)> {
    truth.validate()?;
    if truth.expert_family() != ExpertFamily::Linear {
        return Err(invalid("slow sequences are defined for linear experts"));
    }
    if truth.gate.tag != GateTag::QuadPoly {
        return Err(invalid("slow sequences use the full quadratic gate"));
    }
    if n < 2 {
        return Err(invalid("sequence index must be at least 2"));
    }
    if r == 0 {
        return Err(invalid("loss order must be at least 1"));
    }

    let nf = n as f64;
    let w1 = truth.atoms[0].weight();
    let excess = nf.powi(-(r as i32) - 1);
    let split = 1.0 / nf;
    let dup_weight = 0.5 * w1 + 0.5 * excess;

    let mut atoms = Vec::with_capacity(truth.n_components() + 1);
    for sign in [1.0, -1.0] {
        let mut atom = truth.atoms[0].clone();
        atom.c = dup_weight.ln();
        match &mut atom.eta {
            ExpertParams::Linear { beta0, .. } => *beta0 += sign * split,
            _ => unreachable!("family checked above"),
        }
        atoms.push(atom);
    }
    atoms.extend(truth.atoms[1..].iter().cloned());
    let drifted = MixingMeasure::new(truth.gate, truth.d, atoms)?;

    // Realized duplicated weight after the log-weight round trip.
    let realized = drifted.atoms[0].weight();
    let realized_excess = (2.0 * realized - w1).abs();
    let loss_closed_form = realized_excess + 2.0 * realized * split.powi(r as i32);

    let loss_computed = linear_expert_loss(&drifted, truth, r)?.total;
    let fn_dist = fn_l2_distance(&drifted, truth, input_dist, mc_points, seed)?;
    Ok((
        drifted,
        SlowSequencePoint {
            n,
            r,
            loss_closed_form,
            loss_computed,
            fn_dist,
        },
    ))
}
