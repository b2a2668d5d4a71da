//! Voronoi-cell matching between a fitted and a true measure, the
//! associated parameter-space losses, and per-parameter error
//! extraction.
//!
//! A fitted atom belongs to the cell of the nearest true atom under the
//! concatenated parameter distance over (quadratic coefficient, linear
//! coefficient, expert parameters); the log-weight is excluded. Ties go
//! to the lower true index.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{ExpertParams, GateTag, MixingMeasure};

/// Map from each true-atom index to the fitted atoms assigned to it.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiAssignment {
    pub cells: Vec<Vec<usize>>,
}

fn frob_sq_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn l2_sq_diff(a: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn eta_sq_diff(a: &ExpertParams, b: &ExpertParams) -> f64 {
    match (a, b) {
        (
            ExpertParams::Linear {
                beta1: p1,
                beta0: p0,
            },
            ExpertParams::Linear {
                beta1: q1,
                beta0: q0,
            },
        ) => l2_sq_diff(p1, q1) + (p0 - q0) * (p0 - q0),
        (
            ExpertParams::TwoLayer {
                w: w1,
                v: v1,
                a: a1,
                a0: a01,
                ..
            },
            ExpertParams::TwoLayer {
                w: w2,
                v: v2,
                a: a2,
                a0: a02,
                ..
            },
        ) => {
            frob_sq_diff(w1, w2) + l2_sq_diff(v1, v2) + l2_sq_diff(a1, a2)
                + (a01 - a02) * (a01 - a02)
        }
        _ => unreachable!("architectures checked before distance"),
    }
}

fn check_compatible(fitted: &MixingMeasure, truth: &MixingMeasure) -> Result<()> {
    if fitted.d != truth.d {
        return Err(invalid("measures have different input dimensions"));
    }
    if !fitted.atoms[0].eta.same_shape(&truth.atoms[0].eta) {
        return Err(invalid("measures have different expert architectures"));
    }
    Ok(())
}

/// Assign every fitted atom to the cell of its nearest true atom.
pub fn assign_cells(fitted: &MixingMeasure, truth: &MixingMeasure) -> Result<VoronoiAssignment> {
    check_compatible(fitted, truth)?;
    let mut cells = vec![Vec::new(); truth.n_components()];
    for (i, atom) in fitted.atoms.iter().enumerate() {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (j, target) in truth.atoms.iter().enumerate() {
            let dist = frob_sq_diff(&atom.a, &target.a)
                + l2_sq_diff(&atom.b, &target.b)
                + eta_sq_diff(&atom.eta, &target.eta);
            if dist < best_dist {
                best_dist = dist;
                best = j;
            }
        }
        cells[best].push(i);
    }
    Ok(VoronoiAssignment { cells })
}

/// One cell's contribution to a loss.
#[derive(Clone, Debug, Serialize)]
pub struct CellContribution {
    pub cell: usize,
    pub members: Vec<usize>,
    pub atom_term: f64,
    pub weight_term: f64,
}

/// A loss split into its weight discrepancy and the contributions of
/// exactly-fitted (singleton) and over-fitted (multi-member) cells.
#[derive(Clone, Debug, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub weight_term: f64,
    pub exact_cells_term: f64,
    pub over_cells_term: f64,
    pub cells: Vec<CellContribution>,
}

struct BlockDiffs {
    a: f64,
    b: f64,
    eta: f64,
}

fn block_diffs(fitted: &MixingMeasure, truth: &MixingMeasure, i: usize, j: usize) -> BlockDiffs {
    let fa = &fitted.atoms[i];
    let ta = &truth.atoms[j];
    BlockDiffs {
        a: frob_sq_diff(&fa.a, &ta.a).sqrt(),
        b: l2_sq_diff(&fa.b, &ta.b).sqrt(),
        eta: eta_sq_diff(&fa.eta, &ta.eta).sqrt(),
    }
}

fn accumulate<F>(
    fitted: &MixingMeasure,
    truth: &MixingMeasure,
    assignment: &VoronoiAssignment,
    mut atom_term: F,
) -> Result<LossBreakdown>
where
    F: FnMut(usize, &BlockDiffs, usize, usize) -> Result<f64>,
{
    let mut weight_total = 0.0;
    let mut exact_total = 0.0;
    let mut over_total = 0.0;
    let mut cells = Vec::with_capacity(truth.n_components());
    for (j, members) in assignment.cells.iter().enumerate() {
        let mut cell_atoms = 0.0;
        let mut weight_sum = 0.0;
        for &i in members {
            let diffs = block_diffs(fitted, truth, i, j);
            let weight = fitted.atoms[i].weight();
            cell_atoms += weight * atom_term(members.len(), &diffs, i, j)?;
            weight_sum += weight;
        }
        let weight_term = (weight_sum - truth.atoms[j].weight()).abs();
        weight_total += weight_term;
        if members.len() > 1 {
            over_total += cell_atoms;
        } else {
            exact_total += cell_atoms;
        }
        cells.push(CellContribution {
            cell: j,
            members: members.clone(),
            atom_term: cell_atoms,
            weight_term,
        });
    }
    Ok(LossBreakdown {
        total: weight_total + exact_total + over_total,
        weight_term: weight_total,
        exact_cells_term: exact_total,
        over_cells_term: over_total,
        cells,
    })
}

/// Voronoi loss for the full quadratic gate. Over-fitted cells weigh the
/// block discrepancies by exponents tied to the cell's gating order
/// `rbar = order_for_cell(|cell|)`:
/// `|dA|^(rbar/2) + |db|^rbar + |deta|^2`; singleton cells use the plain
/// first-power norms; and every cell adds its absolute weight
/// discrepancy.
pub fn poly_gate_loss<F>(
    fitted: &MixingMeasure,
    truth: &MixingMeasure,
    order_for_cell: F,
) -> Result<LossBreakdown>
where
    F: Fn(usize) -> Option<u32>,
{
    if fitted.gate.tag != GateTag::QuadPoly || truth.gate.tag != GateTag::QuadPoly {
        return Err(invalid("this loss applies to quad-poly measures"));
    }
    let assignment = assign_cells(fitted, truth)?;
    accumulate(fitted, truth, &assignment, |cell_size, diffs, _, _| {
        if cell_size > 1 {
            let order = order_for_cell(cell_size).ok_or(Error::UnsupportedCellSize(cell_size))?;
            Ok(diffs.a.powi(order as i32 / 2)
                + diffs.b.powi(order as i32)
                + diffs.eta * diffs.eta)
        } else {
            Ok(diffs.a + diffs.b + diffs.eta)
        }
    })
}

/// Voronoi loss for the monomial gate: over-fitted cells use squared
/// block discrepancies `|dA|^2 + |deta|^2`, singletons the first powers,
/// plus the weight discrepancy.
pub fn mono_gate_loss(fitted: &MixingMeasure, truth: &MixingMeasure) -> Result<LossBreakdown> {
    if fitted.gate.tag != GateTag::QuadMono || truth.gate.tag != GateTag::QuadMono {
        return Err(invalid("this loss applies to quad-mono measures"));
    }
    let assignment = assign_cells(fitted, truth)?;
    accumulate(fitted, truth, &assignment, |cell_size, diffs, _, _| {
        if cell_size > 1 {
            Ok(diffs.a * diffs.a + diffs.eta * diffs.eta)
        } else {
            Ok(diffs.a + diffs.eta)
        }
    })
}

/// Voronoi loss for linear experts at order `r`: every cell contributes
/// `|dA|^r + |db|^r + |dbeta1|^r + |dbeta0|^r`, plus the weight
/// discrepancy.
pub fn linear_expert_loss(
    fitted: &MixingMeasure,
    truth: &MixingMeasure,
    r: u32,
) -> Result<LossBreakdown> {
    if r == 0 {
        return Err(invalid("order r must be at least 1"));
    }
    let linear = |m: &MixingMeasure| {
        matches!(m.expert_family(), crate::model::ExpertFamily::Linear)
    };
    if !linear(fitted) || !linear(truth) {
        return Err(invalid("this loss applies to linear-expert measures"));
    }
    let assignment = assign_cells(fitted, truth)?;
    accumulate(fitted, truth, &assignment, |_, diffs, i, j| {
        // The expert block splits into slope and intercept, each raised
        // to r on its own.
        let (db1, db0) = match (&fitted.atoms[i].eta, &truth.atoms[j].eta) {
            (
                ExpertParams::Linear {
                    beta1: p1,
                    beta0: p0,
                },
                ExpertParams::Linear {
                    beta1: q1,
                    beta0: q0,
                },
            ) => (l2_sq_diff(p1, q1).sqrt(), (p0 - q0).abs()),
            _ => unreachable!("families checked above"),
        };
        Ok(diffs.a.powi(r as i32)
            + diffs.b.powi(r as i32)
            + db1.powi(r as i32)
            + db0.powi(r as i32))
    })
}

/// Per-true-atom estimation errors: worst block discrepancy over the
/// cell members and the cell's weight discrepancy. Empty cells report
/// the distance to the nearest fitted atom and are flagged.
#[derive(Clone, Debug, Serialize)]
pub struct ParamErrors {
    pub err_a: f64,
    pub err_b: f64,
    pub err_eta: f64,
    pub err_w: f64,
    pub empty_cell: bool,
}

pub fn per_param_errors(fitted: &MixingMeasure, truth: &MixingMeasure) -> Result<Vec<ParamErrors>> {
    let assignment = assign_cells(fitted, truth)?;
    let mut out = Vec::with_capacity(truth.n_components());
    for (j, members) in assignment.cells.iter().enumerate() {
        if members.is_empty() {
            // Nearest fitted atom by the concatenated distance.
            let nearest = (0..fitted.n_components())
                .min_by(|&p, &q| {
                    let dp = block_diffs(fitted, truth, p, j);
                    let dq = block_diffs(fitted, truth, q, j);
                    let sp = dp.a * dp.a + dp.b * dp.b + dp.eta * dp.eta;
                    let sq = dq.a * dq.a + dq.b * dq.b + dq.eta * dq.eta;
                    sp.partial_cmp(&sq).expect("finite distances")
                })
                .expect("non-empty fitted measure");
            let diffs = block_diffs(fitted, truth, nearest, j);
            out.push(ParamErrors {
                err_a: diffs.a,
                err_b: diffs.b,
                err_eta: diffs.eta,
                err_w: truth.atoms[j].weight(),
                empty_cell: true,
            });
            continue;
        }
        let mut err = ParamErrors {
            err_a: 0.0,
            err_b: 0.0,
            err_eta: 0.0,
            err_w: 0.0,
            empty_cell: false,
        };
        let mut weight_sum = 0.0;
        for &i in members {
            let diffs = block_diffs(fitted, truth, i, j);
            err.err_a = err.err_a.max(diffs.a);
            err.err_b = err.err_b.max(diffs.b);
            err.err_eta = err.err_eta.max(diffs.eta);
            weight_sum += fitted.atoms[i].weight();
        }
        err.err_w = (weight_sum - truth.atoms[j].weight()).abs();
        out.push(err);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, ExpertFamily, GateKind};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, Array1, Array2};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn atom(ax: f64, bx: f64, c: f64, slope: f64, intercept: f64, d: usize) -> Atom {
        Atom {
            a: Array2::from_elem((d, d), ax),
            b: Array1::from_elem(d, bx),
            c,
            eta: ExpertParams::Linear {
                beta1: Array1::from_elem(d, slope),
                beta0: intercept,
            },
        }
    }

    fn poly_measure(atoms: Vec<Atom>, d: usize) -> MixingMeasure {
        MixingMeasure::new(GateKind::dense(GateTag::QuadPoly), d, atoms).unwrap()
    }

    fn spread_truth() -> MixingMeasure {
        poly_measure(
            vec![
                atom(0.5, 0.2, 0.1, 1.0, 0.0, 1),
                atom(-0.4, -0.6, -0.2, -1.0, 0.5, 1),
                atom(0.0, 0.9, 0.3, 0.2, -0.8, 1),
            ],
            1,
        )
    }

    fn order_lookup(m: usize) -> Option<u32> {
        crate::ident::min_unsolvable_order(m)
            .ok()
            .and_then(|b| b.exact())
    }

    #[test]
    fn exact_match_gives_identity_cells() {
        let truth = spread_truth();
        let assignment = assign_cells(&truth, &truth).unwrap();
        for (j, cell) in assignment.cells.iter().enumerate() {
            assert_eq!(cell, &vec![j]);
        }
    }

    #[test]
    fn equidistant_atom_goes_to_lower_index() {
        let truth = poly_measure(
            vec![atom(1.0, 0.0, 0.0, 0.0, 0.0, 1), atom(-1.0, 0.0, 0.0, 0.0, 0.0, 1)],
            1,
        );
        let fitted = poly_measure(vec![atom(0.0, 0.0, 0.0, 0.0, 0.0, 1)], 1);
        let assignment = assign_cells(&fitted, &truth).unwrap();
        assert_eq!(assignment.cells[0], vec![0]);
        assert!(assignment.cells[1].is_empty());
    }

    #[test]
    fn duplicated_atom_shares_a_cell() {
        let truth = spread_truth();
        let seed = (0..)
            .find(|&s| {
                let init = crate::fit::init_overspecified(&truth, 4, 0.0, s).unwrap();
                init.atoms[3].eta == truth.atoms[0].eta
            })
            .unwrap();
        let init = crate::fit::init_overspecified(&truth, 4, 0.0, seed).unwrap();
        let assignment = assign_cells(&init, &truth).unwrap();
        assert_eq!(assignment.cells[0], vec![0, 3]);
        assert_eq!(assignment.cells[1], vec![1]);
        assert_eq!(assignment.cells[2], vec![2]);
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let truth = spread_truth();
        let two_layer = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![Atom {
                a: Array2::zeros((1, 1)),
                b: Array1::zeros(1),
                c: 0.0,
                eta: ExpertParams::TwoLayer {
                    w: Array2::zeros((1, 1)),
                    v: Array1::zeros(1),
                    a: Array1::zeros(1),
                    a0: 0.0,
                    activation: crate::model::Activation::Relu,
                },
            }],
        )
        .unwrap();
        assert!(assign_cells(&two_layer, &truth).is_err());
    }

    #[test]
    fn losses_vanish_at_the_truth() {
        let truth = spread_truth();
        assert_eq!(poly_gate_loss(&truth, &truth, order_lookup).unwrap().total, 0.0);
        assert_eq!(linear_expert_loss(&truth, &truth, 1).unwrap().total, 0.0);
        let mono = MixingMeasure::new(
            GateKind::dense(GateTag::QuadMono),
            1,
            vec![atom(0.5, 0.0, 0.1, 1.0, 0.0, 1), atom(-0.4, 0.0, -0.2, -1.0, 0.5, 1)],
        )
        .unwrap();
        assert_eq!(mono_gate_loss(&mono, &mono).unwrap().total, 0.0);
    }

    #[test]
    fn weight_shift_is_the_only_term() {
        let truth = spread_truth();
        let mut fitted = truth.clone();
        let target = truth.atoms[0].weight() + 0.1;
        fitted.atoms[0].c = target.ln();
        let loss = poly_gate_loss(&fitted, &truth, order_lookup).unwrap();
        assert_abs_diff_eq!(loss.total, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(loss.weight_term, 0.1, epsilon = 1e-12);
        assert_eq!(loss.exact_cells_term, 0.0);
        assert_eq!(loss.over_cells_term, 0.0);
    }

    #[test]
    fn duplicated_atom_over_cell_term_by_hand() {
        let truth = spread_truth();
        let w0 = truth.atoms[0].weight();
        let mut atoms: Vec<Atom> = truth.atoms.clone();
        // Two half-weight copies of atom 0, one with the intercept
        // shifted by 0.01.
        let mut dup = atoms[0].clone();
        atoms[0].c -= std::f64::consts::LN_2;
        dup.c -= std::f64::consts::LN_2;
        if let ExpertParams::Linear { beta0, .. } = &mut dup.eta {
            *beta0 += 0.01;
        }
        atoms.push(dup);
        let fitted = poly_measure(atoms, 1);
        let loss = poly_gate_loss(&fitted, &truth, order_lookup).unwrap();
        // Over-cell: (w0/2) * |deta|^2 = (w0/2) * 1e-4.
        assert_abs_diff_eq!(loss.over_cells_term, 0.5 * w0 * 1e-4, epsilon = 1e-15);
        // Weight term vanishes; the split preserves the cell weight.
        assert!(loss.weight_term < 1e-12);
    }

    #[test]
    fn unsupported_cell_size_is_reported() {
        let truth = spread_truth();
        let mut atoms = truth.atoms.clone();
        for _ in 0..3 {
            atoms.push(truth.atoms[0].clone());
        }
        let fitted = poly_measure(atoms, 1);
        match poly_gate_loss(&fitted, &truth, order_lookup) {
            Err(Error::UnsupportedCellSize(4)) => {}
            other => panic!("expected unsupported cell size, got {other:?}"),
        }
    }

    #[test]
    fn mono_singleton_and_over_terms_by_hand() {
        let mk = |a0: f64, shift: f64, c: f64| {
            MixingMeasure::new(
                GateKind::dense(GateTag::QuadMono),
                1,
                vec![Atom {
                    a: Array2::from_elem((1, 1), a0 + shift),
                    b: Array1::zeros(1),
                    c,
                    eta: ExpertParams::Linear {
                        beta1: arr1(&[1.0]),
                        beta0: 0.0,
                    },
                }],
            )
            .unwrap()
        };
        let truth = mk(0.5, 0.0, 0.0);
        let fitted = mk(0.5, 0.2, 0.0);
        let loss = mono_gate_loss(&fitted, &truth).unwrap();
        // Singleton: weight 1 times |dA| = 0.2; weights match.
        assert_abs_diff_eq!(loss.total, 0.2, epsilon = 1e-12);

        // Duplicate with one copy displaced by 0.1 in A, all weight w.
        let w: f64 = 0.7;
        let mut atoms = vec![truth.atoms[0].clone(), truth.atoms[0].clone()];
        atoms[0].c = (w / 2.0_f64).ln();
        atoms[1].c = (w / 2.0_f64).ln();
        atoms[1].a[[0, 0]] += 0.1;
        let fitted =
            MixingMeasure::new(GateKind::dense(GateTag::QuadMono), 1, atoms).unwrap();
        let loss = mono_gate_loss(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(loss.over_cells_term, (w / 2.0) * 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(loss.weight_term, (w - 1.0f64).abs(), epsilon = 1e-12);
    }

    #[test]
    fn linear_expert_loss_first_order_intercept_only() {
        let truth = spread_truth();
        let mut fitted = truth.clone();
        if let ExpertParams::Linear { beta0, .. } = &mut fitted.atoms[0].eta {
            *beta0 += 0.3;
        }
        // Weight-1 singleton: contribution is exp(c)*0.3 plus nothing else.
        fitted.atoms[0].c = 0.0;
        let mut truth2 = truth.clone();
        truth2.atoms[0].c = 0.0;
        let loss = linear_expert_loss(&fitted, &truth2, 1).unwrap();
        assert_abs_diff_eq!(loss.total, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn linear_expert_loss_requires_linear_experts() {
        let truth = spread_truth();
        let two_layer = MixingMeasure::new(
            GateKind::dense(GateTag::QuadPoly),
            1,
            vec![Atom {
                a: Array2::zeros((1, 1)),
                b: Array1::zeros(1),
                c: 0.0,
                eta: ExpertParams::TwoLayer {
                    w: Array2::from_elem((1, 1), 0.5),
                    v: Array1::zeros(1),
                    a: Array1::from_elem(1, 1.0),
                    a0: 0.0,
                    activation: crate::model::Activation::Tanh,
                },
            }],
        )
        .unwrap();
        assert!(linear_expert_loss(&two_layer, &two_layer, 1).is_err());
        assert!(linear_expert_loss(&truth, &truth, 0).is_err());
    }

    #[test]
    fn losses_invariant_under_fitted_permutation() {
        let mut rng = crate::rng::stream_rng(31, "voronoi-perm");
        let truth = spread_truth();
        let mut atoms = truth.atoms.clone();
        atoms.push(atom(0.51, 0.19, -0.6, 1.05, 0.02, 1));
        for _ in 0..10 {
            let mut shuffled = atoms.clone();
            shuffled.shuffle(&mut rng);
            let base = poly_gate_loss(&poly_measure(atoms.clone(), 1), &truth, order_lookup)
                .unwrap()
                .total;
            let perm = poly_gate_loss(&poly_measure(shuffled, 1), &truth, order_lookup)
                .unwrap()
                .total;
            assert_abs_diff_eq!(base, perm, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_term_depends_only_on_cell_weight_sums() {
        let truth = spread_truth();
        let w0 = truth.atoms[0].weight();
        let mut atoms = truth.atoms.clone();
        atoms.push(truth.atoms[0].clone());
        // Split the cell-0 weight unevenly but with a fixed sum.
        let mut rng = crate::rng::stream_rng(32, "voronoi-weights");
        let mut last = None;
        for _ in 0..5 {
            let frac: f64 = rng.random_range(0.1..0.9);
            atoms[0].c = (w0 * frac).ln();
            atoms[3].c = (w0 * (1.0 - frac)).ln();
            let loss = poly_gate_loss(&poly_measure(atoms.clone(), 1), &truth, order_lookup)
                .unwrap();
            if let Some(prev) = last {
                assert_abs_diff_eq!(loss.weight_term, prev, epsilon = 1e-12);
            }
            last = Some(loss.weight_term);
        }
    }

    #[test]
    fn per_param_errors_at_truth_are_zero() {
        let truth = spread_truth();
        let errs = per_param_errors(&truth, &truth).unwrap();
        for e in errs {
            assert_eq!(e.err_a, 0.0);
            assert_eq!(e.err_b, 0.0);
            assert_eq!(e.err_eta, 0.0);
            assert_eq!(e.err_w, 0.0);
            assert!(!e.empty_cell);
        }
    }

    #[test]
    fn eta_shift_shows_up_in_one_row() {
        let truth = spread_truth();
        let mut fitted = truth.clone();
        if let ExpertParams::Linear { beta1, .. } = &mut fitted.atoms[1].eta {
            beta1[0] += 0.05;
        }
        let errs = per_param_errors(&fitted, &truth).unwrap();
        assert_abs_diff_eq!(errs[1].err_eta, 0.05, epsilon = 1e-12);
        assert_eq!(errs[0].err_eta, 0.0);
        assert_eq!(errs[2].err_eta, 0.0);
    }

    #[test]
    fn duplicated_copies_report_max_displacement() {
        let truth = spread_truth();
        let mut atoms = truth.atoms.clone();
        let mut dup = atoms[0].clone();
        let delta = 0.02;
        if let ExpertParams::Linear { beta0, .. } = &mut atoms[0].eta {
            *beta0 += delta;
        }
        if let ExpertParams::Linear { beta0, .. } = &mut dup.eta {
            *beta0 -= delta;
        }
        atoms.push(dup);
        let errs = per_param_errors(&poly_measure(atoms, 1), &truth).unwrap();
        assert_abs_diff_eq!(errs[0].err_eta, delta, epsilon = 1e-12);
    }

    #[test]
    fn empty_cells_are_flagged_with_nearest_distance() {
        let truth = spread_truth();
        // A single fitted atom near truth atom 0 leaves cells 1 and 2 empty.
        let fitted = poly_measure(vec![truth.atoms[0].clone()], 1);
        let errs = per_param_errors(&fitted, &truth).unwrap();
        assert!(!errs[0].empty_cell);
        assert!(errs[1].empty_cell && errs[2].empty_cell);
        assert!(errs[1].err_eta > 0.0);
        assert_abs_diff_eq!(errs[1].err_w, truth.atoms[1].weight(), epsilon = 1e-12);
    }

    #[test]
    fn breakdown_serializes_with_cell_detail() {
        let truth = spread_truth();
        let loss = poly_gate_loss(&truth, &truth, order_lookup).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&loss).unwrap()).unwrap();
        assert!(value["cells"].as_array().unwrap().len() == 3);
        assert!(value["total"].is_number());
    }

    #[test]
    fn family_accessor_matches() {
        let truth = spread_truth();
        assert_eq!(truth.expert_family(), ExpertFamily::Linear);
    }
}
