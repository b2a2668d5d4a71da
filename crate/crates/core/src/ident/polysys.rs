//! The coupled moment system that governs over-specified quadratic-gate
//! collapse, and a multi-start least-squares search for its non-trivial
//! solutions.
//!
//! For unknowns `(p_l, g1_l, g2_l)`, equation `alpha` reads
//!
//! `sum_l sum_{n1 + 2 n2 = alpha} p_l^2 g1_l^{n1} g2_l^{n2} / (n1! n2!) = 0`
//!
//! for `alpha = 1..r`. A solution is non-trivial when every `p_l` is
//! nonzero and some `g1_l` is nonzero. The smallest `r` with no
//! non-trivial solution is 1 for one component, 4 for two, 6 for three,
//! and at least 7 beyond that; these thresholds set the slow
//! over-specified gating rates.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::rng::stream_rng;

/// Exact threshold or a lower bound when the exact value is unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderBound {
    Exact(u32),
    LowerBound(u32),
}

impl OrderBound {
    pub fn exact(self) -> Option<u32> {
        match self {
            OrderBound::Exact(v) => Some(v),
            OrderBound::LowerBound(_) => None,
        }
    }
}

/// Smallest system order with only trivial solutions, per component
/// count `m`.
pub fn min_unsolvable_order(m: usize) -> Result<OrderBound> {
    match m {
        0 => Err(invalid("component count must be at least 1")),
        1 => Ok(OrderBound::Exact(1)),
        2 => Ok(OrderBound::Exact(4)),
        3 => Ok(OrderBound::Exact(6)),
        _ => Ok(OrderBound::LowerBound(7)),
    }
}

/// Exponential-generating-function coefficients
/// `T_alpha = sum_{n1 + 2 n2 = alpha} g1^{n1} g2^{n2} / (n1! n2!)`,
/// for `alpha = 0..=r`, via `alpha T_alpha = g1 T_{alpha-1} + 2 g2 T_{alpha-2}`.
fn egf_coeffs(g1: f64, g2: f64, r: u32) -> Vec<f64> {
    let mut t = Vec::with_capacity(r as usize + 1);
    t.push(1.0);
    if r >= 1 {
        t.push(g1);
    }
    for alpha in 2..=r as usize {
        let value = (g1 * t[alpha - 1] + 2.0 * g2 * t[alpha - 2]) / alpha as f64;
        t.push(value);
    }
    t
}

/// Residual vector of the moment system, entries `alpha = 1..=r`.
pub fn polysys_residual(p: &[f64], g1: &[f64], g2: &[f64], r: u32) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(invalid("system order must be at least 1"));
    }
    if p.len() != g1.len() || p.len() != g2.len() || p.is_empty() {
        return Err(invalid("component vectors must share a nonzero length"));
    }
    let mut residual = vec![0.0; r as usize];
    for l in 0..p.len() {
        let t = egf_coeffs(g1[l], g2[l], r);
        let p2 = p[l] * p[l];
        for alpha in 1..=r as usize {
            residual[alpha - 1] += p2 * t[alpha];
        }
    }
    Ok(residual)
}

/// Best point found by [`polysys_search`].
#[derive(Clone, Debug, Serialize)]
pub struct PolysysSearchResult {
    pub best_residual_norm: f64,
    pub best_p: Vec<f64>,
    pub best_g1: Vec<f64>,
    pub best_g2: Vec<f64>,
    pub restarts: usize,
}

/// Free parameters behind the constraint chart. Every iterate satisfies
/// `|p_l| >= 0.1` through `p_l = 0.1 + s_l^2`, and `max_l |g1_l| >= 0.1`
/// through a pivot coordinate `g1_pivot = sign (0.1 + t^2)`; the pivot
/// index and sign rotate across restarts so all branches of the
/// constraint set are explored.
struct Chart {
    m: usize,
    pivot: usize,
    sign: f64,
}

impl Chart {
    fn dim(&self) -> usize {
        3 * self.m
    }

    /// Free vector -> (p, g1, g2).
    fn realize(&self, free: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.m;
        let mut p = Vec::with_capacity(m);
        let mut g1 = Vec::with_capacity(m);
        let mut g2 = Vec::with_capacity(m);
        for l in 0..m {
            p.push(0.1 + free[l] * free[l]);
        }
        for l in 0..m {
            let raw = free[m + l];
            if l == self.pivot {
                g1.push(self.sign * (0.1 + raw * raw));
            } else {
                g1.push(raw);
            }
        }
        for l in 0..m {
            g2.push(free[2 * m + l]);
        }
        (p, g1, g2)
    }

    /// Jacobian of the residual with respect to the free vector, using
    /// the closed-form partials of the residual in `(p, g1, g2)`.
    fn jacobian(&self, free: &[f64], r: u32) -> Vec<Vec<f64>> {
        let m = self.m;
        let (p, g1, g2) = self.realize(free);
        let mut jac = vec![vec![0.0; self.dim()]; r as usize];
        for l in 0..m {
            let t = egf_coeffs(g1[l], g2[l], r);
            let p2 = p[l] * p[l];
            for alpha in 1..=r as usize {
                let row = &mut jac[alpha - 1];
                // d/dp_l = 2 p_l T_alpha, then p_l = 0.1 + s^2.
                row[l] = 2.0 * p[l] * t[alpha] * 2.0 * free[l];
                // d/dg1_l = p^2 T_{alpha-1}.
                let dg1 = p2 * t[alpha - 1];
                row[m + l] = if l == self.pivot {
                    dg1 * self.sign * 2.0 * free[m + l]
                } else {
                    dg1
                };
                // d/dg2_l = p^2 T_{alpha-2}.
                row[2 * m + l] = if alpha >= 2 { p2 * t[alpha - 2] } else { 0.0 };
            }
        }
        jac
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Damped Gauss-Newton minimization of the residual over one chart.
/// Returns the best free vector and its squared residual norm.
fn levenberg_marquardt(chart: &Chart, r: u32, start: Vec<f64>) -> (Vec<f64>, f64) {
    let dim = chart.dim();
    let mut free = start;
    let (p, g1, g2) = chart.realize(&free);
    let mut residual = polysys_residual(&p, &g1, &g2, r).expect("valid shapes");
    let mut cost = norm_sq(&residual);
    let mut lambda: f64 = 1e-3;

    for _ in 0..400 {
        if cost < 1e-26 || lambda > 1e14 {
            break;
        }
        let jac = chart.jacobian(&free, r);
        // Normal equations (J'J + lambda I) delta = -J'res.
        let mut jtj = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let mut jtr = nalgebra::DVector::<f64>::zeros(dim);
        for (row, res) in jac.iter().zip(&residual) {
            for i in 0..dim {
                jtr[i] += row[i] * res;
                for j in 0..dim {
                    jtj[(i, j)] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda;
            }
            let delta = match damped.cholesky() {
                Some(chol) => chol.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate: Vec<f64> = free
                .iter()
                .enumerate()
                .map(|(i, v)| v - delta[i])
                .collect();
            let (p, g1, g2) = chart.realize(&candidate);
            let cand_res = polysys_residual(&p, &g1, &g2, r).expect("valid shapes");
            let cand_cost = norm_sq(&cand_res);
            if cand_cost < cost {
                free = candidate;
                residual = cand_res;
                cost = cand_cost;
                lambda = (lambda / 3.0).max(1e-14);
                improved = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    (free, cost)
}

/// Multi-start search for non-trivial solutions of the moment system
/// under the constraints `|p_l| >= 0.1` and `max_l |g1_l| >= 0.1`.
///
/// Evidence semantics: a best residual below `1e-8` certifies that a
/// non-trivial solution exists (so the threshold exceeds `r`); a floor
/// after the restart budget is evidence, not proof, of non-existence.
pub fn polysys_search(m: usize, r: u32, budget: usize, seed: u64) -> Result<PolysysSearchResult> {
    if m == 0 {
        return Err(invalid("component count must be at least 1"));
    }
    if r == 0 {
        return Err(invalid("system order must be at least 1"));
    }
    if budget == 0 {
        return Err(invalid("restart budget must be at least 1"));
    }
    let mut best: Option<(f64, Vec<f64>, Chart)> = None;
    for restart in 0..budget {
        let chart = Chart {
            m,
            pivot: restart % m,
            sign: if (restart / m) % 2 == 0 { 1.0 } else { -1.0 },
        };
        let mut rng = stream_rng(seed, &format!("polysys/{restart}"));
        let start: Vec<f64> = (0..chart.dim())
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let (free, cost) = levenberg_marquardt(&chart, r, start);
        let replace = match &best {
            Some((best_cost, _, _)) => cost < *best_cost,
            None => true,
        };
        if replace {
            best = Some((cost, free, chart));
        }
    }
    let (cost, free, chart) = best.expect("budget >= 1");
    let (p, g1, g2) = chart.realize(&free);
    Ok(PolysysSearchResult {
        best_residual_norm: cost.sqrt(),
        best_p: p,
        best_g1: g1,
        best_g2: g2,
        restarts: budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_match_known_values() {
        assert!(min_unsolvable_order(0).is_err());
        assert_eq!(min_unsolvable_order(1).unwrap(), OrderBound::Exact(1));
        assert_eq!(min_unsolvable_order(2).unwrap(), OrderBound::Exact(4));
        assert_eq!(min_unsolvable_order(3).unwrap(), OrderBound::Exact(6));
        assert_eq!(min_unsolvable_order(4).unwrap(), OrderBound::LowerBound(7));
        assert_eq!(min_unsolvable_order(9).unwrap(), OrderBound::LowerBound(7));
    }

    #[test]
    fn single_component_residual_by_hand() {
        // g1 = 0: only even alpha survive, with value g2^{alpha/2}/(alpha/2)!.
        let t = 0.37;
        let res = polysys_residual(&[1.0], &[0.0], &[t], 6).unwrap();
        assert_eq!(res[0], 0.0);
        assert!((res[1] - t).abs() < 1e-15);
        assert_eq!(res[2], 0.0);
        assert!((res[3] - t * t / 2.0).abs() < 1e-15);
        assert_eq!(res[4], 0.0);
        assert!((res[5] - t * t * t / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gammas_are_the_trivial_solution() {
        let res = polysys_residual(&[0.7, -1.3], &[0.0, 0.0], &[0.0, 0.0], 5).unwrap();
        assert!(res.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_component_cancellation_by_hand() {
        let res = polysys_residual(&[1.0, 1.0], &[1.0, -1.0], &[0.0, 0.0], 2).unwrap();
        assert_eq!(res[0], 0.0);
        assert!((res[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_is_even_in_each_p() {
        let res_pos = polysys_residual(&[0.8, 1.2], &[0.3, -0.9], &[0.1, 0.4], 4).unwrap();
        let res_neg = polysys_residual(&[-0.8, 1.2], &[0.3, -0.9], &[0.1, 0.4], 4).unwrap();
        assert_eq!(res_pos, res_neg);
    }

    #[test]
    fn search_finds_solutions_below_threshold_orders() {
        // Orders strictly below the threshold admit non-trivial solutions.
        let result = polysys_search(2, 3, 40, 7).unwrap();
        assert!(
            result.best_residual_norm < 1e-8,
            "m=2 r=3: {}",
            result.best_residual_norm
        );
        assert!(result.best_p.iter().all(|p| p.abs() >= 0.1));
        assert!(result.best_g1.iter().any(|g| g.abs() >= 0.1));

        let result = polysys_search(3, 5, 60, 8).unwrap();
        assert!(
            result.best_residual_norm < 1e-8,
            "m=3 r=5: {}",
            result.best_residual_norm
        );
    }

    #[test]
    fn constrained_floor_for_one_component() {
        // |p^2 g1| >= 0.01 * 0.1 under the constraints.
        let result = polysys_search(1, 1, 20, 9).unwrap();
        assert!(
            result.best_residual_norm >= 1e-3,
            "floor {}",
            result.best_residual_norm
        );
    }

    #[test]
    fn verified_solution_checks_out() {
        let result = polysys_search(2, 3, 40, 10).unwrap();
        let res = polysys_residual(&result.best_p, &result.best_g1, &result.best_g2, 3).unwrap();
        assert!((norm_sq(&res).sqrt() - result.best_residual_norm).abs() < 1e-12);
    }
}
