//! Experiment orchestration: the synthetic convergence-rate study with
//! log-log slope estimation, plus the overhead calculator.

mod io;
mod overhead;
mod slope;

pub use io::{rows_to_csv, write_rate_outputs};
pub use overhead::{overhead_report, ArchSpec, OverheadReport};
pub use slope::{loglog_slope, SlopeFit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Error, Result};
use crate::fit::{fn_l2_distance, gd_fit, init_overspecified, FitConfig};
use crate::ident::min_unsolvable_order;
use crate::model::{ExpertFamily, GateTag};
use crate::rng::derive_seed;
use crate::synth::{config_hash, generate_dataset, sample_true_measure, SynthConfig};
use crate::voronoi::{linear_expert_loss, mono_gate_loss, per_param_errors, poly_gate_loss};

/// Which Voronoi loss a rate run tracks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// Full-quadratic-gate loss (gate must be quad-poly).
    Poly,
    /// Monomial-gate loss (gate must be quad-mono).
    Mono,
    /// Linear-expert loss at order `r` (experts must be linear).
    LinearExperts { r: u32 },
}

fn default_schema_version() -> u32 {
    1
}
fn default_mc_points() -> usize {
    20_000
}

/// Full configuration of a rate experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub synth: SynthConfig,
    pub fit: FitConfig,
    /// Strictly increasing sample sizes, each at least 10.
    pub n_grid: Vec<u64>,
    pub reps: u32,
    pub master_seed: u64,
    pub loss: LossSpec,
    /// Monte-Carlo points for the function-space distance.
    #[serde(default = "default_mc_points")]
    pub mc_points: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(invalid(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        self.synth.validate()?;
        self.fit.validate()?;
        if self.fit.n_fit < self.synth.n_star {
            return Err(invalid("n_fit must be at least n_star"));
        }
        if self.n_grid.is_empty() {
            return Err(invalid("n_grid must be nonempty"));
        }
        for window in self.n_grid.windows(2) {
            if window[1] <= window[0] {
                return Err(invalid("n_grid must be strictly increasing"));
            }
        }
        if self.n_grid[0] < 10 {
            return Err(invalid("every n must be at least 10"));
        }
        if self.reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        if self.mc_points == 0 {
            return Err(invalid("mc_points must be at least 1"));
        }
        match self.loss {
            LossSpec::Poly => {
                if self.synth.gate != GateTag::QuadPoly {
                    return Err(invalid("the poly loss needs the quad_poly gate"));
                }
            }
            LossSpec::Mono => {
                if self.synth.gate != GateTag::QuadMono {
                    return Err(invalid("the mono loss needs the quad_mono gate"));
                }
            }
            LossSpec::LinearExperts { r } => {
                if r == 0 {
                    return Err(invalid("loss order r must be at least 1"));
                }
                if self.synth.expert.family != ExpertFamily::Linear {
                    return Err(invalid("the linear-expert loss needs linear experts"));
                }
            }
        }
        Ok(())
    }
}

/// One experiment cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: u64,
    pub rep: u32,
    pub divergent: bool,
    pub loss: f64,
    pub err_a: f64,
    pub err_b: f64,
    pub err_eta: f64,
    pub err_w: f64,
    pub fn_dist: f64,
}

/// Log-log slopes per tracked column; absent when a column has
/// nonpositive means or fewer than two grid points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlopeTable {
    pub loss: Option<SlopeFit>,
    pub err_a: Option<SlopeFit>,
    pub err_b: Option<SlopeFit>,
    pub err_eta: Option<SlopeFit>,
    pub err_w: Option<SlopeFit>,
    pub fn_dist: Option<SlopeFit>,
}

/// Rows plus fitted slopes for one configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub n_grid: Vec<u64>,
    pub reps: u32,
    pub rows: Vec<RateRow>,
    pub slopes: SlopeTable,
}

fn divergent_row(n: u64, rep: u32) -> RateRow {
    RateRow {
        n,
        rep,
        divergent: true,
        loss: f64::NAN,
        err_a: f64::NAN,
        err_b: f64::NAN,
        err_eta: f64::NAN,
        err_w: f64::NAN,
        fn_dist: f64::NAN,
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    truth: &crate::model::MixingMeasure,
    n_idx: usize,
    rep: u32,
) -> Result<RateRow> {
    let n = cfg.n_grid[n_idx];
    let cell_seed = derive_seed(cfg.master_seed, &format!("cell/{n_idx}/{rep}"));
    let data = generate_dataset(truth, &cfg.synth, n as usize, cell_seed)?;
    let g0 = init_overspecified(
        truth,
        cfg.fit.n_fit,
        cfg.fit.perturb_scale,
        derive_seed(cell_seed, "init"),
    )?;
    let fitted = match gd_fit(&g0, &data, &cfg.fit) {
        Ok((fitted, _)) => fitted,
        Err(Error::Divergence { .. }) => return Ok(divergent_row(n, rep)),
        Err(other) => return Err(other),
    };

    let loss_value = match cfg.loss {
        LossSpec::Poly => poly_gate_loss(&fitted, truth, |m| {
            min_unsolvable_order(m).ok().and_then(|b| b.exact())
        })
        .map(|b| b.total),
        LossSpec::Mono => mono_gate_loss(&fitted, truth).map(|b| b.total),
        LossSpec::LinearExperts { r } => linear_expert_loss(&fitted, truth, r).map(|b| b.total),
    };
    let loss_value = match loss_value {
        Ok(value) => value,
        // A fit that wandered far enough to overload one Voronoi cell is
        // treated like a divergent run.
        Err(Error::UnsupportedCellSize(_)) => return Ok(divergent_row(n, rep)),
        Err(other) => return Err(other),
    };

    let errors = per_param_errors(&fitted, truth)?;
    let fold = |pick: fn(&crate::voronoi::ParamErrors) -> f64| {
        errors.iter().map(pick).fold(0.0f64, f64::max)
    };
    let fn_dist = fn_l2_distance(
        &fitted,
        truth,
        cfg.synth.input_dist,
        cfg.mc_points,
        derive_seed(cell_seed, "mc"),
    )?;
    Ok(RateRow {
        n,
        rep,
        divergent: false,
        loss: loss_value,
        err_a: fold(|e| e.err_a),
        err_b: fold(|e| e.err_b),
        err_eta: fold(|e| e.err_eta),
        err_w: fold(|e| e.err_w),
        fn_dist,
    })
}

fn column_slope(
    rows: &[RateRow],
    n_grid: &[u64],
    pick: fn(&RateRow) -> f64,
) -> Option<SlopeFit> {
    if n_grid.len() < 2 {
        return None;
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let values: Vec<f64> = rows
            .iter()
            .filter(|row| row.n == n && !row.divergent)
            .map(pick)
            .collect();
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if !(mean > 0.0) {
            return None;
        }
        points.push((n as f64, mean));
    }
    loglog_slope(&points).ok()
}

/// Run the full rate experiment: one ground-truth draw, then an
/// independent dataset, over-specified initialization, gradient-descent
/// fit, and loss/error evaluation per `(n, rep)` cell, followed by
/// log-log slope fits of the per-`n` means.
///
/// Cells are independent jobs; results land in a table addressed by
/// cell index, so the output is byte-identical for any worker count.
pub fn run_rate_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RateReport> {
    cfg.validate()?;
    let truth = sample_true_measure(&cfg.synth, cfg.master_seed)?;
    let cells: Vec<(usize, u32)> = (0..cfg.n_grid.len())
        .flat_map(|n_idx| (0..cfg.reps).map(move |rep| (n_idx, rep)))
        .collect();

    let compute = |&(n_idx, rep): &(usize, u32)| run_cell(cfg, &truth, n_idx, rep);
    let rows: Result<Vec<RateRow>> = match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| numerical(format!("worker pool: {e}")))?;
            pool.install(|| cells.par_iter().map(compute).collect())
        }
        None => cells.par_iter().map(compute).collect(),
    };
    let rows = rows?;

    let divergent = rows.iter().filter(|row| row.divergent).count();
    if 5 * divergent > rows.len() {
        return Err(numerical(format!(
            "{divergent} of {} cells diverged",
            rows.len()
        )));
    }

    let slopes = SlopeTable {
        loss: column_slope(&rows, &cfg.n_grid, |r| r.loss),
        err_a: column_slope(&rows, &cfg.n_grid, |r| r.err_a),
        err_b: column_slope(&rows, &cfg.n_grid, |r| r.err_b),
        err_eta: column_slope(&rows, &cfg.n_grid, |r| r.err_eta),
        err_w: column_slope(&rows, &cfg.n_grid, |r| r.err_w),
        fn_dist: column_slope(&rows, &cfg.n_grid, |r| r.fn_dist),
    };
    Ok(RateReport {
        schema_version: 1,
        config_hash: config_hash(cfg),
        n_grid: cfg.n_grid.clone(),
        reps: cfg.reps,
        rows,
        slopes,
    })
}

/// Seven log-spaced sample sizes from `10^3` to `10^5`.
pub fn default_n_grid() -> Vec<u64> {
    (0..7)
        .map(|k| 10f64.powf(3.0 + k as f64 / 3.0).round() as u64)
        .collect()
}
