//! Least-squares fitting of an over-specified mixing measure by
//! full-batch gradient descent, plus a Monte-Carlo function-space
//! distance.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grad::{sq_loss, sq_loss_and_grad, GradientRecord};
use crate::model::{moe_forward, ExpertParams, MixingMeasure};
use crate::rng::stream_rng;
use crate::synth::{Dataset, InputDist};

fn default_lr() -> f64 {
    0.1
}
fn default_steps() -> usize {
    10
}
fn default_perturb() -> f64 {
    0.01
}

/// Gradient-descent configuration. One step is one full-batch update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Std of the Gaussian perturbation applied to every unmasked
    /// parameter entry at initialization.
    #[serde(default = "default_perturb")]
    pub perturb_scale: f64,
    /// Fitted component count; must be at least the true count.
    pub n_fit: usize,
    /// Optional absolute clamp on every parameter entry after each step,
    /// as divergence protection. Off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_abs: Option<f64>,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.steps == 0 {
            return Err(invalid("step count must be at least 1"));
        }
        if self.perturb_scale < 0.0 {
            return Err(invalid("perturbation scale must be nonnegative"));
        }
        Ok(())
    }
}

/// Initialize an over-specified measure near the truth: the first
/// `n_star` atoms copy the true atoms, each extra atom duplicates a
/// uniformly chosen true atom, every copy of a `k`-fold duplicated atom
/// has its log-weight shifted by `-ln k` (so the initial weight per cell
/// approximates the true weight), and finally every unmasked parameter
/// entry receives i.i.d. `N(0, perturb_scale^2)` noise.
pub fn init_overspecified(
    truth: &MixingMeasure,
    n_fit: usize,
    perturb_scale: f64,
    seed: u64,
) -> Result<MixingMeasure> {
    truth.validate()?;
    let n_star = truth.n_components();
    if n_fit < n_star {
        return Err(invalid(format!(
            "n_fit={n_fit} is below the true component count {n_star}"
        )));
    }
    let mut rng = stream_rng(seed, "init");
    let mut source: Vec<usize> = (0..n_star).collect();
    for _ in n_star..n_fit {
        source.push(rng.random_range(0..n_star));
    }
    let mut copies = vec![0usize; n_star];
    for &j in &source {
        copies[j] += 1;
    }

    let mut atoms = Vec::with_capacity(n_fit);
    for &j in &source {
        let mut atom = truth.atoms[j].clone();
        if copies[j] > 1 {
            atom.c -= (copies[j] as f64).ln();
        }
        atoms.push(atom);
    }

    if perturb_scale > 0.0 {
        let uses_quad = truth.gate.tag.uses_quad();
        let uses_lin = truth.gate.tag.uses_lin();
        let mut jitter = |entry: &mut f64| {
            let z: f64 = StandardNormal.sample(&mut rng);
            *entry += perturb_scale * z;
        };
        for atom in &mut atoms {
            if uses_quad {
                atom.a.iter_mut().for_each(&mut jitter);
            }
            if uses_lin {
                atom.b.iter_mut().for_each(&mut jitter);
            }
            jitter(&mut atom.c);
            match &mut atom.eta {
                ExpertParams::Linear { beta1, beta0 } => {
                    beta1.iter_mut().for_each(&mut jitter);
                    jitter(beta0);
                }
                ExpertParams::TwoLayer { w, v, a, a0, .. } => {
                    w.iter_mut().for_each(&mut jitter);
                    v.iter_mut().for_each(&mut jitter);
                    a.iter_mut().for_each(&mut jitter);
                    jitter(a0);
                }
            }
        }
    }

    MixingMeasure::new(truth.gate, truth.d, atoms)
}

fn apply_step(measure: &mut MixingMeasure, grad: &GradientRecord, lr: f64, clamp: Option<f64>) {
    let uses_quad = measure.gate.tag.uses_quad();
    let uses_lin = measure.gate.tag.uses_lin();
    let bound = clamp.unwrap_or(f64::INFINITY);
    let update = |entry: &mut f64, g: f64| {
        *entry = (*entry - lr * g).clamp(-bound, bound);
    };
    for (atom, ag) in measure.atoms.iter_mut().zip(&grad.atoms) {
        if uses_quad {
            for (entry, g) in atom.a.iter_mut().zip(ag.a.iter()) {
                update(entry, *g);
            }
        }
        if uses_lin {
            for (entry, g) in atom.b.iter_mut().zip(ag.b.iter()) {
                update(entry, *g);
            }
        }
        update(&mut atom.c, ag.c);
        match (&mut atom.eta, &ag.eta) {
            (
                ExpertParams::Linear { beta1, beta0 },
                crate::grad::ExpertGrad::Linear {
                    beta1: gb1,
                    beta0: gb0,
                },
            ) => {
                for (entry, g) in beta1.iter_mut().zip(gb1.iter()) {
                    update(entry, *g);
                }
                update(beta0, *gb0);
            }
            (
                ExpertParams::TwoLayer { w, v, a, a0, .. },
                crate::grad::ExpertGrad::TwoLayer {
                    w: gw,
                    v: gv,
                    a: ga,
                    a0: ga0,
                },
            ) => {
                for (entry, g) in w.iter_mut().zip(gw.iter()) {
                    update(entry, *g);
                }
                for (entry, g) in v.iter_mut().zip(gv.iter()) {
                    update(entry, *g);
                }
                for (entry, g) in a.iter_mut().zip(ga.iter()) {
                    update(entry, *g);
                }
                update(a0, *ga0);
            }
            _ => unreachable!("gradient mirrors the measure"),
        }
    }
}

/// Full-batch gradient descent from `g0`. Returns the fitted measure and
/// the loss history (`steps + 1` entries, starting at the initial loss).
/// Masked parameter blocks are never touched.
pub fn gd_fit(
    g0: &MixingMeasure,
    data: &Dataset,
    cfg: &FitConfig,
) -> Result<(MixingMeasure, Vec<f64>)> {
    cfg.validate()?;
    g0.validate()?;
    let mut measure = g0.clone();
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let (loss, grad) = sq_loss_and_grad(&measure, data).map_err(|e| match e {
            Error::InvalidArgument(m) if step > 0 => Error::Divergence { step, message: m },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("loss became {loss}"),
            });
        }
        history.push(loss);
        apply_step(&mut measure, &grad, cfg.lr, cfg.clamp_abs);
    }
    let final_loss = sq_loss(&measure, data).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Divergence {
            step: cfg.steps,
            message: m,
        },
        other => other,
    })?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            message: format!("loss became {final_loss}"),
        });
    }
    history.push(final_loss);
    Ok((measure, history))
}

/// Monte-Carlo L2 distance between two regression functions:
/// `sqrt(mean_j (f1(x_j) - f2(x_j))^2)` over `m_points` draws from the
/// input distribution.
pub fn fn_l2_distance(
    g1: &MixingMeasure,
    g2: &MixingMeasure,
    input_dist: InputDist,
    m_points: usize,
    seed: u64,
) -> Result<f64> {
    if m_points == 0 {
        return Err(invalid("m_points must be at least 1"));
    }
    if g1.d != g2.d {
        return Err(invalid("measures have different input dimensions"));
    }
    let mut rng = stream_rng(seed, "fn-dist");
    let d = g1.d;
    let mut x = ndarray::Array1::zeros(d);
    let mut acc = 0.0;
    for _ in 0..m_points {
        for entry in x.iter_mut() {
            *entry = match input_dist {
                InputDist::UniformCube { b } => rng.random::<f64>() * 2.0 * b - b,
                InputDist::Gaussian => StandardNormal.sample(&mut rng),
            };
        }
        let diff = moe_forward(&x.view(), g1)? - moe_forward(&x.view(), g2)?;
        acc += diff * diff;
    }
    Ok((acc / m_points as f64).sqrt())
}

/// CSV for a loss history: `step,loss` with full precision.
pub fn history_to_csv(history: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in history.iter().enumerate() {
        out.push_str(&format!("{step},{loss:.16e}\n"));
    }
    out
}
