//! Subcommand implementations.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use ratelab_core::error::{Error, Result};
use ratelab_core::grad::{grad_check, GradCheckReport};
use ratelab_core::ident::{
    derivative_features, draw_feature_points, polysys_search, slow_sequence, strong_ident_report,
    FeatureMode, IdentReport, SlowSequencePoint,
};
use ratelab_core::lab::{
    overhead_report, run_rate_experiment, write_rate_outputs, ArchSpec, ExperimentConfig,
};
use ratelab_core::model::{
    active_attention, attention, Activation, ExpertParams, GateTag, Nonlinearity,
};
use ratelab_core::rng::{derive_seed, stream_rng};
use ratelab_core::synth::{
    dataset_to_csv, dataset_to_json, generate_dataset, sample_true_measure, ExpertSpec,
    InputDist, SynthConfig,
};

use crate::Format;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

pub fn rates(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    format: Format,
) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    let report = run_rate_experiment(&cfg, threads)?;
    write_rate_outputs(out, &report)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report.slopes)?),
        Format::Csv => {
            println!("column,slope,intercept,stderr");
            let line = |name: &str, fit: &Option<ratelab_core::lab::SlopeFit>| {
                if let Some(fit) = fit {
                    println!("{name},{},{},{}", fit.slope, fit.intercept, fit.stderr);
                } else {
                    println!("{name},,,");
                }
            };
            line("loss", &report.slopes.loss);
            line("errA", &report.slopes.err_a);
            line("errB", &report.slopes.err_b);
            line("errEta", &report.slopes.err_eta);
            line("errW", &report.slopes.err_w);
            line("fn_dist", &report.slopes.fn_dist);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GradSweepReport {
    instances: Vec<GradCheckReport>,
    max_rel_err: f64,
    pass: bool,
}

/// Twenty random instances spanning all score-based gate kinds and
/// expert families, d <= 3, N <= 4, n = 16.
pub fn gradcheck(seed: u64, tol: f64, out: Option<&Path>) -> Result<()> {
    let gates = [GateTag::Linear, GateTag::QuadPoly, GateTag::QuadMono];
    let experts = [
        ExpertSpec::linear(),
        ExpertSpec::two_layer(2, Activation::Relu),
        ExpertSpec::two_layer(2, Activation::Tanh),
    ];
    let mut instances = Vec::new();
    let mut max_rel_err = 0.0_f64;
    for k in 0..20u64 {
        let gate = gates[(k % 9 / 3) as usize];
        let expert = experts[(k % 3) as usize];
        let instance_seed = derive_seed(seed, &format!("gradcheck/{k}"));
        let mut rng = stream_rng(instance_seed, "shape");
        let d = rng.random_range(1..=3);
        let n_atoms = rng.random_range(2..=4);
        let cfg = SynthConfig {
            d,
            n_star: n_atoms,
            gate,
            top_k: None,
            expert,
            sigma2: 0.25,
            sigma_r2: Some(0.25),
            sigma_e2: Some(1.0),
            input_dist: InputDist::default(),
        };
        let truth = sample_true_measure(&cfg, instance_seed)?;
        let data = generate_dataset(&truth, &cfg, 16, derive_seed(instance_seed, "data"))?;
        let report = grad_check(&truth, &data, tol)?;
        max_rel_err = max_rel_err.max(report.max_rel_err);
        instances.push(report);
    }
    let pass = instances.iter().all(|r| r.pass);
    let sweep = GradSweepReport {
        instances,
        max_rel_err,
        pass,
    };
    emit(out, &serde_json::to_string_pretty(&sweep)?)?;
    if !pass {
        return Err(Error::NumericalFailure(format!(
            "gradient check failed: max_rel_err = {max_rel_err:e}"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum IdentFamily {
    Linear,
    Tanh,
    Relu,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum IdentMode {
    Mono,
    Poly { order: u32 },
}

fn default_ident_d() -> usize {
    2
}
fn default_ident_experts() -> usize {
    2
}
fn default_ident_m() -> usize {
    1
}
fn default_ident_points() -> usize {
    500
}
fn default_ident_tau() -> f64 {
    1e-8
}

#[derive(Deserialize)]
struct IdentCliConfig {
    family: IdentFamily,
    mode: IdentMode,
    #[serde(default = "default_ident_d")]
    d: usize,
    #[serde(default = "default_ident_experts")]
    n_experts: usize,
    #[serde(default = "default_ident_m")]
    m: usize,
    #[serde(default = "default_ident_points")]
    points: usize,
    #[serde(default = "default_ident_tau")]
    tau: f64,
    #[serde(default)]
    seed: u64,
}

impl Default for IdentCliConfig {
    fn default() -> Self {
        IdentCliConfig {
            family: IdentFamily::Linear,
            mode: IdentMode::Poly { order: 1 },
            d: 2,
            n_experts: 2,
            m: 1,
            points: 500,
            tau: 1e-8,
            seed: 0,
        }
    }
}

fn signed_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let v: f64 = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

fn sample_ident_experts(cfg: &IdentCliConfig) -> Vec<ExpertParams> {
    let mut rng = stream_rng(cfg.seed, "ident-experts");
    (0..cfg.n_experts)
        .map(|_| match cfg.family {
            IdentFamily::Linear => ExpertParams::Linear {
                beta1: Array1::from_shape_fn(cfg.d, |_| rng.random_range(-1.0..1.0)),
                beta0: rng.random_range(-1.0..1.0),
            },
            IdentFamily::Tanh | IdentFamily::Relu => ExpertParams::TwoLayer {
                // Hidden weights bounded away from zero so the sampled
                // test sees genuinely nonlinear units.
                w: Array2::from_shape_fn((cfg.m, cfg.d), |_| signed_range(&mut rng, 2.0, 4.0)),
                v: Array1::from_shape_fn(cfg.m, |_| rng.random_range(-1.0..1.0)),
                a: Array1::from_shape_fn(cfg.m, |_| signed_range(&mut rng, 0.5, 1.5)),
                a0: rng.random_range(-1.0..1.0),
                activation: match cfg.family {
                    IdentFamily::Relu => Activation::Relu,
                    _ => Activation::Tanh,
                },
            },
        })
        .collect()
}

#[derive(Serialize)]
struct IdentCliReport {
    n_columns: usize,
    report: IdentReport,
}

pub fn ident(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg: IdentCliConfig = match config {
        Some(path) => read_json(path)?,
        None => IdentCliConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let experts = sample_ident_experts(&cfg);
    let mode = match cfg.mode {
        IdentMode::Mono => FeatureMode::Mono,
        IdentMode::Poly { order } => FeatureMode::Poly { order },
    };
    let x = draw_feature_points(
        &experts,
        InputDist::default(),
        cfg.points,
        derive_seed(cfg.seed, "ident-points"),
    )?;
    let features = derivative_features(&experts, &x.view(), mode)?;
    let report = strong_ident_report(&features, cfg.tau)?;
    let wrapped = IdentCliReport {
        n_columns: features.labels.len(),
        report,
    };
    emit(out, &serde_json::to_string_pretty(&wrapped)?)
}

#[derive(Deserialize)]
struct PolysysCliConfig {
    m: usize,
    r: u32,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default)]
    seed: u64,
}

fn default_budget() -> usize {
    100
}

pub fn polysys(
    config: Option<&Path>,
    m: usize,
    r: u32,
    budget: usize,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = match config {
        Some(path) => read_json::<PolysysCliConfig>(path)?,
        None => PolysysCliConfig {
            m,
            r,
            budget,
            seed: 0,
        },
    };
    let seed = seed.unwrap_or(cfg.seed);
    let result = polysys_search(cfg.m, cfg.r, cfg.budget, seed)?;
    emit(out, &serde_json::to_string_pretty(&result)?)
}

fn default_pathology_n() -> Vec<u64> {
    vec![10, 100, 1000]
}
fn default_pathology_r() -> Vec<u32> {
    vec![1, 2]
}
fn default_pathology_mc() -> usize {
    50_000
}
fn default_pathology_n_star() -> usize {
    3
}

#[derive(Deserialize)]
struct PathologyCliConfig {
    #[serde(default = "default_ident_d")]
    d: usize,
    #[serde(default = "default_pathology_n_star")]
    n_star: usize,
    #[serde(default = "default_pathology_n")]
    n_values: Vec<u64>,
    #[serde(default = "default_pathology_r")]
    r_values: Vec<u32>,
    #[serde(default = "default_pathology_mc")]
    mc_points: usize,
    #[serde(default)]
    seed: u64,
}

impl Default for PathologyCliConfig {
    fn default() -> Self {
        PathologyCliConfig {
            d: 2,
            n_star: 3,
            n_values: default_pathology_n(),
            r_values: default_pathology_r(),
            mc_points: default_pathology_mc(),
            seed: 0,
        }
    }
}

pub fn pathology(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let mut cfg: PathologyCliConfig = match config {
        Some(path) => read_json(path)?,
        None => PathologyCliConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let synth = SynthConfig {
        d: cfg.d,
        n_star: cfg.n_star,
        gate: GateTag::QuadPoly,
        top_k: None,
        expert: ExpertSpec::linear(),
        sigma2: 0.049,
        sigma_r2: Some(0.05),
        sigma_e2: None,
        input_dist: InputDist::default(),
    };
    let truth = sample_true_measure(&synth, cfg.seed)?;
    let mut points: Vec<SlowSequencePoint> = Vec::new();
    for &r in &cfg.r_values {
        for &n in &cfg.n_values {
            let (_, point) = slow_sequence(
                &truth,
                n,
                r,
                InputDist::default(),
                cfg.mc_points,
                derive_seed(cfg.seed, &format!("pathology/{r}/{n}")),
            )?;
            points.push(point);
        }
    }
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&points)?,
        Format::Csv => {
            let mut text =
                String::from("n,r,loss_closed_form,loss_computed,rel_gap,fn_dist,ratio\n");
            for p in &points {
                let rel_gap = (p.loss_computed - p.loss_closed_form).abs() / p.loss_closed_form;
                text.push_str(&format!(
                    "{},{},{:.16e},{:.16e},{:.3e},{:.16e},{:.16e}\n",
                    p.n,
                    p.r,
                    p.loss_closed_form,
                    p.loss_computed,
                    rel_gap,
                    p.fn_dist,
                    p.fn_dist / p.loss_computed,
                ));
            }
            text
        }
    };
    emit(out, &text)
}

pub fn overhead(config: &Path, out: Option<&Path>) -> Result<()> {
    let arch: ArchSpec = read_json(config)?;
    let report = overhead_report(&arch)?;
    emit(out, &serde_json::to_string_pretty(&report)?)
}

fn default_attn_d() -> usize {
    4
}
fn default_attn_keys() -> usize {
    3
}
fn default_attn_dv() -> usize {
    2
}
fn default_attn_nl() -> Nonlinearity {
    Nonlinearity::Tanh
}

#[derive(Deserialize)]
struct AttnDemoConfig {
    #[serde(default = "default_attn_d")]
    d: usize,
    #[serde(default = "default_attn_keys")]
    n_keys: usize,
    #[serde(default = "default_attn_dv")]
    d_v: usize,
    #[serde(default = "default_attn_nl")]
    nonlinearity: Nonlinearity,
    #[serde(default)]
    seed: u64,
}

impl Default for AttnDemoConfig {
    fn default() -> Self {
        AttnDemoConfig {
            d: default_attn_d(),
            n_keys: default_attn_keys(),
            d_v: default_attn_dv(),
            nonlinearity: default_attn_nl(),
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct AttnDemoReport {
    nonlinearity: Nonlinearity,
    query: Vec<f64>,
    attention: Vec<f64>,
    active_attention: Vec<f64>,
}

pub fn attn_demo(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg: AttnDemoConfig = match config {
        Some(path) => read_json(path)?,
        None => AttnDemoConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let mut rng = stream_rng(cfg.seed, "attn-demo");
    let q = Array1::from_shape_fn(cfg.d, |_| rng.random_range(-1.0..1.0));
    let k = Array2::from_shape_fn((cfg.n_keys, cfg.d), |_| rng.random_range(-1.0..1.0));
    let v = Array2::from_shape_fn((cfg.n_keys, cfg.d_v), |_| rng.random_range(-2.0..2.0));
    let plain = attention(&q.view(), &k.view(), &v.view())?;
    let active = active_attention(&q.view(), &k.view(), &v.view(), cfg.nonlinearity)?;
    let report = AttnDemoReport {
        nonlinearity: cfg.nonlinearity,
        query: q.to_vec(),
        attention: plain.to_vec(),
        active_attention: active.to_vec(),
    };
    emit(out, &serde_json::to_string_pretty(&report)?)
}

#[derive(Deserialize)]
struct GenConfig {
    synth: SynthConfig,
    n: usize,
    #[serde(default)]
    seed: u64,
}

pub fn gen(config: &Path, out: &Path, seed: Option<u64>, format: Format) -> Result<()> {
    let mut cfg: GenConfig = read_json(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let truth = sample_true_measure(&cfg.synth, cfg.seed)?;
    let data = generate_dataset(&truth, &cfg.synth, cfg.n, derive_seed(cfg.seed, "dataset"))?;
    let text = match format {
        Format::Csv => dataset_to_csv(&data),
        Format::Json => dataset_to_json(&data),
    };
    emit(Some(out), &text)
}

