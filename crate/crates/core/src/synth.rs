//! Ground-truth measure sampling and synthetic regression data.
//!
//! Gating parameters are drawn entrywise from `N(0, sigma_r^2)` for all
//! atoms but the last, which is pinned to zero gating parameters so the
//! softmax translation degeneracy is anchored. Expert parameters are
//! drawn from `N(0, sigma_e^2)` for every atom. Responses follow
//! `y = f(x) + eps` with `eps ~ N(0, sigma^2)`.
//!
//! Measure, input, and noise draws come from independent labelled
//! streams (see [`crate::rng`]), so datasets are reproducible, extending
//! `n` preserves prefixes, and switching the input distribution leaves
//! the noise sequence unchanged.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::model::{
    moe_forward, Activation, Atom, ExpertFamily, ExpertParams, GateKind, GateTag, MixingMeasure,
};
use crate::rng::stream_rng;

/// Input distribution for synthetic covariates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDist {
    /// Each coordinate uniform on `[-b, b]`.
    UniformCube { b: f64 },
    /// Standard normal coordinates.
    Gaussian,
}

impl Default for InputDist {
    fn default() -> Self {
        InputDist::UniformCube { b: 1.0 }
    }
}

/// Expert family and architecture for sampled measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub family: ExpertFamily,
    /// Hidden units for the two-layer family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl ExpertSpec {
    pub fn linear() -> Self {
        ExpertSpec {
            family: ExpertFamily::Linear,
            m: None,
            activation: None,
        }
    }

    pub fn two_layer(m: usize, activation: Activation) -> Self {
        ExpertSpec {
            family: ExpertFamily::TwoLayer,
            m: Some(m),
            activation: Some(activation),
        }
    }
}

/// Configuration for ground-truth sampling and data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    /// Number of true experts; the last atom carries zero gating
    /// parameters.
    pub n_star: usize,
    pub gate: GateTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    pub expert: ExpertSpec,
    /// Noise variance.
    pub sigma2: f64,
    /// Gating-parameter variance; defaults to `0.01 / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_r2: Option<f64>,
    /// Expert-parameter variance; defaults to `1 / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_e2: Option<f64>,
    #[serde(default)]
    pub input_dist: InputDist,
}

impl SynthConfig {
    pub fn gate_kind(&self) -> GateKind {
        GateKind {
            tag: self.gate,
            top_k: self.top_k,
        }
    }

    pub fn gating_variance(&self) -> f64 {
        self.sigma_r2.unwrap_or(0.01 / self.d as f64)
    }

    pub fn expert_variance(&self) -> f64 {
        self.sigma_e2.unwrap_or(1.0 / self.d as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if self.n_star == 0 {
            return Err(invalid("n_star must be at least 1"));
        }
        if self.gate == GateTag::AttnForm {
            return Err(invalid("sampled measures use score-based gates"));
        }
        if self.sigma2 <= 0.0 || !self.sigma2.is_finite() {
            return Err(invalid("sigma2 must be positive"));
        }
        if self.gating_variance() <= 0.0 || self.expert_variance() <= 0.0 {
            return Err(invalid("parameter variances must be positive"));
        }
        if let InputDist::UniformCube { b } = self.input_dist {
            if b <= 0.0 || !b.is_finite() {
                return Err(invalid("input bound must be positive"));
            }
        }
        match self.expert.family {
            ExpertFamily::Linear => {}
            ExpertFamily::TwoLayer => {
                if self.expert.m.unwrap_or(0) == 0 {
                    return Err(invalid("two-layer experts need m >= 1"));
                }
                if self.expert.activation.is_none() {
                    return Err(invalid("two-layer experts need an activation"));
                }
            }
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > self.n_star {
                return Err(invalid("top_k out of range"));
            }
        }
        Ok(())
    }
}

/// SHA-256 hex digest of a config's canonical JSON.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// Paired covariates and responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Wrap raw arrays; used by tests and fitting code that does not go
    /// through the generator.
    pub fn from_parts(x: Array2<f64>, y: Array1<f64>) -> Self {
        assert_eq!(x.nrows(), y.len(), "row count mismatch");
        Dataset {
            x,
            y,
            provenance: Provenance {
                seed: 0,
                config_hash: String::new(),
            },
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

fn draw_normal(rng: &mut rand_chacha::ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z
}

/// Sample a ground-truth measure. Atoms `0..n_star-1` get Gaussian
/// gating entries, the final atom is the zero-gating anchor; all experts
/// are Gaussian. Draw order per atom: quadratic coefficient row-major,
/// then linear coefficient, then log-weight, then expert parameters.
pub fn sample_true_measure(cfg: &SynthConfig, seed: u64) -> Result<MixingMeasure> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, "measure");
    let gate = cfg.gate_kind();
    let sr = cfg.gating_variance().sqrt();
    let se = cfg.expert_variance().sqrt();
    let d = cfg.d;
    let atoms = (0..cfg.n_star)
        .map(|i| {
            let anchored = i == cfg.n_star - 1;
            let mut a = Array2::zeros((d, d));
            let mut b = Array1::zeros(d);
            let mut c = 0.0;
            if !anchored {
                if gate.tag.uses_quad() {
                    for entry in a.iter_mut() {
                        *entry = draw_normal(&mut rng, sr);
                    }
                }
                if gate.tag.uses_lin() {
                    for entry in b.iter_mut() {
                        *entry = draw_normal(&mut rng, sr);
                    }
                }
                c = draw_normal(&mut rng, sr);
            }
            let eta = match cfg.expert.family {
                ExpertFamily::Linear => ExpertParams::Linear {
                    beta1: Array1::from_shape_fn(d, |_| draw_normal(&mut rng, se)),
                    beta0: draw_normal(&mut rng, se),
                },
                ExpertFamily::TwoLayer => {
                    let m = cfg.expert.m.expect("validated");
                    ExpertParams::TwoLayer {
                        w: Array2::from_shape_fn((m, d), |_| draw_normal(&mut rng, se)),
                        v: Array1::from_shape_fn(m, |_| draw_normal(&mut rng, se)),
                        a: Array1::from_shape_fn(m, |_| draw_normal(&mut rng, se)),
                        a0: draw_normal(&mut rng, se),
                        activation: cfg.expert.activation.expect("validated"),
                    }
                }
            };
            Atom { a, b, c, eta }
        })
        .collect();
    MixingMeasure::new(gate, d, atoms)
}

/// Sample `n` covariate rows from the configured input distribution.
pub fn sample_inputs(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Array2<f64>> {
    cfg.validate()?;
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let mut rng = stream_rng(seed, "inputs");
    let mut x = Array2::zeros((n, cfg.d));
    for entry in x.iter_mut() {
        *entry = match cfg.input_dist {
            InputDist::UniformCube { b } => rng.random::<f64>() * 2.0 * b - b,
            InputDist::Gaussian => StandardNormal.sample(&mut rng),
        };
    }
    Ok(x)
}

/// Generate a dataset from a ground-truth measure: `y_i = f(x_i) + eps_i`.
pub fn generate_dataset(
    truth: &MixingMeasure,
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if truth.d != cfg.d {
        return Err(invalid("measure dimension differs from config"));
    }
    let x = sample_inputs(cfg, n, seed)?;
    let mut noise_rng = stream_rng(seed, "noise");
    let sigma = cfg.sigma2.sqrt();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let f = moe_forward(&x.row(i), truth)?;
        y[i] = f + draw_normal(&mut noise_rng, sigma);
    }
    Ok(Dataset {
        x,
        y,
        provenance: Provenance {
            seed,
            config_hash: config_hash(cfg),
        },
    })
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Dataset as CSV with header `x_0,...,x_{d-1},y` and 17 significant
/// digits.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let d = data.d();
    let mut out = String::new();
    for j in 0..d {
        out.push_str(&format!("x_{j},"));
    }
    out.push_str("y\n");
    for i in 0..data.n() {
        for j in 0..d {
            out.push_str(&format_value(data.x[[i, j]]));
            out.push(',');
        }
        out.push_str(&format_value(data.y[i]));
        out.push('\n');
    }
    out
}

/// Parse a dataset from the CSV layout written by [`dataset_to_csv`].
pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| invalid("empty CSV"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(invalid("expected header x_0,...,y"));
    }
    let d = cols.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(invalid(format!(
                "row {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                d + 1
            )));
        }
        for f in &fields[..d] {
            xs.push(
                f.parse::<f64>()
                    .map_err(|e| invalid(format!("row {}: {e}", lineno + 2)))?,
            );
        }
        ys.push(
            fields[d]
                .parse::<f64>()
                .map_err(|e| invalid(format!("row {}: {e}", lineno + 2)))?,
        );
    }
    if ys.is_empty() {
        return Err(invalid("CSV has no data rows"));
    }
    let n = ys.len();
    Ok(Dataset::from_parts(
        Array2::from_shape_vec((n, d), xs).map_err(|e| invalid(e.to_string()))?,
        Array1::from_vec(ys),
    ))
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    d: usize,
    n: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    provenance: Provenance,
}

/// Dataset as a self-describing JSON document (row-major `x`).
pub fn dataset_to_json(data: &Dataset) -> String {
    let doc = DatasetDoc {
        d: data.d(),
        n: data.n(),
        x: data.x.iter().copied().collect(),
        y: data.y.to_vec(),
        provenance: data.provenance.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("dataset serializes")
}

/// Parse a dataset from its JSON document.
pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let doc: DatasetDoc = serde_json::from_str(text)?;
    if doc.x.len() != doc.n * doc.d || doc.y.len() != doc.n {
        return Err(invalid("dataset document has inconsistent sizes"));
    }
    Ok(Dataset {
        x: Array2::from_shape_vec((doc.n, doc.d), doc.x).map_err(|e| invalid(e.to_string()))?,
        y: Array1::from_vec(doc.y),
        provenance: doc.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_cfg(gate: GateTag, expert: ExpertSpec) -> SynthConfig {
        SynthConfig {
            d: 2,
            n_star: 3,
            gate,
            top_k: None,
            expert,
            sigma2: 0.049,
            sigma_r2: None,
            sigma_e2: None,
            input_dist: InputDist::default(),
        }
    }

    #[test]
    fn single_atom_measure_is_the_anchor() {
        let mut cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        cfg.n_star = 1;
        let g = sample_true_measure(&cfg, 9).unwrap();
        assert_eq!(g.n_components(), 1);
        assert!(g.atoms[0].a.iter().all(|&v| v == 0.0));
        assert!(g.atoms[0].b.iter().all(|&v| v == 0.0));
        assert_eq!(g.atoms[0].c, 0.0);
    }

    #[test]
    fn gating_entry_variance_matches_config() {
        let mut cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        cfg.n_star = 8;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..300 {
            let g = sample_true_measure(&cfg, seed).unwrap();
            for atom in &g.atoms[..7] {
                for &v in atom.a.iter().chain(atom.b.iter()) {
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        // sigma_r^2 = 0.01 / d = 0.005; n = 300 * 7 * 6 entries.
        assert!((var - 0.005).abs() < 0.0005, "variance {var}");
        // Anchor atom stays zero.
        let g = sample_true_measure(&cfg, 0).unwrap();
        assert!(g.atoms[7].a.iter().all(|&v| v == 0.0));
        assert_eq!(g.atoms[7].c, 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = base_cfg(GateTag::QuadMono, ExpertSpec::two_layer(2, Activation::Relu));
        let g1 = sample_true_measure(&cfg, 42).unwrap();
        let g2 = sample_true_measure(&cfg, 42).unwrap();
        assert_eq!(g1, g2);
        assert_ne!(g1, sample_true_measure(&cfg, 43).unwrap());
    }

    #[test]
    fn uniform_inputs_stay_in_the_cube() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let x = sample_inputs(&cfg, 500, 1).unwrap();
        assert!(x.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let n = 500.0;
        for j in 0..cfg.d {
            let mean = x.column(j).sum() / n;
            assert!(mean.abs() <= 4.0 / (12.0_f64 * n).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn input_sampling_is_deterministic_and_prefix_stable() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let a = sample_inputs(&cfg, 100, 5).unwrap();
        let b = sample_inputs(&cfg, 100, 5).unwrap();
        assert_eq!(a, b);
        let longer = sample_inputs(&cfg, 150, 5).unwrap();
        for i in 0..100 {
            for j in 0..cfg.d {
                assert_eq!(a[[i, j]], longer[[i, j]]);
            }
        }
    }

    #[test]
    fn near_zero_noise_recovers_the_regression_function() {
        let mut cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        cfg.sigma2 = 1e-30;
        let g = sample_true_measure(&cfg, 3).unwrap();
        let data = generate_dataset(&g, &cfg, 50, 4).unwrap();
        for i in 0..data.n() {
            let f = moe_forward(&data.x.row(i), &g).unwrap();
            assert!((data.y[i] - f).abs() < 1e-10);
        }
    }

    #[test]
    fn noise_variance_matches_config() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let g = sample_true_measure(&cfg, 3).unwrap();
        let n = 100_000;
        let data = generate_dataset(&g, &cfg, n, 4).unwrap();
        let mut sum_sq = 0.0;
        for i in 0..n {
            let eps = data.y[i] - moe_forward(&data.x.row(i), &g).unwrap();
            sum_sq += eps * eps;
        }
        let var = sum_sq / n as f64;
        assert!((var - 0.049).abs() < 0.005, "noise variance {var}");
    }

    #[test]
    fn noise_stream_is_independent_of_input_distribution() {
        let cfg_uniform = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let mut cfg_gauss = cfg_uniform.clone();
        cfg_gauss.input_dist = InputDist::Gaussian;
        let g = sample_true_measure(&cfg_uniform, 3).unwrap();
        let da = generate_dataset(&g, &cfg_uniform, 64, 11).unwrap();
        let db = generate_dataset(&g, &cfg_gauss, 64, 11).unwrap();
        for i in 0..64 {
            let ea = da.y[i] - moe_forward(&da.x.row(i), &g).unwrap();
            let eb = db.y[i] - moe_forward(&db.x.row(i), &g).unwrap();
            assert!((ea - eb).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let g = sample_true_measure(&cfg, 3).unwrap();
        let data = generate_dataset(&g, &cfg, 20, 4).unwrap();
        let text = dataset_to_csv(&data);
        assert!(text.starts_with("x_0,x_1,y\n"));
        assert!(!text.contains('\r'));
        let back = dataset_from_csv(&text).unwrap();
        assert_eq!(back.x, data.x);
        assert_eq!(back.y, data.y);
    }

    #[test]
    fn json_round_trip() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let g = sample_true_measure(&cfg, 3).unwrap();
        let data = generate_dataset(&g, &cfg, 5, 4).unwrap();
        let back = dataset_from_json(&dataset_to_json(&data)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = base_cfg(GateTag::QuadPoly, ExpertSpec::linear());
        let mut other = cfg.clone();
        assert_eq!(config_hash(&cfg), config_hash(&other));
        other.sigma2 = 0.05;
        assert_ne!(config_hash(&cfg), config_hash(&other));
    }
}
