//! Parameter-count overhead of quadratic gating for transformer-style
//! mixture layers, with the low-rank query/key variant.
//!
//! Per expert, a full quadratic gate adds `d + d(d+1)/2` parameters on
//! top of linear gating, giving a per-layer ratio of `d / (4 d_ff)`
//! against the `2 d d_ff` parameters of each feed-forward expert. With
//! rank-`r` query/key embeddings the addition drops to
//! `((N+1)/N) r d` per expert, i.e. `(N+1) r d` per layer (one shared
//! query plus `N` keys).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture description for the overhead calculator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Model width.
    pub d: u64,
    /// Expert feed-forward hidden width.
    pub d_ff: u64,
    /// Experts per layer.
    pub n_experts: u64,
    /// Mixture layers.
    pub n_layers: u64,
    /// Low-rank embedding rank; omit for the full quadratic gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u64>,
    /// Total parameter count of the model, for the memory ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_total_params: Option<u64>,
    /// Active parameter count per token, for the FLOP ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_active_params: Option<u64>,
    /// Externally reported added-parameter figure to compare against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_added_params: Option<u64>,
}

/// Computed overhead figures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverheadReport {
    pub full_quad_extra_per_expert: u64,
    pub full_quad_total: u64,
    /// Added gating parameters over feed-forward parameters in one
    /// mixture layer: `d / (4 d_ff)`.
    pub moe_layer_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lowrank_extra_per_layer: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lowrank_total: Option<u64>,
    /// Added parameters of the configured variant (low-rank when a rank
    /// is given, full quadratic otherwise).
    pub total_overhead: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flop_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_added_params: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_ratio: Option<f64>,
    /// Set when the computed figure differs from the reference by more
    /// than ten percent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_discrepancy: Option<bool>,
}

pub fn overhead_report(arch: &ArchSpec) -> Result<OverheadReport> {
    if arch.d == 0 || arch.d_ff == 0 || arch.n_experts == 0 || arch.n_layers == 0 {
        return Err(invalid("architecture sizes must be positive"));
    }
    let d = arch.d;
    let full_quad_extra_per_expert = d + d * (d + 1) / 2;
    let full_quad_total = full_quad_extra_per_expert * arch.n_experts * arch.n_layers;
    let moe_layer_ratio = d as f64 / (4.0 * arch.d_ff as f64);

    let lowrank_extra_per_layer = arch.rank.map(|r| (arch.n_experts + 1) * r * d);
    let lowrank_total = lowrank_extra_per_layer.map(|per_layer| per_layer * arch.n_layers);
    let total_overhead = lowrank_total.unwrap_or(full_quad_total);

    let flop_ratio = arch
        .baseline_active_params
        .or(arch.baseline_total_params)
        .map(|base| total_overhead as f64 / base as f64);
    let memory_ratio = arch
        .baseline_total_params
        .map(|base| total_overhead as f64 / base as f64);

    let reference_ratio = arch
        .reference_added_params
        .map(|reference| total_overhead as f64 / reference as f64);
    let reference_discrepancy = reference_ratio.map(|ratio| (ratio - 1.0).abs() > 0.10);

    Ok(OverheadReport {
        full_quad_extra_per_expert,
        full_quad_total,
        moe_layer_ratio,
        lowrank_extra_per_layer,
        lowrank_total,
        total_overhead,
        flop_ratio,
        memory_ratio,
        reference_added_params: arch.reference_added_params,
        reference_ratio,
        reference_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mixtral_like() -> ArchSpec {
        ArchSpec {
            d: 4096,
            d_ff: 14336,
            n_experts: 8,
            n_layers: 32,
            rank: Some(128),
            baseline_total_params: Some(47_000_000_000),
            baseline_active_params: Some(13_000_000_000),
            reference_added_params: None,
        }
    }

    #[test]
    fn layer_ratio_for_common_width_multiplier() {
        // d_ff = 3.5 d gives 1/14.
        let arch = ArchSpec {
            d: 1024,
            d_ff: 3584,
            n_experts: 8,
            n_layers: 1,
            rank: None,
            baseline_total_params: None,
            baseline_active_params: None,
            reference_added_params: None,
        };
        let report = overhead_report(&arch).unwrap();
        assert_abs_diff_eq!(report.moe_layer_ratio, 1.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn mixtral_scale_totals() {
        let report = overhead_report(&mixtral_like()).unwrap();
        // Full quadratic ~= 2.1e9, low-rank ~= 1.51e8.
        assert!((report.full_quad_total as f64 / 2.1e9 - 1.0).abs() < 0.05);
        assert_eq!(report.lowrank_total, Some(150_994_944));
        assert!((report.lowrank_total.unwrap() as f64 / 1.5e8 - 1.0).abs() < 0.05);
        // Ratios: ~0.3% memory, ~1.2% of active parameters.
        assert!(report.memory_ratio.unwrap() < 0.005);
        assert!(report.flop_ratio.unwrap() < 0.02);
    }

    #[test]
    fn small_model_lowrank_total_is_exact() {
        let arch = ArchSpec {
            d: 768,
            d_ff: 3072,
            n_experts: 8,
            n_layers: 12,
            rank: Some(32),
            baseline_total_params: None,
            baseline_active_params: None,
            reference_added_params: Some(2_300_000),
        };
        let report = overhead_report(&arch).unwrap();
        assert_eq!(report.lowrank_total, Some(2_654_208));
        assert_eq!(report.total_overhead, 2_654_208);
        assert_eq!(report.reference_discrepancy, Some(true));
    }

    #[test]
    fn totals_are_homogeneous_in_layer_count() {
        let mut arch = mixtral_like();
        let single = overhead_report(&arch).unwrap();
        arch.n_layers *= 2;
        let doubled = overhead_report(&arch).unwrap();
        assert_eq!(doubled.full_quad_total, 2 * single.full_quad_total);
        assert_eq!(
            doubled.lowrank_total.unwrap(),
            2 * single.lowrank_total.unwrap()
        );
        assert_eq!(doubled.moe_layer_ratio, single.moe_layer_ratio);
    }

    #[test]
    fn zero_sizes_rejected() {
        let mut arch = mixtral_like();
        arch.d = 0;
        assert!(overhead_report(&arch).is_err());
    }
}
