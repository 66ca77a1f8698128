//! Closed-form parameter counts for a head configuration.

use alloc::vec::Vec;

use crate::projection::LayerShape;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub layer_shapes: Vec<LayerShape>,
    pub latent_dim: usize,
    pub pca_dim: usize,
}

impl ArchConfig {
    /// Six ViT-B/14 blocks at 224 px (16×16 tokens, 768 channels), D=1024,
    /// K=2048.
    pub fn base() -> Self {
        Self {
            layer_shapes: alloc::vec![LayerShape::new(16, 16, 768); 6],
            latent_dim: 1024,
            pca_dim: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    /// Factorized weights per layer, `(C + P)·D`.
    pub projection_per_layer: Vec<u64>,
    /// Batch-norm gain and bias over all layers, `L·2D`.
    pub batch_norm: u64,
    /// Shared map and bias, `D·K + K`.
    pub shared: u64,
    /// One subject's map, `D·K`.
    pub subject_each: u64,
    pub subject_total: u64,
    /// Frozen embedding, `V·K + V`.
    pub pca: u64,
    pub trainable_total: u64,
    pub frozen_total: u64,
    pub grand_total: u64,
    /// One dense linear map from all input features to all vertices,
    /// `V·Σ P·C`.
    pub naive_dense_total: u64,
    /// Dense projection to the latent space, `Σ P·C·D`.
    pub dense_projection_total: u64,
    /// `dense_projection_total / Σ (C + P)·D`.
    pub factorization_savings_ratio: f64,
    /// `naive_dense_total / trainable_total`.
    pub naive_savings_ratio: f64,
}

pub fn count_params(arch: &ArchConfig, activity_dim: usize, num_subjects: usize) -> ParamReport {
    let d = arch.latent_dim as u64;
    let k = arch.pca_dim as u64;
    let v = activity_dim as u64;
    let s = num_subjects as u64;
    let projection_per_layer: Vec<u64> = arch
        .layer_shapes
        .iter()
        .map(|l| (l.channels as u64 + l.positions() as u64) * d)
        .collect();
    let batch_norm = arch.layer_shapes.len() as u64 * 2 * d;
    let shared = d * k + k;
    let subject_each = d * k;
    let subject_total = s * subject_each;
    let pca = v * k + v;
    let factorized: u64 = projection_per_layer.iter().sum();
    let trainable_total = factorized + batch_norm + shared + subject_total;
    let frozen_total = pca;
    let input_dim: u64 = arch
        .layer_shapes
        .iter()
        .map(|l| l.positions() as u64 * l.channels as u64)
        .sum();
    let dense_projection_total = input_dim * d;
    ParamReport {
        projection_per_layer,
        batch_norm,
        shared,
        subject_each,
        subject_total,
        pca,
        trainable_total,
        frozen_total,
        grand_total: trainable_total + frozen_total,
        naive_dense_total: v * input_dim,
        dense_projection_total,
        factorization_savings_ratio: dense_projection_total as f64 / factorized.max(1) as f64,
        naive_savings_ratio: (v * input_dim) as f64 / trainable_total.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_config_counts() {
        let r = count_params(&ArchConfig::base(), 39_548, 8);
        assert_eq!(r.trainable_total, 25_180_160);
        assert_eq!(r.subject_each, 2_097_152);
        assert_eq!(r.frozen_total, 81_033_852);
        assert_eq!(r.grand_total, 106_214_012);
        assert_eq!(r.naive_dense_total, 46_652_719_104);
        assert_eq!(r.factorization_savings_ratio, 192.0);
        assert!(r.naive_savings_ratio > 1000.0);
    }
}
