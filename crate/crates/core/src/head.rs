//! The full encoding head: projection, encoder, and frozen embedding, with
//! an analytic backward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::encoder::{EncoderParams, Route};
use crate::linalg;
use crate::pca::PcaEmbedding;
use crate::projection::{self, batchnorm_backward, LayerProjection, LayerShape, ProjectedBatch};
use crate::{Error, Result, Rng};

pub use crate::projection::Mode;

/// Optimizer treatment of a trainable array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    /// Batch-norm gain or bias.
    Norm,
    Bias,
}

pub struct ParamView<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a [f64],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub struct EncodingHead {
    pub projections: Vec<LayerProjection>,
    pub encoder: EncoderParams,
    pub embedding: PcaEmbedding,
    version: u64,
}

/// Compares parameters only; the cache version is ignored.
impl PartialEq for EncodingHead {
    fn eq(&self, other: &Self) -> bool {
        self.projections == other.projections && self.encoder == other.encoder && self.embedding == other.embedding
    }
}

/// Cached intermediates of a forward pass, needed by [`EncodingHead::backward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `n×V` predictions.
    pub predictions: Vec<f64>,
    /// Layer-averaged latents, `n×D`.
    pub latent: Vec<f64>,
    /// Encoder outputs, `n×K`.
    pub activity_latent: Vec<f64>,
    pub mode: Mode,
    projected: ProjectedBatch,
    dropout_scales: Vec<Option<Vec<f64>>>,
    dropped_inputs: Vec<Option<Vec<f64>>>,
    len: usize,
    version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub channel_filter: Vec<f64>,
    pub spatial_map: Vec<f64>,
    pub bn_gain: Vec<f64>,
    pub bn_bias: Vec<f64>,
}

/// Gradients for every trainable array. The embedding is frozen and has no
/// slot here.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projections: Vec<LayerGradients>,
    pub shared_weight: Vec<f64>,
    pub shared_bias: Vec<f64>,
    pub subject_weight: Vec<f64>,
    /// Per-layer gradient w.r.t. the raw input features, when requested.
    pub inputs: Option<Vec<Vec<f64>>>,
}

impl Gradients {
    /// Arrays in the same order as [`EncodingHead::trainable`].
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.projections {
            out.push(&l.channel_filter);
            out.push(&l.spatial_map);
            out.push(&l.bn_gain);
            out.push(&l.bn_bias);
        }
        out.push(&self.shared_weight);
        out.push(&self.shared_bias);
        out.push(&self.subject_weight);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.projections {
            out.push(&mut l.channel_filter);
            out.push(&mut l.spatial_map);
            out.push(&mut l.bn_gain);
            out.push(&mut l.bn_bias);
        }
        out.push(&mut self.shared_weight);
        out.push(&mut self.shared_bias);
        out.push(&mut self.subject_weight);
        out
    }
}

impl EncodingHead {
    pub fn new(projections: Vec<LayerProjection>, encoder: EncoderParams, embedding: PcaEmbedding) -> Result<Self> {
        let Some(first) = projections.first() else {
            return Err(Error::InvalidConfig("head needs at least one projected layer".into()));
        };
        let d = first.latent_dim();
        for p in &projections {
            let checks = [
                ("latent dimension across layers", d, p.latent_dim()),
                ("channel filter", p.shape.channels * d, p.channel_filter.len()),
                ("spatial map", p.shape.positions() * d, p.spatial_map.len()),
                ("batch norm bias", d, p.bn.bias.len()),
                ("batch norm running mean", d, p.bn.running_mean.len()),
                ("batch norm running var", d, p.bn.running_var.len()),
            ];
            for (what, expected, actual) in checks {
                if expected != actual {
                    return Err(Error::ShapeMismatch { what, expected, actual });
                }
            }
        }
        let e = &encoder;
        let k = embedding.components;
        let checks = [
            ("encoder latent dimension", d, e.latent_dim),
            ("encoder output dimension", k, e.output_dim),
            ("shared weight", d * k, e.shared_weight.len()),
            ("shared bias", k, e.shared_bias.len()),
            ("embedding basis", embedding.dim * k, embedding.basis.len()),
            ("embedding center", embedding.dim, embedding.center.len()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(Error::ShapeMismatch { what, expected, actual });
            }
        }
        if !e.subject_weight.len().is_multiple_of((d * k).max(1)) || e.num_subjects() == 0 {
            return Err(Error::InvalidConfig(
                "subject weights must hold S >= 1 blocks of D×K".into(),
            ));
        }
        Ok(Self {
            projections,
            encoder,
            embedding,
            version: 0,
        })
    }

    /// Fresh head around a fitted embedding.
    pub fn init(
        shapes: &[LayerShape],
        latent_dim: usize,
        num_subjects: usize,
        embedding: PcaEmbedding,
        rng: &mut Rng,
    ) -> Result<Self> {
        let projections = shapes
            .iter()
            .map(|&s| LayerProjection::init(s, latent_dim, rng))
            .collect();
        let encoder = EncoderParams::init(latent_dim, embedding.components, num_subjects, rng);
        Self::new(projections, encoder, embedding)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.projections.iter().map(|p| p.shape).collect()
    }

    pub fn num_subjects(&self) -> usize {
        self.encoder.num_subjects()
    }

    pub fn activity_dim(&self) -> usize {
        self.embedding.dim
    }

    /// Every trainable array, named, in a fixed order.
    pub fn trainable(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for (l, p) in self.projections.iter().enumerate() {
            out.push(ParamView {
                name: format!("projection.{l}.channel_filter"),
                kind: ParamKind::Weight,
                values: &p.channel_filter,
            });
            out.push(ParamView {
                name: format!("projection.{l}.spatial_map"),
                kind: ParamKind::Weight,
                values: &p.spatial_map,
            });
            out.push(ParamView {
                name: format!("projection.{l}.bn_gain"),
                kind: ParamKind::Norm,
                values: &p.bn.gain,
            });
            out.push(ParamView {
                name: format!("projection.{l}.bn_bias"),
                kind: ParamKind::Norm,
                values: &p.bn.bias,
            });
        }
        out.push(ParamView {
            name: "encoder.shared_weight".into(),
            kind: ParamKind::Weight,
            values: &self.encoder.shared_weight,
        });
        out.push(ParamView {
            name: "encoder.shared_bias".into(),
            kind: ParamKind::Bias,
            values: &self.encoder.shared_bias,
        });
        out.push(ParamView {
            name: "encoder.subject_weight".into(),
            kind: ParamKind::Weight,
            values: &self.encoder.subject_weight,
        });
        out
    }

    /// Mutable access to the trainable arrays. Invalidates earlier forward
    /// caches.
    pub fn trainable_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.version += 1;
        let mut out = Vec::new();
        for (l, p) in self.projections.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("projection.{l}.channel_filter"),
                kind: ParamKind::Weight,
                values: &mut p.channel_filter,
            });
            out.push(ParamMut {
                name: format!("projection.{l}.spatial_map"),
                kind: ParamKind::Weight,
                values: &mut p.spatial_map,
            });
            out.push(ParamMut {
                name: format!("projection.{l}.bn_gain"),
                kind: ParamKind::Norm,
                values: &mut p.bn.gain,
            });
            out.push(ParamMut {
                name: format!("projection.{l}.bn_bias"),
                kind: ParamKind::Norm,
                values: &mut p.bn.bias,
            });
        }
        out.push(ParamMut {
            name: "encoder.shared_weight".into(),
            kind: ParamKind::Weight,
            values: &mut self.encoder.shared_weight,
        });
        out.push(ParamMut {
            name: "encoder.shared_bias".into(),
            kind: ParamKind::Bias,
            values: &mut self.encoder.shared_bias,
        });
        out.push(ParamMut {
            name: "encoder.subject_weight".into(),
            kind: ParamKind::Weight,
            values: &mut self.encoder.subject_weight,
        });
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|p| p.values.len()).sum()
    }

    /// Frozen parameters (embedding weight and bias).
    pub fn num_frozen(&self) -> usize {
        self.embedding.basis.len() + self.embedding.center.len()
    }

    fn check_batch(&self, batch: &Batch) -> Result<usize> {
        let n = batch.len();
        if batch.layers.len() != self.projections.len() {
            return Err(Error::ShapeMismatch {
                what: "batch layer count",
                expected: self.projections.len(),
                actual: batch.layers.len(),
            });
        }
        for (x, p) in batch.layers.iter().zip(&self.projections) {
            if x.len() != n * p.shape.len() {
                return Err(Error::ShapeMismatch {
                    what: "batch features",
                    expected: n * p.shape.len(),
                    actual: x.len(),
                });
            }
        }
        for &r in &batch.routes {
            self.encoder.check_route(r)?;
        }
        Ok(n)
    }

    /// Dropout on raw features, factorized projection with batch norm,
    /// layer mean, shared + routed subject encoder, then the embedding.
    ///
    /// Running batch-norm statistics are left untouched; call
    /// [`EncodingHead::absorb_batch_stats`] after a training step.
    pub fn forward(&self, batch: &Batch, mode: Mode, dropout: f64, rng: &mut Rng) -> Result<Forward> {
        let n = self.check_batch(batch)?;
        let mut dropout_scales = Vec::with_capacity(batch.layers.len());
        let mut dropped_inputs = Vec::with_capacity(batch.layers.len());
        for x in &batch.layers {
            let scales = projection::dropout_scales(x.len(), dropout, mode, rng);
            let dropped = scales
                .as_ref()
                .map(|s| x.iter().zip(s).map(|(a, b)| a * b).collect::<Vec<f64>>());
            dropout_scales.push(scales);
            dropped_inputs.push(dropped);
        }
        let inputs: Vec<&[f64]> = batch
            .layers
            .iter()
            .zip(&dropped_inputs)
            .map(|(raw, dropped)| dropped.as_deref().unwrap_or(raw.as_slice()))
            .collect();
        let projected = projection::project_batch(&inputs, n, &self.projections, mode)?;
        let latent = projected.latent.clone();

        let (d, k) = (self.encoder.latent_dim, self.encoder.output_dim);
        let mut activity_latent = Vec::with_capacity(n * k);
        for _ in 0..n {
            activity_latent.extend_from_slice(&self.encoder.shared_bias);
        }
        linalg::gemm_acc(&latent, &self.encoder.shared_weight, &mut activity_latent, n, d, k);
        for (i, route) in batch.routes.iter().enumerate() {
            if let Route::Subject(s) = *route {
                linalg::gemm_acc(
                    &latent[i * d..(i + 1) * d],
                    self.encoder.subject_block(s),
                    &mut activity_latent[i * k..(i + 1) * k],
                    1,
                    d,
                    k,
                );
            }
        }
        let predictions = self.embedding.reconstruct_batch(&activity_latent, n);
        Ok(Forward {
            predictions,
            latent,
            activity_latent,
            mode,
            projected,
            dropout_scales,
            dropped_inputs,
            len: n,
            version: self.version,
        })
    }

    /// Evaluation-mode predictions (`n×V`).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut rng = crate::rng_from_seed(0);
        Ok(self.forward(batch, Mode::Eval, 0.0, &mut rng)?.predictions)
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running batch-norm statistics.
    pub fn absorb_batch_stats(&mut self, fwd: &Forward) {
        for (p, stats) in self.projections.iter_mut().zip(&fwd.projected.stats) {
            if let Some(stats) = stats {
                p.bn.update_running(stats);
            }
        }
    }

    /// Backpropagates `d_predictions` (`n×V`, the loss gradient w.r.t. the
    /// predictions) through the cached forward pass.
    pub fn backward(
        &self,
        batch: &Batch,
        fwd: &Forward,
        d_predictions: &[f64],
        want_inputs: bool,
    ) -> Result<Gradients> {
        let n = fwd.len;
        if fwd.version != self.version || batch.len() != n || d_predictions.len() != n * self.activity_dim() {
            return Err(Error::StaleCache);
        }
        let (d, k, v) = (self.encoder.latent_dim, self.encoder.output_dim, self.activity_dim());

        let mut dh = vec![0.0; n * k];
        linalg::gemm_acc(d_predictions, &self.embedding.basis, &mut dh, n, v, k);

        let mut shared_weight = vec![0.0; d * k];
        linalg::gemm_tn_acc(&fwd.latent, &dh, &mut shared_weight, n, d, k);
        let mut shared_bias = vec![0.0; k];
        for row in dh.chunks_exact(k) {
            for (b, g) in shared_bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut subject_weight = vec![0.0; self.encoder.subject_weight.len()];
        let mut dz = vec![0.0; n * d];
        linalg::gemm_nt_acc(&dh, &self.encoder.shared_weight, &mut dz, n, k, d);
        for (i, route) in batch.routes.iter().enumerate() {
            if let Route::Subject(s) = *route {
                let zi = &fwd.latent[i * d..(i + 1) * d];
                let dhi = &dh[i * k..(i + 1) * k];
                let block = &mut subject_weight[s * d * k..(s + 1) * d * k];
                linalg::gemm_tn_acc(zi, dhi, block, 1, d, k);
                linalg::gemm_nt_acc(dhi, self.encoder.subject_block(s), &mut dz[i * d..(i + 1) * d], 1, k, d);
            }
        }

        let layer_weight = 1.0 / self.projections.len() as f64;
        let dout: Vec<f64> = dz.iter().map(|g| g * layer_weight).collect();
        let mut projections = Vec::with_capacity(self.projections.len());
        let mut inputs = want_inputs.then(Vec::new);
        for (l, p) in self.projections.iter().enumerate() {
            let (dy, bn_gain, bn_bias) = batchnorm_backward(&dout, n, &p.bn, &fwd.projected.bn_caches[l]);
            let x = fwd.dropped_inputs[l].as_deref().unwrap_or(&batch.layers[l]);
            let mut channel_filter = vec![0.0; p.channel_filter.len()];
            let mut spatial_map = vec![0.0; p.spatial_map.len()];
            let dx = p.backward_batch(
                x,
                n,
                &fwd.projected.layer_caches[l],
                &dy,
                &mut channel_filter,
                &mut spatial_map,
                want_inputs,
            );
            if let (Some(acc), Some(mut dx)) = (inputs.as_mut(), dx) {
                if let Some(scales) = &fwd.dropout_scales[l] {
                    for (g, s) in dx.iter_mut().zip(scales) {
                        *g *= s;
                    }
                }
                acc.push(dx);
            }
            projections.push(LayerGradients {
                channel_filter,
                spatial_map,
                bn_gain,
                bn_bias,
            });
        }
        Ok(Gradients {
            projections,
            shared_weight,
            shared_bias,
            subject_weight,
            inputs,
        })
    }
}
