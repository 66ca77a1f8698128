//! Factorized feature projection.
//!
//! Each layer's weight for latent unit `d` is the outer product of a spatial
//! pooling map (`H·W` weights) and a channel filter (`C` weights). The
//! projection is computed as a 1×1 channel mix followed by a per-unit
//! weighted sum over positions, which is the same as a depth-wise
//! convolution whose kernel and stride cover the whole grid.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::linalg;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Spatial grid and channel count of one input layer (`H×W×C`, row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LayerShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// Number of spatial positions `P = H·W`.
    pub const fn positions(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One sample's feature tensors, one per input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    shapes: Vec<LayerShape>,
    layers: Vec<Vec<f64>>,
}

impl FeatureStack {
    pub fn new(shapes: Vec<LayerShape>, layers: Vec<Vec<f64>>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidConfig("a feature stack needs at least one layer".into()));
        }
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch {
                what: "feature stack layer count",
                expected: shapes.len(),
                actual: layers.len(),
            });
        }
        for (shape, layer) in shapes.iter().zip(&layers) {
            if layer.len() != shape.len() {
                return Err(Error::ShapeMismatch {
                    what: "feature layer",
                    expected: shape.len(),
                    actual: layer.len(),
                });
            }
            if layer.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("feature values must be finite".into()));
            }
        }
        Ok(Self { shapes, layers })
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Vec<f64>> {
        self.layers
    }
}

/// Inverted dropout on raw features.
///
/// In [`Mode::Eval`], or with `rate == 0`, the stack is returned unchanged and
/// the generator is not touched.
pub fn feature_dropout(stack: &FeatureStack, rate: f64, mode: Mode, rng: &mut Rng) -> FeatureStack {
    let layers = stack
        .layers
        .iter()
        .map(|layer| match dropout_scales(layer.len(), rate, mode, rng) {
            Some(scales) => layer.iter().zip(&scales).map(|(x, s)| x * s).collect(),
            None => layer.clone(),
        })
        .collect();
    FeatureStack {
        shapes: stack.shapes.clone(),
        layers,
    }
}

/// Per-element multipliers (`0` or `1/(1-rate)`), or `None` when dropout is
/// inactive.
pub(crate) fn dropout_scales(len: usize, rate: f64, mode: Mode, rng: &mut Rng) -> Option<Vec<f64>> {
    if mode == Mode::Eval || rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

/// Affine batch normalization over a batch of latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    /// Exponential moving average of batch statistics. The running variance
    /// tracks the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for d in 0..self.dim() {
            self.running_mean[d] = (1.0 - m) * self.running_mean[d] + m * stats.mean[d];
            self.running_var[d] = (1.0 - m) * self.running_var[d] + m * stats.var[d] * correction;
        }
    }
}

/// Batch mean and biased variance per latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub(crate) xhat: Vec<f64>,
    pub(crate) inv_std: Vec<f64>,
    pub(crate) mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BnOutput {
    pub out: Vec<f64>,
    /// Present in [`Mode::Train`]; feed to [`BatchNorm::update_running`].
    pub stats: Option<BatchStats>,
    pub cache: BnCache,
}

/// Normalizes an `n×D` batch. Training mode uses the batch statistics,
/// evaluation mode the running ones. Running statistics are not modified.
pub fn batchnorm(batch: &[f64], n: usize, bn: &BatchNorm, mode: Mode) -> Result<BnOutput> {
    let d = bn.dim();
    if batch.len() != n * d {
        return Err(Error::ShapeMismatch {
            what: "batch norm input",
            expected: n * d,
            actual: batch.len(),
        });
    }
    let (mean, var, stats) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::BatchTooSmall(n));
            }
            let mut mean = vec![0.0; d];
            for row in batch.chunks_exact(d) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in batch.chunks_exact(d) {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count: n,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + bn.eps)).collect();
    let mut xhat = vec![0.0; n * d];
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let h = (batch[i * d + j] - mean[j]) * inv_std[j];
            xhat[i * d + j] = h;
            out[i * d + j] = bn.gain[j] * h + bn.bias[j];
        }
    }
    Ok(BnOutput {
        out,
        stats,
        cache: BnCache { xhat, inv_std, mode },
    })
}

/// Gradients of batch norm: returns `(d_input, d_gain, d_bias)`.
pub(crate) fn batchnorm_backward(
    dout: &[f64],
    n: usize,
    bn: &BatchNorm,
    cache: &BnCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = bn.dim();
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let g = dout[i * d + j];
            dgain[j] += g * cache.xhat[i * d + j];
            dbias[j] += g;
        }
    }
    let mut dx = vec![0.0; n * d];
    match cache.mode {
        Mode::Eval => {
            for i in 0..n {
                for j in 0..d {
                    dx[i * d + j] = dout[i * d + j] * bn.gain[j] * cache.inv_std[j];
                }
            }
        }
        Mode::Train => {
            // dxhat = dout * gain; dx = inv_std/N * (N dxhat - sum dxhat - xhat * sum(dxhat * xhat))
            let nf = n as f64;
            for j in 0..d {
                let mut sum = 0.0;
                let mut sum_xhat = 0.0;
                for i in 0..n {
                    let g = dout[i * d + j] * bn.gain[j];
                    sum += g;
                    sum_xhat += g * cache.xhat[i * d + j];
                }
                for i in 0..n {
                    let g = dout[i * d + j] * bn.gain[j];
                    dx[i * d + j] = cache.inv_std[j] / nf * (nf * g - sum - cache.xhat[i * d + j] * sum_xhat);
                }
            }
        }
    }
    (dx, dgain, dbias)
}

/// Projection parameters for one input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjection {
    pub shape: LayerShape,
    /// `C×D`, row-major.
    pub channel_filter: Vec<f64>,
    /// `P×D`, row-major, `P = H·W`.
    pub spatial_map: Vec<f64>,
    pub bn: BatchNorm,
}

/// Intermediate values of one layer's batched projection.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Channel-mixed grid, `n×P×D`.
    pub mixed: Vec<f64>,
}

impl LayerProjection {
    /// All-zero filter and pooling weights with identity batch norm.
    pub fn zeros(shape: LayerShape, latent_dim: usize) -> Self {
        Self {
            shape,
            channel_filter: vec![0.0; shape.channels * latent_dim],
            spatial_map: vec![0.0; shape.positions() * latent_dim],
            bn: BatchNorm::new(latent_dim),
        }
    }

    /// Channel filter drawn from `N(0, 1/C)`; pooling maps start as uniform
    /// mean-pooling (`1/P`).
    pub fn init(shape: LayerShape, latent_dim: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / libm::sqrt(shape.channels as f64);
        let channel_filter = (0..shape.channels * latent_dim)
            .map(|_| std * crate::std_normal(rng))
            .collect();
        let spatial_map = vec![1.0 / shape.positions() as f64; shape.positions() * latent_dim];
        Self {
            shape,
            channel_filter,
            spatial_map,
            bn: BatchNorm::new(latent_dim),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.bn.dim()
    }

    /// Trainable parameters: filter, pooling maps, and the batch-norm affine.
    pub fn num_trainable(&self) -> usize {
        self.channel_filter.len() + self.spatial_map.len() + 2 * self.latent_dim()
    }

    /// Projects one `H×W×C` grid to a `D`-vector (no bias, no normalization).
    pub fn project_layer(&self, layer: &[f64]) -> Result<Vec<f64>> {
        if layer.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                what: "projected layer",
                expected: self.shape.len(),
                actual: layer.len(),
            });
        }
        Ok(self.forward_batch(layer, 1).0)
    }

    /// Dense `(P·C)×D` weight equivalent to the factorized projection. Row
    /// `p·C + c` matches the row-major flattening of an `H×W×C` grid.
    pub fn densify(&self) -> Vec<f64> {
        let (p, c, d) = (self.shape.positions(), self.shape.channels, self.latent_dim());
        let mut dense = vec![0.0; p * c * d];
        for pi in 0..p {
            for ci in 0..c {
                for di in 0..d {
                    dense[(pi * c + ci) * d + di] = self.spatial_map[pi * d + di] * self.channel_filter[ci * d + di];
                }
            }
        }
        dense
    }

    /// Pooling maps as a `D×P` matrix, one map per latent unit.
    pub fn pooling_maps(&self) -> Vec<f64> {
        linalg::transpose(&self.spatial_map, self.shape.positions(), self.latent_dim())
    }

    /// Projects `n` grids stored back to back. Returns `(n×D, cache)`.
    pub(crate) fn forward_batch(&self, x: &[f64], n: usize) -> (Vec<f64>, LayerCache) {
        let (p, c, d) = (self.shape.positions(), self.shape.channels, self.latent_dim());
        let mut mixed = vec![0.0; n * p * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let xi = &x[i * p * c..(i + 1) * p * c];
            let ui = &mut mixed[i * p * d..(i + 1) * p * d];
            linalg::gemm_acc(xi, &self.channel_filter, ui, p, c, d);
            let yi = &mut out[i * d..(i + 1) * d];
            for pi in 0..p {
                let srow = &self.spatial_map[pi * d..(pi + 1) * d];
                let urow = &ui[pi * d..(pi + 1) * d];
                for ((y, s), u) in yi.iter_mut().zip(srow).zip(urow) {
                    *y += s * u;
                }
            }
        }
        (out, LayerCache { mixed })
    }

    /// Backpropagates `dy` (`n×D`) through the projection, accumulating into
    /// `d_filter` and `d_spatial`. Returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_batch(
        &self,
        x: &[f64],
        n: usize,
        cache: &LayerCache,
        dy: &[f64],
        d_filter: &mut [f64],
        d_spatial: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (p, c, d) = (self.shape.positions(), self.shape.channels, self.latent_dim());
        let mut dx = want_input.then(|| vec![0.0; n * p * c]);
        let mut du = vec![0.0; p * d];
        for i in 0..n {
            let dyi = &dy[i * d..(i + 1) * d];
            let ui = &cache.mixed[i * p * d..(i + 1) * p * d];
            for pi in 0..p {
                for di in 0..d {
                    d_spatial[pi * d + di] += dyi[di] * ui[pi * d + di];
                    du[pi * d + di] = dyi[di] * self.spatial_map[pi * d + di];
                }
            }
            let xi = &x[i * p * c..(i + 1) * p * c];
            linalg::gemm_tn_acc(xi, &du, d_filter, p, c, d);
            if let Some(dx) = dx.as_mut() {
                let dxi = &mut dx[i * p * c..(i + 1) * p * c];
                linalg::gemm_nt_acc(&du, &self.channel_filter, dxi, p, d, c);
            }
        }
        dx
    }
}

/// Projects a single stack: per-layer projection, batch norm, then the mean
/// over layers. Training-mode batch norm needs a batch, so a lone sample
/// only succeeds in [`Mode::Eval`]; use [`project_batch`] for training.
pub fn project_stack(stack: &FeatureStack, layers: &[LayerProjection], mode: Mode) -> Result<Vec<f64>> {
    let inputs: Vec<&[f64]> = stack.layers.iter().map(|l| l.as_slice()).collect();
    Ok(project_batch(&inputs, 1, layers, mode)?.latent)
}

/// Output of [`project_batch`].
#[derive(Debug, Clone)]
pub struct ProjectedBatch {
    /// Layer-averaged latents, `n×D`.
    pub latent: Vec<f64>,
    /// Batch statistics per layer (training mode only).
    pub stats: Vec<Option<BatchStats>>,
    pub(crate) layer_caches: Vec<LayerCache>,
    pub(crate) bn_caches: Vec<BnCache>,
}

/// Batched projection of `n` samples. `inputs[l]` holds the `n` grids of
/// layer `l` back to back.
pub fn project_batch(inputs: &[&[f64]], n: usize, layers: &[LayerProjection], mode: Mode) -> Result<ProjectedBatch> {
    if layers.is_empty() {
        return Err(Error::InvalidConfig("projection needs at least one layer".into()));
    }
    if inputs.len() != layers.len() {
        return Err(Error::ShapeMismatch {
            what: "projection layer count",
            expected: layers.len(),
            actual: inputs.len(),
        });
    }
    let d = layers[0].latent_dim();
    let mut latent = vec![0.0; n * d];
    let mut stats = Vec::with_capacity(layers.len());
    let mut layer_caches = Vec::with_capacity(layers.len());
    let mut bn_caches = Vec::with_capacity(layers.len());
    let weight = 1.0 / layers.len() as f64;
    for (x, layer) in inputs.iter().zip(layers) {
        if layer.latent_dim() != d {
            return Err(Error::ShapeMismatch {
                what: "latent dimension across layers",
                expected: d,
                actual: layer.latent_dim(),
            });
        }
        if x.len() != n * layer.shape.len() {
            return Err(Error::ShapeMismatch {
                what: "projection input",
                expected: n * layer.shape.len(),
                actual: x.len(),
            });
        }
        let (y, cache) = layer.forward_batch(x, n);
        let normed = batchnorm(&y, n, &layer.bn, mode)?;
        for (acc, v) in latent.iter_mut().zip(&normed.out) {
            *acc += weight * v;
        }
        stats.push(normed.stats);
        layer_caches.push(cache);
        bn_caches.push(normed.cache);
    }
    Ok(ProjectedBatch {
        latent,
        stats,
        layer_caches,
        bn_caches,
    })
}
