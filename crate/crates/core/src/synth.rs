//! Synthetic datasets generated by a planted head, for recovery tests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::{embed_activity, gather_activity, SampleSet};
use crate::encoder::{EncoderParams, Route};
use crate::head::EncodingHead;
use crate::linalg;
use crate::pca::PcaEmbedding;
use crate::projection::{LayerProjection, LayerShape};
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_subjects: usize,
    pub layer_shapes: Vec<LayerShape>,
    pub latent_dim: usize,
    pub pca_dim: usize,
    pub activity_dim: usize,
    pub num_samples: usize,
    /// Standard deviation of additive Gaussian noise on the targets.
    pub noise_std: f64,
    /// Scale of the planted subject maps relative to the shared map.
    pub subject_scale: f64,
    /// Fraction of vertices dropped from each subject's valid mask.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Desk-scale recovery setting: 4 subjects, two 4×4×16 layers, D=32,
    /// K=16, V=64, 4096 samples.
    pub fn desk() -> Self {
        Self {
            num_subjects: 4,
            layer_shapes: vec![LayerShape::new(4, 4, 16); 2],
            latent_dim: 32,
            pca_dim: 16,
            activity_dim: 64,
            num_samples: 4096,
            noise_std: 0.0,
            subject_scale: 0.5,
            mask_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: SampleSet,
    pub planted: EncodingHead,
    /// `S×V` fraction of target variance explained by the planted signal.
    pub noise_ceiling: Vec<f64>,
    pub roi_masks: Vec<(String, Vec<bool>)>,
}

/// Draws features, plants a head, and produces targets
/// `planted(features) + noise`, zero-filled outside each subject's mask.
///
/// The planted batch-norm running statistics are set to the empirical
/// statistics of the generated features, so its evaluation-mode output is
/// standardized.
pub fn synthesize(spec: &SynthSpec) -> Result<Synthetic> {
    let SynthSpec {
        num_subjects: s,
        latent_dim: d,
        pca_dim: k,
        activity_dim: v,
        num_samples: n,
        ..
    } = *spec;
    if s == 0 || d == 0 || k == 0 || v == 0 || n < 2 || spec.layer_shapes.is_empty() {
        return Err(Error::InvalidConfig("synthetic dimensions must be positive".into()));
    }
    if k > v {
        return Err(Error::InvalidConfig("pca_dim must not exceed activity_dim".into()));
    }
    if !(0.0..1.0).contains(&spec.mask_fraction) || spec.noise_std < 0.0 {
        return Err(Error::InvalidConfig(
            "need 0 <= mask_fraction < 1 and noise_std >= 0".into(),
        ));
    }
    let mut rng = rng_from_seed(spec.seed);

    let subjects: Vec<usize> = (0..n).map(|i| i % s).collect();
    let features: Vec<Vec<f64>> = spec
        .layer_shapes
        .iter()
        .map(|shape| (0..n * shape.len()).map(|_| crate::std_normal(&mut rng)).collect())
        .collect();

    let mut projections = Vec::with_capacity(spec.layer_shapes.len());
    for (shape, x) in spec.layer_shapes.iter().zip(&features) {
        let mut p = LayerProjection::init(*shape, d, &mut rng);
        let map_std = 1.0 / libm::sqrt(shape.positions() as f64);
        for w in p.spatial_map.iter_mut() {
            *w = map_std * crate::std_normal(&mut rng);
        }
        for g in p.bn.gain.iter_mut() {
            *g = rng.random_range(0.5..1.5);
        }
        for b in p.bn.bias.iter_mut() {
            *b = 0.1 * crate::std_normal(&mut rng);
        }
        let (y, _) = p.forward_batch(x, n);
        for j in 0..d {
            let mean = (0..n).map(|i| y[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| (y[i * d + j] - mean) * (y[i * d + j] - mean))
                .sum::<f64>()
                / n as f64;
            p.bn.running_mean[j] = mean;
            p.bn.running_var[j] = var;
        }
        projections.push(p);
    }

    let mut encoder = EncoderParams::init(d, k, s, &mut rng);
    let sub_std = spec.subject_scale / libm::sqrt(d as f64);
    for w in encoder.subject_weight.iter_mut() {
        *w = sub_std * crate::std_normal(&mut rng);
    }
    for b in encoder.shared_bias.iter_mut() {
        *b = 0.1 * crate::std_normal(&mut rng);
    }

    let mut basis: Vec<f64> = (0..v * k).map(|_| crate::std_normal(&mut rng)).collect();
    linalg::orthonormalize_columns(&mut basis, v, k);
    let center = (0..v).map(|_| crate::std_normal(&mut rng)).collect();
    let embedding = PcaEmbedding {
        dim: v,
        components: k,
        basis,
        center,
        explained_variance: vec![1.0; k],
        rank: k,
        frozen: true,
    };
    let planted = EncodingHead::new(projections, encoder, embedding)?;

    let masks: Vec<bool> = if spec.mask_fraction > 0.0 {
        (0..s * v).map(|_| rng.random::<f64>() >= spec.mask_fraction).collect()
    } else {
        vec![true; s * v]
    };

    let mut data = SampleSet::new(spec.layer_shapes.clone(), features, vec![0.0; n * v], v, subjects, s)?;
    let all: Vec<usize> = (0..n).collect();
    let clean = crate::train::predict_indices(&planted, &data, &all, false, 512)?;

    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
    for i in 0..n {
        let subj = data.subjects[i];
        let mask = &masks[subj * v..(subj + 1) * v];
        let mut row: Vec<f64> = clean[i * v..(i + 1) * v].to_vec();
        if spec.noise_std > 0.0 {
            for x in row.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        let embedded = embed_activity(&gather_activity(&row, mask)?, mask)?;
        data.activity[i * v..(i + 1) * v].copy_from_slice(&embedded);
    }
    if spec.mask_fraction > 0.0 {
        data = data.with_valid_mask(masks.clone())?;
    }

    let mut noise_ceiling = vec![0.0; s * v];
    let var_noise = spec.noise_std * spec.noise_std;
    for subj in 0..s {
        let rows: Vec<usize> = (0..n).filter(|&i| data.subjects[i] == subj).collect();
        for j in 0..v {
            if !masks[subj * v + j] || rows.len() < 2 {
                continue;
            }
            let mean = rows.iter().map(|&i| clean[i * v + j]).sum::<f64>() / rows.len() as f64;
            let var = rows
                .iter()
                .map(|&i| (clean[i * v + j] - mean) * (clean[i * v + j] - mean))
                .sum::<f64>()
                / rows.len() as f64;
            noise_ceiling[subj * v + j] = if var + var_noise > 0.0 {
                var / (var + var_noise)
            } else {
                0.0
            };
        }
    }

    let half = v / 2;
    let roi_masks = vec![
        ("anterior".into(), (0..v).map(|j| j < half).collect()),
        ("posterior".into(), (0..v).map(|j| j >= half).collect()),
    ];

    Ok(Synthetic {
        data,
        planted,
        noise_ceiling,
        roi_masks,
    })
}

/// Planted predictions for sample `i` under `route`.
pub fn planted_prediction(syn: &Synthetic, i: usize, route: Route) -> Result<Vec<f64>> {
    let mut batch = syn.data.batch(&[i]);
    batch.routes[0] = route;
    syn.planted.predict(&batch)
}
