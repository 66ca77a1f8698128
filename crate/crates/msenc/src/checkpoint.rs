//! Parameter checkpoints: a `params.json` listing every array, each stored
//! as a float32 blob beside it.

use std::collections::BTreeMap;
use std::path::Path;

use msenc_core::{BatchNorm, EncoderParams, EncodingHead, LayerProjection, LayerShape, PcaEmbedding};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::container::{self, ArrayEntry, Dtype, CONTAINER_VERSION};
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    /// Full head, embedding included.
    Head,
    /// PCA embedding alone, as written by `fit-pca`.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub version: u32,
    pub kind: CheckpointKind,
    #[serde(default)]
    pub layer_shapes: Vec<[usize; 3]>,
    #[serde(default)]
    pub latent_dim: usize,
    #[serde(default)]
    pub num_subjects: usize,
    pub activity_dim: usize,
    pub components: usize,
    pub rank: usize,
    /// Modelling conventions the arrays depend on, plus caller notes.
    pub metadata: BTreeMap<String, Value>,
    pub arrays: Vec<ArrayEntry>,
}

impl ParamsFile {
    pub fn entry(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

fn base_metadata() -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("storage".into(), json!("float32 little-endian, row-major"));
    m.insert(
        "pca_fit".into(),
        json!("train split only, subjects pooled without per-subject centering"),
    );
    m.insert(
        "pca_sign".into(),
        json!("largest-magnitude entry of each axis is positive"),
    );
    m
}

fn head_metadata(head: &EncodingHead) -> BTreeMap<String, Value> {
    let mut m = base_metadata();
    let bn = head.projections.first().map(|p| (p.bn.momentum, p.bn.eps));
    let (momentum, eps) = bn.unwrap_or((BatchNorm::DEFAULT_MOMENTUM, BatchNorm::DEFAULT_EPS));
    m.insert("batch_norm_affine".into(), json!(true));
    m.insert("batch_norm_momentum".into(), json!(momentum));
    m.insert("batch_norm_eps".into(), json!(eps));
    m.insert(
        "batch_norm_variance".into(),
        json!("biased batch variance for normalization, unbiased for running updates"),
    );
    m.insert("projection_bias".into(), json!("none"));
    m.insert("encoder_bias".into(), json!("single shared bias, no per-subject bias"));
    m.insert("layer_aggregation".into(), json!("unweighted mean"));
    m
}

struct Writer<'a> {
    dir: &'a Path,
    arrays: Vec<ArrayEntry>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, shape: Vec<usize>, values: &[f64]) -> Result<()> {
        let entry = ArrayEntry::new(name, &format!("{name}.f32"), shape, Dtype::F32);
        debug_assert_eq!(entry.len(), values.len());
        container::write_atomic(&self.dir.join(&entry.path), &container::encode_f32(values))?;
        self.arrays.push(entry);
        Ok(())
    }

    fn embedding(&mut self, e: &PcaEmbedding) -> Result<()> {
        self.put("pca_basis", vec![e.dim, e.components], &e.basis)?;
        self.put("pca_center", vec![e.dim], &e.center)?;
        self.put("pca_explained_variance", vec![e.components], &e.explained_variance)
    }
}

/// Writes the embedding alone.
pub fn save_embedding(dir: &Path, e: &PcaEmbedding, notes: BTreeMap<String, Value>) -> Result<ParamsFile> {
    let mut w = Writer {
        dir,
        arrays: Vec::new(),
    };
    w.embedding(e)?;
    let mut metadata = base_metadata();
    metadata.extend(notes);
    let file = ParamsFile {
        version: CONTAINER_VERSION,
        kind: CheckpointKind::Embedding,
        layer_shapes: Vec::new(),
        latent_dim: 0,
        num_subjects: 0,
        activity_dim: e.dim,
        components: e.components,
        rank: e.rank,
        metadata,
        arrays: w.arrays,
    };
    container::write_json(&dir.join(PARAMS_FILE), &file)?;
    Ok(file)
}

/// Writes every head array, running statistics and embedding included.
pub fn save_head(dir: &Path, head: &EncodingHead, notes: BTreeMap<String, Value>) -> Result<ParamsFile> {
    let mut w = Writer {
        dir,
        arrays: Vec::new(),
    };
    let d = head.latent_dim();
    for (l, p) in head.projections.iter().enumerate() {
        let pre = format!("projection.{l}");
        w.put(
            &format!("{pre}.channel_filter"),
            vec![p.shape.channels, d],
            &p.channel_filter,
        )?;
        w.put(
            &format!("{pre}.spatial_map"),
            vec![p.shape.height, p.shape.width, d],
            &p.spatial_map,
        )?;
        w.put(&format!("{pre}.bn_gain"), vec![d], &p.bn.gain)?;
        w.put(&format!("{pre}.bn_bias"), vec![d], &p.bn.bias)?;
        w.put(&format!("{pre}.bn_running_mean"), vec![d], &p.bn.running_mean)?;
        w.put(&format!("{pre}.bn_running_var"), vec![d], &p.bn.running_var)?;
    }
    let enc = &head.encoder;
    let k = enc.output_dim;
    w.put("shared_weight", vec![d, k], &enc.shared_weight)?;
    w.put("shared_bias", vec![k], &enc.shared_bias)?;
    w.put("subject_weight", vec![enc.num_subjects(), d, k], &enc.subject_weight)?;
    w.embedding(&head.embedding)?;
    let mut metadata = head_metadata(head);
    metadata.extend(notes);
    let file = ParamsFile {
        version: CONTAINER_VERSION,
        kind: CheckpointKind::Head,
        layer_shapes: head
            .layer_shapes()
            .iter()
            .map(|s| [s.height, s.width, s.channels])
            .collect(),
        latent_dim: d,
        num_subjects: enc.num_subjects(),
        activity_dim: head.activity_dim(),
        components: k,
        rank: head.embedding.rank,
        metadata,
        arrays: w.arrays,
    };
    container::write_json(&dir.join(PARAMS_FILE), &file)?;
    Ok(file)
}

pub fn read_params(dir: &Path) -> Result<ParamsFile> {
    let path = dir.join(PARAMS_FILE);
    if !path.is_file() {
        return Err(Error::MissingBlob {
            entry: "params".into(),
            path,
        });
    }
    let file: ParamsFile = container::read_json(&path)?;
    if file.version != CONTAINER_VERSION {
        return Err(Error::VersionUnsupported {
            found: file.version,
            supported: CONTAINER_VERSION,
        });
    }
    Ok(file)
}

struct Reader<'a> {
    dir: &'a Path,
    file: &'a ParamsFile,
}

impl Reader<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let entry = self
            .file
            .entry(name)
            .ok_or_else(|| Error::manifest(self.dir.join(PARAMS_FILE), format!("array {name} is not listed")))?;
        if entry.shape != shape || entry.dtype != Dtype::F32 {
            return Err(Error::manifest(
                self.dir.join(PARAMS_FILE),
                format!("array {name} has shape {:?}, expected {shape:?} f32", entry.shape),
            ));
        }
        container::read_f32(self.dir, name, &entry.path, entry.len())
    }

    fn embedding(&self) -> Result<PcaEmbedding> {
        let (v, k) = (self.file.activity_dim, self.file.components);
        if self.file.rank > k {
            return Err(Error::manifest(self.dir.join(PARAMS_FILE), "rank exceeds components"));
        }
        Ok(PcaEmbedding {
            dim: v,
            components: k,
            basis: self.get("pca_basis", &[v, k])?,
            center: self.get("pca_center", &[v])?,
            explained_variance: self.get("pca_explained_variance", &[k])?,
            rank: self.file.rank,
            frozen: true,
        })
    }

    fn meta_f64(&self, key: &str, default: f64) -> f64 {
        self.file.metadata.get(key).and_then(Value::as_f64).unwrap_or(default)
    }
}

/// Loads the embedding from either checkpoint kind.
pub fn load_embedding(dir: &Path) -> Result<PcaEmbedding> {
    if !dir.join(PARAMS_FILE).is_file() {
        return Err(Error::MissingEmbedding(dir.to_path_buf()));
    }
    let file = read_params(dir)?;
    Reader { dir, file: &file }.embedding()
}

pub fn load_head(dir: &Path) -> Result<EncodingHead> {
    let file = read_params(dir)?;
    if file.kind != CheckpointKind::Head {
        return Err(Error::manifest(
            dir.join(PARAMS_FILE),
            "checkpoint holds an embedding only",
        ));
    }
    let r = Reader { dir, file: &file };
    let (d, k, s) = (file.latent_dim, file.components, file.num_subjects);
    let momentum = r.meta_f64("batch_norm_momentum", BatchNorm::DEFAULT_MOMENTUM);
    let eps = r.meta_f64("batch_norm_eps", BatchNorm::DEFAULT_EPS);
    let mut projections = Vec::with_capacity(file.layer_shapes.len());
    for (l, &[h, w, c]) in file.layer_shapes.iter().enumerate() {
        let pre = format!("projection.{l}");
        projections.push(LayerProjection {
            shape: LayerShape::new(h, w, c),
            channel_filter: r.get(&format!("{pre}.channel_filter"), &[c, d])?,
            spatial_map: r.get(&format!("{pre}.spatial_map"), &[h, w, d])?,
            bn: BatchNorm {
                gain: r.get(&format!("{pre}.bn_gain"), &[d])?,
                bias: r.get(&format!("{pre}.bn_bias"), &[d])?,
                running_mean: r.get(&format!("{pre}.bn_running_mean"), &[d])?,
                running_var: r.get(&format!("{pre}.bn_running_var"), &[d])?,
                momentum,
                eps,
            },
        });
    }
    let encoder = EncoderParams {
        latent_dim: d,
        output_dim: k,
        shared_weight: r.get("shared_weight", &[d, k])?,
        shared_bias: r.get("shared_bias", &[k])?,
        subject_weight: r.get("subject_weight", &[s, d, k])?,
    };
    Ok(EncodingHead::new(projections, encoder, r.embedding()?)?)
}
