//! `manifest.json` plus sibling blobs holding features, targets, and the
//! optional per-subject and per-vertex extras.

use std::path::{Path, PathBuf};

use msenc_core::data::SampleSet;
use msenc_core::LayerShape;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, CONTAINER_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedBlob {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobPaths {
    /// One `N×H×W×C` blob per layer.
    pub features: Vec<String>,
    /// `N×V`.
    pub activity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_ceiling: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roi_masks: Vec<NamedBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_valid_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_samples: usize,
    pub num_subjects: usize,
    /// `[H, W, C]` per layer.
    pub layer_shapes: Vec<[usize; 3]>,
    pub activity_dim: usize,
    pub subject_of_sample: Vec<usize>,
    /// Stable per-sample keys for split assignment; sample indices when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_keys: Option<Vec<u64>>,
    pub blob_paths: BlobPaths,
}

impl DatasetManifest {
    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layer_shapes
            .iter()
            .map(|&[h, w, c]| LayerShape::new(h, w, c))
            .collect()
    }

    pub fn keys(&self) -> Vec<u64> {
        self.sample_keys
            .clone()
            .unwrap_or_else(|| (0..self.num_samples as u64).collect())
    }

    /// Every blob with its entry name and expected byte length.
    fn blobs(&self) -> Vec<(String, &str, u64)> {
        let (n, s, v) = (
            self.num_samples as u64,
            self.num_subjects as u64,
            self.activity_dim as u64,
        );
        let mut out = Vec::new();
        for (l, (path, shape)) in self.blob_paths.features.iter().zip(self.shapes()).enumerate() {
            out.push((format!("features[{l}]"), path.as_str(), n * shape.len() as u64 * 4));
        }
        out.push(("activity".into(), self.blob_paths.activity.as_str(), n * v * 4));
        if let Some(p) = &self.blob_paths.noise_ceiling {
            out.push(("noise_ceiling".into(), p.as_str(), s * v * 4));
        }
        for roi in &self.blob_paths.roi_masks {
            out.push((format!("roi_masks[{}]", roi.name), roi.path.as_str(), v));
        }
        if let Some(p) = &self.blob_paths.subject_valid_mask {
            out.push(("subject_valid_mask".into(), p.as_str(), s * v));
        }
        out
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Parses and validates a manifest. `path` may be the manifest file or its
/// directory. Every blob is checked for existence and exact byte length.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let file = manifest_path(path);
    if !file.is_file() {
        return Err(Error::MissingBlob {
            entry: "manifest".into(),
            path: file,
        });
    }
    let m: DatasetManifest = container::read_json(&file)?;
    if m.version != CONTAINER_VERSION {
        return Err(Error::VersionUnsupported {
            found: m.version,
            supported: CONTAINER_VERSION,
        });
    }
    let bad = |reason: String| Err(Error::manifest(&file, reason));
    if m.num_subjects == 0 || m.activity_dim == 0 || m.layer_shapes.is_empty() {
        return bad("num_subjects, activity_dim and layer_shapes must be nonempty".into());
    }
    if m.layer_shapes.iter().any(|s| s.contains(&0)) {
        return bad("layer shapes must be positive".into());
    }
    if m.blob_paths.features.len() != m.layer_shapes.len() {
        return bad(format!(
            "{} feature blobs for {} layers",
            m.blob_paths.features.len(),
            m.layer_shapes.len()
        ));
    }
    if m.subject_of_sample.len() != m.num_samples {
        return bad(format!(
            "subject_of_sample has {} entries for {} samples",
            m.subject_of_sample.len(),
            m.num_samples
        ));
    }
    if let Some(&s) = m.subject_of_sample.iter().find(|&&s| s >= m.num_subjects) {
        return bad(format!(
            "subject index {s} is not below num_subjects {}",
            m.num_subjects
        ));
    }
    if let Some(keys) = &m.sample_keys {
        if keys.len() != m.num_samples {
            return bad(format!(
                "sample_keys has {} entries for {} samples",
                keys.len(),
                m.num_samples
            ));
        }
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    for (entry, rel, bytes) in m.blobs() {
        container::check_blob(&dir, &entry, rel, bytes)?;
    }
    if let Some(p) = &m.blob_paths.noise_ceiling {
        let nc = container::read_f32(&dir, "noise_ceiling", p, m.num_subjects * m.activity_dim)?;
        if nc.iter().any(|c| c.is_nan() || *c < 0.0) {
            return bad("noise_ceiling entries must be nonnegative".into());
        }
    }
    Ok((m, dir))
}

/// A loaded dataset: samples in memory plus the optional extras.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: SampleSet,
    /// `S×V`.
    pub noise_ceiling: Option<Vec<f64>>,
    pub roi_masks: Vec<(String, Vec<bool>)>,
}

impl Dataset {
    pub fn keys(&self) -> Vec<u64> {
        self.manifest.keys()
    }
}

/// Loads every blob, feature layers in parallel.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (m, dir) = load_manifest(path)?;
    let n = m.num_samples;
    let v = m.activity_dim;
    let shapes = m.shapes();
    let features = m
        .blob_paths
        .features
        .par_iter()
        .zip(shapes.par_iter())
        .enumerate()
        .map(|(l, (p, shape))| container::read_f32(&dir, &format!("features[{l}]"), p, n * shape.len()))
        .collect::<Result<Vec<_>>>()?;
    for (l, f) in features.iter().enumerate() {
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::manifest(
                &dir,
                format!("features[{l}] contains non-finite values"),
            ));
        }
    }
    let activity = container::read_f32(&dir, "activity", &m.blob_paths.activity, n * v)?;
    let mut samples = SampleSet::new(
        shapes,
        features,
        activity,
        v,
        m.subject_of_sample.clone(),
        m.num_subjects,
    )?;
    if let Some(p) = &m.blob_paths.subject_valid_mask {
        let mask = container::read_mask(&dir, "subject_valid_mask", p, m.num_subjects * v)?;
        samples = samples.with_valid_mask(mask)?;
    }
    let noise_ceiling = match &m.blob_paths.noise_ceiling {
        Some(p) => Some(container::read_f32(&dir, "noise_ceiling", p, m.num_subjects * v)?),
        None => None,
    };
    let roi_masks = m
        .blob_paths
        .roi_masks
        .iter()
        .map(|r| {
            Ok((
                r.name.clone(),
                container::read_mask(&dir, &format!("roi_masks[{}]", r.name), &r.path, v)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: m,
        samples,
        noise_ceiling,
        roi_masks,
    })
}

/// Writes blobs and then the manifest into `dir`, each atomically. Returns
/// the manifest as written.
pub fn write_dataset(
    dir: &Path,
    samples: &SampleSet,
    noise_ceiling: Option<&[f64]>,
    roi_masks: &[(String, Vec<bool>)],
    sample_keys: Option<Vec<u64>>,
) -> Result<DatasetManifest> {
    let (s, v) = (samples.num_subjects, samples.activity_dim);
    let mut blob_paths = BlobPaths {
        features: Vec::new(),
        activity: "activity.f32".into(),
        noise_ceiling: None,
        roi_masks: Vec::new(),
        subject_valid_mask: None,
    };
    for (l, f) in samples.features.iter().enumerate() {
        let name = format!("features_{l}.f32");
        container::write_atomic(&dir.join(&name), &container::encode_f32(f))?;
        blob_paths.features.push(name);
    }
    container::write_atomic(
        &dir.join(&blob_paths.activity),
        &container::encode_f32(&samples.activity),
    )?;
    if let Some(nc) = noise_ceiling {
        if nc.len() != s * v {
            return Err(Error::Core(msenc_core::Error::LengthMismatch {
                expected: s * v,
                actual: nc.len(),
            }));
        }
        container::write_atomic(&dir.join("noise_ceiling.f32"), &container::encode_f32(nc))?;
        blob_paths.noise_ceiling = Some("noise_ceiling.f32".into());
    }
    for (i, (name, mask)) in roi_masks.iter().enumerate() {
        let file = format!("roi_{i}.u8");
        container::write_atomic(&dir.join(&file), &container::encode_mask(mask))?;
        blob_paths.roi_masks.push(NamedBlob {
            name: name.clone(),
            path: file,
        });
    }
    if let Some(mask) = &samples.subject_valid_mask {
        container::write_atomic(&dir.join("subject_valid_mask.u8"), &container::encode_mask(mask))?;
        blob_paths.subject_valid_mask = Some("subject_valid_mask.u8".into());
    }
    let manifest = DatasetManifest {
        version: CONTAINER_VERSION,
        num_samples: samples.len(),
        num_subjects: s,
        layer_shapes: samples
            .layer_shapes
            .iter()
            .map(|sh| [sh.height, sh.width, sh.channels])
            .collect(),
        activity_dim: v,
        subject_of_sample: samples.subjects.clone(),
        sample_keys,
        blob_paths,
    };
    container::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
