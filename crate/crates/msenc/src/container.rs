//! Raw blob IO shared by datasets and checkpoints: little-endian `f32` or
//! `u8` arrays, row-major, no header, plus atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn width(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// A named array stored in its own blob next to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub path: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
}

impl ArrayEntry {
    pub fn new(name: &str, path: &str, shape: Vec<usize>, dtype: Dtype) -> Self {
        Self {
            name: name.into(),
            path: path.into(),
            shape,
            dtype,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> u64 {
        self.len() as u64 * self.dtype.width()
    }
}

/// Verifies that the blob exists and has exactly `expected` bytes.
pub fn check_blob(dir: &Path, entry: &str, rel: &str, expected: u64) -> Result<PathBuf> {
    let path = dir.join(rel);
    let meta = match fs::metadata(&path) {
        Ok(m) if m.is_file() => m,
        _ => {
            return Err(Error::MissingBlob {
                entry: entry.into(),
                path,
            })
        }
    };
    if meta.len() != expected {
        return Err(Error::ShapeMismatch {
            entry: entry.into(),
            expected,
            actual: meta.len(),
        });
    }
    Ok(path)
}

pub fn read_f32(dir: &Path, entry: &str, rel: &str, len: usize) -> Result<Vec<f64>> {
    let path = check_blob(dir, entry, rel, len as u64 * 4)?;
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    Ok(decode_f32(&bytes))
}

pub fn read_mask(dir: &Path, entry: &str, rel: &str, len: usize) -> Result<Vec<bool>> {
    let path = check_blob(dir, entry, rel, len as u64)?;
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::manifest(
                &path,
                format!("{entry} holds a byte other than 0 or 1"),
            )),
        })
        .collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

pub fn encode_mask(values: &[bool]) -> Vec<u8> {
    values.iter().map(|&b| b as u8).collect()
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
    file.write_all(bytes).map_err(Error::io(&tmp))?;
    file.sync_all().map_err(Error::io(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_byte_stable() {
        let values = [0.0, -1.5, 3.25e7, f64::from(f32::MIN_POSITIVE)];
        let bytes = encode_f32(&values);
        assert_eq!(bytes.len(), 16);
        assert_eq!(encode_f32(&decode_f32(&bytes)), bytes);
        assert_eq!(decode_f32(&bytes), values);
    }

    #[test]
    fn blob_checks() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(&dir.path().join("a.f32"), &[0u8; 8]).unwrap();
        assert!(check_blob(dir.path(), "a", "a.f32", 8).is_ok());
        assert!(matches!(
            check_blob(dir.path(), "a", "a.f32", 12),
            Err(Error::ShapeMismatch {
                expected: 12,
                actual: 8,
                ..
            })
        ));
        assert!(matches!(
            check_blob(dir.path(), "b", "b.f32", 4),
            Err(Error::MissingBlob { .. })
        ));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.json");
        write_json(&target, &[1, 2, 3]).unwrap();
        write_json(&target, &[4]).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
        let back: Vec<i32> = read_json(&target).unwrap();
        assert_eq!(back, vec![4]);
    }

    #[test]
    fn masks_reject_other_bytes() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(&dir.path().join("m.u8"), &[0, 1, 2]).unwrap();
        assert!(read_mask(dir.path(), "m", "m.u8", 3).is_err());
        write_atomic(&dir.path().join("m.u8"), &[0, 1, 1]).unwrap();
        assert_eq!(read_mask(dir.path(), "m", "m.u8", 3).unwrap(), vec![false, true, true]);
    }
}
