//! Manifest + raw-blob persistence shared by every on-disk artifact.
//!
//! An artifact is a directory holding `manifest.json` (shapes, coordinates,
//! descriptors) and `data.bin`, a raw little-endian float64 blob. The format
//! is language-neutral and bit-exact: saving and re-loading any artifact
//! reproduces the original values byte for byte.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "data.bin";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("missing manifest: {0}")]
    MissingManifest(String),
    #[error("missing blob: {0}")]
    MissingBlob(String),
    #[error("blob size mismatch in {path}: expected {expected} bytes, found {found}")]
    BlobSize {
        path: String,
        expected: u64,
        found: u64,
    },
    #[error("manifest error in {path}: {source}")]
    Manifest {
        path: String,
        source: serde_json::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ContainerError {
    ContainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize `manifest` as pretty JSON into `dir/manifest.json`, creating
/// the directory if needed.
pub fn save_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<(), ContainerError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, manifest).map_err(|e| ContainerError::Manifest {
        path: path.display().to_string(),
        source: e,
    })?;
    writer.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    writer.flush().map_err(|e| io_err(&path, e))
}

pub fn load_manifest<T: DeserializeOwned>(dir: &Path) -> Result<T, ContainerError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ContainerError::MissingManifest(path.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ContainerError::Manifest {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write `values` to `dir/data.bin` as little-endian f64, in order.
pub fn save_blob(dir: &Path, values: &[f64]) -> Result<(), ContainerError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(BLOB_FILE);
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut writer = BufWriter::new(file);
    for v in values {
        writer
            .write_all(&v.to_le_bytes())
            .map_err(|e| io_err(&path, e))?;
    }
    writer.flush().map_err(|e| io_err(&path, e))
}

/// Read exactly `expected_len` little-endian f64 values from `dir/data.bin`.
///
/// Fails if the blob byte count differs from `8 * expected_len`.
pub fn load_blob(dir: &Path, expected_len: usize) -> Result<Vec<f64>, ContainerError> {
    let path = dir.join(BLOB_FILE);
    if !path.is_file() {
        return Err(ContainerError::MissingBlob(path.display().to_string()));
    }
    let meta = fs::metadata(&path).map_err(|e| io_err(&path, e))?;
    let expected_bytes = 8 * expected_len as u64;
    if meta.len() != expected_bytes {
        return Err(ContainerError::BlobSize {
            path: path.display().to_string(),
            expected: expected_bytes,
            found: meta.len(),
        });
    }
    let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let mut buf = [0u8; 8];
    let mut values = Vec::with_capacity(expected_len);
    for _ in 0..expected_len {
        reader.read_exact(&mut buf).map_err(|e| io_err(&path, e))?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

/// Write a u8 mask blob (0 = absent, 1 = present) to `dir/mask.bin`.
pub fn save_mask(dir: &Path, mask: &[bool]) -> Result<(), ContainerError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("mask.bin");
    let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))
}

pub fn load_mask(dir: &Path, expected_len: usize) -> Result<Vec<bool>, ContainerError> {
    let path = dir.join("mask.bin");
    if !path.is_file() {
        return Err(ContainerError::MissingBlob(path.display().to_string()));
    }
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    if bytes.len() != expected_len {
        return Err(ContainerError::BlobSize {
            path: path.display().to_string(),
            expected: expected_len as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes.into_iter().map(|b| b != 0).collect())
}


#[derive(serde::Serialize, serde::Deserialize)]
struct MatrixManifest {
    schema_version: u32,
    kind: String,
    shape: [usize; 2],
    byte_order: String,
    dtype: String,
}

/// Persist a plain 2-D matrix (row-major) with a `kind` tag.
pub fn save_matrix(
    dir: &Path,
    values: &ndarray::Array2<f64>,
    kind: &str,
) -> Result<(), ContainerError> {
    let (r, c) = values.dim();
    let manifest = MatrixManifest {
        schema_version: 1,
        kind: kind.to_string(),
        shape: [r, c],
        byte_order: "LE".into(),
        dtype: "f64".into(),
    };
    save_manifest(dir, &manifest)?;
    save_blob(dir, values.as_slice().expect("standard layout"))
}

pub fn load_matrix(dir: &Path) -> Result<ndarray::Array2<f64>, ContainerError> {
    let manifest: MatrixManifest = load_manifest(dir)?;
    let [r, c] = manifest.shape;
    let values = load_blob(dir, r * c)?;
    Ok(ndarray::Array2::from_shape_vec((r, c), values).expect("shape matches length"))
}
