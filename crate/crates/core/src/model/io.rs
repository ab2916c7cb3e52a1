//! Parameter file format, tag "VITP1".
//!
//! Layout on disk:
//!   bytes 0..6    magic "VITP1\n"
//!   bytes 6..14   manifest byte length, u64 little-endian
//!   manifest      JSON: config echo, optimizer step, tensor table
//!   payload       every tensor back to back, f32 little-endian
//!
//! Tensor offsets in the manifest are in elements, not bytes, and must
//! reproduce the deterministic layout derived from the config; import
//! refuses files whose table disagrees, naming the first bad tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::{read_f32_vec, read_u64, write_f32_slice, write_u64};
use crate::error::{Error, Result};

use super::{Layout, ModelConfig, ParamBuf, Vit};

const MAGIC: &[u8; 6] = b"VITP1\n";
const FORMAT_TAG: &str = "VITP1";
/// Upper bound that keeps a corrupt length field from driving a huge
/// allocation before the JSON parse can reject it.
const MAX_MANIFEST_BYTES: u64 = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    byte_order: String,
    config: ModelConfig,
    adam_step: u64,
    tensors: Vec<ManifestTensor>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::io(path, source)
}

/// Writes parameters with their config echo and optimizer step count.
pub fn export_params(path: &Path, vit: &Vit, params: &ParamBuf<f32>, adam_step: u64) -> Result<()> {
    if params.data.len() != vit.layout.total_len {
        return Err(Error::ShapeMismatch {
            tensor: "parameter buffer".into(),
            expected: vec![vit.layout.total_len],
            found: vec![params.data.len()],
        });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        dtype: "f32".into(),
        byte_order: "little-endian".into(),
        config: vit.cfg,
        adam_step,
        tensors: vit
            .layout
            .tensors
            .iter()
            .map(|t| ManifestTensor { name: t.name.clone(), shape: t.shape.clone(), offset: t.offset })
            .collect(),
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| {
        w.write_all(MAGIC)?;
        write_u64(&mut w, manifest_bytes.len() as u64)?;
        w.write_all(&manifest_bytes)?;
        write_f32_slice(&mut w, &params.data)?;
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

/// A parameter file read back into memory, not yet bound to a model.
#[derive(Debug)]
pub struct ImportedParams {
    pub config: ModelConfig,
    pub params: ParamBuf<f32>,
    pub adam_step: u64,
}

impl ImportedParams {
    /// Binds the import to the configuration the caller expects,
    /// reporting the first tensor whose shape disagrees.
    pub fn into_checked(self, expected: &ModelConfig) -> Result<(ParamBuf<f32>, u64)> {
        if self.config != *expected {
            let want = Layout::new(expected)?;
            let have = Layout::new(&self.config)?;
            for w in &want.tensors {
                match have.find(&w.name) {
                    None => {
                        return Err(Error::ShapeMismatch {
                            tensor: w.name.clone(),
                            expected: w.shape.clone(),
                            found: vec![],
                        })
                    }
                    Some(h) if h.shape != w.shape => {
                        return Err(Error::ShapeMismatch {
                            tensor: w.name.clone(),
                            expected: w.shape.clone(),
                            found: h.shape.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
            // Same tensor table but a differing scalar field (an image
            // or window size) still changes model behavior.
            return Err(Error::Format(
                "parameter file config does not match the requested model".into(),
            ));
        }
        Ok((self.params, self.adam_step))
    }
}

/// Reads and validates a parameter file. The tensor table must match the
/// layout derived from the embedded config exactly, and the payload must
/// contain exactly the declared number of finite values.
pub fn import_params(path: &Path) -> Result<ImportedParams> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let file_len = file.metadata().map_err(|e| io_err(path, e))?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a VITP1 parameter file".into()));
    }
    let manifest_len = read_u64(&mut r).map_err(|e| io_err(path, e))?;
    if manifest_len > MAX_MANIFEST_BYTES || 14 + manifest_len > file_len {
        return Err(Error::Format(format!("manifest length {manifest_len} exceeds file size")));
    }
    let mut manifest_bytes = vec![0u8; manifest_len as usize];
    r.read_exact(&mut manifest_bytes).map_err(|e| io_err(path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Format(format!("unknown format tag {:?}", manifest.format)));
    }
    if manifest.dtype != "f32" || manifest.byte_order != "little-endian" {
        return Err(Error::Format(format!(
            "unsupported payload encoding {}/{}",
            manifest.dtype, manifest.byte_order
        )));
    }

    let layout = Layout::new(&manifest.config)?;
    if manifest.tensors.len() != layout.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            layout.tensors.len()
        )));
    }
    for (declared, want) in manifest.tensors.iter().zip(&layout.tensors) {
        if declared.name != want.name {
            return Err(Error::Format(format!(
                "tensor order mismatch: found {:?}, expected {:?}",
                declared.name, want.name
            )));
        }
        if declared.shape != want.shape || declared.offset != want.offset {
            return Err(Error::ShapeMismatch {
                tensor: want.name.clone(),
                expected: want.shape.clone(),
                found: declared.shape.clone(),
            });
        }
    }

    let expected_len = 14 + manifest_len + 4 * layout.total_len as u64;
    if file_len != expected_len {
        return Err(Error::Format(format!(
            "payload size mismatch: file is {file_len} bytes, expected {expected_len}"
        )));
    }
    let data = read_f32_vec(&mut r, layout.total_len).map_err(|e| io_err(path, e))?;
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        let tensor = layout
            .tensors
            .iter()
            .find(|t| bad >= t.offset && bad < t.offset + t.len)
            .map(|t| t.name.clone())
            .unwrap_or_default();
        return Err(Error::Format(format!("non-finite value in tensor {tensor:?}")));
    }
    Ok(ImportedParams { config: manifest.config, params: ParamBuf { data }, adam_step: manifest.adam_step })
}
