//! Binary checkpoint format.
//!
//! Layout: magic `WLOC`, u32 LE format version, u64 LE header length, JSON
//! header (config, tensor index, training metadata), then all tensor data as
//! little-endian f32 in index order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ModelGraph;

const MAGIC: &[u8; 4] = b"WLOC";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub epochs_run: u32,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: usize,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    metadata: CheckpointMetadata,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: ModelGraph<f32>,
    pub config: ModelConfig,
    pub metadata: CheckpointMetadata,
}

pub fn save_checkpoint(
    model: &ModelGraph<f32>,
    config: &ModelConfig,
    metadata: &CheckpointMetadata,
    path: &Path,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    model.for_each_param(&mut |meta, t| {
        tensors.push(TensorEntry {
            name: meta.name,
            shape: t.shape().to_vec(),
            offset: payload.len(),
            trainable: meta.trainable,
        });
        payload.extend_from_slice(t.data());
    });
    let header = Header {
        config: *config,
        tensors,
        metadata: metadata.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let f = tmp.as_file_mut();
        let write = |f: &mut std::fs::File, bytes: &[u8]| {
            f.write_all(bytes).map_err(|e| Error::io(path, e))
        };
        write(f, MAGIC)?;
        write(f, &FORMAT_VERSION.to_le_bytes())?;
        write(f, &(header_bytes.len() as u64).to_le_bytes())?;
        write(f, &header_bytes)?;
        let mut buf = Vec::with_capacity(payload.len() * 4);
        for v in &payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write(f, &buf)?;
        f.sync_all().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!(
            "{}: truncated (only {} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic bytes {:?}",
            path.display(),
            &bytes[..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Checkpoint(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload_bytes = &bytes[payload_start..];
    if payload_bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: payload is not a whole number of f32s",
            path.display()
        )));
    }
    let payload: Vec<f32> = payload_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut model = build_model(&header.config)?;
    let mut used = 0usize;
    let mut err: Option<Error> = None;
    let mut remaining: std::collections::HashMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t))
        .collect();
    model.for_each_param_mut(&mut |meta, t| {
        if err.is_some() {
            return;
        }
        let Some(entry) = remaining.remove(meta.name.as_str()) else {
            err = Some(Error::Checkpoint(format!(
                "{}: missing tensor {}",
                path.display(),
                meta.name
            )));
            return;
        };
        if entry.shape != t.shape() {
            err = Some(Error::ShapeMismatch {
                expected: format!("{:?}", t.shape()),
                actual: format!("{:?}", entry.shape),
                context: format!("checkpoint tensor {}", entry.name),
            });
            return;
        }
        if entry.trainable != meta.trainable {
            err = Some(Error::Checkpoint(format!(
                "{}: tensor {} trainable flag mismatch",
                path.display(),
                entry.name
            )));
            return;
        }
        let end = entry.offset + t.len();
        if end > payload.len() {
            err = Some(Error::Checkpoint(format!(
                "{}: tensor {} extends past the payload",
                path.display(),
                entry.name
            )));
            return;
        }
        t.data_mut().copy_from_slice(&payload[entry.offset..end]);
        used += t.len();
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = remaining.keys().next() {
        return Err(Error::Checkpoint(format!(
            "{}: unexpected tensor {extra}",
            path.display()
        )));
    }
    if used != payload.len() {
        return Err(Error::Checkpoint(format!(
            "{}: payload has {} values but tensors use {used}",
            path.display(),
            payload.len()
        )));
    }
    Ok(LoadedCheckpoint {
        model,
        config: header.config,
        metadata: header.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{BinauralFrame, FRAME_LEN};
    use crate::dsp::gammatone::design_gammatone_bank;
    use crate::models::{predict_frame, ModelInput, ModelKind};

    fn test_frame() -> BinauralFrame {
        let mut l = [0.0f32; FRAME_LEN];
        let mut r = [0.0f32; FRAME_LEN];
        for i in 0..FRAME_LEN {
            l[i] = (i as f32 * 0.21).sin();
            r[i] = (i as f32 * 0.19).cos();
        }
        BinauralFrame::from_slices(&l, &r).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.ckpt");
        let config = ModelConfig::new(ModelKind::WavelocConv, 99);
        let model = build_model(&config).unwrap();
        let meta = CheckpointMetadata {
            epochs_run: 3,
            best_val_loss: Some(1.25),
        };
        save_checkpoint(&model, &config, &meta, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.metadata, meta);
        assert_eq!(loaded.config, config);
        let f = test_frame();
        let a = predict_frame(&model, ModelInput::Frame(&f)).unwrap();
        let b = predict_frame(&loaded.model, ModelInput::Frame(&f)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let config = ModelConfig::new(ModelKind::GccBaseline, 7);
        let model = build_model(&config).unwrap();
        save_checkpoint(&model, &config, &CheckpointMetadata::default(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn truncated_payload_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.ckpt");
        let config = ModelConfig::new(ModelKind::GccBaseline, 7);
        let model = build_model(&config).unwrap();
        save_checkpoint(&model, &config, &CheckpointMetadata::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4096]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("layer"), "{err}");
    }

    #[test]
    fn gtf_checkpoint_keeps_gammatone_tensors_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gtf.ckpt");
        let config = ModelConfig::new(ModelKind::WavelocGtf, 5);
        let model = build_model(&config).unwrap();
        save_checkpoint(&model, &config, &CheckpointMetadata::default(), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let bank = design_gammatone_bank();
        let mut checked = false;
        loaded.model.for_each_param(&mut |meta, t| {
            if meta.name == "layer0.weight" {
                assert!(!meta.trainable);
                for (c, k) in bank.kernels().iter().enumerate() {
                    assert_eq!(&t.data()[c * 320..(c + 1) * 320], &k[..]);
                }
                checked = true;
            }
        });
        assert!(checked);
    }
}
