//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "CVAECKPT"
//! u32       format version
//! u64       header length N
//! N bytes   UTF-8 JSON header
//! ...       f64 payload, tensors back to back in header order
//! ```
//!
//! The header holds the model config, the optimizer config and step, the
//! training counters, an arbitrary config echo and a tensor table of
//! `{name, shape, offset}` where `offset` counts f64 values into the
//! payload. Adam moments are stored as `adam.m.<name>` and `adam.v.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContextVae, ModelConfig};
use crate::nn::{Adam, AdamConfig, Gradients};
use crate::train::Trainer;

pub const MAGIC: &[u8; 8] = b"CVAECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub step: u64,
    pub epoch: usize,
    /// Resolved run configuration, echoed for provenance.
    pub echo: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes `trainer` with the given config echo.
pub fn write_checkpoint(out: &mut impl Write, trainer: &Trainer, echo: &serde_json::Value) -> Result<()> {
    let store = &trainer.model.store;
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let groups: [(&str, Vec<&[f64]>); 3] = [
        ("", store.tensors().iter().map(|t| t.data.as_slice()).collect()),
        ("adam.m.", trainer.adam.first_moment.data.iter().map(Vec::as_slice).collect()),
        ("adam.v.", trainer.adam.second_moment.data.iter().map(Vec::as_slice).collect()),
    ];
    for (prefix, data) in &groups {
        for (t, values) in store.tensors().iter().zip(data) {
            tensors.push(TensorEntry {
                name: format!("{prefix}{}", t.name),
                shape: t.shape.clone(),
                offset: payload.len(),
            });
            payload.extend_from_slice(values);
        }
    }
    let header = Header {
        model: trainer.model.config.clone(),
        adam: trainer.adam.config,
        adam_step: trainer.adam.step,
        step: trainer.step,
        epoch: trainer.epoch,
        echo: echo.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ck(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Parses a checkpoint; returns the trainer state and the config echo.
pub fn read_checkpoint(input: &mut impl Read) -> Result<(Trainer, serde_json::Value)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| ck("truncated file"))?;
    if &magic != MAGIC {
        return Err(ck("bad magic; not a checkpoint"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|_| ck("truncated file"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| ck("truncated file"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| ck("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ck(format!("header: {e}")))?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(ck("payload is not a whole number of f64 values"));
    }
    let payload: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let mut model = ContextVae::new(header.model.clone())?;
    let mut adam = Adam::new(header.adam, &model.store);
    adam.step = header.adam_step;
    let names: Vec<String> = model.store.tensors().iter().map(|t| t.name.clone()).collect();
    let fetch = |name: &str, shape: &[usize]| -> Result<&[f64]> {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ck(format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(ck(format!("shape mismatch for {name}: {:?} vs {:?}", entry.shape, shape)));
        }
        let n: usize = shape.iter().product();
        payload
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| ck(format!("payload too short for {name}")))
    };
    let mut first = Gradients::zeros_like(&model.store);
    let mut second = Gradients::zeros_like(&model.store);
    for (k, name) in names.iter().enumerate() {
        let shape = model.store.tensors()[k].shape.clone();
        model.store.tensors_mut()[k].data.copy_from_slice(fetch(name, &shape)?);
        first.data[k].copy_from_slice(fetch(&format!("adam.m.{name}"), &shape)?);
        second.data[k].copy_from_slice(fetch(&format!("adam.v.{name}"), &shape)?);
    }
    adam.first_moment = first;
    adam.second_moment = second;
    let trainer = Trainer {
        model,
        adam,
        step: header.step,
        epoch: header.epoch,
    };
    Ok((trainer, header.echo))
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer, echo: &serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, trainer, echo)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Trainer, serde_json::Value)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::NotFound(format!("checkpoint {}: {e}", path.display())))?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{fixture_windows, tiny_config};
    use crate::model::EncoderMode;
    use crate::train::TrainConfig;

    fn trained() -> Trainer {
        let model = ContextVae::new(tiny_config(EncoderMode::FULL)).unwrap();
        let mut tr = Trainer::new(model, AdamConfig::default());
        let data: Vec<_> = fixture_windows(5, 3).into_iter().take(4).collect();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        tr.train(&data, &config, |_, _| Ok(())).unwrap();
        tr
    }

    #[test]
    fn round_trip_is_exact() {
        let tr = trained();
        let echo = serde_json::json!({"run": "test", "k": [1, 5]});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tr, &echo).unwrap();
        let (back, echo_back) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(echo_back, echo);
        assert_eq!(back.step, 2);
        assert_eq!(back.epoch, 1);
        assert_eq!(back.adam, tr.adam);
        assert_eq!(back.model.store.tensors(), tr.model.store.tensors());
        assert_eq!(back.model.config, tr.model.config);
    }

    #[test]
    fn header_layout() {
        let tr = trained();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tr, &serde_json::Value::Null).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), VERSION);
        let n = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&buf[20..20 + n]).unwrap();
        let scalars = tr.model.store.num_scalars();
        assert_eq!(buf.len() - 20 - n, 3 * scalars * 8);
        // first tensor value is readable straight from the payload
        let first = &header.tensors[0];
        let off = 20 + n + first.offset * 8;
        let v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        assert_eq!(v, tr.model.store.tensors()[0].data[0]);
        assert!(header.tensors.iter().any(|t| t.name.starts_with("adam.v.")));
    }

    #[test]
    fn rejects_corruption() {
        let tr = trained();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tr, &serde_json::Value::Null).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Checkpoint(_))));
        let mut short = buf.clone();
        short.truncate(buf.len() - 16);
        assert!(read_checkpoint(&mut short.as_slice()).is_err());
        let mut ver = buf.clone();
        ver[8] = 9;
        assert!(read_checkpoint(&mut ver.as_slice()).is_err());
    }

    #[test]
    fn files_round_trip() {
        let tr = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &tr, &serde_json::Value::Null).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.store.tensors(), tr.model.store.tensors());
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::NotFound(_))));
    }
}
