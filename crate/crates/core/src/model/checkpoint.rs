//! Binary checkpoint: `CAIT`, u32 version, u64 metadata length, JSON
//! metadata, then f64 little-endian parameter blobs in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{CaiTts, ProsodyStats};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"CAIT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub step: usize,
    pub prosody: ProsodyStats,
    pub params: Vec<ManifestEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &CaiTts, step: usize) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        step,
        prosody: model.prosody,
        params: model
            .params
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in model.params.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CaiTts, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    meta.config.validate()?;

    // Rebuild the reference layout so a manifest from another architecture is rejected.
    let reference = CaiTts::new(meta.config.clone(), 0)?;
    if reference.params.len() != meta.params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, config implies {}",
            meta.params.len(),
            reference.params.len()
        )));
    }
    let mut store = ParamStore::new();
    for (entry, (name, t)) in meta.params.iter().zip(reference.params.iter()) {
        if entry.name != name || entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        store.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((
        CaiTts {
            config: meta.config,
            params: store,
            prosody: meta.prosody,
        },
        meta.step,
    ))
}

pub fn save_checkpoint(path: &Path, model: &CaiTts, step: usize) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, model, step)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CaiTts, usize)> {
    if !path.exists() {
        return Err(Error::MissingAsset(path.to_path_buf()));
    }
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = CaiTts::new(ModelConfig::toy(), 3).unwrap();
        m.prosody.pitch.mean = 123.5;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, 42).unwrap();
        assert_eq!(&buf[..4], b"CAIT");
        let (back, step) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = CaiTts::new(ModelConfig::toy(), 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, 0).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        buf.push(0);
        assert!(matches!(read_checkpoint(&buf[..]), Err(Error::Checkpoint(_))));
    }
}
