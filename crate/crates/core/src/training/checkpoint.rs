//! Single-file archive of a trained model.
//!
//! Layout: an 8-byte magic, a `u32` format version and a `u32` entry count,
//! then entries of `name_len: u32, name, kind: u8, payload`. JSON payloads
//! are `len: u64` plus UTF-8 bytes. Tensor payloads are `ndim: u32`, one
//! `u64` per dimension and little-endian `f32` data in row-major order.
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Serialize};

use crate::alignment::ClassGmms;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelMeta};
use crate::nn::Rng64;

const MAGIC: &[u8; 8] = b"MOSARECK";
const VERSION: u32 = 1;
const KIND_JSON: u8 = 0;
const KIND_F32: u8 = 1;
const PARAM_PREFIX: &str = "param/";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub meta: ModelMeta,
    pub params: BTreeMap<String, Array2<f64>>,
    pub gmms: Option<ClassGmms>,
    pub rng: Rng64,
    pub epoch: usize,
}

enum Entry {
    Json(Vec<u8>),
    Tensor(Array2<f64>),
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn capture(model: &Model, gmms: Option<&ClassGmms>, rng: &Rng64, epoch: usize) -> Self {
        Self {
            config: model.config.clone(),
            meta: model.meta.clone(),
            params: model
                .store
                .iter()
                .map(|(n, v)| (n.to_string(), v.clone()))
                .collect(),
            gmms: gmms.cloned(),
            rng: rng.clone(),
            epoch,
        }
    }

    /// Rebuilds the network and loads the stored parameters.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), self.meta.clone())?;
        model.store.load_from(&self.params).map_err(bad)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<(String, Entry)> = vec![
            ("config".into(), Entry::Json(serde_json::to_vec(&self.config)?)),
            ("meta".into(), Entry::Json(serde_json::to_vec(&self.meta)?)),
            ("gmms".into(), Entry::Json(serde_json::to_vec(&self.gmms)?)),
            ("rng".into(), Entry::Json(serde_json::to_vec(&self.rng)?)),
            ("epoch".into(), Entry::Json(serde_json::to_vec(&self.epoch)?)),
        ];
        for (name, value) in &self.params {
            entries.push((format!("{PARAM_PREFIX}{name}"), Entry::Tensor(value.clone())));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, entry) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Json(bytes) => {
                    out.push(KIND_JSON);
                    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
                    out.extend_from_slice(&bytes);
                }
                Entry::Tensor(t) => {
                    out.push(KIND_F32);
                    out.extend_from_slice(&2u32.to_le_bytes());
                    out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
                    out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
                    for v in t.iter() {
                        out.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let n = r.u32()? as usize;
        let mut json: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut params = BTreeMap::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("entry name is not UTF-8"))?;
            match r.u8()? {
                KIND_JSON => {
                    let len = r.u64()? as usize;
                    json.insert(name, r.take(len)?.to_vec());
                }
                KIND_F32 => {
                    let ndim = r.u32()?;
                    if ndim != 2 {
                        return Err(bad(format!("tensor `{name}` has {ndim} dimensions, expected 2")));
                    }
                    let rows = r.u64()? as usize;
                    let cols = r.u64()? as usize;
                    let count = rows.checked_mul(cols).ok_or_else(|| bad("tensor size overflow"))?;
                    let raw = r.take(count.checked_mul(4).ok_or_else(|| bad("tensor size overflow"))?)?;
                    let data: Vec<f64> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                        .collect();
                    let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))?;
                    let key = name
                        .strip_prefix(PARAM_PREFIX)
                        .ok_or_else(|| bad(format!("unexpected tensor entry `{name}`")))?;
                    params.insert(key.to_string(), t);
                }
                k => return Err(bad(format!("entry `{name}` has unknown kind {k}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after the last entry"));
        }
        fn field<T: DeserializeOwned>(json: &BTreeMap<String, Vec<u8>>, key: &str) -> Result<T> {
            let raw = json.get(key).ok_or_else(|| bad(format!("missing entry `{key}`")))?;
            Ok(serde_json::from_slice(raw)?)
        }
        Ok(Self {
            config: field(&json, "config")?,
            meta: field(&json, "meta")?,
            gmms: field(&json, "gmms")?,
            rng: field(&json, "rng")?,
            epoch: field(&json, "epoch")?,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Serializes any value as pretty JSON to `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};
    use rand::Rng;

    fn tiny() -> (Model, Vec<crate::dataio::SampleRecord>) {
        let mut cfg = RunConfig::default();
        cfg.model.c = 3;
        cfg.model.n_h = 3;
        cfg.fusion.k_loc = 2;
        let ds = generate_synthetic(&SyntheticSpec {
            samples_per_class: 4,
            dim: 6,
            c: 3,
            n_h: 3,
            ..Default::default()
        })
        .unwrap();
        let model = Model::for_training(cfg, 3, 6, &ds.records).unwrap();
        (model, ds.records)
    }

    #[test]
    fn round_trip_after_rounding_is_exact() {
        let (mut model, records) = tiny();
        model.store.round_to_f32();
        let mut rng = crate::nn::stream(1, "x");
        let _: u64 = rng.random();
        let ck = Checkpoint::capture(&model, None, &rng, 3);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.rng, rng);
        let loaded = back.model().unwrap();
        let inputs = model.prepare_all(&records).unwrap();
        assert_eq!(model.predict(&inputs), loaded.predict(&inputs));
    }

    #[test]
    fn truncated_or_foreign_bytes_are_rejected() {
        let (model, _) = tiny();
        let bytes = Checkpoint::capture(&model, None, &crate::nn::stream(0, "x"), 0)
            .to_bytes()
            .unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"PK\x03\x04zzzzzzzz"), Err(Error::Checkpoint(_))));
    }
}
