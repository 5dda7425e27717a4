//! Binary tensor container shared by model and predictor checkpoints.
//!
//! Layout: magic `SHLM`, `u32` format version, `u32` length of a UTF-8 JSON
//! config block, the JSON, then tensor records until end of file. A record
//! is `u32` name length, name bytes, `u32` rank, `u64` dims, `u8` dtype tag
//! and the raw little-endian payload. All integers are little-endian.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Param, TransformerModel};
use crate::error::{Error, Result};
use crate::tensor::{DType, Float};

pub const MAGIC: &[u8; 4] = b"SHLM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u64>,
    pub dtype: DType,
    pub data: Vec<u8>,
}

impl TensorRecord {
    pub fn from_values<T: Float>(name: &str, shape: &[usize], values: &[T]) -> Self {
        let mut data = Vec::with_capacity(values.len() * T::DTYPE.size_of());
        T::write_le(values, &mut data);
        Self {
            name: name.to_string(),
            dims: shape.iter().map(|&d| d as u64).collect(),
            dtype: T::DTYPE,
            data,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    /// Decodes the payload, converting precision if needed.
    pub fn values<T: Float>(&self) -> Vec<T> {
        match self.dtype {
            DType::F32 => f32::read_le(&self.data).into_iter().map(|x| T::from_f64_lossy(x as f64)).collect(),
            DType::F64 => f64::read_le(&self.data).into_iter().map(T::from_f64_lossy).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub config_json: String,
    pub tensors: Vec<TensorRecord>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(t.dtype.tag());
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let config_json = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?
            .to_string();
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
            let tag = r.take(1, "dtype")?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            let numel = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .and_then(|n| n.checked_mul(dtype.size_of()))
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            let data = r.take(numel, "tensor data")?.to_vec();
            tensors.push(TensorRecord { name, dims, dtype, data });
        }
        Ok(Self { config_json, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Looks up tensors by name in the expected order and checks their shape.
    pub fn take_expected(&self, expected: &[(String, Vec<usize>)]) -> Result<Vec<&TensorRecord>> {
        if self.tensors.len() != expected.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        expected
            .iter()
            .zip(&self.tensors)
            .map(|((name, shape), rec)| {
                if &rec.name != name {
                    return Err(Error::Format(format!("expected tensor {name}, found {}", rec.name)));
                }
                if &rec.shape() != shape {
                    return Err(Error::ConfigMismatch(format!(
                        "tensor {name} has shape {:?}, config implies {shape:?}",
                        rec.shape()
                    )));
                }
                Ok(rec)
            })
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    model: ModelConfig,
}

impl<T: Float> TransformerModel<T> {
    pub fn to_container(&self) -> Container {
        let header = ModelHeader {
            kind: "transformer".into(),
            model: self.config().clone(),
        };
        Container {
            config_json: serde_json::to_string(&header).expect("config serializes"),
            tensors: self
                .params()
                .into_iter()
                .map(|(name, p)| TensorRecord::from_values(&name, &p.shape, &p.data))
                .collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let header: ModelHeader =
            serde_json::from_str(&c.config_json).map_err(|e| Error::Format(format!("config block: {e}")))?;
        if header.kind != "transformer" {
            return Err(Error::ConfigMismatch(format!("expected a transformer checkpoint, found {}", header.kind)));
        }
        header.model.validate().map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        let mut model = Self::init(header.model, 0)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params().into_iter().map(|(n, p)| (n, p.shape.clone())).collect();
        let records = c.take_expected(&expected)?;
        for ((_, p), rec) in model.params_mut().into_iter().zip(records) {
            *p = Param {
                shape: rec.shape(),
                data: Arc::new(rec.values()),
            };
        }
        if model.param_count() != model.config().param_count() {
            return Err(Error::ConfigMismatch("parameter count disagrees with config".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    /// Loads and checks the stored architecture against `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let m = Self::load(path)?;
        if m.config() != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint config {:?} differs from requested {:?}",
                m.config(),
                expected
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = TransformerModel::<f32>::init(ModelConfig::tiny(), 11).unwrap();
        let bytes = m.to_container().encode();
        let back = TransformerModel::<f32>::from_container(&Container::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_container().encode(), bytes);
    }

    #[test]
    fn truncation_and_magic_are_format_errors() {
        let m = TransformerModel::<f32>::init(ModelConfig::tiny(), 11).unwrap();
        let bytes = m.to_container().encode();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Container::decode(cut), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::decode(&bad), Err(Error::Format(_))));
        let mut short = m.to_container();
        short.tensors.pop();
        assert!(matches!(
            TransformerModel::<f32>::from_container(&short),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn shape_disagreement_is_config_mismatch() {
        let m = TransformerModel::<f32>::init(ModelConfig::tiny(), 11).unwrap();
        let mut c = m.to_container();
        let mut header: serde_json::Value = serde_json::from_str(&c.config_json).unwrap();
        header["model"]["vocab_size"] = serde_json::json!(128);
        c.config_json = header.to_string();
        assert!(matches!(
            TransformerModel::<f32>::from_container(&c),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn f32_checkpoint_loads_as_f64() {
        let m = TransformerModel::<f32>::init(ModelConfig::tiny(), 2).unwrap();
        let c = m.to_container();
        let wide = TransformerModel::<f64>::from_container(&c).unwrap();
        assert_eq!(wide, m.cast::<f64>());
    }
}
