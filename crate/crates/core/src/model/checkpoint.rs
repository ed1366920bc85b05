//! Single-file checkpoint container.
//!
//! ```text
//! magic "PCHTCKPT" | u32 LE format version | u64 LE header length
//! header: UTF-8 JSON { format_version, dtype, config, vocabulary, tensors, meta }
//! data:   little-endian arrays, one per tensor entry, at the listed byte offsets
//! ```
//!
//! Model tensors come first in parameter-layout order; additional named
//! arrays (optimizer moments) may follow and are ignored by model loading.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PCHTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: Dtype,
    config: ModelConfig,
    vocabulary: Vocabulary,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// An in-memory checkpoint: model tensors, optional extra arrays and
/// free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    header: Header,
    data: Vec<u8>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &ModelState<T>) -> Self {
        let mut ck = Self {
            header: Header {
                format_version: CHECKPOINT_VERSION,
                dtype: T::DTYPE,
                config: model.config().clone(),
                vocabulary: model.vocab().clone(),
                tensors: Vec::new(),
                meta: serde_json::Value::Null,
            },
            data: Vec::with_capacity(model.num_params() * T::DTYPE.size()),
        };
        for spec in model.layout().tensors() {
            ck.push_tensor(&spec.name, spec.shape.clone(), &model.params()[spec.range()]);
        }
        ck
    }

    fn push_tensor<T: Scalar>(&mut self, name: &str, shape: Vec<usize>, values: &[T]) {
        assert_eq!(T::DTYPE, self.header.dtype, "extra arrays must match the checkpoint dtype");
        self.header.tensors.push(TensorEntry { name: name.to_owned(), shape, offset: self.data.len() });
        for &v in values {
            v.write_le(&mut self.data);
        }
    }

    /// Appends a named 1-D array stored alongside the model.
    pub fn with_extra<T: Scalar>(mut self, name: &str, values: &[T]) -> Self {
        self.push_tensor(name, vec![values.len()], values);
        self
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.header.meta = meta;
        self
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.header.meta
    }

    pub fn dtype(&self) -> Dtype {
        self.header.dtype
    }

    pub fn config(&self) -> &ModelConfig {
        &self.header.config
    }

    fn read_values<T: Scalar>(&self, entry: &TensorEntry) -> Vec<T> {
        let n: usize = entry.shape.iter().product();
        let w = self.header.dtype.size();
        let bytes = &self.data[entry.offset..entry.offset + n * w];
        match self.header.dtype {
            d if d == T::DTYPE => bytes.chunks_exact(w).map(T::read_le).collect(),
            Dtype::F32 => bytes.chunks_exact(4).map(|b| T::c(f32::read_le(b) as f64)).collect(),
            Dtype::F64 => bytes.chunks_exact(8).map(|b| T::c(f64::read_le(b))).collect(),
        }
    }

    pub fn extra<T: Scalar>(&self, name: &str) -> Option<Vec<T>> {
        let entry = self.header.tensors.iter().find(|e| e.name == name)?;
        Some(self.read_values(entry))
    }

    /// Rebuilds the model, converting precision if the stored dtype differs.
    pub fn to_model<T: Scalar>(&self) -> Result<ModelState<T>> {
        let config = self.header.config.clone();
        let template = super::ParamLayout::new(&config);
        let mut params = Vec::with_capacity(template.len());
        for spec in template.tensors() {
            let entry = self
                .header
                .tensors
                .iter()
                .find(|e| e.name == spec.name)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks tensor {}", spec.name)))?;
            if entry.shape != spec.shape {
                return Err(Error::InvalidConfig(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name, entry.shape, spec.shape
                )));
            }
            params.extend(self.read_values::<T>(entry));
        }
        ModelState::from_parts(config, self.header.vocabulary.clone(), params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let mut out = Vec::with_capacity(20 + header.len() + self.data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err("truncated header".into());
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| format!("header: {e}"))?;
        if header.format_version != version {
            return Err("header and preamble disagree on format version".into());
        }
        let data = body[hlen..].to_vec();
        let w = header.dtype.size();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset + n * w > data.len() {
                return Err(format!("tensor {} extends past end of file", e.name));
            }
        }
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|message| Error::Checkpoint { path: path.to_owned(), message })
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::read(path)?.to_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelState<f32> {
        let vocab = Vocabulary::from_texts(["hello world"]);
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            max_context_len: 10,
            max_response_len: 5,
            vocab_size: vocab.len(),
            seed: 9,
            init_std: 0.1,
        };
        ModelState::init(cfg, vocab).unwrap()
    }

    #[test]
    fn save_load_forward_is_bit_identical() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = ModelState::<f32>::load(&path).unwrap();
        assert_eq!(back, m);
        let toks = [1, 5, 6, 7, 3, 8, 4];
        assert_eq!(m.forward(&toks).unwrap(), back.forward(&toks).unwrap());
    }

    #[test]
    fn stores_little_endian_f32_with_header() {
        let m = model();
        let bytes = Checkpoint::from_model(&m).to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hlen]).unwrap();
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["format_version"], 1);
        let data = &bytes[20 + hlen..];
        assert_eq!(data.len(), m.num_params() * 4);
        assert_eq!(f32::from_le_bytes(data[..4].try_into().unwrap()), m.params()[0]);
    }

    #[test]
    fn extras_and_meta_survive() {
        let m = model();
        let ck = Checkpoint::from_model(&m)
            .with_extra("adam.m", &[1.0f32, 2.0])
            .with_meta(serde_json::json!({"step": 7}));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.extra::<f32>("adam.m").unwrap(), vec![1.0, 2.0]);
        assert_eq!(back.meta()["step"], 7);
        assert_eq!(back.to_model::<f32>().unwrap(), m);
    }

    #[test]
    fn rejects_corrupt_files() {
        let m = model();
        let mut bytes = Checkpoint::from_model(&m).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
