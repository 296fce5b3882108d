//! Binary checkpoint format.
//!
//! ```text
//! "AGAGI\0"            6 bytes
//! version              u32 LE
//! header length        u32 LE
//! header               UTF-8 key=value lines (model config, then meta.* keys)
//! payload length       u64 LE, in bytes
//! payload              f32 LE values, parameters in canonical order
//! ```

use std::fs;
use std::path::Path;

use super::{param_shapes, AgaModel, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"AGAGI\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_PREFIX: &str = "meta.";

/// Trained weights plus whatever is needed to rebuild inputs for them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Free-form `key=value` entries (labels, artifact hashes).
    pub meta: Vec<(String, String)>,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &AgaModel<f32>, meta: Vec<(String, String)>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            meta,
            params: model.params.clone(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn into_model(self) -> Result<AgaModel<f32>> {
        AgaModel::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.config.to_text();
        for (k, v) in &self.meta {
            header.push_str(&format!("{META_PREFIX}{k}={v}\n"));
        }
        let payload_len = 4 * self.params.total_values();
        let mut out = Vec::with_capacity(6 + 8 + header.len() + 8 + payload_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for t in &self.params.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::parse(origin, 0, msg);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6).map_err(&bad)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array().map_err(&bad)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32::from_le_bytes(r.array().map_err(&bad)?) as usize;
        let header = std::str::from_utf8(r.take(header_len).map_err(&bad)?)
            .map_err(|e| bad(format!("header is not UTF-8: {e}")))?;

        let mut config = ModelConfig::default();
        let mut meta = Vec::new();
        for (i, line) in header.lines().enumerate() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "header line is not key=value"))?;
            match k.strip_prefix(META_PREFIX) {
                Some(mk) => meta.push((mk.to_string(), v.to_string())),
                None => config.set(k, v)?,
            }
        }

        let shapes = param_shapes(&config);
        let expected: usize = shapes
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        let payload_len = u64::from_le_bytes(r.array().map_err(&bad)?) as usize;
        if payload_len != 4 * expected {
            return Err(bad(format!(
                "payload declares {payload_len} bytes, config needs {}",
                4 * expected
            )));
        }
        let payload = r.take(payload_len).map_err(&bad)?;
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut names = Vec::with_capacity(shapes.len());
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape, values.by_ref().take(n).collect())?);
            names.push(name);
        }
        Ok(Checkpoint {
            config,
            meta,
            params: ParamSet { names, tensors },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> std::result::Result<&'b [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (wanted {n} more)", self.pos)),
        }
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
