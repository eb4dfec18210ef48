//! Binary container for named tensors plus the JSON configuration that
//! produced them.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! u32  format_version
//! u64  config length, then that many bytes of UTF-8 JSON
//! per tensor, until end of file:
//!   u64 name length, UTF-8 name
//!   u64 rank, rank x u64 dims
//!   product(dims) x f32, row-major
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{storage_shape, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
}

fn buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl Checkpoint {
    pub fn new<C: Serialize, S: Scalar>(config: &C, params: &ParamStore<S>) -> Result<Self> {
        let tensors = params
            .entries()
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                dims: e.dims.clone(),
                data: e.value.as_slice().iter().map(|v| v.to_f32_bits()).collect(),
            })
            .collect();
        Ok(Self { format_version: FORMAT_VERSION, config_json: serde_json::to_string(config)?, tensors })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_str(&self.config_json)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors as a parameter store; `*.running_mean|var` become buffers.
    pub fn params<S: Scalar>(&self) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let (rows, cols) = storage_shape(&t.dims);
            let kind = if buffer_name(&t.name) { ParamKind::Buffer } else { ParamKind::Trainable };
            let value = Matrix::from_vec(rows, cols, t.data.iter().map(|&v| S::cast(v as f64)).collect());
            store.add(&t.name, &t.dims, kind, value);
        }
        store
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let format_version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {format_version}")));
        }
        let len = r.u64()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u64()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u64()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                Error::Checkpoint(format!("{name}: dims overflow"))
            })?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(Self { format_version, config_json, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian_with_length_prefixes() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", &[2], ParamKind::Trainable, Matrix::from_vec(1, 2, vec![1.0, -2.0]));
        let ck = Checkpoint::new(&serde_json::json!({"k": 1}), &store).unwrap();
        let b = ck.to_bytes();
        assert_eq!(&b[0..4], &1u32.to_le_bytes());
        assert_eq!(&b[4..12], &7u64.to_le_bytes());
        assert_eq!(&b[12..19], br#"{"k":1}"#);
        assert_eq!(&b[19..27], &1u64.to_le_bytes());
        assert_eq!(b[27], b'w');
        assert_eq!(&b[28..36], &1u64.to_le_bytes());
        assert_eq!(&b[36..44], &2u64.to_le_bytes());
        assert_eq!(&b[44..48], &1.0f32.to_le_bytes());
        assert_eq!(&b[48..52], &(-2.0f32).to_le_bytes());
        assert_eq!(b.len(), 52);
    }

    #[test]
    fn truncated_or_foreign_bytes_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", &[3], ParamKind::Trainable, Matrix::zeros(1, 3));
        let b = Checkpoint::new(&0u8, &store).unwrap().to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut v = b.clone();
        v[0] = 9;
        assert!(Checkpoint::from_bytes(&v).is_err());
    }

    #[test]
    fn running_statistics_load_as_buffers() {
        let mut store = ParamStore::<f32>::new();
        store.add("clf.bn1.running_var", &[2], ParamKind::Buffer, Matrix::filled(1, 2, 1.0));
        store.add("clf.bn1.gamma", &[2], ParamKind::Trainable, Matrix::filled(1, 2, 1.0));
        let back: ParamStore<f32> = Checkpoint::new(&0u8, &store).unwrap().params();
        assert_eq!(back.entry(0).kind, ParamKind::Buffer);
        assert_eq!(back.entry(1).kind, ParamKind::Trainable);
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exactly(
            data in proptest::collection::vec(proptest::num::f32::ANY, 1..64),
            name in "[a-z.0-9]{1,12}",
        ) {
            let tensor = NamedTensor { name, dims: vec![data.len()], data };
            let ck = Checkpoint { format_version: FORMAT_VERSION, config_json: "{}".into(), tensors: vec![tensor] };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            let a: Vec<u32> = ck.tensors[0].data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.tensors[0].data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
