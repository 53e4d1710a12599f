//! Tensor serialization: a JSON manifest naming each tensor (dtype, shape,
//! tag, byte offset) plus one contiguous little-endian f64 blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamTag, ParamTree, Tensor};

pub const DTYPE_F64: &str = "f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub tag: ParamTag,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format_version: u32,
    pub blob_bytes: u64,
    pub tensors: Vec<ManifestEntry>,
}

impl TensorManifest {
    pub fn encode(tree: &ParamTree) -> (TensorManifest, Vec<u8>) {
        let mut blob = Vec::with_capacity(tree.num_elements() * 8);
        let mut tensors = Vec::with_capacity(tree.len());
        for (name, p) in tree.iter() {
            tensors.push(ManifestEntry {
                name: name.to_string(),
                dtype: DTYPE_F64.to_string(),
                shape: p.tensor.shape().to_vec(),
                tag: p.tag,
                offset: blob.len() as u64,
            });
            for x in p.tensor.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = TensorManifest {
            format_version: 1,
            blob_bytes: blob.len() as u64,
            tensors,
        };
        (manifest, blob)
    }

    pub fn decode(&self, blob: &[u8]) -> Result<ParamTree> {
        if self.blob_bytes != blob.len() as u64 {
            return Err(Error::Format(format!(
                "blob is {} bytes, manifest says {}",
                blob.len(),
                self.blob_bytes
            )));
        }
        let mut tree = ParamTree::new();
        for e in &self.tensors {
            if e.dtype != DTYPE_F64 {
                return Err(Error::Format(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 8;
            let bytes = blob
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("{}: data outside blob", e.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tree.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?, e.tag)?;
        }
        Ok(tree)
    }
}

pub fn write_tree(tree: &ParamTree, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let (manifest, blob) = TensorManifest::encode(tree);
    std::fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(blob_path, blob)?;
    Ok(())
}

pub fn read_tree(manifest_path: &Path, blob_path: &Path) -> Result<ParamTree> {
    let manifest: TensorManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    manifest.decode(&std::fs::read(blob_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous() {
        let mut t = ParamTree::new();
        t.insert("a", Tensor::vector(vec![1.0, -2.5]), ParamTag::Dense).unwrap();
        t.insert(
            "b",
            Tensor::matrix(1, 3, vec![0.1, 0.2, f64::MIN_POSITIVE]).unwrap(),
            ParamTag::Rre {
                domain: 1,
                layer: 0,
                expert: 2,
            },
        )
        .unwrap();
        let (m, blob) = TensorManifest::encode(&t);
        assert_eq!(m.tensors[1].offset, 16);
        assert_eq!(blob.len(), 40);
        assert_eq!(&blob[..8], &1.0f64.to_le_bytes());
        assert_eq!(m.decode(&blob).unwrap(), t);
        assert!(m.decode(&blob[..39]).is_err());
    }
}
