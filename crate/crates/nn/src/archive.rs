//! Single-file tensor container: named `f32` tensors plus string metadata,
//! stored as safetensors with a SHA-256 digest over the tensor payload.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DIGEST_KEY: &str = "payload_sha256";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed tensor archive: {0}")]
    Format(String),
    #[error("archive integrity check failed: {0}")]
    Integrity(String),
    #[error("tensor `{0}` missing from archive")]
    MissingTensor(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, ArrayD<f32>>,
    pub metadata: BTreeMap<String, String>,
}

fn payload_digest(tensors: &BTreeMap<String, ArrayD<f32>>) -> String {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f32>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f32>, ArchiveError> {
        self.tensors.get(name).ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        let bytes: BTreeMap<&str, Vec<u8>> = self
            .tensors
            .iter()
            .map(|(k, t)| (k.as_str(), t.iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views = self
            .tensors
            .iter()
            .map(|(k, t)| {
                TensorView::new(Dtype::F32, t.shape().to_vec(), &bytes[k.as_str()])
                    .map(|v| (k.clone(), v))
                    .map_err(|e| ArchiveError::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        meta.insert(DIGEST_KEY.to_string(), payload_digest(&self.tensors));
        safetensors::serialize(views, Some(meta)).map_err(|e| ArchiveError::Format(e.to_string()))
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ArchiveError> {
        let (_, header) = SafeTensors::read_metadata(buf).map_err(|e| ArchiveError::Format(e.to_string()))?;
        let st = SafeTensors::deserialize(buf).map_err(|e| ArchiveError::Format(e.to_string()))?;
        let mut metadata: BTreeMap<String, String> =
            header.metadata().clone().unwrap_or_default().into_iter().collect();
        let expected = metadata
            .remove(DIGEST_KEY)
            .ok_or_else(|| ArchiveError::Integrity("payload digest missing".into()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(ArchiveError::Format(format!("tensor `{name}` has dtype {:?}, expected F32", view.dtype())));
            }
            let data: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), data).map_err(|e| ArchiveError::Format(e.to_string()))?;
            tensors.insert(name, arr);
        }
        let actual = payload_digest(&tensors);
        if actual != expected {
            return Err(ArchiveError::Integrity(format!("payload digest {actual} does not match recorded {expected}")));
        }
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let buf = std::fs::read(path).map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(values in proptest::collection::vec(-1e6f32..1e6, 1..64), tag in "[a-z]{1,8}") {
            let mut a = TensorArchive::new();
            let n = values.len();
            a.insert("x", ArrayD::from_shape_vec(IxDyn(&[n]), values).unwrap());
            a.insert("y.scalar", ArrayD::from_elem(IxDyn(&[1, 1]), 3.5));
            a.metadata.insert("tag".into(), tag);
            let back = TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, a);
        }
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let mut a = TensorArchive::new();
        a.insert("w", ArrayD::from_elem(IxDyn(&[4]), 1.0));
        let mut bytes = a.to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(ArchiveError::Integrity(_))));
        assert!(matches!(TensorArchive::from_bytes(&bytes[..10]), Err(ArchiveError::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.safetensors");
        let mut a = TensorArchive::new();
        a.insert("w", ArrayD::from_elem(IxDyn(&[2, 3]), -0.25));
        a.save(&path).unwrap();
        assert_eq!(TensorArchive::load(&path).unwrap(), a);
        assert!(matches!(a.get("missing"), Err(ArchiveError::MissingTensor(_))));
    }
}
