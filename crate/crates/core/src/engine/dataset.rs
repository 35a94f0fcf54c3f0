//! Sample sets: a JSON manifest plus a blob holding all inputs as one
//! `[count, ...sample_shape]` f32 array and optional i32 labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob::{sidecar_path, write_file, BlobReader, BlobRef, BlobWriter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f32> {
    sample_shape: Vec<usize>,
    inputs: Vec<Tensor<T>>,
    labels: Option<Vec<i32>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(sample_shape: Vec<usize>, inputs: Vec<Tensor<T>>, labels: Option<Vec<i32>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = inputs.iter().find(|x| x.shape() != sample_shape.as_slice()) {
            return Err(Error::Shape(format!(
                "sample of shape {:?} in a dataset of {sample_shape:?}",
                bad.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.len() {
                return Err(Error::Shape(format!("{} labels for {} samples", l.len(), inputs.len())));
            }
        }
        Ok(Dataset {
            sample_shape,
            inputs,
            labels,
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn with_labels(self, labels: Vec<i32>) -> Result<Self> {
        Dataset::new(self.sample_shape, self.inputs, Some(labels))
    }

    /// First `n` samples (all if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Dataset::new(
            self.sample_shape.clone(),
            self.inputs[..n].to_vec(),
            self.labels.as_ref().map(|l| l[..n].to_vec()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub blob: String,
    pub sample_shape: Vec<usize>,
    pub count: usize,
    pub inputs: BlobRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BlobRef>,
}

/// Write `path` and its `.bin` sidecar.
pub fn save_dataset(ds: &Dataset<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = sidecar_path(path);
    let mut w = BlobWriter::new();
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(&ds.sample_shape);
    let inputs = w.push_f32(&shape, ds.inputs.iter().flat_map(|x| x.data().iter().copied()));
    let labels = ds.labels.as_ref().map(|l| w.push_i32(&[l.len()], l.iter().copied()));
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        blob: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sample_shape: ds.sample_shape.clone(),
        count: ds.len(),
        inputs,
        labels,
    };
    write_file(&blob_path, &w.into_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(path, json.as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset<f32>> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {}", m.version)));
    }
    let mut shape = vec![m.count];
    shape.extend_from_slice(&m.sample_shape);
    if m.inputs.shape != shape {
        return Err(bad(format!("inputs shape {:?}, expected {shape:?}", m.inputs.shape)));
    }
    if m.count == 0 {
        return Err(Error::EmptyDataset);
    }
    let blob = BlobReader::open(&path.parent().unwrap_or_else(|| Path::new(".")).join(&m.blob))?;
    let flat = blob.f32s("inputs", &m.inputs)?;
    let per: usize = m.sample_shape.iter().product();
    let inputs = flat
        .chunks(per)
        .map(|c| Tensor::new(m.sample_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let labels = match &m.labels {
        Some(r) => {
            if r.shape != [m.count] {
                return Err(bad(format!("labels shape {:?}, expected [{}]", r.shape, m.count)));
            }
            Some(blob.i32s("labels", r)?)
        }
        None => None,
    };
    Dataset::new(m.sample_shape, inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        let xs = (0..3)
            .map(|k| Tensor::from_fn(vec![2, 2], |i| (k * 4 + i) as f32 * 0.5).unwrap())
            .collect();
        let ds = Dataset::new(vec![2, 2], xs, Some(vec![1, 0, 1])).unwrap();
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(matches!(Dataset::<f32>::new(vec![2], vec![], None), Err(Error::EmptyDataset)));
        let x = Tensor::from_vec(vec![1.0f32, 2.0]);
        assert!(Dataset::new(vec![3], vec![x.clone()], None).is_err());
        assert!(Dataset::new(vec![2], vec![x], Some(vec![0, 1])).is_err());
    }
}
