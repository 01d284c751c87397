//! Dataset loading and batching.
//!
//! Input is the IDX binary container (the MNIST family's format), plain or
//! gzip-compressed, sniffed by magic bytes. Images come out flattened
//! row-major with pixels normalized to [0,1] by /255; nothing is binarized.

pub mod synth;

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{Rng, Tensor};

/// A parsed IDX file: big-endian dims plus the raw byte payload.
#[derive(Debug)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Reads and parses an IDX file, transparently gunzipping when the file
/// starts with the gzip magic. Errors carry the byte offset of the defect.
pub fn load_idx(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes, &path.display().to_string())
}

/// Parses IDX bytes: 0x00 0x00, type code 0x08 (unsigned byte), rank byte,
/// rank big-endian u32 dims, then exactly prod(dims) payload bytes.
pub fn parse_idx(bytes: &[u8], path: &str) -> Result<IdxArray> {
    let need = |offset: usize, len: usize| -> Result<()> {
        if bytes.len() < offset + len {
            Err(Error::IdxTruncated {
                path: path.to_string(),
                offset,
                expected: offset + len,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::IdxMagic {
            path: path.to_string(),
            offset: 0,
        });
    }
    if bytes[2] != 0x08 {
        return Err(Error::IdxType {
            path: path.to_string(),
            code: bytes[2],
            offset: 2,
        });
    }
    let rank = bytes[3] as usize;
    need(4, rank * 4)?;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let o = 4 + i * 4;
        dims.push(u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap()) as usize);
    }
    let payload_at = 4 + rank * 4;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - payload_at;
    if actual != expected {
        return Err(Error::IdxTruncated {
            path: path.to_string(),
            offset: payload_at,
            expected,
            actual,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[payload_at..].to_vec(),
    })
}

/// Serializes dims + payload into IDX bytes (type code 0x08).
pub fn write_idx_bytes(dims: &[usize], payload: &[u8]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), payload.len());
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&[0, 0, 0x08, dims.len() as u8]);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Images (n, pixels) in [0,1] with optional labels.
pub struct IdxDataset {
    images: Tensor,
    labels: Option<Vec<u8>>,
}

impl IdxDataset {
    /// Loads a rank-3 image file (n, rows, cols), flattening each image and
    /// scaling bytes to [0,1]; pairs it with a rank-1 label file if given.
    pub fn load(images_path: &Path, labels_path: Option<&Path>) -> Result<Self> {
        let img = load_idx(images_path)?;
        let (n, rows, cols) = match img.dims.as_slice() {
            [n, r, c] => (*n, *r, *c),
            _ => {
                return Err(Error::IdxDims {
                    path: images_path.display().to_string(),
                    dims: img.dims,
                    what: "images (n, rows, cols)",
                })
            }
        };
        let data: Vec<f64> = img.data.iter().map(|&b| b as f64 / 255.0).collect();
        let images = Tensor::new(vec![n, rows * cols], data)?;
        let labels = match labels_path {
            None => None,
            Some(lp) => {
                let lab = load_idx(lp)?;
                match lab.dims.as_slice() {
                    [m] if *m == n => Some(lab.data),
                    [m] => {
                        return Err(Error::SampleCountMismatch {
                            images: n,
                            labels: *m,
                        })
                    }
                    _ => {
                        return Err(Error::IdxDims {
                            path: lp.display().to_string(),
                            dims: lab.dims,
                            what: "labels (n)",
                        })
                    }
                }
            }
        };
        Ok(IdxDataset { images, labels })
    }

    pub fn from_parts(images: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if images.dims2().is_none() {
            return Err(Error::BadShape {
                op: "dataset",
                shape: images.shape().to_vec(),
                reason: "expected (n, pixels)",
            });
        }
        if let Some(l) = &labels {
            if l.len() != images.shape()[0] {
                return Err(Error::SampleCountMismatch {
                    images: images.shape()[0],
                    labels: l.len(),
                });
            }
        }
        Ok(IdxDataset { images, labels })
    }

    pub fn n(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn pixels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images.data()[i * p..(i + 1) * p]
    }

    /// The first `n` rows as a new dataset (desk-scale protocols).
    pub fn take(&self, n: usize) -> IdxDataset {
        let n = n.min(self.n());
        let p = self.pixels();
        let images = Tensor::new(vec![n, p], self.images.data()[..n * p].to_vec())
            .expect("prefix of valid data");
        let labels = self.labels.as_ref().map(|l| l[..n].to_vec());
        IdxDataset { images, labels }
    }

    /// Rows at `indices`, stacked into a (len, pixels) tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let p = self.pixels();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), p], data).expect("gathered rows")
    }

    /// Batches covering each row exactly once. `shuffle: Some(rng)` permutes
    /// the traversal; `None` keeps file order. `batch_size` must be ≥ 1.
    pub fn batches(&self, batch_size: usize, shuffle: Option<&mut Rng>) -> BatchIter<'_> {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        let mut order: Vec<usize> = (0..self.n()).collect();
        if let Some(rng) = shuffle {
            rng.shuffle(&mut order);
        }
        BatchIter {
            ds: self,
            order,
            batch_size,
            pos: 0,
        }
    }
}

pub struct Batch {
    pub x: Tensor,
    pub indices: Vec<usize>,
}

pub struct BatchIter<'a> {
    ds: &'a IdxDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let x = self.ds.gather(&indices);
        Some(Batch { x, indices })
    }
}
