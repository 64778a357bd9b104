use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"L2GDATA1";

/// All instances of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub label: String,
    pub instances: Vec<Vec<f64>>,
}

/// Labeled feature vectors grouped by class, in a fixed class order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    classes: Vec<ClassData>,
}

impl Dataset {
    /// Validates that every class is nonempty, every vector has length
    /// `feature_dim` and finite entries, and labels are unique.
    pub fn new(feature_dim: usize, classes: Vec<ClassData>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(contract("dataset feature dimension must be positive"));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.label.as_str()) {
                return Err(contract(format!("duplicate class label {:?}", c.label)));
            }
            if c.instances.is_empty() {
                return Err(contract(format!("class {:?} has no instances", c.label)));
            }
            for (i, v) in c.instances.iter().enumerate() {
                if v.len() != feature_dim {
                    return Err(contract(format!(
                        "class {:?} instance {i} has length {}, expected {feature_dim}",
                        c.label,
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!("class {:?} instance {i} is not finite", c.label)));
                }
            }
        }
        Ok(Self { feature_dim, classes })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> &ClassData {
        &self.classes[index]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    pub fn num_instances(&self) -> usize {
        self.classes.iter().map(|c| c.instances.len()).sum()
    }

    /// Smallest per-class instance count.
    pub fn min_class_size(&self) -> usize {
        self.classes.iter().map(|c| c.instances.len()).min().unwrap_or(0)
    }

    /// Sub-dataset made of the given classes, in the given order.
    pub fn subset(&self, class_indices: &[usize]) -> Result<Dataset> {
        let classes = class_indices
            .iter()
            .map(|&i| {
                self.classes
                    .get(i)
                    .cloned()
                    .ok_or_else(|| contract(format!("class index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.feature_dim, classes)
    }

    /// Serializes to the `L2GDATA1` layout: magic, `u32` class count, then per
    /// class `u32` label length, UTF-8 label, `u32` instance count, `u32` D and
    /// the values as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_instances() * self.feature_dim * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for c in &self.classes {
            out.extend_from_slice(&(c.label.len() as u32).to_le_bytes());
            out.extend_from_slice(c.label.as_bytes());
            out.extend_from_slice(&(c.instances.len() as u32).to_le_bytes());
            out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
            for v in &c.instances {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = Reader::new(bytes, "dataset");
        if r.take(8)? != MAGIC {
            return Err(r.malformed("bad magic, expected L2GDATA1"));
        }
        let n_classes = r.u32()? as usize;
        if n_classes == 0 {
            return Err(r.malformed("dataset has no classes"));
        }
        let mut classes = Vec::with_capacity(n_classes.min(1 << 16));
        let mut dim = None;
        for ci in 0..n_classes {
            let len = r.u32()? as usize;
            let label = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.malformed(format!("class {ci} label is not UTF-8")))?
                .to_owned();
            let count = r.u32()? as usize;
            let d = r.u32()? as usize;
            if count == 0 {
                return Err(r.malformed(format!("class {label:?} is empty")));
            }
            if d == 0 {
                return Err(r.malformed(format!("class {label:?} has zero dimension")));
            }
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(r.malformed(format!("class {label:?} has dimension {d}, expected {prev}")))
                }
                _ => {}
            }
            let needed = count
                .checked_mul(d)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| r.malformed("instance block size overflows"))?;
            let block = r.take(needed)?;
            let instances = block
                .chunks_exact(d * 8)
                .map(|row| row.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
                .collect();
            classes.push(ClassData { label, instances });
        }
        if !r.is_empty() {
            return Err(r.malformed("trailing bytes after last class"));
        }
        Dataset::new(dim.unwrap(), classes).map_err(|e| Error::Malformed { kind: "dataset", msg: e.to_string() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}

/// Bounds-checked little-endian cursor shared by the binary formats.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self { bytes, pos: 0, kind }
    }

    pub fn malformed(&self, msg: impl Into<String>) -> Error {
        Error::Malformed { kind: self.kind, msg: msg.into() }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed(format!(
                "truncated at byte {}: needed {n} more bytes, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Fractions of classes assigned to the train/val/test splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.64, val: 0.16, test: 0.20 }
    }
}

/// Minimum classes per split: a 2-way episode.
pub const MIN_SPLIT_CLASSES: usize = 2;

/// Partitions the classes of `dataset` into train/val/test datasets.
///
/// Classes are shuffled with `seed`; train and val take `round(frac * n)`
/// classes and test takes the remainder, so 100 classes at (0.64, 0.16, 0.20)
/// give 64/16/20.
pub fn split_classes(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let SplitFractions { train, val, test } = fractions;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(contract(format!(
            "split fractions must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let n = dataset.num_classes();
    let n_train = (train * n as f64).round() as usize;
    let n_val = (val * n as f64).round() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train < MIN_SPLIT_CLASSES || n_val < MIN_SPLIT_CLASSES || n_test < MIN_SPLIT_CLASSES {
        return Err(contract(format!(
            "{n} classes split into {n_train}/{n_val}/{n_test}; every split needs at least {MIN_SPLIT_CLASSES}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).partial_shuffle(&mut order, n);
    Ok((
        dataset.subset(&order[..n_train])?,
        dataset.subset(&order[n_train..n_train + n_val])?,
        dataset.subset(&order[n_train + n_val..])?,
    ))
}
