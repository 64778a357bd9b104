//! `L2GCKPT1` files: magic, `u32` tensor count, then per tensor `u32` name
//! length, UTF-8 name, `u32` rank, `u64` dims and little-endian `f64` data.
//!
//! Model tensors keep their parameter names. Adam state is stored as
//! `adam.m.<name>`, `adam.v.<name>`, `adam.t`, `adam.beta1`, `adam.beta2` and
//! `adam.epsilon`; the iteration counter as `train.episode`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::tasks::Reader;

use super::config::AdamHyper;
use super::optim::{AdamState, Optimizer};
use super::step::TrainState;

const MAGIC: &[u8; 8] = b"L2GCKPT1";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const EPISODE: &str = "train.episode";

/// Writes named tensors in name order.
pub fn tensors_to_bytes(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(8)? != MAGIC {
        return Err(r.malformed("bad magic, expected L2GCKPT1"));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for i in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.malformed(format!("tensor {i} name is not UTF-8")))?
            .to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8).map(|b| (n, b)))
            .ok_or_else(|| r.malformed(format!("tensor {name:?} size overflows")))?;
        let data = r.take(n.1)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| r.malformed(format!("tensor {name:?}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(r.malformed(format!("duplicate tensor {name:?}")));
        }
    }
    if !r.is_empty() {
        return Err(r.malformed("trailing bytes after last tensor"));
    }
    Ok(out)
}

fn scalar(x: f64) -> Tensor {
    Tensor::scalar(x).expect("finite scalar")
}

fn malformed(msg: String) -> Error {
    Error::Malformed { kind: "checkpoint", msg }
}

impl TrainState {
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self.params.iter().map(|(n, t)| (n.clone(), t.detach())).collect();
        out.insert(EPISODE.into(), scalar(self.episode as f64));
        if let Optimizer::Adam(s) = &self.optimizer {
            for (n, t) in s.m.iter() {
                out.insert(format!("{ADAM_M}{n}"), t.clone());
            }
            for (n, t) in s.v.iter() {
                out.insert(format!("{ADAM_V}{n}"), t.clone());
            }
            out.insert("adam.t".into(), scalar(s.t as f64));
            out.insert("adam.beta1".into(), scalar(s.hyper.beta1));
            out.insert("adam.beta2".into(), scalar(s.hyper.beta2));
            out.insert("adam.epsilon".into(), scalar(s.hyper.epsilon));
        }
        out
    }

    /// Inverse of [`to_tensors`](Self::to_tensors). Files without Adam
    /// tensors restore an SGD optimizer.
    pub fn from_tensors(mut tensors: BTreeMap<String, Tensor>) -> Result<TrainState> {
        let count = |t: Option<Tensor>, name: &str| -> Result<u64> {
            match t {
                Some(t) if t.is_scalar() && t.data()[0] >= 0.0 && t.data()[0].fract() == 0.0 => Ok(t.data()[0] as u64),
                Some(_) => Err(malformed(format!("{name} must be a non-negative integer scalar"))),
                None => Ok(0),
            }
        };
        let episode = count(tensors.remove(EPISODE), EPISODE)?;
        let has_adam = tensors.keys().any(|k| k.starts_with("adam."));
        let mut hyper = AdamHyper::default();
        let mut t = 0;
        if has_adam {
            t = count(tensors.remove("adam.t"), "adam.t")?;
            for (key, slot) in [("adam.beta1", &mut hyper.beta1), ("adam.beta2", &mut hyper.beta2), ("adam.epsilon", &mut hyper.epsilon)] {
                match tensors.remove(key) {
                    Some(v) if v.is_scalar() => *slot = v.data()[0],
                    _ => return Err(malformed(format!("missing scalar {key}"))),
                }
            }
        }
        let (mut m, mut v, mut params) = (Parameters::new(), Parameters::new(), Parameters::new());
        for (name, tensor) in tensors {
            if let Some(n) = name.strip_prefix(ADAM_M) {
                m.insert(n, tensor);
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                v.insert(n, tensor);
            } else if name.starts_with("adam.") || name.starts_with("train.") {
                return Err(malformed(format!("unknown state tensor {name:?}")));
            } else {
                params.insert(name, tensor);
            }
        }
        let optimizer = if has_adam {
            let shapes = |p: &Parameters| p.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>();
            if shapes(&m) != shapes(&params) || shapes(&v) != shapes(&params) {
                return Err(malformed("adam moments do not mirror the parameters".into()));
            }
            Optimizer::Adam(AdamState { m, v, t, hyper })
        } else {
            Optimizer::Sgd
        };
        Ok(TrainState { params, optimizer, episode })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        tensors_to_bytes(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
        TrainState::from_tensors(tensors_from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
        TrainState::from_bytes(&fs::read(path)?)
    }
}
