use std::collections::BTreeMap;

use super::tensor::{Graph, Tensor};
use crate::error::{contract, Error, Result};

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    tensors: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Like [`get`](Self::get) but a missing name is a contract violation.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Every tensor recorded as a fresh leaf on `graph`.
    pub fn attach(&self, graph: &Graph) -> Parameters {
        self.tensors.iter().map(|(k, t)| (k.clone(), graph.watch(t))).collect()
    }

    pub fn detach(&self) -> Parameters {
        self.tensors.iter().map(|(k, t)| (k.clone(), t.detach())).collect()
    }

    pub fn is_attached(&self) -> bool {
        self.tensors.values().all(Tensor::is_attached)
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &Parameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    /// Flattened values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the shape template.
    pub fn unflatten(&self, values: &[f64]) -> Result<Parameters> {
        if values.len() != self.numel() {
            return Err(contract(format!("unflatten: expected {} values, got {}", self.numel(), values.len())));
        }
        let mut offset = 0;
        let mut out = Parameters::new();
        for (k, t) in &self.tensors {
            let n = t.numel();
            out.insert(k.clone(), Tensor::new(t.shape().to_vec(), values[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(out)
    }
}

impl FromIterator<(String, Tensor)> for Parameters {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a Parameters {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = std::collections::btree_map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}

/// Gradient per parameter name; shapes mirror the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn zeros_like(params: &Parameters) -> Self {
        params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.grads.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Key set and shapes equal those of `params`.
    pub fn check_matches(&self, params: &Parameters) -> Result<()> {
        if self.grads.len() != params.len() {
            return Err(contract(format!(
                "gradient map has {} entries, parameters have {}",
                self.grads.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            let g = self.get(name).ok_or_else(|| contract(format!("gradient map lacks {name}")))?;
            if g.shape() != p.shape() {
                return Err(contract(format!(
                    "gradient {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|t| t.data().iter().all(|x| x.is_finite()))
    }

    pub fn detach(&self) -> GradientMap {
        self.grads.iter().map(|(k, t)| (k.clone(), t.detach())).collect()
    }

    /// Elementwise sum with `other` (same keys), detached.
    pub fn add(&self, other: &GradientMap) -> Result<GradientMap> {
        self.grads
            .iter()
            .map(|(k, a)| {
                let b = other.get(k).ok_or_else(|| contract(format!("gradient map lacks {k}")))?;
                Ok((k.clone(), a.detach().add(&b.detach())?))
            })
            .collect()
    }

    pub fn scale(&self, c: f64) -> Result<GradientMap> {
        self.grads.iter().map(|(k, a)| Ok((k.clone(), a.detach().scale(c)?))).collect()
    }

    /// Norm-wise relative error `|a - b|_2 / max(|a|_2, |b|_2)` against `other`.
    pub fn rel_err(&self, other: &GradientMap) -> f64 {
        rel_err(&self.flatten(), &other.flatten())
    }
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`, zero when both vectors are zero.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_err: length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

impl FromIterator<(String, Tensor)> for GradientMap {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { grads: iter.into_iter().collect() }
    }
}

/// Central finite differences of `f` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, params: &Parameters, eps: f64) -> Result<GradientMap>
where
    F: FnMut(&Parameters) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(contract(format!("finite_diff_grad: eps must be positive, got {eps}")));
    }
    let base = params.detach().flatten();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let plus = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i] - eps;
        let minus = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("finite_diff_grad: non-finite evaluation at coordinate {i}")));
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    let g = params.unflatten(&grad)?;
    Ok(g.iter().map(|(k, t)| (k.clone(), t.clone())).collect())
}
