use crate::autodiff::{GradientMap, Parameters, Tensor};
use crate::error::{contract, Result};

use super::config::{AdamHyper, OptimizerKind};

/// `initial_lr * 0.5^floor(episode / k)`.
pub fn lr_schedule(initial_lr: f64, episode: u64, k: u64) -> f64 {
    assert!(k > 0, "halving period must be positive");
    // 0.5^1100 is already zero in f64.
    let halvings = (episode / k).min(1100) as i32;
    initial_lr * 0.5f64.powi(halvings)
}

/// Adam moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &Parameters, hyper: AdamHyper) -> Self {
        let zeros: Parameters = params.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, hyper }
    }
}

fn zip_named<'a>(
    params: &'a Parameters,
    grads: &'a GradientMap,
) -> Result<impl Iterator<Item = (&'a String, &'a Tensor, &'a Tensor)>> {
    grads.check_matches(params)?;
    Ok(params.iter().map(move |(n, p)| (n, p, grads.get(n).unwrap())))
}

/// One bias-corrected Adam step.
pub fn adam_update(
    opt: &AdamState,
    params: &Parameters,
    grads: &GradientMap,
    lr: f64,
) -> Result<(AdamState, Parameters)> {
    let AdamHyper { beta1, beta2, epsilon } = opt.hyper;
    let t = opt.t + 1;
    let c1 = 1.0 - beta1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - beta2.powi(t.min(i32::MAX as u64) as i32);
    let mut next = AdamState { m: Parameters::new(), v: Parameters::new(), t, hyper: opt.hyper };
    let mut out = Parameters::new();
    for (name, p, g) in zip_named(params, grads)? {
        let (m0, v0) = match (opt.m.get(name), opt.v.get(name)) {
            (Some(m), Some(v)) if m.shape() == p.shape() && v.shape() == p.shape() => (m, v),
            _ => return Err(contract(format!("adam state has no moments shaped like {name}{:?}", p.shape()))),
        };
        let n = p.numel();
        let (mut m, mut v, mut q) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let gi = g.data()[i];
            let mi = beta1 * m0.data()[i] + (1.0 - beta1) * gi;
            let vi = beta2 * v0.data()[i] + (1.0 - beta2) * gi * gi;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + epsilon);
            m.push(mi);
            v.push(vi);
            q.push(p.data()[i] - update);
        }
        let shape = p.shape().to_vec();
        next.m.insert(name.clone(), Tensor::new(shape.clone(), m)?);
        next.v.insert(name.clone(), Tensor::new(shape.clone(), v)?);
        out.insert(name.clone(), Tensor::new(shape, q)?);
    }
    Ok((next, out))
}

/// Plain descent `p - lr * g`.
pub fn sgd_update(params: &Parameters, grads: &GradientMap, lr: f64) -> Result<Parameters> {
    zip_named(params, grads)?
        .map(|(n, p, g)| {
            let q = p.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect();
            Ok((n.clone(), Tensor::new(p.shape().to_vec(), q)?))
        })
        .collect()
}

/// Meta-optimizer with its state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hyper: AdamHyper, params: &Parameters) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params, hyper)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn apply(&self, params: &Parameters, grads: &GradientMap, lr: f64) -> Result<(Optimizer, Parameters)> {
        match self {
            Optimizer::Adam(state) => {
                let (s, p) = adam_update(state, params, grads, lr)?;
                Ok((Optimizer::Adam(s), p))
            }
            Optimizer::Sgd => Ok((Optimizer::Sgd, sgd_update(params, grads, lr)?)),
        }
    }
}
