use rayon::prelude::*;

use crate::autodiff::{grad, GradientMap, Graph, Parameters, Tensor};
use crate::error::{contract, Error, Result};
use crate::models::{episode_loss, Model};
use crate::tasks::{Episode, TaskPair};

use super::config::{GradMode, Reduction, TrainerConfig};
use super::optim::{lr_schedule, Optimizer};

/// Parameters, optimizer state and the number of completed meta-iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Parameters,
    pub optimizer: Optimizer,
    pub episode: u64,
}

/// Per-task losses of one step, in batch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepLosses {
    /// Inner (first-episode) losses; empty for episodic steps.
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl StepLosses {
    pub fn mean_inner(&self) -> Option<f64> {
        mean(&self.inner)
    }

    pub fn mean_outer(&self) -> Option<f64> {
        mean(&self.outer)
    }
}

pub(crate) fn inner_update_signed(
    params: &Parameters,
    inner_loss: &Tensor,
    alpha: f64,
    create_graph: bool,
    sign: f64,
) -> Result<Parameters> {
    let g = grad(inner_loss, params, create_graph)?;
    params
        .iter()
        .map(|(n, p)| {
            let step = g.get(n).unwrap().scale(sign * alpha)?;
            Ok((n.clone(), p.sub(&step)?))
        })
        .collect()
}

/// One SGD step on every named parameter: `p' = p - alpha * dL/dp`.
///
/// With `create_graph` the result stays differentiable with respect to
/// `params`; otherwise the step is a constant offset.
pub fn inner_update(params: &Parameters, inner_loss: &Tensor, alpha: f64, create_graph: bool) -> Result<Parameters> {
    inner_update_signed(params, inner_loss, alpha, create_graph, 1.0)
}

pub(crate) fn bilevel_losses(
    model: &Model,
    params: &Parameters,
    first: &Episode,
    second: &Episode,
    alpha: f64,
    grad_mode: GradMode,
    sign: f64,
) -> Result<(Tensor, Tensor)> {
    let inner = episode_loss(model, params, first)?;
    let adapted = inner_update_signed(params, &inner, alpha, grad_mode == GradMode::Exact, sign)?;
    let outer = episode_loss(model, &adapted, second)?;
    Ok((inner, outer))
}

/// Loss on the second episode after one inner step on the first.
///
/// `params` must be attached to a graph. Both grad modes give the same value;
/// first-order mode treats the inner gradient as a constant.
pub fn meta_loss(model: &Model, params: &Parameters, pair: &TaskPair, alpha: f64, grad_mode: GradMode) -> Result<Tensor> {
    Ok(bilevel_losses(model, params, pair.first(), pair.second(), alpha, grad_mode, 1.0)?.1)
}

fn episode_gradient(model: &Model, params: &Parameters, episode: &Episode) -> Result<(GradientMap, f64)> {
    let graph = Graph::new();
    let p = params.attach(&graph);
    let loss = episode_loss(model, &p, episode)?;
    Ok((grad(&loss, &p, false)?, loss.item()?))
}

fn bilevel_gradient(
    model: &Model,
    params: &Parameters,
    first: &Episode,
    second: &Episode,
    cfg: &TrainerConfig,
) -> Result<(GradientMap, f64, f64)> {
    let graph = Graph::new();
    let p = params.attach(&graph);
    let (inner, outer) = bilevel_losses(model, &p, first, second, cfg.alpha, cfg.grad_mode, 1.0)?;
    Ok((grad(&outer, &p, false)?, inner.item()?, outer.item()?))
}

fn reduce(grads: Vec<GradientMap>, reduction: Reduction) -> Result<GradientMap> {
    let n = grads.len();
    let mut iter = grads.into_iter();
    let mut acc = iter.next().ok_or_else(|| contract("empty batch"))?;
    for g in iter {
        acc = acc.add(&g)?;
    }
    match reduction {
        Reduction::Mean => acc.scale(1.0 / n as f64),
        Reduction::Sum => Ok(acc),
    }
}

fn apply(state: &TrainState, grads: GradientMap, cfg: &TrainerConfig) -> Result<TrainState> {
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite meta-gradient".into()));
    }
    let lr = lr_schedule(cfg.beta, state.episode, cfg.halve_every);
    let (optimizer, params) = state.optimizer.apply(&state.params, &grads, lr)?;
    Ok(TrainState { params, optimizer, episode: state.episode + 1 })
}

fn check_batch(len: usize, cfg: &TrainerConfig) -> Result<()> {
    if len != cfg.meta_batch {
        return Err(contract(format!("batch has {len} tasks, meta_batch is {}", cfg.meta_batch)));
    }
    Ok(())
}

fn bilevel_step<'a>(
    model: &Model,
    state: &TrainState,
    tasks: &[(&'a Episode, &'a Episode)],
    cfg: &TrainerConfig,
) -> Result<(TrainState, StepLosses)> {
    check_batch(tasks.len(), cfg)?;
    let results = tasks
        .par_iter()
        .map(|(first, second)| bilevel_gradient(model, &state.params, first, second, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = StepLosses::default();
    let mut grads = Vec::with_capacity(results.len());
    for (g, inner, outer) in results {
        grads.push(g);
        losses.inner.push(inner);
        losses.outer.push(outer);
    }
    Ok((apply(state, reduce(grads, cfg.reduction)?, cfg)?, losses))
}

/// Meta-update on a batch of class-disjoint pairs. On error the input state
/// is untouched.
pub fn meta_step(model: &Model, state: &TrainState, pairs: &[TaskPair], cfg: &TrainerConfig) -> Result<(TrainState, StepLosses)> {
    let tasks: Vec<_> = pairs.iter().map(|p| (p.first(), p.second())).collect();
    bilevel_step(model, state, &tasks, cfg)
}

/// Meta-update where each task is both the inner and the outer episode.
pub fn maml_x_step(model: &Model, state: &TrainState, episodes: &[Episode], cfg: &TrainerConfig) -> Result<(TrainState, StepLosses)> {
    let tasks: Vec<_> = episodes.iter().map(|e| (e, e)).collect();
    bilevel_step(model, state, &tasks, cfg)
}

/// Direct step on the reduced episode losses.
pub fn episodic_step(model: &Model, state: &TrainState, episodes: &[Episode], cfg: &TrainerConfig) -> Result<(TrainState, StepLosses)> {
    check_batch(episodes.len(), cfg)?;
    let results = episodes
        .par_iter()
        .map(|e| episode_gradient(model, &state.params, e))
        .collect::<Result<Vec<_>>>()?;
    let (grads, outer): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let next = apply(state, reduce(grads, cfg.reduction)?, cfg)?;
    Ok((next, StepLosses { inner: Vec::new(), outer }))
}
