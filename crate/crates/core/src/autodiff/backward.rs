//! Reverse sweep over the tape.
//!
//! Every vector-Jacobian product is written with ordinary tensor ops. With
//! `create_graph` the operands are the attached forward values, so the VJP
//! itself lands on the tape and can be differentiated again. Without it the
//! operands are detached and nothing new is recorded.

use std::sync::Arc;

use super::op::OpKind;
use super::params::{GradientMap, Parameters};
use super::tensor::{Graph, Node, Tensor};
use crate::error::{contract, Result};

fn operand(graph: &Graph, node: &Node, i: usize, create_graph: bool) -> Tensor {
    let inp = &node.inputs[i];
    match inp.id {
        Some(id) if create_graph => graph.tensor(id),
        _ => Tensor::from_parts(inp.shape.clone(), Arc::clone(&inp.data), None),
    }
}

fn output(graph: &Graph, node: &Node, id: usize, create_graph: bool) -> Tensor {
    if create_graph {
        graph.tensor(id)
    } else {
        Tensor::from_parts(node.shape.clone(), Arc::clone(&node.value), None)
    }
}

/// Gradients of one node's output w.r.t. each of its inputs, given upstream `g`.
fn vjp(graph: &Graph, id: usize, node: &Node, g: &Tensor, create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    let x = |i: usize| operand(graph, node, i, create_graph);
    let shape = |i: usize| node.inputs[i].shape.clone();
    let need = |i: usize| node.inputs[i].id.is_some();
    let op = node.op.as_ref().expect("leaf has no vjp");
    let grads = match op {
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Sub => vec![g.clone(), g.neg()?],
        OpKind::MulElementwise => {
            let da = if need(0) { Some(g.mul(&x(1))?) } else { None };
            let db = if need(1) { Some(g.mul(&x(0))?) } else { None };
            return Ok(vec![da, db]);
        }
        OpKind::MatMul => {
            let da = if need(0) { Some(g.matmul(&x(1).transpose()?)?) } else { None };
            let db = if need(1) { Some(x(0).transpose()?.matmul(g)?) } else { None };
            return Ok(vec![da, db]);
        }
        OpKind::Relu => {
            // relu'(0) = 0; the mask is piecewise constant so it carries no graph.
            let inp = &node.inputs[0];
            let mask: Vec<f64> = inp.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
            vec![g.mul(&Tensor::new(inp.shape.clone(), mask)?)?]
        }
        OpKind::Sigmoid => {
            let y = output(graph, node, id, create_graph);
            let one_minus = Tensor::filled(y.shape(), 1.0).sub(&y)?;
            vec![g.mul(&y.mul(&one_minus)?)?]
        }
        OpKind::Exp => {
            let y = output(graph, node, id, create_graph);
            vec![g.mul(&y)?]
        }
        OpKind::Square => vec![g.mul(&x(0))?.scale(2.0)?],
        OpKind::Negate => vec![g.neg()?],
        OpKind::ScaleByConstant(c) => vec![g.scale(*c)?],
        OpKind::SumAll => vec![g.expand_scalar(&shape(0))?],
        OpKind::MeanAll => {
            let s = shape(0);
            let n: usize = s.iter().product();
            vec![g.expand_scalar(&s)?.scale(1.0 / n as f64)?]
        }
        OpKind::LogSumExpLastAxis => {
            // d lse / dx = softmax(x) = exp(x - lse(x))
            let a = x(0);
            let n = *a.shape().last().unwrap();
            let y = output(graph, node, id, create_graph);
            let softmax = a.sub(&y.broadcast_last_axis(n)?)?.exp()?;
            vec![g.broadcast_last_axis(n)?.mul(&softmax)?]
        }
        OpKind::SqEuclideanRowwise => {
            // D_ij = |a_i - b_j|^2
            // dA = 2 (rowsum(G) * A - G B),  dB = 2 (colsum(G) * B - G^T A)
            let (a, b) = (x(0), x(1));
            let k = a.shape()[1];
            let da = if need(0) {
                Some(g.sum_last_axis()?.broadcast_last_axis(k)?.mul(&a)?.sub(&g.matmul(&b)?)?.scale(2.0)?)
            } else {
                None
            };
            let db = if need(1) {
                let gt = g.transpose()?;
                Some(gt.sum_last_axis()?.broadcast_last_axis(k)?.mul(&b)?.sub(&gt.matmul(&a)?)?.scale(2.0)?)
            } else {
                None
            };
            return Ok(vec![da, db]);
        }
        OpKind::ConcatLastAxis => {
            let mut out = Vec::with_capacity(node.inputs.len());
            let mut start = 0;
            for inp in &node.inputs {
                let w = *inp.shape.last().unwrap();
                out.push(g.slice_last_axis(start, w)?);
                start += w;
            }
            out
        }
        OpKind::Transpose => vec![g.transpose()?],
        OpKind::SumLastAxis => {
            let n = *shape(0).last().unwrap();
            vec![g.broadcast_last_axis(n)?]
        }
        OpKind::BroadcastLastAxis(_) => vec![g.sum_last_axis()?],
        OpKind::BroadcastRows(_) => vec![g.transpose()?.sum_last_axis()?],
        OpKind::ExpandScalar(_) => vec![g.sum_all()?.reshape(&shape(0))?],
        OpKind::SliceLastAxis { start, len } => {
            let s = shape(0);
            let width = *s.last().unwrap();
            let lead = &s[..s.len() - 1];
            let zeros = |w: usize| {
                let mut zs = lead.to_vec();
                zs.push(w);
                Tensor::zeros(&zs)
            };
            let before = zeros(*start);
            let after = zeros(width - start - len);
            let mut parts: Vec<&Tensor> = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(&before);
            }
            parts.push(g);
            if start + len < width {
                parts.push(&after);
            }
            vec![Tensor::concat_last_axis(&parts)?]
        }
        OpKind::Reshape(_) => vec![g.reshape(&shape(0))?],
    };
    Ok(grads.into_iter().map(Some).collect())
}

/// Backpropagates from scalar `loss`, returning the accumulated gradient of
/// every node id up to and including the loss (`None` where unreachable).
fn backward(loss: &Tensor, create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    if !loss.is_scalar() {
        return Err(contract(format!("grad: loss must be scalar, got shape {:?}", loss.shape())));
    }
    let root = loss
        .node()
        .ok_or_else(|| contract("grad: loss is not attached to a graph"))?;
    let graph = root.graph.clone();
    let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
    grads[root.id] = Some(Tensor::filled(loss.shape(), 1.0));

    for id in (0..=root.id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = graph.node(id);
        if node.op.is_none() {
            grads[id] = Some(g);
            continue;
        }
        let input_grads = vjp(&graph, id, &node, &g, create_graph)?;
        for (inp, ig) in node.inputs.iter().zip(input_grads) {
            let (Some(src), Some(ig)) = (inp.id, ig) else { continue };
            grads[src] = Some(match grads[src].take() {
                None => ig,
                Some(acc) => acc.add(&ig)?,
            });
        }
    }
    Ok(grads)
}

/// `d loss / d p` for every named parameter.
///
/// Parameters the loss does not depend on get zero gradients. With
/// `create_graph` the returned tensors are attached to the loss graph, so a
/// loss built from them can be differentiated back to `params` again.
pub fn grad(loss: &Tensor, params: &Parameters, create_graph: bool) -> Result<GradientMap> {
    let loss_graph = loss.graph().cloned();
    let mut leaf_ids = Vec::with_capacity(params.len());
    for (name, p) in params.iter() {
        let node = p
            .node()
            .ok_or_else(|| contract(format!("grad: parameter {name} is not attached to a graph")))?;
        if let Some(g) = &loss_graph {
            if !g.same(&node.graph) {
                return Err(contract(format!("grad: parameter {name} lives on a different graph than the loss")));
            }
        }
        leaf_ids.push(node.id);
    }
    let all = backward(loss, create_graph)?;
    let mut out = GradientMap::default();
    for ((name, p), id) in params.iter().zip(leaf_ids) {
        let g = all.get(id).cloned().flatten().unwrap_or_else(|| Tensor::zeros(p.shape()));
        out.insert(name.clone(), if create_graph { g } else { g.detach() });
    }
    Ok(out)
}

/// Hessian-vector product `H v` of `loss` at `params`, via `grad(<grad(loss), v>)`.
pub fn hvp(loss: &Tensor, params: &Parameters, v: &GradientMap) -> Result<GradientMap> {
    v.check_matches(params)?;
    let g = grad(loss, params, true)?;
    let mut dot: Option<Tensor> = None;
    for (name, gp) in g.iter() {
        let term = gp.mul(v.get(name).unwrap())?.sum_all()?;
        dot = Some(match dot {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    match dot {
        Some(d) if d.is_attached() => grad(&d, params, false),
        // Gradient independent of params: the loss is at most linear.
        _ => Ok(GradientMap::zeros_like(params)),
    }
}
