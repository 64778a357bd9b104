//! Operation kinds and their forward kernels.
//!
//! Kernels work on plain row-major buffers and never look at the graph, so a
//! value computed with recording enabled is bit-identical to one computed
//! without it.

use crate::error::{contract, Result};

/// Every primitive the tape can record.
///
/// The first block is the public model-facing set. The second block holds the
/// shape plumbing that the vector-Jacobian products of the first block are
/// written in; those must be differentiable too for double backprop.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    MulElementwise,
    MatMul,
    Relu,
    Sigmoid,
    ConcatLastAxis,
    SumAll,
    MeanAll,
    Square,
    Negate,
    ScaleByConstant(f64),
    LogSumExpLastAxis,
    /// `[p, k] x [q, k] -> [p, q]` of squared Euclidean distances between rows.
    SqEuclideanRowwise,

    Exp,
    /// Rank-2 transpose.
    Transpose,
    SumLastAxis,
    /// `[..] -> [.., n]` by repeating each element `n` times.
    BroadcastLastAxis(usize),
    /// `[n] -> [m, n]` by stacking `m` copies.
    BroadcastRows(usize),
    /// Single element to the given shape.
    ExpandScalar(Vec<usize>),
    SliceLastAxis { start: usize, len: usize },
    Reshape(Vec<usize>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::MulElementwise => "mul_elementwise",
            OpKind::MatMul => "matmul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::ConcatLastAxis => "concat_last_axis",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::Square => "square",
            OpKind::Negate => "negate",
            OpKind::ScaleByConstant(_) => "scale_by_constant",
            OpKind::LogSumExpLastAxis => "logsumexp_last_axis",
            OpKind::SqEuclideanRowwise => "sq_euclidean_rowwise",
            OpKind::Exp => "exp",
            OpKind::Transpose => "transpose",
            OpKind::SumLastAxis => "sum_last_axis",
            OpKind::BroadcastLastAxis(_) => "broadcast_last_axis",
            OpKind::BroadcastRows(_) => "broadcast_rows",
            OpKind::ExpandScalar(_) => "expand_scalar",
            OpKind::SliceLastAxis { .. } => "slice_last_axis",
            OpKind::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::MulElementwise
            | OpKind::MatMul
            | OpKind::SqEuclideanRowwise => Some(2),
            OpKind::ConcatLastAxis => None,
            _ => Some(1),
        }
    }
}

/// Borrowed view of an operand.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

fn mismatch(kind: &OpKind, views: &[View<'_>]) -> crate::Error {
    let shapes: Vec<String> = views.iter().map(|v| format!("{:?}", v.shape)).collect();
    contract(format!("{}: incompatible shapes {}", kind.name(), shapes.join(", ")))
}

fn last_axis(kind: &OpKind, v: View<'_>) -> Result<(usize, usize)> {
    match v.shape.last() {
        Some(&n) => Ok((v.data.len() / n, n)),
        None => Err(contract(format!("{}: needs rank >= 1, got scalar", kind.name()))),
    }
}

fn rank2(kind: &OpKind, v: View<'_>) -> Result<(usize, usize)> {
    match v.shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(contract(format!("{}: needs rank 2, got {:?}", kind.name(), v.shape))),
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Computes the output shape and values of `kind` applied to `inputs`.
pub(crate) fn eval(kind: &OpKind, inputs: &[View<'_>]) -> Result<(Vec<usize>, Vec<f64>)> {
    if let Some(n) = kind.arity() {
        if inputs.len() != n {
            return Err(contract(format!(
                "{}: expected {n} inputs, got {}",
                kind.name(),
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(contract(format!("{}: needs at least one input", kind.name())));
    }
    let unary = |f: &dyn Fn(f64) -> f64| (inputs[0].shape.to_vec(), inputs[0].data.iter().map(|&x| f(x)).collect());

    let out = match kind {
        OpKind::Add | OpKind::Sub | OpKind::MulElementwise => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape != b.shape {
                return Err(mismatch(kind, inputs));
            }
            let f: fn(f64, f64) -> f64 = match kind {
                OpKind::Add => |x, y| x + y,
                OpKind::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            (a.shape.to_vec(), a.data.iter().zip(b.data).map(|(&x, &y)| f(x, y)).collect())
        }
        OpKind::MatMul => {
            let (m, k) = rank2(kind, inputs[0])?;
            let (k2, n) = rank2(kind, inputs[1])?;
            if k != k2 {
                return Err(mismatch(kind, inputs));
            }
            let mut out = vec![0.0; m * n];
            matmul_into(inputs[0].data, inputs[1].data, m, k, n, &mut out);
            (vec![m, n], out)
        }
        OpKind::Relu => unary(&|x| if x > 0.0 { x } else { 0.0 }),
        OpKind::Sigmoid => unary(&sigmoid),
        OpKind::Exp => unary(&f64::exp),
        OpKind::Square => unary(&|x| x * x),
        OpKind::Negate => unary(&|x| -x),
        OpKind::ScaleByConstant(c) => {
            let c = *c;
            unary(&move |x| c * x)
        }
        OpKind::ConcatLastAxis => {
            let first = inputs[0].shape;
            if first.is_empty() {
                return Err(mismatch(kind, inputs));
            }
            let lead = &first[..first.len() - 1];
            let mut widths = Vec::with_capacity(inputs.len());
            for v in inputs {
                if v.shape.len() != first.len() || &v.shape[..lead.len()] != lead {
                    return Err(mismatch(kind, inputs));
                }
                widths.push(*v.shape.last().unwrap());
            }
            let outer: usize = lead.iter().product();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(outer * total);
            for r in 0..outer {
                for (v, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&v.data[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            (shape, out)
        }
        OpKind::SumAll => (vec![], vec![inputs[0].data.iter().sum()]),
        OpKind::MeanAll => {
            let d = inputs[0].data;
            (vec![], vec![d.iter().sum::<f64>() / d.len() as f64])
        }
        OpKind::LogSumExpLastAxis => {
            let (outer, n) = last_axis(kind, inputs[0])?;
            let d = inputs[0].data;
            let out = (0..outer)
                .map(|r| {
                    let row = &d[r * n..(r + 1) * n];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
                })
                .collect();
            let s = inputs[0].shape;
            (s[..s.len() - 1].to_vec(), out)
        }
        OpKind::SqEuclideanRowwise => {
            let (p, k) = rank2(kind, inputs[0])?;
            let (q, k2) = rank2(kind, inputs[1])?;
            if k != k2 {
                return Err(mismatch(kind, inputs));
            }
            let (a, b) = (inputs[0].data, inputs[1].data);
            let mut out = Vec::with_capacity(p * q);
            for i in 0..p {
                let ai = &a[i * k..(i + 1) * k];
                for j in 0..q {
                    let bj = &b[j * k..(j + 1) * k];
                    out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
                }
            }
            (vec![p, q], out)
        }
        OpKind::Transpose => {
            let (r, c) = rank2(kind, inputs[0])?;
            let d = inputs[0].data;
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            (vec![c, r], out)
        }
        OpKind::SumLastAxis => {
            let (outer, n) = last_axis(kind, inputs[0])?;
            let d = inputs[0].data;
            let out = (0..outer).map(|r| d[r * n..(r + 1) * n].iter().sum()).collect();
            let s = inputs[0].shape;
            (s[..s.len() - 1].to_vec(), out)
        }
        OpKind::BroadcastLastAxis(n) => {
            let n = *n;
            if n == 0 {
                return Err(mismatch(kind, inputs));
            }
            let out = inputs[0].data.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
            let mut shape = inputs[0].shape.to_vec();
            shape.push(n);
            (shape, out)
        }
        OpKind::BroadcastRows(m) => {
            let v = inputs[0];
            if v.shape.len() != 1 || *m == 0 {
                return Err(mismatch(kind, inputs));
            }
            (vec![*m, v.shape[0]], v.data.repeat(*m))
        }
        OpKind::ExpandScalar(shape) => {
            if inputs[0].data.len() != 1 || shape.contains(&0) {
                return Err(mismatch(kind, inputs));
            }
            let n: usize = shape.iter().product();
            (shape.clone(), vec![inputs[0].data[0]; n])
        }
        OpKind::SliceLastAxis { start, len } => {
            let (outer, n) = last_axis(kind, inputs[0])?;
            if *len == 0 || start + len > n {
                return Err(contract(format!(
                    "slice_last_axis: range {start}..{} out of width {n}",
                    start + len
                )));
            }
            let d = inputs[0].data;
            let mut out = Vec::with_capacity(outer * len);
            for r in 0..outer {
                out.extend_from_slice(&d[r * n + start..r * n + start + len]);
            }
            let mut shape = inputs[0].shape.to_vec();
            *shape.last_mut().unwrap() = *len;
            (shape, out)
        }
        OpKind::Reshape(shape) => {
            if shape.iter().product::<usize>() != inputs[0].data.len() || shape.contains(&0) {
                return Err(contract(format!(
                    "reshape: cannot view {:?} as {:?}",
                    inputs[0].shape, shape
                )));
            }
            (shape.clone(), inputs[0].data.to_vec())
        }
    };
    Ok(out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
