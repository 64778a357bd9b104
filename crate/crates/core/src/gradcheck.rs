//! Self-check suite: reverse-mode gradients against central differences for
//! every op and small networks, Hessian-vector products, the exact bilevel
//! meta-gradient, a closed-form quadratic bilevel problem and the
//! mode-collapse equivalences of the trainers.

use std::time::Instant;

use crate::autodiff::{finite_diff_grad, grad, hvp, rel_err, GradientMap, Graph, OpKind, Parameters, Tensor};
use crate::error::Result;
use crate::models::{episode_loss, ArchConfig, HeadKind, Model};
use crate::rng::Rng;
use crate::tasks::{sample_disjoint_pair, ClassData, Dataset, Episode, TaskPair};
use crate::training::{
    bilevel_losses, episodic_step, inner_update_signed, maml_x_step, meta_loss, meta_step, GradMode, Optimizer,
    TrainState, TrainerConfig,
};

pub const FD_EPS: f64 = 1e-6;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const BILEVEL_TOLERANCE: f64 = 1e-4;
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-10;
pub const HVP_TOLERANCE: f64 = 1e-5;

/// Outcome of one named check. `error` is a relative error for gradient
/// checks and an absolute error for closed forms; equivalence checks report 0
/// or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn measured(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self { name: name.into(), error, tolerance, passed: error <= tolerance }
    }

    fn exact(name: impl Into<String>, holds: bool) -> Self {
        Self { name: name.into(), error: if holds { 0.0 } else { 1.0 }, tolerance: 0.0, passed: holds }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Options {
    /// Test hook: the inner step ascends instead of descending. The bilevel
    /// and closed-form checks must then fail.
    pub flip_inner_sign: bool,
    pub seed: u64,
}

impl Options {
    fn inner_sign(&self) -> f64 {
        if self.flip_inner_sign {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Largest error among checks whose name starts with `prefix`.
    pub fn max_error(&self, prefix: &str) -> f64 {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).map(|c| c.error).fold(0.0, f64::max)
    }
}

fn random(rng: &mut Rng, shape: &[usize], away_from_zero: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x = rng.normal();
            if away_from_zero {
                x.signum() * (0.2 + x.abs())
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type OpFn = fn(&[&Tensor]) -> Result<Tensor>;

fn op_cases() -> Vec<(OpKind, Vec<Vec<usize>>, OpFn)> {
    use OpKind::*;
    vec![
        (Add, vec![vec![3, 4], vec![3, 4]], |x| x[0].add(x[1])),
        (Sub, vec![vec![3, 4], vec![3, 4]], |x| x[0].sub(x[1])),
        (MulElementwise, vec![vec![3, 4], vec![3, 4]], |x| x[0].mul(x[1])),
        (MatMul, vec![vec![3, 4], vec![4, 2]], |x| x[0].matmul(x[1])),
        (Relu, vec![vec![3, 4]], |x| x[0].relu()),
        (Sigmoid, vec![vec![3, 4]], |x| x[0].sigmoid()),
        (ConcatLastAxis, vec![vec![3, 2], vec![3, 3]], |x| Tensor::concat_last_axis(&[x[0], x[1]])),
        (SumAll, vec![vec![3, 4]], |x| x[0].sum_all()),
        (MeanAll, vec![vec![3, 4]], |x| x[0].mean_all()),
        (Square, vec![vec![3, 4]], |x| x[0].square()),
        (Negate, vec![vec![3, 4]], |x| x[0].neg()),
        (ScaleByConstant(-1.7), vec![vec![3, 4]], |x| x[0].scale(-1.7)),
        (LogSumExpLastAxis, vec![vec![3, 4]], |x| x[0].logsumexp_last_axis()),
        (SqEuclideanRowwise, vec![vec![3, 4], vec![2, 4]], |x| x[0].sq_euclidean_rowwise(x[1])),
        (Exp, vec![vec![3, 4]], |x| x[0].exp()),
        (Transpose, vec![vec![3, 4]], |x| x[0].transpose()),
        (SumLastAxis, vec![vec![3, 4]], |x| x[0].sum_last_axis()),
        (BroadcastLastAxis(3), vec![vec![3, 2]], |x| x[0].broadcast_last_axis(3)),
        (BroadcastRows(3), vec![vec![4]], |x| x[0].broadcast_rows(3)),
        (ExpandScalar(vec![2, 3]), vec![vec![]], |x| x[0].expand_scalar(&[2, 3])),
        (SliceLastAxis { start: 1, len: 2 }, vec![vec![3, 4]], |x| x[0].slice_last_axis(1, 2)),
        (Reshape(vec![2, 6]), vec![vec![3, 4]], |x| x[0].reshape(&[2, 6])),
    ]
}

fn input_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Reverse-mode vs central-difference gradient of `sum(op(x) * w)` per op.
pub fn op_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (kind, shapes, f) in op_cases() {
        let relu = kind == OpKind::Relu;
        let names = input_names(shapes.len());
        let params: Parameters = names.iter().cloned().zip(shapes.iter().map(|s| random(rng, s, relu))).collect();
        let probe = {
            let inputs: Vec<&Tensor> = names.iter().map(|n| params.get(n).unwrap()).collect();
            f(&inputs)?
        };
        let w = random(rng, probe.shape(), false);
        let loss_of = |p: &Parameters| -> Result<Tensor> {
            let inputs: Vec<&Tensor> = names.iter().map(|n| p.get(n).unwrap()).collect();
            f(&inputs)?.mul(&w)?.sum_all()
        };
        let g = Graph::new();
        let attached = params.attach(&g);
        let analytic = grad(&loss_of(&attached)?, &attached, false)?;
        let numeric = finite_diff_grad(|p| loss_of(p)?.item(), &params, FD_EPS)?;
        out.push(Check::measured(format!("op/{}", kind.name()), analytic.rel_err(&numeric), OP_TOLERANCE));
    }
    Ok(out)
}

fn toy_dataset(rng: &mut Rng, classes: usize, per_class: usize, dim: usize) -> Dataset {
    let classes = (0..classes)
        .map(|c| {
            let center: Vec<f64> = (0..dim).map(|_| 2.0 * rng.normal()).collect();
            ClassData {
                label: format!("c{c}"),
                instances: (0..per_class).map(|_| center.iter().map(|m| m + rng.normal()).collect()).collect(),
            }
        })
        .collect();
    Dataset::new(dim, classes).expect("toy dataset")
}

fn small_model(head: HeadKind, dim: usize) -> Model {
    let arch = ArchConfig { head, embed_hidden: vec![8], embed_dim: 4, relation_hidden: vec![4] };
    Model::new(dim, &arch).expect("small model")
}

/// Full network gradients for both heads with a 2-layer `6 -> 8 -> 4` MLP.
pub fn mlp_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let ds = toy_dataset(rng, 6, 6, 6);
    let mut out = Vec::new();
    for head in [HeadKind::Proto, HeadKind::Relation] {
        let model = small_model(head, 6);
        let params = model.init(rng);
        let ep = sample_disjoint_pair(&ds, 3, 2, 2, rng)?.first().clone();
        let g = Graph::new();
        let attached = params.attach(&g);
        let analytic = grad(&episode_loss(&model, &attached, &ep)?, &attached, false)?;
        let numeric = finite_diff_grad(|p| episode_loss(&model, p, &ep)?.item(), &params, FD_EPS)?;
        out.push(Check::measured(format!("mlp/{}", head.as_str()), analytic.rel_err(&numeric), OP_TOLERANCE));

        let v: GradientMap = params.iter().map(|(n, t)| (n.clone(), random(rng, t.shape(), false))).collect();
        let h = hvp(&episode_loss(&model, &attached, &ep)?, &attached, &v)?;
        let grad_at = |p: &Parameters| -> Result<Vec<f64>> {
            let g = Graph::new();
            let a = p.attach(&g);
            Ok(grad(&episode_loss(&model, &a, &ep)?, &a, false)?.flatten())
        };
        let shift = |s: f64| params.unflatten(&params.flatten().iter().zip(v.flatten()).map(|(x, d)| x + s * d).collect::<Vec<_>>());
        let hi = grad_at(&shift(FD_EPS)?)?;
        let lo = grad_at(&shift(-FD_EPS)?)?;
        let fd: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * FD_EPS)).collect();
        out.push(Check::measured(format!("hvp/{}", head.as_str()), rel_err(&h.flatten(), &fd), HVP_TOLERANCE));
    }
    Ok(out)
}

/// `J(theta) = L_second(theta - alpha * grad L_first(theta))` evaluated
/// without any graph reuse, for finite differencing.
fn bilevel_objective(model: &Model, params: &Parameters, pair: &TaskPair, alpha: f64) -> Result<f64> {
    let g = Graph::new();
    let a = params.attach(&g);
    let inner = grad(&episode_loss(model, &a, pair.first())?, &a, false)?;
    let adapted: Parameters = params
        .iter()
        .map(|(n, t)| {
            let d = inner.get(n).unwrap();
            let v = t.data().iter().zip(d.data()).map(|(x, g)| x - alpha * g).collect();
            Ok((n.clone(), Tensor::new(t.shape().to_vec(), v)?))
        })
        .collect::<Result<_>>()?;
    episode_loss(model, &adapted, pair.second())?.item()
}

/// Exact meta-gradient against central differences of the full objective.
pub fn bilevel_checks(rng: &mut Rng, opts: Options) -> Result<Vec<Check>> {
    let ds = toy_dataset(rng, 8, 6, 6);
    let alpha = 0.1;
    let mut out = Vec::new();
    for head in [HeadKind::Proto, HeadKind::Relation] {
        let model = small_model(head, 6);
        let params = model.init(rng);
        let pair = sample_disjoint_pair(&ds, 3, 2, 2, rng)?;
        let g = Graph::new();
        let attached = params.attach(&g);
        let (_, outer) =
            bilevel_losses(&model, &attached, pair.first(), pair.second(), alpha, GradMode::Exact, opts.inner_sign())?;
        let analytic = grad(&outer, &attached, false)?;
        let numeric = finite_diff_grad(|p| bilevel_objective(&model, p, &pair, alpha), &params, FD_EPS)?;
        out.push(Check::measured(
            format!("bilevel/{} ({} params)", head.as_str(), params.numel()),
            analytic.rel_err(&numeric),
            BILEVEL_TOLERANCE,
        ));
    }
    Ok(out)
}

/// d/dtheta of `1/2 (theta' - t)^2` with `theta' = theta - alpha * theta`.
pub fn quadratic_meta_gradient(theta: f64, t: f64, alpha: f64, grad_mode: GradMode, sign: f64) -> Result<f64> {
    let g = Graph::new();
    let mut p = Parameters::new();
    p.insert("theta", g.watch(&Tensor::scalar(theta)?));
    let inner = p.get("theta").unwrap().square()?.scale(0.5)?;
    let adapted = inner_update_signed(&p, &inner, alpha, grad_mode == GradMode::Exact, sign)?;
    let outer = adapted.get("theta").unwrap().sub(&Tensor::scalar(t)?)?.square()?.scale(0.5)?;
    grad(&outer, &p, false)?.get("theta").unwrap().item()
}

pub fn closed_form_checks(opts: Options) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut worst_exact: f64 = 0.0;
    let mut worst_first: f64 = 0.0;
    for (theta, t, alpha) in [(1.0, 2.0, 0.1), (0.3, -1.0, 0.5), (-2.0, 4.0, 0.01), (5.0, 5.0, 0.9)] {
        let exact = quadratic_meta_gradient(theta, t, alpha, GradMode::Exact, opts.inner_sign())?;
        let first = quadratic_meta_gradient(theta, t, alpha, GradMode::FirstOrder, opts.inner_sign())?;
        worst_exact = worst_exact.max((exact - (1.0 - alpha) * ((1.0 - alpha) * theta - t)).abs());
        worst_first = worst_first.max((first - ((1.0 - alpha) * theta - t)).abs());
    }
    out.push(Check::measured("closed_form/exact", worst_exact, CLOSED_FORM_TOLERANCE));
    out.push(Check::measured("closed_form/first_order", worst_first, CLOSED_FORM_TOLERANCE));
    Ok(out)
}

fn fresh_state(model: &Model, cfg: &TrainerConfig, rng: &mut Rng) -> TrainState {
    let params = model.init(rng);
    TrainState { optimizer: Optimizer::new(cfg.optimizer, cfg.adam, &params), params, episode: 0 }
}

/// Bit-exact agreement between trainers in their collapsed configurations.
pub fn equivalence_checks(rng: &mut Rng) -> Result<Vec<Check>> {
    let ds = toy_dataset(rng, 8, 6, 6);
    let mut out = Vec::new();
    for head in [HeadKind::Proto, HeadKind::Relation] {
        let model = small_model(head, 6);
        let cfg = TrainerConfig {
            arch: ArchConfig { head, embed_hidden: vec![8], embed_dim: 4, relation_hidden: vec![4] },
            meta_batch: 2,
            alpha: 0.1,
            way: 3,
            shot: 2,
            queries: 2,
            ..Default::default()
        };
        let state = fresh_state(&model, &cfg, rng);
        let pairs: Vec<TaskPair> = (0..2).map(|_| sample_disjoint_pair(&ds, 3, 2, 2, rng)).collect::<Result<_>>()?;
        let firsts: Vec<Episode> = pairs.iter().map(|p| p.first().clone()).collect();
        let seconds: Vec<Episode> = pairs.iter().map(|p| p.second().clone()).collect();

        let same: Vec<TaskPair> = firsts.iter().cloned().map(TaskPair::same_task).collect();
        let (a, _) = meta_step(&model, &state, &same, &cfg)?;
        let (b, _) = maml_x_step(&model, &state, &firsts, &cfg)?;
        out.push(Check::exact(format!("equiv/{}: l2g(T_j=T_i) == maml_x", head.as_str()), a.to_bytes() == b.to_bytes()));

        let zero = TrainerConfig { alpha: 0.0, ..cfg.clone() };
        let (a, _) = meta_step(&model, &state, &pairs, &zero)?;
        let (b, _) = episodic_step(&model, &state, &seconds, &zero)?;
        out.push(Check::exact(format!("equiv/{}: alpha=0 == episodic", head.as_str()), a.to_bytes() == b.to_bytes()));

        let g = Graph::new();
        let p = state.params.attach(&g);
        let e = meta_loss(&model, &p, &pairs[0], cfg.alpha, GradMode::Exact)?;
        let f = meta_loss(&model, &p, &pairs[0], cfg.alpha, GradMode::FirstOrder)?;
        out.push(Check::exact(format!("equiv/{}: exact and first-order values", head.as_str()), e.bit_eq(&f)));
    }
    Ok(out)
}

/// Runs every check group.
pub fn run(opts: Options) -> Result<Report> {
    let start = Instant::now();
    let mut rng = Rng::new(opts.seed);
    let mut checks = op_checks(&mut rng)?;
    checks.extend(mlp_checks(&mut rng)?);
    checks.extend(bilevel_checks(&mut rng, opts)?);
    checks.extend(closed_form_checks(opts)?);
    checks.extend(equivalence_checks(&mut rng)?);
    Ok(Report { checks, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run(Options::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(report.checks.iter().filter(|c| c.name.starts_with("op/")).count(), 22);
    }

    #[test]
    fn sign_flip_is_caught() {
        let report = run(Options { flip_inner_sign: true, seed: 0 }).unwrap();
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.iter().any(|n| n.starts_with("bilevel/")), "{failed:?}");
        assert!(failed.contains(&"closed_form/exact"));
        assert!(report.checks.iter().filter(|c| c.name.starts_with("op/")).all(|c| c.passed));
    }
}
