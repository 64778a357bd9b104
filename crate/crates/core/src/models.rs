//! Embedding network, prototype constructors, and the two metric heads.
//!
//! Parameter names are `embed.{layer}.weight` (`[in, out]`),
//! `embed.{layer}.bias` (`[out]`) and the same under `relation.` for the
//! relation module. All episode losses are sums over queries.

use crate::autodiff::{Parameters, Tensor};
use crate::error::{contract, Error, Result};
use crate::rng::Rng;
use crate::tasks::Episode;

pub const EMBED_PREFIX: &str = "embed";
pub const RELATION_PREFIX: &str = "relation";

fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.{layer}.weight")
}

fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.{layer}.bias")
}

/// Glorot-uniform weights, zero biases.
fn init_affine(prefix: &str, dims: &[usize], rng: &mut Rng, params: &mut Parameters) {
    for (layer, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
        params.insert(weight_name(prefix, layer), Tensor::matrix(fan_in, fan_out, values).unwrap());
        params.insert(bias_name(prefix, layer), Tensor::zeros(&[fan_out]));
    }
}

/// `x W + b` for every affine layer, relu between layers.
fn mlp_forward(prefix: &str, dims: &[usize], params: &Parameters, x: &Tensor) -> Result<Tensor> {
    let layers = dims.len() - 1;
    let rows = x.shape()[0];
    let mut h = x.clone();
    for layer in 0..layers {
        let w = params.require(&weight_name(prefix, layer))?;
        let b = params.require(&bias_name(prefix, layer))?;
        h = h.matmul(w)?.add(&b.broadcast_rows(rows)?)?;
        if layer + 1 < layers {
            h = h.relu()?;
        }
    }
    Ok(h)
}

/// Reads back the layer widths stored under `prefix`.
fn infer_dims(prefix: &str, params: &Parameters) -> Result<Vec<usize>> {
    let mut dims = Vec::new();
    let mut layer = 0;
    while let Some(w) = params.get(&weight_name(prefix, layer)) {
        let &[fan_in, fan_out] = w.shape() else {
            return Err(contract(format!("{} must be rank 2, found {:?}", weight_name(prefix, layer), w.shape())));
        };
        if dims.is_empty() {
            dims.push(fan_in);
        } else if *dims.last().unwrap() != fan_in {
            return Err(contract(format!(
                "{} expects {fan_in} inputs but the previous layer emits {}",
                weight_name(prefix, layer),
                dims.last().unwrap()
            )));
        }
        dims.push(fan_out);
        layer += 1;
    }
    if dims.is_empty() {
        return Err(contract(format!("no {prefix} layers found")));
    }
    Ok(dims)
}

/// MLP `f: R^D -> R^M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingNet {
    layer_dims: Vec<usize>,
}

impl EmbeddingNet {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(contract(format!("embedding needs >= 1 layer of positive widths, got {layer_dims:?}")));
        }
        Ok(Self { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn init(&self, rng: &mut Rng, params: &mut Parameters) {
        init_affine(EMBED_PREFIX, &self.layer_dims, rng, params);
    }

    /// Expected `(name, shape)` of every parameter.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        affine_shapes(EMBED_PREFIX, &self.layer_dims)
    }
}

fn affine_shapes(prefix: &str, dims: &[usize]) -> Vec<(String, Vec<usize>)> {
    dims.windows(2)
        .enumerate()
        .flat_map(|(l, w)| [(weight_name(prefix, l), vec![w[0], w[1]]), (bias_name(prefix, l), vec![w[1]])])
        .collect()
}

/// Maps `concat(prototype, query) in R^{2M}` to a relation score in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationModule {
    layer_dims: Vec<usize>,
}

impl RelationModule {
    pub fn new(embed_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut layer_dims = vec![2 * embed_dim];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(1);
        if layer_dims.contains(&0) {
            return Err(contract(format!("relation module widths must be positive, got {layer_dims:?}")));
        }
        Ok(Self { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn embed_dim(&self) -> usize {
        self.layer_dims[0] / 2
    }

    pub fn init(&self, rng: &mut Rng, params: &mut Parameters) {
        init_affine(RELATION_PREFIX, &self.layer_dims, rng, params);
    }

    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        affine_shapes(RELATION_PREFIX, &self.layer_dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Proto,
    Relation,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Proto => "proto",
            HeadKind::Relation => "relation",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proto" => Ok(HeadKind::Proto),
            "relation" => Ok(HeadKind::Relation),
            other => Err(Error::Config(format!("unknown head {other:?} (expected proto or relation)"))),
        }
    }
}

/// Prototype aggregator plus scoring rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    /// Mean prototypes, softmax over negative squared distances.
    Proto,
    /// Sum prototypes, learned relation scores with squared-error loss.
    Relation(RelationModule),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Proto => HeadKind::Proto,
            Head::Relation(_) => HeadKind::Relation,
        }
    }
}

/// Embedding network plus head; the unit that owns a parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub embedding: EmbeddingNet,
    pub head: Head,
}

/// Architecture hyperparameters independent of the data dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub head: HeadKind,
    pub embed_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub relation_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { head: HeadKind::Proto, embed_hidden: vec![64, 64], embed_dim: 64, relation_hidden: vec![32] }
    }
}

impl Model {
    pub fn new(input_dim: usize, arch: &ArchConfig) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&arch.embed_hidden);
        dims.push(arch.embed_dim);
        let embedding = EmbeddingNet::new(dims)?;
        let head = match arch.head {
            HeadKind::Proto => Head::Proto,
            HeadKind::Relation => Head::Relation(RelationModule::new(arch.embed_dim, &arch.relation_hidden)?),
        };
        Ok(Self { embedding, head })
    }

    /// Freshly initialized parameters.
    pub fn init(&self, rng: &mut Rng) -> Parameters {
        let mut p = Parameters::new();
        self.embedding.init(rng, &mut p);
        if let Head::Relation(r) = &self.head {
            r.init(rng, &mut p);
        }
        p
    }

    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = self.embedding.parameter_shapes();
        if let Head::Relation(r) = &self.head {
            shapes.extend(r.parameter_shapes());
        }
        shapes.sort();
        shapes
    }

    /// Reconstructs the architecture from parameter names and shapes.
    pub fn from_parameters(params: &Parameters) -> Result<Self> {
        let embedding = EmbeddingNet::new(infer_dims(EMBED_PREFIX, params)?)?;
        let head = if params.names().any(|n| n.starts_with(RELATION_PREFIX)) {
            let dims = infer_dims(RELATION_PREFIX, params)?;
            if dims[0] != 2 * embedding.output_dim() || *dims.last().unwrap() != 1 {
                return Err(contract(format!(
                    "relation module dims {dims:?} do not fit embedding width {}",
                    embedding.output_dim()
                )));
            }
            Head::Relation(RelationModule { layer_dims: dims })
        } else {
            Head::Proto
        };
        let model = Self { embedding, head };
        model.check_parameters(params)?;
        Ok(model)
    }

    /// Errors listing expected vs found shapes when `params` does not fit.
    pub fn check_parameters(&self, params: &Parameters) -> Result<()> {
        let expected = self.parameter_shapes();
        let mut found: Vec<(String, Vec<usize>)> =
            params.iter().filter(|(n, _)| !n.starts_with("adam.")).map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        found.sort();
        if expected != found {
            let fmt = |v: &[(String, Vec<usize>)]| v.iter().map(|(n, s)| format!("{n}{s:?}")).collect::<Vec<_>>().join(", ");
            return Err(contract(format!(
                "architecture mismatch: expected [{}], found [{}]",
                fmt(&expected),
                fmt(&found)
            )));
        }
        Ok(())
    }
}

/// Row-wise embedding `f(X)`.
pub fn embed(net: &EmbeddingNet, params: &Parameters, x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [_, d] if *d == net.input_dim() => mlp_forward(EMBED_PREFIX, &net.layer_dims, params, x),
        s => Err(contract(format!("embed: input shape {s:?} does not match width {}", net.input_dim()))),
    }
}

/// `[C, rows]` matrix whose row `c` has `weight(size_c)` over class `c`'s rows.
fn aggregation_matrix(group_sizes: &[usize], weight: impl Fn(usize) -> f64) -> Result<Tensor> {
    if let Some(c) = group_sizes.iter().position(|&n| n == 0) {
        return Err(contract(format!("prototype group {c} is empty")));
    }
    let rows: usize = group_sizes.iter().sum();
    let mut data = vec![0.0; group_sizes.len() * rows];
    let mut start = 0;
    for (c, &n) in group_sizes.iter().enumerate() {
        for r in start..start + n {
            data[c * rows + r] = weight(n);
        }
        start += n;
    }
    Tensor::matrix(group_sizes.len(), rows, data)
}

fn check_groups(embedded: &Tensor, group_sizes: &[usize]) -> Result<()> {
    let rows: usize = group_sizes.iter().sum();
    if embedded.shape().len() != 2 || embedded.shape()[0] != rows || group_sizes.is_empty() {
        return Err(contract(format!(
            "prototypes: {:?} rows do not match group sizes {group_sizes:?}",
            embedded.shape()
        )));
    }
    Ok(())
}

/// `[C, M]` class means of consecutive row groups.
pub fn prototypes_mean(embedded: &Tensor, group_sizes: &[usize]) -> Result<Tensor> {
    check_groups(embedded, group_sizes)?;
    aggregation_matrix(group_sizes, |n| 1.0 / n as f64)?.matmul(embedded)
}

/// `[C, M]` class sums of consecutive row groups.
pub fn prototypes_sum(embedded: &Tensor, group_sizes: &[usize]) -> Result<Tensor> {
    check_groups(embedded, group_sizes)?;
    aggregation_matrix(group_sizes, |_| 1.0)?.matmul(embedded)
}

fn check_labels(labels: &[usize], classes: usize, queries: usize) -> Result<()> {
    if labels.len() != queries {
        return Err(contract(format!("{} labels for {queries} queries", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(contract(format!("query label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (q, &l) in labels.iter().enumerate() {
        data[q * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data).unwrap()
}

/// Sum over queries of `d(p_y, q) + log sum_c exp(-d(p_c, q))`, `d` the
/// squared Euclidean distance.
pub fn proto_loss(prototypes: &Tensor, queries: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let classes = prototypes.shape()[0];
    check_labels(labels, classes, queries.shape()[0])?;
    let dist = queries.sq_euclidean_rowwise(prototypes)?;
    let correct = dist.mul(&one_hot(labels, classes))?.sum_all()?;
    let normalizer = dist.neg()?.logsumexp_last_axis()?.sum_all()?;
    correct.add(&normalizer)
}

/// `[C, Q]` scores `sigmoid(g([p_c, q_m]))` for every prototype/query pair.
pub fn relation_scores(prototypes: &Tensor, queries: &Tensor, module: &RelationModule, params: &Parameters) -> Result<Tensor> {
    let (&[c, m1], &[q, m2]) = (prototypes.shape(), queries.shape()) else {
        return Err(contract("relation_scores: prototypes and queries must be rank 2"));
    };
    if m1 != m2 || 2 * m1 != module.layer_dims[0] {
        return Err(contract(format!(
            "relation_scores: widths {m1} and {m2} do not fit module input {}",
            module.layer_dims[0]
        )));
    }
    // Row c*Q + j of the pair matrix is [p_c, q_j].
    let mut pick_proto = vec![0.0; c * q * c];
    let mut pick_query = vec![0.0; c * q * q];
    for ci in 0..c {
        for j in 0..q {
            let row = ci * q + j;
            pick_proto[row * c + ci] = 1.0;
            pick_query[row * q + j] = 1.0;
        }
    }
    let protos = Tensor::matrix(c * q, c, pick_proto)?.matmul(prototypes)?;
    let qs = Tensor::matrix(c * q, q, pick_query)?.matmul(queries)?;
    let pairs = Tensor::concat_last_axis(&[&protos, &qs])?;
    mlp_forward(RELATION_PREFIX, &module.layer_dims, params, &pairs)?.sigmoid()?.reshape(&[c, q])
}

/// Sum over all pairs of `(s - 1)^2` where the query's label is the
/// prototype's class and `s^2` elsewhere.
pub fn relation_mse_loss(scores: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let &[classes, queries] = scores.shape() else {
        return Err(contract(format!("relation_mse_loss: scores must be [C, Q], got {:?}", scores.shape())));
    };
    check_labels(labels, classes, queries)?;
    let target = one_hot(labels, classes).transpose()?;
    scores.sub(&target)?.square()?.sum_all()
}

/// Embeds supports and queries and builds the head's prototypes.
fn encode(model: &Model, params: &Parameters, episode: &Episode) -> Result<(Tensor, Tensor)> {
    if episode.way() < 2 {
        return Err(contract("episode needs at least 2 classes"));
    }
    let support = embed(&model.embedding, params, &episode.support_matrix())?;
    let queries = embed(&model.embedding, params, &episode.query_matrix())?;
    let prototypes = match model.head {
        Head::Proto => prototypes_mean(&support, &episode.support_sizes())?,
        Head::Relation(_) => prototypes_sum(&support, &episode.support_sizes())?,
    };
    Ok((prototypes, queries))
}

/// Loss of `episode`'s queries under `params`; attached iff `params` are.
pub fn episode_loss(model: &Model, params: &Parameters, episode: &Episode) -> Result<Tensor> {
    let (prototypes, queries) = encode(model, params, episode)?;
    let labels = episode.query_labels();
    match &model.head {
        Head::Proto => proto_loss(&prototypes, &queries, &labels),
        Head::Relation(module) => relation_mse_loss(&relation_scores(&prototypes, &queries, module, params)?, &labels),
    }
}

/// Index of the first minimum (or maximum) in each row; earliest index wins ties.
fn arg_best(matrix: &Tensor, better: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    matrix
        .rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if better(v, row[best]) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Proto: nearest prototype; relation: highest score. Ties go to the lower
/// class index.
pub fn predict(model: &Model, params: &Parameters, episode: &Episode) -> Result<Vec<usize>> {
    let params = params.detach();
    let (prototypes, queries) = encode(model, &params, episode)?;
    Ok(match &model.head {
        Head::Proto => arg_best(&queries.sq_euclidean_rowwise(&prototypes)?, |a, b| a < b),
        Head::Relation(module) => {
            let scores = relation_scores(&prototypes, &queries, module, &params)?.transpose()?;
            arg_best(&scores, |a, b| a > b)
        }
    })
}

/// Embeddings of arbitrary rows with a trained model.
pub fn embed_rows(model: &Model, params: &Parameters, x: &Tensor) -> Result<Tensor> {
    embed(&model.embedding, &params.detach(), x)
}
