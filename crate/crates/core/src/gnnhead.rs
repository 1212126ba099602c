//! Attention message-passing head over the bipartite anchor graph.
//!
//! Every instance and anchor is a node. Instance nodes start from a linear
//! projection of their frozen embedding, anchor nodes from a trainable table.
//! Each layer is a multi-head graph transformer convolution with a scalar
//! edge feature:
//!
//! ```text
//! e'_ij   = w_e * e_ij                        (learned edge embedding)
//! a_ij    = softmax_j( q_i . (k_j + e'_ij) / sqrt(c) )   per head
//! h'_i    = W_r h_i + b_r + sum_j a_ij (v_j + e'_ij)
//! ```
//!
//! Every instance-anchor and anchor-anchor edge is used in both directions;
//! the root term plays the role of the self loop. Layers are separated by
//! ReLU (and dropout while training). The final instance states feed a
//! linear output layer.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingMatrix;
use crate::graph::BipartiteGraph;
use crate::scalar::Scalar;
use crate::tensor::{Linear, Matrix};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("invalid head configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HeadError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadTask {
    Classification { num_classes: usize },
    Regression,
}

/// Architecture knobs that do not depend on the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadOptions {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
}

impl Default for HeadOptions {
    fn default() -> Self {
        Self { hidden_dim: 64, num_layers: 2, num_heads: 2, dropout: 0.1 }
    }
}

impl HeadOptions {
    pub fn with_task(self, task: HeadTask) -> GraphHeadConfig {
        GraphHeadConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            dropout: self.dropout,
            task,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphHeadConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub task: HeadTask,
}

impl GraphHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(HeadError::InvalidConfig("num_layers must be at least 1".into()));
        }
        if self.num_heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(HeadError::InvalidConfig(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HeadError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let HeadTask::Classification { num_classes } = self.task {
            if num_classes < 2 {
                return Err(HeadError::InvalidConfig("classification needs at least two classes".into()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn output_dim(&self) -> usize {
        match self.task {
            HeadTask::Classification { num_classes } => num_classes,
            HeadTask::Regression => 1,
        }
    }
}

/// Destination-major adjacency over all `|I| + |A|` nodes. Instances occupy
/// nodes `0..|I|`, anchor `a` is node `|I| + a`. Incoming edges of each node
/// are sorted by (source, weight) so edge-list order never matters.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    num_instances: usize,
    num_anchors: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl MessageGraph {
    pub fn new(graph: &BipartiteGraph) -> Self {
        let n = graph.num_instances;
        let num_nodes = graph.num_nodes();
        let mut directed: Vec<(usize, usize, f64)> =
            Vec::with_capacity(2 * (graph.ia_edges.len() + graph.aa_edges.len()));
        for e in &graph.ia_edges {
            directed.push((n + e.anchor, e.instance, e.weight));
            directed.push((e.instance, n + e.anchor, e.weight));
        }
        for e in &graph.aa_edges {
            directed.push((n + e.b, n + e.a, e.weight));
            directed.push((n + e.a, n + e.b, e.weight));
        }
        directed.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.total_cmp(&y.2)));
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(dst, _, _) in &directed {
            offsets[dst + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        Self {
            num_instances: n,
            num_anchors: graph.num_anchors(),
            offsets,
            sources: directed.iter().map(|e| e.1).collect(),
            weights: directed.iter().map(|e| e.2).collect(),
        }
    }

    pub fn num_instances(&self) -> usize {
        self.num_instances
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn num_nodes(&self) -> usize {
        self.num_instances + self.num_anchors
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    /// Index range into the edge arrays of the edges arriving at `node`.
    pub fn incoming(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn source(&self, edge: usize) -> usize {
        self.sources[edge]
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub root: Linear<T>,
    /// Embedding of the scalar edge weight, shared by keys and values.
    pub edge: Vec<T>,
}

/// All trainable tensors of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphHeadParams<T> {
    pub input: Linear<T>,
    pub anchors: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub output: Linear<T>,
    generation: u64,
}

fn uniform_linear<T: Scalar>(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear<T> {
    let bound = 1.0 / (input as f64).sqrt();
    let weight = Matrix::from_fn(output, input, |_, _| T::lit(rng.gen_range(-bound..bound)));
    let bias = (0..output).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Linear { weight, bias }
}

impl<T: Scalar> GraphHeadParams<T> {
    /// Zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &GraphHeadConfig, num_anchors: usize, input_dim: usize) -> Self {
        let h = config.hidden_dim;
        Self {
            input: Linear::zeros(input_dim, h),
            anchors: Matrix::zeros(num_anchors, h),
            layers: (0..config.num_layers)
                .map(|_| LayerParams {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    value: Linear::zeros(h, h),
                    root: Linear::zeros(h, h),
                    edge: vec![T::zero(); h],
                })
                .collect(),
            output: Linear::zeros(h, config.output_dim()),
            generation: 0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z.generation = 0;
        z
    }

    pub fn hidden_dim(&self) -> usize {
        self.anchors.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.rows()
    }

    /// Bumped by every optimizer step; forward caches record it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn bump_generation(&mut self) {
        self.generation += 1;
    }

    /// Tensors in a fixed order with names and `[rows, cols]` shapes.
    pub fn named_tensors(&self) -> Vec<(String, [usize; 2], &[T])> {
        fn linear<'a, T: Scalar>(out: &mut Vec<(String, [usize; 2], &'a [T])>, name: &str, l: &'a Linear<T>) {
            out.push((format!("{name}.weight"), [l.weight.rows(), l.weight.cols()], l.weight.as_slice()));
            out.push((format!("{name}.bias"), [1, l.bias.len()], &l.bias));
        }
        let mut out = Vec::new();
        linear(&mut out, "input", &self.input);
        out.push(("anchors".into(), [self.anchors.rows(), self.anchors.cols()], self.anchors.as_slice()));
        for (i, layer) in self.layers.iter().enumerate() {
            for (part, l) in [("query", &layer.query), ("key", &layer.key), ("value", &layer.value), ("root", &layer.root)] {
                linear(&mut out, &format!("layers.{i}.{part}"), l);
            }
            out.push((format!("layers.{i}.edge"), [1, layer.edge.len()], &layer.edge));
        }
        linear(&mut out, "output", &self.output);
        out
    }

    /// Mutable views in the order of [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.input.weight.as_mut_slice());
        out.push(&mut self.input.bias);
        out.push(self.anchors.as_mut_slice());
        for layer in self.layers.iter_mut() {
            for l in [&mut layer.query, &mut layer.key, &mut layer.value, &mut layer.root] {
                out.push(l.weight.as_mut_slice());
                out.push(&mut l.bias);
            }
            out.push(&mut layer.edge);
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(&mut self.output.bias);
        out
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.named_tensors().into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Fan-in scaled uniform initialization.
///
/// Every linear weight and bias is drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// anchor rows from `U(-1/sqrt(hidden), 1/sqrt(hidden))`, and edge
/// embeddings (fan-in 1) from `U(-1, 1)`. Draws are made in `f64` from a
/// ChaCha8 stream seeded with `seed` and rounded to `T`.
pub fn init_params<T: Scalar>(
    config: &GraphHeadConfig,
    graph: &BipartiteGraph,
    input_dim: usize,
    seed: u64,
) -> Result<GraphHeadParams<T>> {
    config.validate()?;
    if input_dim == 0 {
        return Err(HeadError::InvalidConfig("embedding dimension must be positive".into()));
    }
    let h = config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = uniform_linear(&mut rng, input_dim, h);
    let anchor_bound = 1.0 / (h as f64).sqrt();
    let anchors = Matrix::from_fn(graph.num_anchors(), h, |_, _| T::lit(rng.gen_range(-anchor_bound..anchor_bound)));
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            query: uniform_linear(&mut rng, h, h),
            key: uniform_linear(&mut rng, h, h),
            value: uniform_linear(&mut rng, h, h),
            root: uniform_linear(&mut rng, h, h),
            edge: (0..h).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect(),
        })
        .collect();
    let output = uniform_linear(&mut rng, h, config.output_dim());
    Ok(GraphHeadParams { input, anchors, layers, output, generation: 0 })
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Matrix<T>,
    query: Matrix<T>,
    key: Matrix<T>,
    value: Matrix<T>,
    /// `[edge * heads + head]`.
    attention: Vec<T>,
    /// Layer output before activation and dropout.
    output: Matrix<T>,
    /// Inverted-dropout multipliers applied after the ReLU.
    mask: Option<Vec<T>>,
}

/// Intermediate values of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    train_mode: bool,
    heads: usize,
    embeddings: Matrix<T>,
    layers: Vec<LayerCache<T>>,
    states: Matrix<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Node states at layer boundary `b` (`0` = initial features,
    /// `num_layers` = final states). Rows are instances then anchors.
    pub fn node_states(&self, boundary: usize) -> &Matrix<T> {
        if boundary < self.layers.len() {
            &self.layers[boundary].input
        } else {
            &self.states
        }
    }

    /// Attention weight of incoming edge `edge` (a [`MessageGraph`] edge
    /// index) for `head` in `layer`.
    pub fn attention(&self, layer: usize, edge: usize, head: usize) -> T {
        self.layers[layer].attention[edge * self.heads + head]
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }
}

fn check_shapes<T: Scalar>(
    params: &GraphHeadParams<T>,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
    config: &GraphHeadConfig,
) -> Result<()> {
    config.validate()?;
    if embeddings.n() != graph.num_instances() {
        return Err(HeadError::ShapeMismatch(format!(
            "{} embedding rows for {} instances",
            embeddings.n(),
            graph.num_instances()
        )));
    }
    if embeddings.d() != params.input_dim() {
        return Err(HeadError::ShapeMismatch(format!(
            "embedding dimension {} but input projection expects {}",
            embeddings.d(),
            params.input_dim()
        )));
    }
    if params.num_anchors() != graph.num_anchors() {
        return Err(HeadError::ShapeMismatch(format!(
            "anchor table has {} rows, graph has {} anchors",
            params.num_anchors(),
            graph.num_anchors()
        )));
    }
    if params.hidden_dim() != config.hidden_dim
        || params.layers.len() != config.num_layers
        || params.output.output_dim() != config.output_dim()
    {
        return Err(HeadError::ShapeMismatch("parameters do not match the head configuration".into()));
    }
    Ok(())
}

/// One attention layer; returns the pre-activation output and fills the
/// attention buffer.
fn attention_layer<T: Scalar>(
    layer: &LayerParams<T>,
    graph: &MessageGraph,
    heads: usize,
    x: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>, Vec<T>) {
    let hidden = x.cols();
    let c = hidden / heads;
    let scale = T::one() / T::lit(c as f64).sqrt();
    let q = layer.query.forward(x);
    let k = layer.key.forward(x);
    let v = layer.value.forward(x);
    let mut out = layer.root.forward(x);
    let mut attention = vec![T::zero(); graph.num_edges() * heads];
    let mut logits: Vec<T> = Vec::new();
    for i in 0..graph.num_nodes() {
        let range = graph.incoming(i);
        if range.is_empty() {
            continue;
        }
        let qi = q.row(i);
        for h in 0..heads {
            let hs = h * c..(h + 1) * c;
            logits.clear();
            for e in range.clone() {
                let j = graph.source(e);
                let w = T::lit(graph.weight(e));
                let kj = &k.row(j)[hs.clone()];
                let mut s = T::zero();
                for ((qc, kc), ec) in qi[hs.clone()].iter().zip(kj).zip(&layer.edge[hs.clone()]) {
                    s += *qc * (*kc + *ec * w);
                }
                logits.push(s * scale);
            }
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                total += *l;
            }
            let out_row = &mut out.row_mut(i)[hs.clone()];
            for (slot, e) in range.clone().enumerate() {
                let alpha = logits[slot] / total;
                attention[e * heads + h] = alpha;
                let j = graph.source(e);
                let w = T::lit(graph.weight(e));
                let vj = &v.row(j)[hs.clone()];
                for ((o, vc), ec) in out_row.iter_mut().zip(vj).zip(&layer.edge[hs.clone()]) {
                    *o += alpha * (*vc + *ec * w);
                }
            }
        }
    }
    (out, q, k, v, attention)
}

/// Runs the head over the whole graph.
///
/// Returns one output row per instance (class logits, or a single value for
/// regression) and the cache needed by [`backward`]. Dropout is active only
/// when `train_mode` is set and is driven by `seed`.
pub fn forward<T: Scalar>(
    params: &GraphHeadParams<T>,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
    config: &GraphHeadConfig,
    train_mode: bool,
    seed: u64,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    check_shapes(params, graph, embeddings, config)?;
    let n = graph.num_instances();
    let hidden = config.hidden_dim;
    let z = Matrix::from_fn(n, embeddings.d(), |r, c| T::lit(embeddings.row(r)[c] as f64));
    let projected = params.input.forward(&z);
    let mut x = Matrix::zeros(graph.num_nodes(), hidden);
    x.as_mut_slice()[..n * hidden].copy_from_slice(projected.as_slice());
    x.as_mut_slice()[n * hidden..].copy_from_slice(params.anchors.as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - config.dropout;
    let mut layers = Vec::with_capacity(config.num_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let (output, query, key, value, attention) = attention_layer(layer, graph, config.num_heads, &x);
        if !output.is_finite() {
            return Err(HeadError::NonFiniteActivation(l));
        }
        let last = l + 1 == config.num_layers;
        let next = if last {
            None
        } else {
            let mut act = output.clone();
            act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
            let mask = if train_mode && config.dropout > 0.0 {
                let scale = T::lit(1.0 / keep);
                let mask: Vec<T> = (0..act.as_slice().len())
                    .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
                    .collect();
                act.as_mut_slice().iter_mut().zip(&mask).for_each(|(a, m)| *a *= *m);
                Some(mask)
            } else {
                None
            };
            Some((act, mask))
        };
        let (next_x, mask) = match next {
            Some((act, mask)) => (act, mask),
            None => (output.clone(), None),
        };
        let input = std::mem::replace(&mut x, next_x);
        layers.push(LayerCache { input, query, key, value, attention, output, mask });
    }
    let states = x;
    let instance_states = Matrix::from_vec(n, hidden, states.as_slice()[..n * hidden].to_vec());
    let predictions = params.output.forward(&instance_states);
    if !predictions.is_finite() {
        return Err(HeadError::NonFiniteActivation(config.num_layers));
    }
    let cache = ForwardCache { generation: params.generation, train_mode, heads: config.num_heads, embeddings: z, layers, states };
    Ok((predictions, cache))
}

/// Gradients of every trainable tensor, plus the gradient reaching the
/// frozen embeddings (reported, never applied).
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    pub params: GraphHeadParams<T>,
    pub embeddings: Matrix<T>,
}

/// Reverse-mode pass matching a [`forward`] call. `loss_grad` holds the
/// derivative of the loss with respect to each prediction.
pub fn backward<T: Scalar>(
    params: &GraphHeadParams<T>,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
    config: &GraphHeadConfig,
    cache: &ForwardCache<T>,
    loss_grad: &Matrix<T>,
) -> Result<GradientSet<T>> {
    check_shapes(params, graph, embeddings, config)?;
    if cache.generation != params.generation || cache.layers.len() != config.num_layers {
        return Err(HeadError::StaleCache);
    }
    let n = graph.num_instances();
    if cache.embeddings.rows() != n || cache.states.rows() != graph.num_nodes() {
        return Err(HeadError::StaleCache);
    }
    if loss_grad.shape() != (n, config.output_dim()) {
        return Err(HeadError::ShapeMismatch(format!(
            "loss gradient is {:?}, expected {:?}",
            loss_grad.shape(),
            (n, config.output_dim())
        )));
    }
    let hidden = config.hidden_dim;
    let heads = config.num_heads;
    let c = config.head_dim();
    let scale = T::one() / T::lit(c as f64).sqrt();
    let mut grads = params.zeros_like();

    let instance_states = Matrix::from_vec(n, hidden, cache.states.as_slice()[..n * hidden].to_vec());
    let mut d_instances = Matrix::zeros(n, hidden);
    params.output.backward(&instance_states, loss_grad, &mut grads.output, Some(&mut d_instances));
    let mut d_next = Matrix::zeros(graph.num_nodes(), hidden);
    d_next.as_mut_slice()[..n * hidden].copy_from_slice(d_instances.as_slice());

    for l in (0..config.num_layers).rev() {
        let lc = &cache.layers[l];
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        // gradient w.r.t. the pre-activation output
        let mut d_out = d_next;
        if l + 1 < config.num_layers {
            for (idx, d) in d_out.as_mut_slice().iter_mut().enumerate() {
                let mut factor = if lc.output.as_slice()[idx] > T::zero() { T::one() } else { T::zero() };
                if let Some(mask) = &lc.mask {
                    factor *= mask[idx];
                }
                *d *= factor;
            }
        }
        let mut dx = Matrix::zeros(graph.num_nodes(), hidden);
        layer.root.backward(&lc.input, &d_out, &mut g.root, Some(&mut dx));

        let mut dq = Matrix::zeros(graph.num_nodes(), hidden);
        let mut dk = Matrix::zeros(graph.num_nodes(), hidden);
        let mut dv = Matrix::zeros(graph.num_nodes(), hidden);
        let mut d_alpha: Vec<T> = Vec::new();
        for i in 0..graph.num_nodes() {
            let range = graph.incoming(i);
            if range.is_empty() {
                continue;
            }
            for h in 0..heads {
                let hs = h * c..(h + 1) * c;
                let dm = &d_out.row(i)[hs.clone()];
                d_alpha.clear();
                for e in range.clone() {
                    let j = graph.source(e);
                    let w = T::lit(graph.weight(e));
                    let alpha = lc.attention[e * heads + h];
                    let mut da = T::zero();
                    let vj = &lc.value.row(j)[hs.clone()];
                    for (((dmc, vc), ec), ge) in
                        dm.iter().zip(vj).zip(&layer.edge[hs.clone()]).zip(&mut g.edge[hs.clone()])
                    {
                        da += *dmc * (*vc + *ec * w);
                        *ge += alpha * *dmc * w;
                    }
                    for (dvc, dmc) in dv.row_mut(j)[hs.clone()].iter_mut().zip(dm) {
                        *dvc += alpha * *dmc;
                    }
                    d_alpha.push(da);
                }
                let weighted: T = range.clone().zip(&d_alpha).map(|(e, da)| lc.attention[e * heads + h] * *da).sum();
                for (slot, e) in range.clone().enumerate() {
                    let j = graph.source(e);
                    let w = T::lit(graph.weight(e));
                    let alpha = lc.attention[e * heads + h];
                    let ds = alpha * (d_alpha[slot] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let qi = &lc.query.row(i)[hs.clone()];
                    let kj = &lc.key.row(j)[hs.clone()];
                    for ((dqc, kc), ec) in dq.row_mut(i)[hs.clone()].iter_mut().zip(kj).zip(&layer.edge[hs.clone()]) {
                        *dqc += ds * (*kc + *ec * w);
                    }
                    for ((dkc, qc), ge) in dk.row_mut(j)[hs.clone()].iter_mut().zip(qi).zip(&mut g.edge[hs.clone()]) {
                        *dkc += ds * *qc;
                        *ge += ds * *qc * w;
                    }
                }
            }
        }
        layer.query.backward(&lc.input, &dq, &mut g.query, Some(&mut dx));
        layer.key.backward(&lc.input, &dk, &mut g.key, Some(&mut dx));
        layer.value.backward(&lc.input, &dv, &mut g.value, Some(&mut dx));
        d_next = dx;
    }

    let d_projected = Matrix::from_vec(n, hidden, d_next.as_slice()[..n * hidden].to_vec());
    grads.anchors.as_mut_slice().copy_from_slice(&d_next.as_slice()[n * hidden..]);
    let mut d_embeddings = Matrix::zeros(n, cache.embeddings.cols());
    params.input.backward(&cache.embeddings, &d_projected, &mut grads.input, Some(&mut d_embeddings));
    Ok(GradientSet { params: grads, embeddings: d_embeddings })
}

const CHECKPOINT_MAGIC: &str = "BOLERO-CKPT 1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config_hash: String,
    config: GraphHeadConfig,
    num_anchors: usize,
    input_dim: usize,
    tensors: Vec<TensorHeader>,
}

/// Writes a checkpoint: the line `BOLERO-CKPT 1`, one line of JSON header
/// (config, its hash, tensor names and shapes), then every tensor as
/// little-endian `f32` in header order.
pub fn write_checkpoint<T: Scalar, W: Write>(
    params: &GraphHeadParams<T>,
    config: &GraphHeadConfig,
    mut writer: W,
) -> Result<()> {
    let named = params.named_tensors();
    let header = CheckpointHeader {
        config_hash: crate::provenance::config_hash(config),
        config: *config,
        num_anchors: params.num_anchors(),
        input_dim: params.input_dim(),
        tensors: named.iter().map(|(name, shape, _)| TensorHeader { name: name.clone(), shape: *shape }).collect(),
    };
    let json = serde_json::to_string(&header).map_err(|e| HeadError::Checkpoint(e.to_string()))?;
    writer.write_all(CHECKPOINT_MAGIC.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.write_all(json.as_bytes())?;
    writer.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(params.num_parameters() * 4);
    for (_, _, t) in &named {
        for v in t.iter() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`] and checks that it was
/// produced under `config`.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8], config: &GraphHeadConfig) -> Result<GraphHeadParams<T>> {
    let bad = |m: &str| HeadError::Checkpoint(m.to_string());
    let first = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing magic line"))?;
    if &bytes[..first] != CHECKPOINT_MAGIC.as_bytes() {
        return Err(bad("not a checkpoint file"));
    }
    let rest = &bytes[first + 1..];
    let second = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..second]).map_err(|e| HeadError::Checkpoint(e.to_string()))?;
    if header.config_hash != crate::provenance::config_hash(config) {
        return Err(bad("checkpoint was written for a different head configuration"));
    }
    let mut params = GraphHeadParams::<T>::zeros(config, header.num_anchors, header.input_dim);
    let expected: Vec<(String, [usize; 2])> =
        params.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let found: Vec<(String, [usize; 2])> = header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
    if expected != found {
        return Err(bad("tensor layout does not match the configuration"));
    }
    let payload = &rest[second + 1..];
    if payload.len() != params.num_parameters() * 4 {
        return Err(bad("payload length does not match tensor shapes"));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = T::lit(values.next().expect("payload length checked") as f64);
        }
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<std::path::Path>,
    params: &GraphHeadParams<T>,
    config: &GraphHeadConfig,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, config, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<std::path::Path>,
    config: &GraphHeadConfig,
) -> Result<GraphHeadParams<T>> {
    read_checkpoint(&std::fs::read(path)?, config)
}
