//! Central finite differences against the analytic head gradients.

use bolero::embed::EmbeddingMatrix;
use bolero::gnnhead::{backward, forward, init_params, GraphHeadConfig, HeadTask, MessageGraph};
use bolero::graph::{Anchor, AnchorEdge, AnchorKind, BipartiteGraph, InstanceEdge};
use bolero::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub graph: BipartiteGraph,
    pub embeddings: EmbeddingMatrix,
    pub config: GraphHeadConfig,
    pub train_mode: bool,
    pub seed: u64,
}

/// Random graph with at most `max_nodes` nodes, random head shape.
pub fn random_case(seed: u64, max_nodes: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_anchors = rng.gen_range(1..=(max_nodes / 3).max(1));
    let n = rng.gen_range(2..=max_nodes - num_anchors);
    let mut ia = Vec::new();
    for i in 0..n {
        for a in 0..num_anchors {
            if rng.gen_bool(0.5) {
                let w = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.0..1.0) };
                ia.push(InstanceEdge { instance: i, anchor: a, weight: w });
            }
        }
    }
    let mut aa = Vec::new();
    for a in 0..num_anchors {
        for b in a + 1..num_anchors {
            if rng.gen_bool(0.4) {
                aa.push(AnchorEdge { a, b, weight: rng.gen_range(0.0..2.0) });
            }
        }
    }
    let anchors = (0..num_anchors)
        .map(|id| Anchor { id, column: format!("f{id}"), kind: AnchorKind::Continuous { feature: id } })
        .collect();
    let graph = BipartiteGraph { num_instances: n, anchors, ia_edges: ia, aa_edges: aa };
    let d = rng.gen_range(2..=5);
    let embeddings =
        EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
    let num_heads = rng.gen_range(1..=2);
    let hidden_dim = num_heads * rng.gen_range(2..=4);
    let task = if rng.gen_bool(0.5) {
        HeadTask::Classification { num_classes: rng.gen_range(2..=3) }
    } else {
        HeadTask::Regression
    };
    let train_mode = rng.gen_bool(0.5);
    let config = GraphHeadConfig {
        hidden_dim,
        num_layers: rng.gen_range(1..=3),
        num_heads,
        dropout: if train_mode { 0.25 } else { 0.0 },
        task,
    };
    Case { graph, embeddings, config, train_mode, seed: rng.gen() }
}

pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`.
///
/// Central differences at `h = 1e-5` in `f64` carry an absolute roundoff of
/// roughly `1e-11`, so gradients below `1e-6` are compared on that scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every parameter gradient of the linear functional
/// `L = sum(c * predictions)` with central differences at step `h`.
pub fn check_case(case: &Case, h: f64) -> GradReport {
    let mg = MessageGraph::new(&case.graph);
    let mut params = init_params::<f64>(&case.config, &case.graph, case.embeddings.d(), case.seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0xabcdef);
    let out_dim = params.output.output_dim();
    let coeff = Matrix::from_fn(case.graph.num_instances, out_dim, |_, _| rng.gen_range(-1.0..1.0));
    let loss = |p: &bolero::gnnhead::GraphHeadParams<f64>| -> f64 {
        let (pred, _) = forward(p, &mg, &case.embeddings, &case.config, case.train_mode, case.seed).unwrap();
        pred.as_slice().iter().zip(coeff.as_slice()).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = forward(&params, &mg, &case.embeddings, &case.config, case.train_mode, case.seed).unwrap();
    let grads = backward(&params, &mg, &case.embeddings, &case.config, &cache, &coeff).unwrap();
    let analytic: Vec<(String, Vec<f64>)> =
        grads.params.named_tensors().into_iter().map(|(n, _, t)| (n, t.to_vec())).collect();

    let mut report = GradReport { checked: 0, max_rel_error: 0.0, worst: String::new() };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let original = params.tensors_mut()[ti][k];
            params.tensors_mut()[ti][k] = original + h;
            let plus = loss(&params);
            params.tensors_mut()[ti][k] = original - h;
            let minus = loss(&params);
            params.tensors_mut()[ti][k] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(grad[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{k}]: analytic {} numeric {numeric}", grad[k]);
            }
        }
    }
    report
}
