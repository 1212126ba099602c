//! Static bipartite instance/anchor graph.
//!
//! Anchors are one node per categorical (column, code) pair and one node per
//! continuous column. Instances link to the anchors of their categorical
//! cells with weight 1 and to every continuous anchor with the train-fitted
//! min-max scaled cell value. Anchor pairs that co-occur across rows more
//! often than independence predicts are linked with their PPMI.
//!
//! The graph is built over all splits at once and never reads targets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureValues, ProcessedDataset, Split};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("anchor {0} never occurs")]
    ZeroMarginal(usize),
    #[error("anchor index {0} out of range")]
    UnknownAnchor(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorKind {
    /// `feature` indexes `ProcessedDataset::features`.
    Categorical { feature: usize, code: u32 },
    Continuous { feature: usize },
}

impl AnchorKind {
    pub fn feature(&self) -> usize {
        match *self {
            AnchorKind::Categorical { feature, .. } | AnchorKind::Continuous { feature } => feature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: usize,
    pub column: String,
    #[serde(flatten)]
    pub kind: AnchorKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceEdge {
    pub instance: usize,
    pub anchor: usize,
    pub weight: f64,
}

/// Undirected anchor pair with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub num_instances: usize,
    pub anchors: Vec<Anchor>,
    pub ia_edges: Vec<InstanceEdge>,
    pub aa_edges: Vec<AnchorEdge>,
}

impl BipartiteGraph {
    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_instances + self.anchors.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    /// PPMI neighbours kept per anchor before symmetrization; `None` keeps all.
    pub top_k: Option<usize>,
    /// A continuous anchor occurs in a row when its edge weight exceeds this.
    pub continuous_threshold: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { top_k: Some(16), continuous_threshold: 0.5 }
    }
}

/// Categorical anchors for every code present in any split (code order), one
/// anchor per continuous column, all in feature order.
pub fn build_anchors(dataset: &ProcessedDataset) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    for (feature, f) in dataset.features.iter().enumerate() {
        match &f.values {
            FeatureValues::Categorical { codes, .. } => {
                let present: BTreeSet<u32> = codes.iter().copied().collect();
                for code in present {
                    anchors.push(Anchor {
                        id: anchors.len(),
                        column: f.name.clone(),
                        kind: AnchorKind::Categorical { feature, code },
                    });
                }
            }
            FeatureValues::Continuous(_) => {
                anchors.push(Anchor { id: anchors.len(), column: f.name.clone(), kind: AnchorKind::Continuous { feature } });
            }
        }
    }
    anchors
}

/// Min-max scaling fitted on training rows, clamped to `[0, 1]`. A constant
/// column maps every value to 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64], split: &[Split]) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (&v, &s) in values.iter().zip(split) {
            if s == Split::Train && !v.is_nan() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if min > max {
            // no training values at all
            min = 0.0;
            max = 0.0;
        }
        Self { min, max }
    }

    pub fn scale(&self, x: f64) -> Option<f64> {
        if x.is_nan() {
            return None;
        }
        if self.max <= self.min {
            return Some(0.5);
        }
        Some(((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0))
    }
}

/// Anchor id for each (feature, code); `None` for continuous features.
struct AnchorIndex {
    categorical: Vec<Option<BTreeMap<u32, usize>>>,
    continuous: Vec<Option<usize>>,
}

impl AnchorIndex {
    fn new(num_features: usize, anchors: &[Anchor]) -> Self {
        let mut categorical = vec![None; num_features];
        let mut continuous = vec![None; num_features];
        for a in anchors {
            match a.kind {
                AnchorKind::Categorical { feature, code } => {
                    categorical[feature].get_or_insert_with(BTreeMap::new).insert(code, a.id);
                }
                AnchorKind::Continuous { feature } => continuous[feature] = Some(a.id),
            }
        }
        Self { categorical, continuous }
    }
}

/// Instance-anchor edges, instance-major and in anchor order within a row.
pub fn build_instance_edges(dataset: &ProcessedDataset, anchors: &[Anchor]) -> Vec<InstanceEdge> {
    let index = AnchorIndex::new(dataset.features.len(), anchors);
    let scalers: Vec<Option<MinMax>> = dataset
        .features
        .iter()
        .map(|f| match &f.values {
            FeatureValues::Continuous(v) => Some(MinMax::fit(v, &dataset.split)),
            FeatureValues::Categorical { .. } => None,
        })
        .collect();
    let n = dataset.num_rows();
    let mut edges = Vec::new();
    for instance in 0..n {
        let start = edges.len();
        for (feature, f) in dataset.features.iter().enumerate() {
            match &f.values {
                FeatureValues::Categorical { codes, .. } => {
                    let anchor = index.categorical[feature]
                        .as_ref()
                        .and_then(|m| m.get(&codes[instance]))
                        .copied();
                    if let Some(anchor) = anchor {
                        edges.push(InstanceEdge { instance, anchor, weight: 1.0 });
                    }
                }
                FeatureValues::Continuous(values) => {
                    let scaled = scalers[feature].as_ref().and_then(|s| s.scale(values[instance]));
                    if let (Some(anchor), Some(weight)) = (index.continuous[feature], scaled) {
                        edges.push(InstanceEdge { instance, anchor, weight });
                    }
                }
            }
        }
        edges[start..].sort_by_key(|e| e.anchor);
    }
    edges
}

/// Marginal and joint anchor occurrence counts over `rows` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceStats {
    pub rows: u64,
    pub counts: Vec<u64>,
    /// Keyed by `(a, b)` with `a < b`; pairs never seen together are absent.
    pub joint: BTreeMap<(usize, usize), u64>,
}

impl CooccurrenceStats {
    pub fn joint_count(&self, a: usize, b: usize) -> u64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.joint.get(&key).copied().unwrap_or(0)
    }

    pub fn p(&self, a: usize) -> f64 {
        self.counts[a] as f64 / self.rows as f64
    }

    pub fn p_joint(&self, a: usize, b: usize) -> f64 {
        self.joint_count(a, b) as f64 / self.rows as f64
    }
}

/// Anchors occurring in each row: categorical edges always, continuous edges
/// only above `threshold`.
fn occurrences(n: usize, anchors: &[Anchor], edges: &[InstanceEdge], threshold: f64) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); n];
    for e in edges {
        let occurs = match anchors[e.anchor].kind {
            AnchorKind::Categorical { .. } => e.weight > 0.0,
            AnchorKind::Continuous { .. } => e.weight > threshold,
        };
        if occurs {
            rows[e.instance].push(e.anchor);
        }
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    rows
}

fn count_from_edges(n: usize, anchors: &[Anchor], edges: &[InstanceEdge], threshold: f64) -> CooccurrenceStats {
    let mut counts = vec![0u64; anchors.len()];
    let mut joint = BTreeMap::new();
    for row in occurrences(n, anchors, edges, threshold) {
        for (i, &a) in row.iter().enumerate() {
            counts[a] += 1;
            for &b in &row[i + 1..] {
                *joint.entry((a, b)).or_insert(0u64) += 1;
            }
        }
    }
    CooccurrenceStats { rows: n as u64, counts, joint }
}

/// Co-occurrence counts over all rows of all splits.
pub fn count_cooccurrence(dataset: &ProcessedDataset, anchors: &[Anchor], options: &GraphOptions) -> CooccurrenceStats {
    let edges = build_instance_edges(dataset, anchors);
    count_from_edges(dataset.num_rows(), anchors, &edges, options.continuous_threshold)
}

/// `max(0, ln(p(a,b) / (p(a) p(b))))`, zero when the pair never co-occurs.
pub fn ppmi(stats: &CooccurrenceStats, a: usize, b: usize) -> Result<f64> {
    for x in [a, b] {
        match stats.counts.get(x) {
            None => return Err(GraphError::UnknownAnchor(x)),
            Some(0) => return Err(GraphError::ZeroMarginal(x)),
            Some(_) => {}
        }
    }
    let joint = stats.joint_count(a, b);
    if joint == 0 {
        return Ok(0.0);
    }
    let pmi = (stats.p_joint(a, b) / (stats.p(a) * stats.p(b))).ln();
    Ok(pmi.max(0.0))
}

/// Positive-PPMI anchor pairs, pruned to each anchor's `top_k` strongest
/// neighbours (ties broken by lower id) and symmetrized by union.
pub fn anchor_edges(stats: &CooccurrenceStats, top_k: Option<usize>) -> Vec<AnchorEdge> {
    let num_anchors = stats.counts.len();
    let mut neighbours: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_anchors];
    let mut weights = BTreeMap::new();
    for &(a, b) in stats.joint.keys() {
        let w = ppmi(stats, a, b).expect("co-occurring anchors have nonzero marginals");
        if w > 0.0 {
            neighbours[a].push((b, w));
            neighbours[b].push((a, w));
            weights.insert((a, b), w);
        }
    }
    let mut keep = BTreeSet::new();
    for (a, list) in neighbours.iter_mut().enumerate() {
        list.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let k = top_k.unwrap_or(list.len()).min(list.len());
        for &(b, _) in &list[..k] {
            keep.insert(if a < b { (a, b) } else { (b, a) });
        }
    }
    keep.into_iter().map(|(a, b)| AnchorEdge { a, b, weight: weights[&(a, b)] }).collect()
}

pub fn build_graph(dataset: &ProcessedDataset, options: &GraphOptions) -> BipartiteGraph {
    let anchors = build_anchors(dataset);
    let ia_edges = build_instance_edges(dataset, &anchors);
    let stats = count_from_edges(dataset.num_rows(), &anchors, &ia_edges, options.continuous_threshold);
    let aa_edges = anchor_edges(&stats, options.top_k);
    BipartiteGraph { num_instances: dataset.num_rows(), anchors, ia_edges, aa_edges }
}

/// Rounds to 9 significant digits.
fn nine_digits(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config_hash: Option<String>,
    num_instances: usize,
    anchors: Vec<Anchor>,
    ia_edges: Vec<(usize, usize, f64)>,
    aa_edges: Vec<(usize, usize, f64)>,
}

impl BipartiteGraph {
    /// Serializes as `{num_instances, anchors, ia_edges, aa_edges}` with
    /// edges as `[source, target, weight]` triples and weights rounded to 9
    /// significant digits.
    pub fn write_json<W: Write>(&self, writer: W, config_hash: Option<&str>) -> Result<()> {
        let doc = GraphJson {
            config_hash: config_hash.map(str::to_string),
            num_instances: self.num_instances,
            anchors: self.anchors.clone(),
            ia_edges: self.ia_edges.iter().map(|e| (e.instance, e.anchor, nine_digits(e.weight))).collect(),
            aa_edges: self.aa_edges.iter().map(|e| (e.a, e.b, nine_digits(e.weight))).collect(),
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphJson = serde_json::from_str(text)?;
        Ok(Self {
            num_instances: doc.num_instances,
            anchors: doc.anchors,
            ia_edges: doc.ia_edges.into_iter().map(|(instance, anchor, weight)| InstanceEdge { instance, anchor, weight }).collect(),
            aa_edges: doc.aa_edges.into_iter().map(|(a, b, weight)| AnchorEdge { a, b, weight }).collect(),
        })
    }
}
