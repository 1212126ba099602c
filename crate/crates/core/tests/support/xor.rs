//! Synthetic table whose label is the XOR of two binary categorical columns.
//! Two continuous noise columns carry no label signal; stub embeddings are
//! computed from them alone.

use bolero::dataset::{
    apply_preprocess, fit_preprocess, make_splits, ColumnKind, ColumnSchema, ProcessedDataset, RawColumn, Schema,
    TabularDataset, Target, Task,
};
use bolero::embed::{stub_embed, EmbeddingMatrix};
use bolero::graph::{build_graph, BipartiteGraph, GraphOptions};
use bolero::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ROWS: usize = 500;
pub const NOISE_COLUMNS: [&str; 2] = ["noise_0", "noise_1"];

/// Training settings for the XOR check. Validation F1 sits on a plateau near
/// chance for a few dozen epochs before the interaction is found, so the
/// default patience of 20 can stop too early.
pub fn xor_train_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 3e-3, patience: 50, seed, ..TrainConfig::default() }
}

pub fn xor_table(rows: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(rows);
    let mut b = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    let mut noise = [Vec::with_capacity(rows), Vec::with_capacity(rows)];
    for _ in 0..rows {
        let x: bool = rng.gen();
        let y: bool = rng.gen();
        a.push(Some(if x { "1" } else { "0" }.to_string()));
        b.push(Some(if y { "1" } else { "0" }.to_string()));
        labels.push(usize::from(x ^ y));
        for col in noise.iter_mut() {
            col.push(rng.gen_range(-1.0..1.0));
        }
    }
    let schema = Schema::new(
        Task::Classification,
        vec![
            ColumnSchema { name: "a".into(), kind: ColumnKind::Categorical },
            ColumnSchema { name: "b".into(), kind: ColumnKind::Categorical },
            ColumnSchema { name: NOISE_COLUMNS[0].into(), kind: ColumnKind::Continuous },
            ColumnSchema { name: NOISE_COLUMNS[1].into(), kind: ColumnKind::Continuous },
            ColumnSchema { name: "label".into(), kind: ColumnKind::Target },
        ],
    )
    .unwrap();
    let [n0, n1] = noise;
    let columns = vec![RawColumn::Categorical(a), RawColumn::Categorical(b), RawColumn::Continuous(n0), RawColumn::Continuous(n1)];
    let target = Target::Classes { labels, classes: vec!["0".into(), "1".into()] };
    TabularDataset::new(schema, columns, target).unwrap()
}

pub struct XorRun {
    pub data: ProcessedDataset,
    pub graph: BipartiteGraph,
    pub embeddings: EmbeddingMatrix,
}

/// Split, preprocess, build the graph and embed the noise columns.
pub fn prepare(table: &TabularDataset, split_seed: u64) -> XorRun {
    let split = make_splits(table, split_seed).unwrap();
    let state = fit_preprocess(&split).unwrap();
    let data = apply_preprocess(&split, &state).unwrap();
    let graph = build_graph(&data, &GraphOptions::default());
    let embeddings = stub_embed(&data.select_features(&NOISE_COLUMNS), 16, split_seed).unwrap();
    XorRun { data, graph, embeddings }
}
