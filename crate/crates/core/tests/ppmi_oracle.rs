mod support;

use bolero::graph::{build_anchors, build_graph, count_cooccurrence, ppmi, GraphError, GraphOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::stats_oracle::brute_ppmi;
use support::toy::toy_table;

#[test]
fn ppmi_matches_direct_counting_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let ds = toy_table(&mut rng, 30, 6);
        let anchors = build_anchors(&ds);
        assert!(anchors.len() <= 6);
        let stats = count_cooccurrence(&ds, &anchors, &GraphOptions::default());
        for a in &anchors {
            for b in anchors.iter().filter(|b| b.id != a.id) {
                match (ppmi(&stats, a.id, b.id), brute_ppmi(&ds, &a.kind, &b.kind)) {
                    (Ok(got), Some(want)) => {
                        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
                        assert!(got >= 0.0);
                        assert_eq!(got, ppmi(&stats, b.id, a.id).unwrap());
                    }
                    (Err(GraphError::ZeroMarginal(_)), None) => {}
                    other => panic!("mismatch: {other:?}"),
                }
            }
        }
        // without pruning, the anchor edges are exactly the positive pairs
        let graph = build_graph(&ds, &GraphOptions { top_k: None, ..GraphOptions::default() });
        let mut expected = Vec::new();
        for a in &anchors {
            for b in anchors.iter().filter(|b| b.id > a.id) {
                if let Some(w) = brute_ppmi(&ds, &a.kind, &b.kind).filter(|w| *w > 0.0) {
                    expected.push((a.id, b.id, w));
                }
            }
        }
        assert_eq!(graph.aa_edges.len(), expected.len());
        for (e, (a, b, w)) in graph.aa_edges.iter().zip(expected) {
            assert_eq!((e.a, e.b), (a, b));
            assert!((e.weight - w).abs() <= 1e-12);
        }
    }
}
