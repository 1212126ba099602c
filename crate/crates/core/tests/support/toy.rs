//! Small random processed tables with a handful of anchors.

use bolero::dataset::{Feature, FeatureValues, ProcessedDataset, Split, Target, Task};
use rand::Rng;

/// At most `max_rows` rows and at most `max_anchors` anchors: categorical
/// columns with 2-3 codes and continuous columns (some NaN, some constant).
pub fn toy_table(rng: &mut impl Rng, max_rows: usize, max_anchors: usize) -> ProcessedDataset {
    let n = rng.gen_range(3..=max_rows);
    let mut features = Vec::new();
    let mut budget = max_anchors;
    while budget > 0 {
        if rng.gen_bool(0.5) && budget >= 2 {
            let cardinality = rng.gen_range(2..=budget.min(3)) as u32;
            let codes: Vec<u32> = (0..n).map(|_| rng.gen_range(0..cardinality)).collect();
            budget -= cardinality as usize;
            features.push(Feature {
                name: format!("c{}", features.len()),
                values: FeatureValues::Categorical { codes, cardinality },
            });
        } else {
            let constant = rng.gen_bool(0.1);
            let values: Vec<f64> = (0..n)
                .map(|_| match () {
                    _ if rng.gen_bool(0.1) => f64::NAN,
                    _ if constant => 1.5,
                    _ => rng.gen_range(-2.0..2.0),
                })
                .collect();
            budget -= 1;
            features.push(Feature { name: format!("x{}", features.len()), values: FeatureValues::Continuous(values) });
        }
        if rng.gen_bool(0.3) {
            break;
        }
    }
    let split: Vec<Split> = (0..n)
        .map(|i| if i == 0 { Split::Train } else { [Split::Train, Split::Train, Split::Val, Split::Test][rng.gen_range(0..4)] })
        .collect();
    ProcessedDataset { task: Task::Regression, features, target: Target::Values(vec![0.0; n]), split }
}
