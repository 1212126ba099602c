//! Slow, direct re-derivations used as references.

use bolero::dataset::{FeatureValues, ProcessedDataset, Split};
use bolero::graph::AnchorKind;

/// Rank of each value by counting: smaller values plus the average position
/// among equal ones.
pub fn naive_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p-value by listing all 2^n sign assignments.
pub fn brute_wilcoxon_p(effects: &[f64]) -> f64 {
    let e: Vec<f64> = effects.iter().copied().filter(|&x| x != 0.0).collect();
    let n = e.len();
    let ranks = naive_ranks(&e.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let observed: f64 = e.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - total / 2.0).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Same enumeration for up to ~32 untied effects, walking the sign patterns
/// in Gray-code order so each step changes one sign.
pub fn gray_code_wilcoxon_p(effects: &[f64]) -> f64 {
    let e: Vec<f64> = effects.iter().copied().filter(|&x| x != 0.0).collect();
    let n = e.len();
    let ranks = naive_ranks(&e.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let doubled: Vec<i64> = ranks.iter().map(|r| (2.0 * r).round() as i64).collect();
    let total: i64 = doubled.iter().sum();
    let observed: i64 = e.iter().zip(&doubled).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let dev = (2 * observed - total).abs();
    let mut w = 0i64;
    let mut included = vec![false; n];
    let mut extreme = u64::from((2 * w - total).abs() >= dev);
    for step in 1u64..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        included[bit] = !included[bit];
        w += if included[bit] { doubled[bit] } else { -doubled[bit] };
        extreme += u64::from((2 * w - total).abs() >= dev);
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Friedman statistic in its textbook form: rank-sum formula divided by the
/// tie correction factor.
pub fn textbook_friedman(matrix: &[Vec<f64>], higher_is_better: bool) -> f64 {
    let n = matrix.len() as f64;
    let k = matrix[0].len();
    let kf = k as f64;
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in matrix {
        let oriented: Vec<f64> = row.iter().map(|&v| if higher_is_better { -v } else { v }).collect();
        for (j, r) in naive_ranks(&oriented).into_iter().enumerate() {
            rank_sums[j] += r;
        }
        let mut seen: Vec<f64> = Vec::new();
        for &v in &oriented {
            if !seen.contains(&v) {
                seen.push(v);
                let t = oriented.iter().filter(|&&w| w == v).count() as f64;
                ties += t * t * t - t;
            }
        }
    }
    let raw = 12.0 / (n * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * n * (kf + 1.0);
    raw / (1.0 - ties / (n * (kf * kf * kf - kf)))
}

/// Inverse-variance (fixed-effect) mean and 95% half-width.
pub fn fixed_effect(effects: &[f64], variances: &[f64]) -> (f64, f64) {
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(effects).map(|(a, b)| a * b).sum::<f64>() / sw;
    (mean, 1.96 / sw.sqrt())
}

/// Whether row `r` carries anchor `kind`, read straight from the features.
/// Continuous values count when their train min-max position exceeds 1/2.
pub fn anchor_present(ds: &ProcessedDataset, kind: &AnchorKind, r: usize) -> bool {
    match *kind {
        AnchorKind::Categorical { feature, code } => match &ds.features[feature].values {
            FeatureValues::Categorical { codes, .. } => codes[r] == code,
            _ => panic!("categorical anchor on a continuous feature"),
        },
        AnchorKind::Continuous { feature } => match &ds.features[feature].values {
            FeatureValues::Continuous(v) => {
                let train: Vec<f64> =
                    v.iter().zip(&ds.split).filter(|(x, s)| **s == Split::Train && !x.is_nan()).map(|(x, _)| *x).collect();
                let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if v[r].is_nan() || train.is_empty() || hi == lo {
                    return false;
                }
                ((v[r] - lo) / (hi - lo)).min(1.0) > 0.5
            }
            _ => panic!("continuous anchor on a categorical feature"),
        },
    }
}

/// PPMI by counting rows directly; `None` when either anchor never occurs.
pub fn brute_ppmi(ds: &ProcessedDataset, a: &AnchorKind, b: &AnchorKind) -> Option<f64> {
    let n = ds.num_rows() as f64;
    let rows = 0..ds.num_rows();
    let ca = rows.clone().filter(|&r| anchor_present(ds, a, r)).count() as f64;
    let cb = rows.clone().filter(|&r| anchor_present(ds, b, r)).count() as f64;
    let cab = rows.filter(|&r| anchor_present(ds, a, r) && anchor_present(ds, b, r)).count() as f64;
    if ca == 0.0 || cb == 0.0 {
        return None;
    }
    if cab == 0.0 {
        return Some(0.0);
    }
    Some(((cab / n) / ((ca / n) * (cb / n))).ln().max(0.0))
}
