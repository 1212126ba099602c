//! Cross-dataset comparison: median aggregation over seeds, paired
//! per-dataset effects, Friedman and Wilcoxon tests, random-effects pooling
//! and leaderboard accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::Task;
use crate::train::ScoreRecord;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("no scores for method `{method}` on dataset `{dataset}`")]
    MissingCell { method: String, dataset: String },
    #[error("method `{method}` is missing dataset `{dataset}` that other methods cover")]
    CoverageMismatch { method: String, dataset: String },
    #[error("methods `{a}` and `{b}` ran different seeds on dataset `{dataset}`")]
    SeedMismatch { a: String, b: String, dataset: String },
    #[error("RMSE must be positive, got {value} for `{method}` on `{dataset}`")]
    NonPositiveRmse { method: String, dataset: String, value: f64 },
    #[error("need at least 5 non-zero effects, got {0}")]
    TooFewNonZero(usize),
    #[error("incomplete score matrix: {0}")]
    IncompleteMatrix(String),
    #[error("random-effects pooling needs at least 2 datasets with positive finite variances")]
    DegenerateVariances,
    #[error("dataset `{dataset}` appears with conflicting tasks")]
    TaskConflict { dataset: String },
    #[error("duplicate score for `{method}` on `{dataset}` seed {seed}")]
    DuplicateEntry { method: String, dataset: String, seed: u64 },
    #[error("need at least 2 methods, got {0}")]
    TooFewMethods(usize),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Floor applied to per-dataset effect variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest sample size that gets the exact signed-rank distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;
const Z_95: f64 = 1.96;

/// Run-level scores keyed by method, dataset and seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    cells: BTreeMap<(String, String), BTreeMap<u64, f64>>,
    tasks: BTreeMap<String, Task>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: &str, dataset: &str, seed: u64, task: Task, score: f64) -> Result<()> {
        match self.tasks.get(dataset) {
            Some(t) if *t != task => return Err(StatsError::TaskConflict { dataset: dataset.to_string() }),
            _ => {
                self.tasks.insert(dataset.to_string(), task);
            }
        }
        let cell = self.cells.entry((method.to_string(), dataset.to_string())).or_default();
        if cell.insert(seed, score).is_some() {
            return Err(StatsError::DuplicateEntry { method: method.into(), dataset: dataset.into(), seed });
        }
        Ok(())
    }

    pub fn push(&mut self, record: &ScoreRecord) -> Result<()> {
        self.insert(&record.method, &record.dataset, record.seed, record.task, record.metric_value)
    }

    /// Appends every record of a JSONL file. Blank lines are skipped.
    pub fn read_jsonl(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ScoreRecord = serde_json::from_str(&line).map_err(|e| StatsError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            self.push(&record)?;
        }
        Ok(())
    }

    pub fn from_jsonl_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut table = Self::new();
        for p in paths {
            table.read_jsonl(p)?;
        }
        Ok(table)
    }

    pub fn methods(&self) -> Vec<String> {
        self.cells.keys().map(|(m, _)| m.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn datasets(&self, task: Task) -> Vec<String> {
        self.tasks.iter().filter(|(_, t)| **t == task).map(|(d, _)| d.clone()).collect()
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.tasks.values().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn task_of(&self, dataset: &str) -> Option<Task> {
        self.tasks.get(dataset).copied()
    }

    pub fn seeds(&self, method: &str, dataset: &str) -> Option<&BTreeMap<u64, f64>> {
        self.cells.get(&(method.to_string(), dataset.to_string()))
    }

    /// Every method must cover every dataset.
    pub fn check_coverage(&self) -> Result<()> {
        for m in self.methods() {
            for d in self.tasks.keys() {
                if self.seeds(&m, d).map_or(true, |s| s.is_empty()) {
                    return Err(StatsError::CoverageMismatch { method: m, dataset: d.clone() });
                }
            }
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Per-(method, dataset) medians over seeds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MedianTable {
    cells: BTreeMap<(String, String), f64>,
}

impl MedianTable {
    pub fn get(&self, method: &str, dataset: &str) -> Result<f64> {
        self.cells.get(&(method.to_string(), dataset.to_string())).copied().ok_or_else(|| StatsError::MissingCell {
            method: method.to_string(),
            dataset: dataset.to_string(),
        })
    }
}

pub fn aggregate_median(scores: &ScoreTable) -> Result<MedianTable> {
    let mut cells = BTreeMap::new();
    for ((m, d), seeds) in &scores.cells {
        let values: Vec<f64> = seeds.values().copied().collect();
        let med = median(&values).ok_or_else(|| StatsError::MissingCell { method: m.clone(), dataset: d.clone() })?;
        cells.insert((m.clone(), d.clone()), med);
    }
    Ok(MedianTable { cells })
}

/// Paired effects of `method_a` over `method_b`, positive when A is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub method_a: String,
    pub method_b: String,
    pub task: Task,
    pub datasets: Vec<String>,
    pub effects: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Effect of score `a` over score `b`: a difference for F1, a log-ratio
/// `ln b - ln a` for RMSE.
fn effect(task: Task, a: f64, b: f64) -> f64 {
    match task {
        Task::Classification => a - b,
        Task::Regression => b.ln() - a.ln(),
    }
}

fn sample_variance(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    Some(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
}

/// Per-dataset effects from median scores, with variance estimated from the
/// per-seed paired effects (sample variance over the seed count).
pub fn pair_effects(scores: &ScoreTable, method_a: &str, method_b: &str, task: Task) -> Result<EffectTable> {
    let datasets = scores.datasets(task);
    let mut effects = Vec::with_capacity(datasets.len());
    let mut variances = Vec::with_capacity(datasets.len());
    for d in &datasets {
        let missing = |m: &str| StatsError::CoverageMismatch { method: m.to_string(), dataset: d.clone() };
        let sa = scores.seeds(method_a, d).filter(|s| !s.is_empty()).ok_or_else(|| missing(method_a))?;
        let sb = scores.seeds(method_b, d).filter(|s| !s.is_empty()).ok_or_else(|| missing(method_b))?;
        if !sa.keys().eq(sb.keys()) {
            return Err(StatsError::SeedMismatch { a: method_a.into(), b: method_b.into(), dataset: d.clone() });
        }
        if task == Task::Regression {
            for (m, seeds) in [(method_a, sa), (method_b, sb)] {
                if let Some(&v) = seeds.values().find(|v| !(**v > 0.0)) {
                    return Err(StatsError::NonPositiveRmse { method: m.into(), dataset: d.clone(), value: v });
                }
            }
        }
        let va: Vec<f64> = sa.values().copied().collect();
        let vb: Vec<f64> = sb.values().copied().collect();
        effects.push(effect(task, median(&va).unwrap(), median(&vb).unwrap()));
        let paired: Vec<f64> = va.iter().zip(&vb).map(|(&a, &b)| effect(task, a, b)).collect();
        let v = sample_variance(&paired).map_or(0.0, |s| s / paired.len() as f64);
        variances.push(v.max(VARIANCE_FLOOR));
    }
    Ok(EffectTable { method_a: method_a.into(), method_b: method_b.into(), task, datasets, effects, variances })
}

/// 1-based ranks in ascending order, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of groups of equal values (only groups larger than one).
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        if j > i {
            groups.push(j - i + 1);
        }
        i = j + 1;
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive effects.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of non-zero effects.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Two-sided signed-rank test of the effects against a zero median.
///
/// Zero effects are dropped. Up to [`WILCOXON_EXACT_MAX`] remaining effects
/// the null distribution is counted exactly (ties included); above that the
/// tie-corrected normal approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(effects: &[f64]) -> Result<WilcoxonResult> {
    let nonzero: Vec<f64> = effects.iter().copied().filter(|&e| e != 0.0).collect();
    let n = nonzero.len();
    if n < 5 {
        return Err(StatsError::TooFewNonZero(n));
    }
    let abs: Vec<f64> = nonzero.iter().map(|e| e.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(e, _)| **e > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX {
        // Average ranks are multiples of 1/2; doubling makes them integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = ((2.0 * w_plus).round() as i64 * 2 - total as i64).abs();
        let extreme: f64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as i64 * 2 - total as i64).abs() >= observed)
            .map(|(_, c)| c)
            .sum();
        let p = (extreme / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult { statistic: w_plus, p_value: p, n, method: WilcoxonMethod::Exact });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_groups(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(WilcoxonResult { statistic: w_plus, p_value: p, n, method: WilcoxonMethod::Normal })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub methods: usize,
    pub datasets: usize,
    /// Mean rank per method, rank 1 being best.
    pub mean_ranks: Vec<f64>,
}

/// Friedman test over a datasets × methods score matrix, tie-corrected.
pub fn friedman_test(scores: &[Vec<f64>], higher_is_better: bool) -> Result<FriedmanResult> {
    let n = scores.len();
    let k = scores.first().map_or(0, |r| r.len());
    if k < 3 || n < 2 {
        return Err(StatsError::IncompleteMatrix(format!("need k >= 3 methods and N >= 2 datasets, got k={k}, N={n}")));
    }
    if scores.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
        return Err(StatsError::IncompleteMatrix("rows differ in length or contain non-finite scores".into()));
    }
    let mut rank_sums = vec![0.0; k];
    let mut sum_sq = 0.0;
    for row in scores {
        let oriented: Vec<f64> = row.iter().map(|&v| if higher_is_better { -v } else { v }).collect();
        for (j, r) in average_ranks(&oriented).into_iter().enumerate() {
            rank_sums[j] += r;
            sum_sq += r * r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let centre = nf * (kf + 1.0) / 2.0;
    let numerator = (kf - 1.0) * rank_sums.iter().map(|r| (r - centre) * (r - centre)).sum::<f64>();
    let denominator = sum_sq - nf * kf * (kf + 1.0) * (kf + 1.0) / 4.0;
    let mean_ranks = rank_sums.iter().map(|r| r / nf).collect();
    if denominator <= 1e-12 * sum_sq {
        return Ok(FriedmanResult { statistic: 0.0, p_value: 1.0, methods: k, datasets: n, mean_ranks });
    }
    let statistic = numerator / denominator;
    let chi2 = ChiSquared::new(kf - 1.0).expect("k >= 3 gives positive degrees of freedom");
    Ok(FriedmanResult { statistic, p_value: chi2.sf(statistic), methods: k, datasets: n, mean_ranks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAnalysisResult {
    pub pooled: f64,
    pub ci_half_width: f64,
    pub tau2: f64,
    pub q: f64,
    /// Random-effects weights `1 / (v_i + tau2)`.
    pub weights: Vec<f64>,
}

/// DerSimonian–Laird random-effects pooling with a 95% normal interval.
pub fn dersimonian_laird(effects: &[f64], variances: &[f64]) -> Result<MetaAnalysisResult> {
    if effects.len() < 2
        || effects.len() != variances.len()
        || variances.iter().any(|v| !(v.is_finite() && *v > 0.0))
        || effects.iter().any(|d| !d.is_finite())
    {
        return Err(StatsError::DegenerateVariances);
    }
    let n = effects.len() as f64;
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let fixed = w.iter().zip(effects).map(|(wi, d)| wi * d).sum::<f64>() / sw;
    let q: f64 = w.iter().zip(effects).map(|(wi, d)| wi * (d - fixed) * (d - fixed)).sum();
    let tau2 = ((q - (n - 1.0)) / (sw - sw2 / sw)).max(0.0);
    let weights: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sws: f64 = weights.iter().sum();
    let pooled = weights.iter().zip(effects).map(|(wi, d)| wi * d).sum::<f64>() / sws;
    Ok(MetaAnalysisResult { pooled, ci_half_width: Z_95 * (1.0 / sws).sqrt(), tau2, q, weights })
}

/// Percent RMSE reduction equivalent to a median log-ratio.
pub fn rmse_reduction_percent(median_theta: f64) -> f64 {
    100.0 * (1.0 - (-median_theta).exp())
}

/// Inverse of [`rmse_reduction_percent`].
pub fn theta_from_reduction_percent(percent: f64) -> f64 {
    -(1.0 - percent / 100.0).ln()
}

/// Credit of score `a` against score `b`: 1, 0.5 on a tie, 0.
pub fn win_credit(task: Task, a: f64, b: f64) -> f64 {
    let better = if task.higher_is_better() { a > b } else { a < b };
    if a == b {
        0.5
    } else if better {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub task: Task,
    pub method_a: String,
    pub method_b: String,
    pub datasets: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// Win credit of A; the credit of B is `datasets - credit_a`.
    pub credit_a: f64,
    pub credit_b: f64,
    pub wilcoxon: Option<WilcoxonResult>,
    pub meta: Option<MetaAnalysisResult>,
    pub median_effect: f64,
}

impl PairwiseRow {
    /// Significant when the test rejects at `alpha` and the pooled effect favours A.
    pub fn significant_win(&self, alpha: f64) -> bool {
        matches!((&self.wilcoxon, &self.meta), (Some(w), Some(m)) if w.p_value < alpha && m.pooled > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub task: Task,
    pub method: String,
    pub win_rate_percent: f64,
    pub significant_wins: usize,
    pub opponents: usize,
    /// F1 points for classification, percent RMSE reduction for regression.
    pub median_effect: f64,
}

impl LeaderboardRow {
    pub fn significant_wins_label(&self) -> String {
        format!("{}/{}", self.significant_wins, self.opponents)
    }
}

/// Everything reported for the datasets of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: Task,
    pub alpha: f64,
    /// Absent with fewer than 3 methods or 2 datasets.
    pub friedman: Option<FriedmanResult>,
    pub leaderboard: Vec<LeaderboardRow>,
    pub pairs: Vec<PairwiseRow>,
}

pub fn pairwise(scores: &ScoreTable, medians: &MedianTable, a: &str, b: &str, task: Task) -> Result<PairwiseRow> {
    let table = pair_effects(scores, a, b, task)?;
    let (mut wins, mut ties, mut losses, mut credit_a, mut credit_b) = (0, 0, 0, 0.0, 0.0);
    for d in &table.datasets {
        let (sa, sb) = (medians.get(a, d)?, medians.get(b, d)?);
        let c = win_credit(task, sa, sb);
        credit_a += c;
        credit_b += win_credit(task, sb, sa);
        match c {
            c if c == 1.0 => wins += 1,
            c if c == 0.0 => losses += 1,
            _ => ties += 1,
        }
    }
    let wilcoxon = match wilcoxon_signed_rank(&table.effects) {
        Ok(w) => Some(w),
        Err(StatsError::TooFewNonZero(_)) => None,
        Err(e) => return Err(e),
    };
    let meta = match dersimonian_laird(&table.effects, &table.variances) {
        Ok(m) => Some(m),
        Err(StatsError::DegenerateVariances) => None,
        Err(e) => return Err(e),
    };
    Ok(PairwiseRow {
        task,
        method_a: a.into(),
        method_b: b.into(),
        datasets: table.datasets.len(),
        wins,
        ties,
        losses,
        credit_a,
        credit_b,
        wilcoxon,
        meta,
        median_effect: median(&table.effects).unwrap_or(f64::NAN),
    })
}

/// Friedman gate, all ordered pairs, and the leaderboard, per task.
pub fn compare(scores: &ScoreTable, alpha: f64) -> Result<Vec<Comparison>> {
    let methods = scores.methods();
    if methods.len() < 2 {
        return Err(StatsError::TooFewMethods(methods.len()));
    }
    scores.check_coverage()?;
    let medians = aggregate_median(scores)?;
    let mut out = Vec::new();
    for task in scores.tasks() {
        let datasets = scores.datasets(task);
        let friedman = if methods.len() >= 3 && datasets.len() >= 2 {
            let matrix: Vec<Vec<f64>> = datasets
                .iter()
                .map(|d| methods.iter().map(|m| medians.get(m, d)).collect::<Result<Vec<f64>>>())
                .collect::<Result<_>>()?;
            Some(friedman_test(&matrix, task.higher_is_better())?)
        } else {
            None
        };
        let mut pairs = Vec::new();
        for a in &methods {
            for b in methods.iter().filter(|b| *b != a) {
                pairs.push(pairwise(scores, &medians, a, b, task)?);
            }
        }
        let leaderboard = methods
            .iter()
            .map(|m| {
                let mine: Vec<&PairwiseRow> = pairs.iter().filter(|p| &p.method_a == m).collect();
                let credit: f64 = mine.iter().map(|p| p.credit_a).sum();
                let comparisons: usize = mine.iter().map(|p| p.datasets).sum();
                let mut all_effects = Vec::new();
                for p in &mine {
                    all_effects.extend(pair_effects(scores, m, &p.method_b, task)?.effects);
                }
                let med = median(&all_effects).unwrap_or(f64::NAN);
                Ok(LeaderboardRow {
                    task,
                    method: m.clone(),
                    win_rate_percent: if comparisons == 0 { f64::NAN } else { 100.0 * credit / comparisons as f64 },
                    significant_wins: mine.iter().filter(|p| p.significant_win(alpha)).count(),
                    opponents: mine.len(),
                    median_effect: match task {
                        Task::Classification => med,
                        Task::Regression => rmse_reduction_percent(med),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Comparison { task, alpha, friedman, leaderboard, pairs });
    }
    Ok(out)
}

/// Leaderboard rows of every task.
pub fn leaderboard(scores: &ScoreTable, alpha: f64) -> Result<Vec<LeaderboardRow>> {
    Ok(compare(scores, alpha)?.into_iter().flat_map(|c| c.leaderboard).collect())
}
