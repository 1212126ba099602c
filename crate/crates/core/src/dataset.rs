//! Tabular ingestion, deterministic 80/10/10 splits and the train-fitted
//! preprocessing pipeline.
//!
//! Categorical values are label-encoded with code `0` reserved for a missing
//! value; continuous columns are median-imputed and standardized; ISO dates
//! are expanded into year, month, day and day-of-week continuous columns.
//! Every statistic is fitted on the training split only.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Code reserved for a missing categorical value.
pub const MISSING_CODE: u32 = 0;

/// Lower bound applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("column `{0}` is missing from the file header or the schema")]
    MissingColumn(String),
    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("row {row}: invalid target value `{value}`")]
    InvalidTarget { row: usize, value: String },
    #[error("need at least 10 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("dataset has no split assignment")]
    NotSplit,
    #[error("training split is empty")]
    EmptyTrain,
    #[error("column `{0}` has no non-missing training values")]
    AllMissingColumn(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    #[serde(alias = "date")]
    DateLike,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Classification => "macro_f1",
            Task::Regression => "rmse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Task::Classification)
    }
}

/// Column list plus task type; the JSON sidecar of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub task: Task,
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(task: Task, columns: Vec<ColumnSchema>) -> Result<Self> {
        let schema = Self { task, columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema =
            serde_json::from_str(&text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(col.name.clone()));
            }
        }
        let targets = self.columns.iter().filter(|c| c.kind == ColumnKind::Target).count();
        if targets != 1 {
            return Err(DatasetError::Schema(format!("expected exactly one target column, found {targets}")));
        }
        Ok(())
    }

    pub fn target(&self) -> &ColumnSchema {
        self.columns.iter().find(|c| c.kind == ColumnKind::Target).expect("validated schema has a target")
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Feature cells as read from the file, before any fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Categorical(Vec<Option<String>>),
    Continuous(Vec<f64>),
    Date(Vec<Option<String>>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            RawColumn::Categorical(v) | RawColumn::Date(v) => v.len(),
            RawColumn::Continuous(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            RawColumn::Categorical(v) => RawColumn::Categorical(rows.iter().map(|&r| v[r].clone()).collect()),
            RawColumn::Date(v) => RawColumn::Date(rows.iter().map(|&r| v[r].clone()).collect()),
            RawColumn::Continuous(v) => RawColumn::Continuous(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Per-row targets: class indices into `classes`, or real values.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes { labels: Vec<usize>, classes: Vec<String> },
    Values(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Target::Classes { classes, .. } => Some(classes.len()),
            Target::Values(_) => None,
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            Target::Classes { labels, classes } => Target::Classes {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: classes.clone(),
            },
            Target::Values(v) => Target::Values(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// A loaded table: schema-ordered feature columns, targets, and (after
/// [`make_splits`]) a split per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub schema: Schema,
    pub columns: Vec<(ColumnSchema, RawColumn)>,
    pub target: Target,
    pub split: Option<Vec<Split>>,
}

impl TabularDataset {
    pub fn new(schema: Schema, columns: Vec<RawColumn>, target: Target) -> Result<Self> {
        schema.validate()?;
        let feature_schemas: Vec<ColumnSchema> = schema.features().cloned().collect();
        if feature_schemas.len() != columns.len() {
            return Err(DatasetError::SchemaMismatch(format!(
                "schema lists {} feature columns, got {}",
                feature_schemas.len(),
                columns.len()
            )));
        }
        let n = target.len();
        for (cs, col) in feature_schemas.iter().zip(&columns) {
            let kind_ok = matches!(
                (cs.kind, col),
                (ColumnKind::Categorical, RawColumn::Categorical(_))
                    | (ColumnKind::Continuous, RawColumn::Continuous(_))
                    | (ColumnKind::DateLike, RawColumn::Date(_))
            );
            if !kind_ok {
                return Err(DatasetError::SchemaMismatch(format!("column `{}` has the wrong kind", cs.name)));
            }
            if col.len() != n {
                return Err(DatasetError::SchemaMismatch(format!("column `{}` has {} rows, expected {n}", cs.name, col.len())));
            }
        }
        let task_ok = matches!(
            (schema.task, &target),
            (Task::Classification, Target::Classes { .. }) | (Task::Regression, Target::Values(_))
        );
        if !task_ok {
            return Err(DatasetError::SchemaMismatch("target type does not match task".into()));
        }
        Ok(Self { columns: feature_schemas.into_iter().zip(columns).collect(), schema, target, split: None })
    }

    pub fn num_rows(&self) -> usize {
        self.target.len()
    }

    pub fn task(&self) -> Task {
        self.schema.task
    }

    pub fn splits(&self) -> Result<&[Split]> {
        self.split.as_deref().ok_or(DatasetError::NotSplit)
    }

    /// Rows in the given order, split assignment carried along.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|(s, c)| (s.clone(), c.select(rows))).collect(),
            target: self.target.select(rows),
            split: self.split.as_ref().map(|s| rows.iter().map(|&r| s[r]).collect()),
        }
    }
}

fn parse_continuous(cell: &str) -> f64 {
    let t = cell.trim();
    if t.is_empty() {
        return f64::NAN;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite()).unwrap_or(f64::NAN)
}

fn optional_text(cell: &str) -> Option<String> {
    if cell.trim().is_empty() {
        None
    } else {
        Some(cell.to_string())
    }
}

/// Sorted class vocabulary: numeric order when every label parses as a
/// number, lexicographic otherwise.
fn class_vocabulary(raw: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut classes: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = classes.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(classes).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        classes = paired.into_iter().map(|(_, c)| c).collect();
    }
    classes
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TabularDataset> {
    let file = File::open(path)?;
    read_csv(file, schema)
}

/// Parses comma-separated, RFC-4180 quoted UTF-8 text with a header row.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<TabularDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return Err(e.into()),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DatasetError::EmptyFile);
    }
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if position.insert(name.as_str(), i).is_some() {
            return Err(DatasetError::DuplicateColumn(name.clone()));
        }
    }
    for name in &header {
        if !schema.columns.iter().any(|c| &c.name == name) {
            return Err(DatasetError::MissingColumn(name.clone()));
        }
    }
    for col in &schema.columns {
        if !position.contains_key(col.name.as_str()) {
            return Err(DatasetError::MissingColumn(col.name.clone()));
        }
    }

    let features: Vec<&ColumnSchema> = schema.features().collect();
    let mut columns: Vec<RawColumn> = features
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
            ColumnKind::Continuous => RawColumn::Continuous(Vec::new()),
            ColumnKind::DateLike => RawColumn::Date(Vec::new()),
            ColumnKind::Target => unreachable!("features exclude the target"),
        })
        .collect();
    let target_pos = position[schema.target().name.as_str()];
    let mut raw_target = Vec::new();

    for record in rdr.records() {
        let record = record?;
        for (col, cs) in columns.iter_mut().zip(&features) {
            let cell = record.get(position[cs.name.as_str()]).unwrap_or("");
            match col {
                RawColumn::Categorical(v) => v.push(optional_text(cell)),
                RawColumn::Date(v) => v.push(optional_text(cell)),
                RawColumn::Continuous(v) => v.push(parse_continuous(cell)),
            }
        }
        raw_target.push(record.get(target_pos).unwrap_or("").trim().to_string());
    }
    if raw_target.is_empty() {
        return Err(DatasetError::EmptyFile);
    }

    let target = match schema.task {
        Task::Classification => {
            if let Some(row) = raw_target.iter().position(|t| t.is_empty()) {
                return Err(DatasetError::InvalidTarget { row, value: String::new() });
            }
            let classes = class_vocabulary(&raw_target);
            let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
            let labels = raw_target.iter().map(|t| index[t.as_str()]).collect();
            Target::Classes { labels, classes }
        }
        Task::Regression => {
            let mut values = Vec::with_capacity(raw_target.len());
            for (row, t) in raw_target.iter().enumerate() {
                match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => return Err(DatasetError::InvalidTarget { row, value: t.clone() }),
                }
            }
            Target::Values(values)
        }
    };
    TabularDataset::new(schema.clone(), columns, target)
}

/// Number of (train, val, test) rows for `n` rows: val and test each get
/// `floor(n / 10)`, train takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n / 10;
    (n - 2 * tenth, tenth, tenth)
}

/// Assigns every row to exactly one split.
///
/// Rows are shuffled with the seed (within each class for classification,
/// classes laid out in label order) and then sampled systematically: within
/// every block of ten consecutive positions, position 9 goes to test and
/// position 8 to validation. This stratifies classification splits and gives
/// exactly the sizes of [`split_sizes`].
pub fn make_splits(dataset: &TabularDataset, seed: u64) -> Result<TabularDataset> {
    let n = dataset.num_rows();
    if n < 10 {
        return Err(DatasetError::TooFewRows(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match &dataset.target {
        Target::Classes { labels, classes } => {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
            for (row, &label) in labels.iter().enumerate() {
                groups[label].push(row);
            }
            for g in groups.iter_mut() {
                g.shuffle(&mut rng);
            }
            groups.into_iter().flatten().collect()
        }
        Target::Values(_) => {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            rows
        }
    };
    let (_, n_val, _) = split_sizes(n);
    let mut split = vec![Split::Train; n];
    let mut val_taken = 0;
    for (pos, &row) in order.iter().enumerate() {
        match pos % 10 {
            9 => split[row] = Split::Test,
            8 if val_taken < n_val => {
                split[row] = Split::Val;
                val_taken += 1;
            }
            _ => {}
        }
    }
    let mut out = dataset.clone();
    out.split = Some(split);
    Ok(out)
}

/// Train-fitted summary of one continuous column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ContinuousStats {
    /// Statistics over the non-NaN values; `None` when every value is NaN.
    /// The standard deviation is the population one, floored at [`STD_FLOOR`].
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Some(Self { median, mean, std: var.sqrt().max(STD_FLOOR), min: v[0], max: v[n - 1] })
    }

    /// Median imputation followed by standardization.
    #[inline]
    pub fn transform(&self, x: f64) -> f64 {
        let x = if x.is_nan() { self.median } else { x };
        (x - self.mean) / self.std
    }
}

/// Suffixes of the four continuous columns a date expands into.
pub const DATE_COMPONENTS: [&str; 4] = ["year", "month", "day", "dow"];

/// Year, month, day and day-of-week (Monday = 0) of an ISO `YYYY-MM-DD`
/// date; four NaNs when the cell does not parse.
pub fn date_components(cell: Option<&str>) -> [f64; 4] {
    cell.and_then(|s| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok())
        .map(|d| {
            [
                d.year() as f64,
                d.month() as f64,
                d.day() as f64,
                d.weekday().num_days_from_monday() as f64,
            ]
        })
        .unwrap_or([f64::NAN; 4])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnState {
    /// `vocabulary[i]` has code `i + 1`; code 0 is the missing token.
    Categorical { name: String, vocabulary: Vec<String> },
    Continuous { name: String, stats: ContinuousStats },
    Date { name: String, components: [ContinuousStats; 4] },
}

impl ColumnState {
    pub fn name(&self) -> &str {
        match self {
            ColumnState::Categorical { name, .. }
            | ColumnState::Continuous { name, .. }
            | ColumnState::Date { name, .. } => name,
        }
    }
}

/// Everything fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub columns: Vec<ColumnState>,
}

impl PreprocessState {
    pub fn code_of(&self, column: usize, value: Option<&str>) -> Option<u32> {
        match (&self.columns[column], value) {
            (ColumnState::Categorical { .. }, None) => Some(MISSING_CODE),
            (ColumnState::Categorical { vocabulary, .. }, Some(v)) => {
                Some(vocabulary.iter().position(|x| x == v).map_or(MISSING_CODE, |i| i as u32 + 1))
            }
            _ => None,
        }
    }
}

pub fn fit_preprocess(dataset: &TabularDataset) -> Result<PreprocessState> {
    let split = dataset.splits()?;
    let train: Vec<usize> = (0..split.len()).filter(|&i| split[i] == Split::Train).collect();
    if train.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    let mut columns = Vec::with_capacity(dataset.columns.len());
    for (cs, col) in &dataset.columns {
        let state = match col {
            RawColumn::Categorical(values) => {
                let mut vocabulary: Vec<String> = Vec::new();
                let mut seen: HashSet<&str> = HashSet::new();
                for &r in &train {
                    if let Some(v) = values[r].as_deref() {
                        if seen.insert(v) {
                            vocabulary.push(v.to_string());
                        }
                    }
                }
                ColumnState::Categorical { name: cs.name.clone(), vocabulary }
            }
            RawColumn::Continuous(values) => {
                let stats = ContinuousStats::fit(train.iter().map(|&r| values[r]))
                    .ok_or_else(|| DatasetError::AllMissingColumn(cs.name.clone()))?;
                ColumnState::Continuous { name: cs.name.clone(), stats }
            }
            RawColumn::Date(values) => {
                let parsed: Vec<[f64; 4]> = train.iter().map(|&r| date_components(values[r].as_deref())).collect();
                let mut components = [ContinuousStats { median: 0.0, mean: 0.0, std: 1.0, min: 0.0, max: 0.0 }; 4];
                for (k, slot) in components.iter_mut().enumerate() {
                    *slot = ContinuousStats::fit(parsed.iter().map(|p| p[k])).ok_or_else(|| {
                        DatasetError::AllMissingColumn(format!("{}_{}", cs.name, DATE_COMPONENTS[k]))
                    })?;
                }
                ColumnState::Date { name: cs.name.clone(), components }
            }
        };
        columns.push(state);
    }
    Ok(PreprocessState { columns })
}

/// Values of one model-ready feature column.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValues {
    /// Codes in `0..cardinality`, where 0 is missing.
    Categorical { codes: Vec<u32>, cardinality: u32 },
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub values: FeatureValues,
}

/// Model-ready table produced by [`apply_preprocess`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedDataset {
    pub task: Task,
    pub features: Vec<Feature>,
    pub target: Target,
    pub split: Vec<Split>,
}

impl ProcessedDataset {
    pub fn num_rows(&self) -> usize {
        self.split.len()
    }

    pub fn rows_in(&self, which: Split) -> Vec<usize> {
        (0..self.split.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn mask(&self, which: Split) -> Vec<bool> {
        self.split.iter().map(|&s| s == which).collect()
    }

    /// Keeps only the named features, in their current order.
    pub fn select_features(&self, names: &[&str]) -> Self {
        Self {
            task: self.task,
            features: self.features.iter().filter(|f| names.contains(&f.name.as_str())).cloned().collect(),
            target: self.target.clone(),
            split: self.split.clone(),
        }
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            task: self.task,
            features: self
                .features
                .iter()
                .map(|f| Feature {
                    name: f.name.clone(),
                    values: match &f.values {
                        FeatureValues::Categorical { codes, cardinality } => FeatureValues::Categorical {
                            codes: rows.iter().map(|&r| codes[r]).collect(),
                            cardinality: *cardinality,
                        },
                        FeatureValues::Continuous(v) => FeatureValues::Continuous(rows.iter().map(|&r| v[r]).collect()),
                    },
                })
                .collect(),
            target: self.target.select(rows),
            split: rows.iter().map(|&r| self.split[r]).collect(),
        }
    }
}

pub fn apply_preprocess(dataset: &TabularDataset, state: &PreprocessState) -> Result<ProcessedDataset> {
    let split = dataset.splits()?.to_vec();
    if state.columns.len() != dataset.columns.len() {
        return Err(DatasetError::SchemaMismatch(format!(
            "state has {} columns, dataset has {}",
            state.columns.len(),
            dataset.columns.len()
        )));
    }
    let mut features = Vec::new();
    for ((cs, col), st) in dataset.columns.iter().zip(&state.columns) {
        if cs.name != st.name() {
            return Err(DatasetError::SchemaMismatch(format!("expected column `{}`, found `{}`", st.name(), cs.name)));
        }
        match (col, st) {
            (RawColumn::Categorical(values), ColumnState::Categorical { vocabulary, .. }) => {
                let index: HashMap<&str, u32> =
                    vocabulary.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32 + 1)).collect();
                let codes = values
                    .iter()
                    .map(|v| v.as_deref().and_then(|s| index.get(s).copied()).unwrap_or(MISSING_CODE))
                    .collect();
                features.push(Feature {
                    name: cs.name.clone(),
                    values: FeatureValues::Categorical { codes, cardinality: vocabulary.len() as u32 + 1 },
                });
            }
            (RawColumn::Continuous(values), ColumnState::Continuous { stats, .. }) => {
                features.push(Feature {
                    name: cs.name.clone(),
                    values: FeatureValues::Continuous(values.iter().map(|&x| stats.transform(x)).collect()),
                });
            }
            (RawColumn::Date(values), ColumnState::Date { components, .. }) => {
                let parsed: Vec<[f64; 4]> = values.iter().map(|v| date_components(v.as_deref())).collect();
                for (k, stats) in components.iter().enumerate() {
                    features.push(Feature {
                        name: format!("{}_{}", cs.name, DATE_COMPONENTS[k]),
                        values: FeatureValues::Continuous(parsed.iter().map(|p| stats.transform(p[k])).collect()),
                    });
                }
            }
            _ => {
                return Err(DatasetError::SchemaMismatch(format!("column `{}` changed kind", cs.name)));
            }
        }
    }
    Ok(ProcessedDataset { task: dataset.task(), features, target: dataset.target.clone(), split })
}
