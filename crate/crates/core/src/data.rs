//! Delimited-text datasets: schema, parsing, one-hot targets, min-max
//! scaling and seeded stratified splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Semicolon,
    Tab,
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Target,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    #[default]
    Continuous,
    Discrete,
    /// Non-numeric input, expanded to one indicator column per value.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
}

fn default_missing() -> Vec<String> {
    vec!["?".into(), String::new(), "NA".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub name: String,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub has_header: bool,
    pub target_kind: TargetKind,
    /// Class labels in one-hot order. Empty means "sorted distinct labels".
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub hidden_nodes: Option<usize>,
    /// Drop rows whose label is not in `classes` instead of failing.
    #[serde(default)]
    pub drop_unlisted: bool,
    /// Tokens treated as missing in numeric columns.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    pub columns: Vec<ColumnSpec>,
}

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<SchemaConfig> {
        let schema: SchemaConfig =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SchemaConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SchemaConfig::from_toml(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = self
            .columns
            .iter()
            .filter(|c| c.role == Role::Input)
            .count();
        let targets: Vec<&ColumnSpec> = self
            .columns
            .iter()
            .filter(|c| c.role == Role::Target)
            .collect();
        if inputs == 0 {
            return Err(Error::Schema("no input columns".into()));
        }
        if targets.is_empty() {
            return Err(Error::Schema("no target column".into()));
        }
        match self.target_kind {
            TargetKind::Classification if targets.len() != 1 => Err(Error::Schema(format!(
                "classification needs exactly one target column, got {}",
                targets.len()
            ))),
            TargetKind::Regression if targets.iter().any(|c| c.kind == ColumnKind::Categorical) => {
                Err(Error::Schema("regression targets must be numeric".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawTargets {
    Classes {
        labels: Vec<usize>,
        classes: Vec<String>,
    },
    Values(DMatrix<f64>),
}

/// Parsed but unscaled data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub inputs: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub targets: RawTargets,
    pub target_names: Vec<String>,
    /// Rows dropped for a wrong field count, a missing value or a parse error.
    pub dropped: usize,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            RawTargets::Classes { labels, .. } => Some(labels),
            RawTargets::Values(_) => None,
        }
    }
}

fn split_line(line: &str, delimiter: Delimiter) -> Vec<String> {
    let parts: Vec<&str> = match delimiter {
        Delimiter::Whitespace => line.split_whitespace().collect(),
        Delimiter::Comma => line.split(',').collect(),
        Delimiter::Semicolon => line.split(';').collect(),
        Delimiter::Tab => line.split('\t').collect(),
    };
    parts
        .into_iter()
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect()
}

pub fn load_delimited(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<RawData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_delimited(&text, schema).map_err(|e| match e {
        Error::Empty(_) | Error::UnknownLabel(_) => Error::Parse {
            path: path.into(),
            message: e.to_string(),
        },
        other => other,
    })
}

pub fn parse_delimited(text: &str, schema: &SchemaConfig) -> Result<RawData> {
    schema.validate()?;
    let ncols = schema.columns.len();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if schema.has_header {
        lines.next();
    }

    let numeric = |c: &ColumnSpec| c.kind != ColumnKind::Categorical;
    let is_missing = |v: &str| schema.missing.iter().any(|m| m == v);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for line in lines {
        let fields = split_line(line, schema.delimiter);
        if fields.len() != ncols {
            dropped += 1;
            continue;
        }
        let ok = schema
            .columns
            .iter()
            .zip(&fields)
            .all(|(c, v)| match c.role {
                Role::Ignore => true,
                Role::Target if schema.target_kind == TargetKind::Classification => {
                    !v.is_empty()
                        && !(schema.drop_unlisted && !schema.classes.iter().any(|k| k == v))
                }
                _ if numeric(c) => {
                    !is_missing(v) && v.parse::<f64>().is_ok_and(|x| x.is_finite())
                }
                _ => !v.is_empty(),
            });
        if ok {
            rows.push(fields);
        } else {
            dropped += 1;
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no valid rows"));
    }
    if dropped > 0 {
        info!(
            "{}: dropped {dropped} row(s) with missing or malformed fields",
            schema.name
        );
    }

    // Input layout, with categorical columns expanded in sorted value order.
    let mut input_names = Vec::new();
    let mut plan: Vec<(usize, Option<Vec<String>>)> = Vec::new();
    for (ci, c) in schema.columns.iter().enumerate() {
        if c.role != Role::Input {
            continue;
        }
        if c.kind == ColumnKind::Categorical {
            let values: BTreeSet<&str> = rows.iter().map(|r| r[ci].as_str()).collect();
            let values: Vec<String> = values.into_iter().map(String::from).collect();
            input_names.extend(values.iter().map(|v| format!("{}={v}", c.name)));
            plan.push((ci, Some(values)));
        } else {
            input_names.push(c.name.clone());
            plan.push((ci, None));
        }
    }

    let p = rows.len();
    let mut inputs = DMatrix::zeros(p, input_names.len());
    for (r, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (ci, cats) in &plan {
            match cats {
                None => {
                    inputs[(r, k)] = row[*ci].parse().unwrap();
                    k += 1;
                }
                Some(values) => {
                    let hot = values.iter().position(|v| *v == row[*ci]).unwrap();
                    inputs[(r, k + hot)] = 1.0;
                    k += values.len();
                }
            }
        }
    }

    let target_cols: Vec<usize> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == Role::Target)
        .map(|(i, _)| i)
        .collect();
    let (targets, target_names) = match schema.target_kind {
        TargetKind::Classification => {
            let ci = target_cols[0];
            let classes: Vec<String> = if schema.classes.is_empty() {
                let set: BTreeSet<&str> = rows.iter().map(|r| r[ci].as_str()).collect();
                set.into_iter().map(String::from).collect()
            } else {
                schema.classes.clone()
            };
            let labels = rows
                .iter()
                .map(|r| {
                    classes
                        .iter()
                        .position(|c| *c == r[ci])
                        .ok_or_else(|| Error::UnknownLabel(r[ci].clone()))
                })
                .collect::<Result<Vec<usize>>>()?;
            let names = classes.clone();
            (RawTargets::Classes { labels, classes }, names)
        }
        TargetKind::Regression => {
            let m = DMatrix::from_fn(p, target_cols.len(), |r, c| {
                rows[r][target_cols[c]].parse().unwrap()
            });
            let names = target_cols
                .iter()
                .map(|&i| schema.columns[i].name.clone())
                .collect();
            (RawTargets::Values(m), names)
        }
    };

    Ok(RawData {
        inputs,
        input_names,
        targets,
        target_names,
        dropped,
    })
}

pub fn one_hot<S: AsRef<str>>(labels: &[S], classes: &[String]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(labels.len(), classes.len());
    for (r, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let c = classes
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| Error::UnknownLabel(l.to_string()))?;
        m[(r, c)] = 1.0;
    }
    Ok(m)
}

pub fn one_hot_indices(labels: &[usize], classes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), classes, |r, c| {
        if labels[r] == c {
            1.0
        } else {
            0.0
        }
    })
}

/// Per-column affine map of `[min, max]` onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(x: &DMatrix<f64>, lo: f64, hi: f64) -> Result<MinMaxScaler> {
        if x.nrows() == 0 {
            return Err(Error::Empty("scaler input"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scaler input"));
        }
        let min = x.column_iter().map(|c| c.min()).collect();
        let max = x.column_iter().map(|c| c.max()).collect();
        Ok(MinMaxScaler { min, max, lo, hi })
    }

    /// Columns with a single distinct value. They map to the midpoint.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.min.len())
            .filter(|&c| self.min[c] == self.max[c])
            .collect()
    }

    fn map(&self, c: usize, v: f64) -> f64 {
        let (a, b) = (self.min[c], self.max[c]);
        if a == b {
            (self.lo + self.hi) / 2.0
        } else {
            self.lo + (v - a) / (b - a) * (self.hi - self.lo)
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            self.map(c, x[(r, c)])
        }))
    }

    /// Like `transform`, then clipped to `[lo, hi]`. Used for data the scaler
    /// was not fitted on.
    pub fn transform_clipped(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut m = self.transform(x)?;
        m.apply(|v| *v = v.clamp(self.lo, self.hi));
        Ok(m)
    }

    pub fn inverse_transform(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(y)?;
        Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| {
            let (a, b) = (self.min[c], self.max[c]);
            if a == b {
                a
            } else {
                a + (y[(r, c)] - self.lo) / (self.hi - self.lo) * (b - a)
            }
        }))
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                actual: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scaler input"));
        }
        Ok(())
    }
}

pub const TARGET_RANGE: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub inputs: DMatrix<f64>,
    pub targets: Option<DMatrix<f64>>,
    pub input_scaler: MinMaxScaler,
    pub target_scaler: Option<MinMaxScaler>,
    pub constant_columns: Vec<usize>,
}

/// Inputs to [0, 1], regression targets to [0.1, 0.9]; fitted on the data given.
pub fn normalize(inputs: &DMatrix<f64>, targets: Option<&DMatrix<f64>>) -> Result<Normalized> {
    let input_scaler = MinMaxScaler::fit(inputs, 0.0, 1.0)?;
    let constant_columns = input_scaler.constant_columns();
    if !constant_columns.is_empty() {
        warn!("constant input column(s) {constant_columns:?} mapped to 0.5");
    }
    let x = input_scaler.transform(inputs)?;
    let (t, ts) = match targets {
        Some(t) => {
            let s = MinMaxScaler::fit(t, TARGET_RANGE.0, TARGET_RANGE.1)?;
            (Some(s.transform(t)?), Some(s))
        }
        None => (None, None),
    };
    Ok(Normalized {
        inputs: x,
        targets: t,
        input_scaler,
        target_scaler: ts,
        constant_columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    Fractions([f64; 3]),
    Counts([usize; 3]),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions([0.5, 0.25, 0.25])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Largest-remainder apportionment of `total` by `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Places one more unit of class `c` so that every class stays at its floor
/// or floor + 1 per part. Breadth-first search over parts: a part that is
/// full can be entered if some class bumped there can move its extra unit on.
fn place_unit(
    c: usize,
    floors: &[[usize; 3]],
    alloc: &mut [[usize; 3]],
    deficit: &mut [usize],
) -> bool {
    let bumped = |alloc: &[[usize; 3]], c: usize, k: usize| alloc[c][k] > floors[c][k];
    let mut parent: [Option<(usize, usize)>; 3] = [None; 3];
    let mut seen = [false; 3];
    let mut queue = std::collections::VecDeque::new();
    for k in 0..3 {
        if !bumped(alloc, c, k) {
            seen[k] = true;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        if deficit[k] > 0 {
            // Unwind: each hop moves one class's extra unit forward.
            let mut at = k;
            while let Some((from, moved)) = parent[at] {
                alloc[moved][at] += 1;
                alloc[moved][from] -= 1;
                at = from;
            }
            alloc[c][at] += 1;
            deficit[k] -= 1;
            return true;
        }
        for (c2, row) in alloc.iter().enumerate() {
            if row[k] <= floors[c2][k] {
                continue;
            }
            for k2 in 0..3 {
                if !seen[k2] && !bumped(alloc, c2, k2) {
                    seen[k2] = true;
                    parent[k2] = Some((k, c2));
                    queue.push_back(k2);
                }
            }
        }
    }
    false
}

/// Seeded shuffle split. With labels the split is stratified: every class is
/// spread over the parts within one sample of its exact share, and the part
/// sizes still hit the global targets.
pub fn split(
    labels: Option<&[usize]>,
    patterns: usize,
    spec: SplitSpec,
    seed: u64,
) -> Result<Split> {
    if patterns == 0 {
        return Err(Error::Empty("dataset"));
    }
    if let Some(l) = labels {
        if l.len() != patterns {
            return Err(Error::DimensionMismatch {
                expected: patterns,
                actual: l.len(),
            });
        }
    }
    let (sizes, weights) = match spec {
        SplitSpec::Fractions(f) => {
            if f.iter().any(|v| !(*v > 0.0)) || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "split fractions must be positive and sum to 1, got {f:?}"
                )));
            }
            (apportion(patterns, &f), f.to_vec())
        }
        SplitSpec::Counts(c) => {
            if c.iter().sum::<usize>() != patterns || c[0] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "split counts {c:?} must sum to the {patterns} available patterns"
                )));
            }
            (c.to_vec(), c.iter().map(|&v| v as f64).collect())
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    match labels {
        None => {
            let mut idx: Vec<usize> = (0..patterns).collect();
            idx.shuffle(&mut rng);
            let mut it = idx.into_iter();
            for (k, part) in parts.iter_mut().enumerate() {
                part.extend(it.by_ref().take(sizes[k]));
            }
        }
        Some(labels) => {
            let n_classes = labels.iter().max().map_or(0, |m| m + 1);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &l) in labels.iter().enumerate() {
                members[l].push(i);
            }
            let wsum: f64 = weights.iter().sum();
            let mut alloc = vec![[0usize; 3]; n_classes];
            let mut leftover = vec![0usize; n_classes];
            let mut deficit = sizes.clone();
            let mut remainders = Vec::new();
            for (c, m) in members.iter().enumerate() {
                if !m.is_empty() && m.len() < 3 {
                    warn!(
                        "class {c} has {} sample(s); it cannot reach every split part",
                        m.len()
                    );
                }
                for k in 0..3 {
                    let exact = m.len() as f64 * weights[k] / wsum;
                    alloc[c][k] = exact.floor() as usize;
                    deficit[k] -= alloc[c][k];
                    remainders.push((exact - exact.floor(), c, k));
                }
                leftover[c] = m.len() - alloc[c].iter().sum::<usize>();
            }
            remainders.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let floors = alloc.clone();
            for &(_, c, k) in &remainders {
                if leftover[c] > 0 && deficit[k] > 0 {
                    alloc[c][k] += 1;
                    leftover[c] -= 1;
                    deficit[k] -= 1;
                }
            }
            for c in 0..n_classes {
                while leftover[c] > 0 {
                    if !place_unit(c, &floors, &mut alloc, &mut deficit) {
                        // No rounding keeps every class within one sample;
                        // give the unit to any part that is short.
                        let k = (0..3).find(|&k| deficit[k] > 0).unwrap();
                        warn!("class {c} could not be stratified within one sample");
                        alloc[c][k] += 1;
                        deficit[k] -= 1;
                    }
                    leftover[c] -= 1;
                }
            }
            for (c, m) in members.iter_mut().enumerate() {
                m.shuffle(&mut rng);
                let mut it = m.iter().copied();
                for k in 0..3 {
                    parts[k].extend(it.by_ref().take(alloc[c][k]));
                }
            }
            for part in &mut parts {
                part.shuffle(&mut rng);
            }
        }
    }
    let [train, validation, test] = parts;
    Ok(Split {
        train,
        validation,
        test,
        seed,
    })
}

/// Scaled, training-ready data for one split part.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    /// Class index per row, classification only.
    pub labels: Option<Vec<usize>>,
    pub classes: Vec<String>,
    pub input_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_classification(&self) -> bool {
        self.labels.is_some()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in self.labels.iter().flatten() {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub input_scaler: MinMaxScaler,
    pub target_scaler: Option<MinMaxScaler>,
    pub split: Split,
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Splits raw data and scales every part with parameters fitted on the
/// training part only. Validation and test values are clipped into range.
pub fn prepare(raw: &RawData, spec: SplitSpec, seed: u64) -> Result<SplitData> {
    let split = split(raw.labels(), raw.len(), spec, seed)?;
    let x_train = rows(&raw.inputs, &split.train);
    let input_scaler = MinMaxScaler::fit(&x_train, 0.0, 1.0)?;
    let constant = input_scaler.constant_columns();
    if !constant.is_empty() {
        warn!("constant input column(s) {constant:?} in the training part mapped to 0.5");
    }

    let (full_targets, classes, target_scaler) = match &raw.targets {
        RawTargets::Classes { labels, classes } => (
            one_hot_indices(labels, classes.len()),
            classes.clone(),
            None,
        ),
        RawTargets::Values(v) => {
            let s = MinMaxScaler::fit(&rows(v, &split.train), TARGET_RANGE.0, TARGET_RANGE.1)?;
            (v.clone(), Vec::new(), Some(s))
        }
    };

    let part = |idx: &[usize], clip: bool| -> Result<Dataset> {
        let x = rows(&raw.inputs, idx);
        let inputs = if clip {
            input_scaler.transform_clipped(&x)?
        } else {
            input_scaler.transform(&x)?
        };
        let t = rows(&full_targets, idx);
        let targets = match &target_scaler {
            Some(s) if clip => s.transform_clipped(&t)?,
            Some(s) => s.transform(&t)?,
            None => t,
        };
        Ok(Dataset {
            inputs,
            targets,
            labels: raw.labels().map(|l| idx.iter().map(|&i| l[i]).collect()),
            classes: classes.clone(),
            input_names: raw.input_names.clone(),
            target_names: raw.target_names.clone(),
        })
    };

    Ok(SplitData {
        train: part(&split.train, false)?,
        validation: part(&split.validation, true)?,
        test: part(&split.test, true)?,
        input_scaler: input_scaler.clone(),
        target_scaler: target_scaler.clone(),
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IRIS_LIKE: &str = r#"
name = "toy"
target_kind = "classification"
classes = ["a", "b"]
[[columns]]
name = "x1"
role = "input"
[[columns]]
name = "x2"
role = "input"
kind = "discrete"
[[columns]]
name = "id"
role = "ignore"
[[columns]]
name = "label"
role = "target"
"#;

    #[test]
    fn schema_parses_and_validates() {
        let s = SchemaConfig::from_toml(IRIS_LIKE).unwrap();
        assert_eq!(s.columns.len(), 4);
        assert_eq!(s.delimiter, Delimiter::Comma);
        let no_input = r#"
name = "x"
target_kind = "regression"
[[columns]]
name = "y"
role = "target"
"#;
        assert!(SchemaConfig::from_toml(no_input).is_err());
    }

    #[test]
    fn parse_drops_bad_rows() {
        let s = SchemaConfig::from_toml(IRIS_LIKE).unwrap();
        let text = "1.0,2,z,a\n?,3,z,b\n2.0,4,z\n3.0,5,q,b\n";
        let raw = parse_delimited(text, &s).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.dropped, 2);
        assert_eq!(raw.labels().unwrap(), &[0, 1]);
        assert_eq!(raw.inputs[(1, 1)], 5.0);
    }

    #[test]
    fn header_and_empty() {
        let mut s = SchemaConfig::from_toml(IRIS_LIKE).unwrap();
        s.has_header = true;
        let raw = parse_delimited("x1,x2,id,label\n1,2,3,a\n", &s).unwrap();
        assert_eq!(raw.len(), 1);
        assert!(matches!(parse_delimited("", &s), Err(Error::Empty(_))));
        assert!(matches!(
            parse_delimited("1,2,3,c\n", &SchemaConfig::from_toml(IRIS_LIKE).unwrap()),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn categorical_expansion() {
        let text = r#"
name = "cat"
delimiter = "whitespace"
target_kind = "regression"
[[columns]]
name = "colour"
role = "input"
kind = "categorical"
[[columns]]
name = "y"
role = "target"
"#;
        let s = SchemaConfig::from_toml(text).unwrap();
        let raw = parse_delimited("red 1\nblue 2\n? 3\n", &s).unwrap();
        assert_eq!(
            raw.input_names,
            vec!["colour=?", "colour=blue", "colour=red"]
        );
        assert_eq!(
            raw.inputs.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 1.0]
        );
        assert_eq!(
            raw.inputs.row(2).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn one_hot_examples() {
        let classes: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let m = one_hot(&["y"], &classes).unwrap();
        assert_eq!(
            m.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0]
        );
        let single = vec!["only".to_string()];
        let m = one_hot(&["only", "only"], &single).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        assert!(one_hot(&["w"], &classes).is_err());
    }

    #[test]
    fn normalize_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 7.0, 5.0, 7.0, 10.0, 7.0]);
        let t = DMatrix::from_row_slice(3, 1, &[10.0, 15.0, 20.0]);
        let n = normalize(&x, Some(&t)).unwrap();
        assert_eq!(
            n.inputs.column(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
        assert!(n.inputs.column(1).iter().all(|&v| v == 0.5));
        assert_eq!(n.constant_columns, vec![1]);
        let tt = n.targets.unwrap();
        assert!((tt[(0, 0)] - 0.1).abs() < 1e-15 && (tt[(2, 0)] - 0.9).abs() < 1e-15);
        assert!(normalize(&DMatrix::from_element(1, 1, f64::NAN), None).is_err());
    }

    #[test]
    fn split_examples() {
        let s = split(None, 100, SplitSpec::default(), 3).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (50, 25, 25)
        );
        assert_eq!(s, split(None, 100, SplitSpec::default(), 3).unwrap());
        let c = split(None, 32561, SplitSpec::Counts([5000, 1414, 26147]), 1).unwrap();
        assert_eq!(
            (c.train.len(), c.validation.len(), c.test.len()),
            (5000, 1414, 26147)
        );
        assert!(split(None, 10, SplitSpec::Counts([5, 5, 5]), 1).is_err());
        assert!(split(None, 10, SplitSpec::Fractions([0.5, 0.5, 0.5]), 1).is_err());
    }

    #[test]
    fn stratified_iris_like() {
        let labels: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let s = split(Some(&labels), 150, SplitSpec::default(), 11).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (75, 38, 37)
        );
        for part in [&s.train, &s.validation, &s.test] {
            for c in 0..3 {
                let n = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                let exact = part.len() as f64 / 3.0;
                assert!((n - exact).abs() <= 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn scaler_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let x = DMatrix::from_column_slice(vals.len(), 1, &vals);
            let s = MinMaxScaler::fit(&x, 0.0, 1.0).unwrap();
            let back = s.inverse_transform(&s.transform(&x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn one_hot_rows(labels in prop::collection::vec(0usize..5, 1..30)) {
            let m = one_hot_indices(&labels, 5);
            for (r, &l) in labels.iter().enumerate() {
                prop_assert_eq!(m.row(r).sum(), 1.0);
                prop_assert_eq!(crate::measures::argmax(m.row(r).iter().copied()), l);
            }
        }

        #[test]
        fn split_is_partition(
            labels in prop::collection::vec(0usize..4, 3..200),
            seed in any::<u64>(),
            stratify in any::<bool>(),
        ) {
            let p = labels.len();
            let l = if stratify { Some(labels.as_slice()) } else { None };
            let a = split(l, p, SplitSpec::default(), seed).unwrap();
            let b = split(l, p, SplitSpec::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..p).collect::<Vec<_>>());
            let sizes = apportion(p, &[0.5, 0.25, 0.25]);
            prop_assert_eq!(vec![a.train.len(), a.validation.len(), a.test.len()], sizes);
            if stratify {
                for c in 0..4 {
                    let n_c = labels.iter().filter(|&&v| v == c).count() as f64;
                    for (part, f) in [(&a.train, 0.5), (&a.validation, 0.25), (&a.test, 0.25)] {
                        let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                        prop_assert!((got - n_c * f).abs() < 1.0 + 1e-9);
                    }
                }
            }
        }
    }
}
