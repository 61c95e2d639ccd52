//! Train/test splits and the length categories used by the uncertainty study.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::rng;
use crate::seq::ClassLabel;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("cannot pick a length threshold from an empty list")]
    EmptyLengths,
    #[error("invalid split config: {0}")]
    InvalidConfig(String),
    #[error("category {category} has {available} records, {requested} requested")]
    InsufficientPopulation {
        category: LengthCategory,
        available: usize,
        requested: usize,
    },
    #[error("unknown length category '{0}'")]
    UnknownCategory(String),
    #[error("malformed categories line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// PVP sequences with `length <= delta_pvp` are short.
    pub delta_pvp: usize,
    /// Non-PVP sequences with `length <= delta_nonpvp` are short.
    pub delta_nonpvp: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            delta_pvp: 350,
            delta_nonpvp: 275,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.delta_pvp == 0 || self.delta_nonpvp == 0 {
            return Err(DatasetError::InvalidConfig(
                "length thresholds must be positive".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DatasetError::InvalidConfig(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthCategory {
    PvpShort,
    PvpLong,
    NonPvpShort,
    NonPvpLong,
}

impl LengthCategory {
    pub const ALL: [LengthCategory; 4] = [
        LengthCategory::PvpShort,
        LengthCategory::PvpLong,
        LengthCategory::NonPvpShort,
        LengthCategory::NonPvpLong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LengthCategory::PvpShort => "PVP-short",
            LengthCategory::PvpLong => "PVP-long",
            LengthCategory::NonPvpShort => "nonPVP-short",
            LengthCategory::NonPvpLong => "nonPVP-long",
        }
    }

    pub fn is_pvp(self) -> bool {
        matches!(self, LengthCategory::PvpShort | LengthCategory::PvpLong)
    }
}

impl fmt::Display for LengthCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthCategory {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LengthCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| DatasetError::UnknownCategory(s.trim().to_owned()))
    }
}

/// The threshold δ that best balances `#{len <= δ}` against `#{len > δ}`.
///
/// Candidates are the distinct observed lengths; ties go to the smaller δ.
pub fn find_equilibrium_delta(lengths: &[usize]) -> Result<usize, DatasetError> {
    if lengths.is_empty() {
        return Err(DatasetError::EmptyLengths);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let total = sorted.len();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < total {
        let value = sorted[i];
        while i < total && sorted[i] == value {
            i += 1;
        }
        // i is now #{len <= value}
        let imbalance = i.abs_diff(total - i);
        if best.is_none_or(|(_, b)| imbalance < b) {
            best = Some((value, imbalance));
        }
    }
    Ok(best.expect("non-empty").0)
}

pub fn categorize(length: usize, label: ClassLabel, cfg: &SplitConfig) -> LengthCategory {
    if label.is_pvp() {
        if length <= cfg.delta_pvp {
            LengthCategory::PvpShort
        } else {
            LengthCategory::PvpLong
        }
    } else if length <= cfg.delta_nonpvp {
        LengthCategory::NonPvpShort
    } else {
        LengthCategory::NonPvpLong
    }
}

/// Index sets produced by [`stratified_split`], each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes too small to stratify; their records all went to train.
    pub unsplit_classes: Vec<ClassLabel>,
}

/// Per-class random split. Each class with `n >= 2` records sends
/// `round(n * test_fraction)` of them (clamped to `1..=n-1`) to the test set.
pub fn stratified_split(
    labels: &[ClassLabel],
    cfg: &SplitConfig,
) -> Result<SplitIndices, DatasetError> {
    cfg.validate()?;
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }

    let mut out = SplitIndices::default();
    for (label, mut members) in by_class {
        let n = members.len();
        if n < 2 {
            log::warn!("class {label} has {n} record(s); cannot stratify, keeping in train");
            out.unsplit_classes.push(label);
            out.train.extend(members);
            continue;
        }
        let n_test = ((n as f64 * cfg.test_fraction).round() as usize).clamp(1, n - 1);
        let name = label.to_string();
        let mut rng = rng::derive(cfg.seed, &[b"split", name.as_bytes()]);
        members.shuffle(&mut rng);
        out.test.extend_from_slice(&members[..n_test]);
        out.train.extend_from_slice(&members[n_test..]);
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Draws `k` distinct positions out of `records`, uniformly, restricted to
/// those in `category`. Returned positions index into `records`.
pub fn sample_category(
    categories: &[LengthCategory],
    category: LengthCategory,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, DatasetError> {
    let population: Vec<usize> = categories
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == category)
        .map(|(i, _)| i)
        .collect();
    if population.len() < k {
        return Err(DatasetError::InsufficientPopulation {
            category,
            available: population.len(),
            requested: k,
        });
    }
    let mut rng = rng::derive(seed, &[b"sample", category.as_str().as_bytes()]);
    Ok(index::sample(&mut rng, population.len(), k)
        .into_iter()
        .map(|i| population[i])
        .collect())
}

pub const CATEGORIES_FILE: &str = "categories.tsv";

/// `id<TAB>category` lines.
pub fn format_categories(rows: &[(String, LengthCategory)]) -> String {
    rows.iter().map(|(id, c)| format!("{id}\t{c}\n")).collect()
}

pub fn parse_categories(text: &str) -> Result<BTreeMap<String, LengthCategory>, DatasetError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| DatasetError::Malformed {
            line: i + 1,
            message,
        };
        let Some((id, category)) = line.split_once('\t') else {
            return Err(malformed("expected 'id<TAB>category'".into()));
        };
        let category = category
            .parse()
            .map_err(|e: DatasetError| malformed(e.to_string()))?;
        out.insert(id.to_owned(), category);
    }
    Ok(out)
}
