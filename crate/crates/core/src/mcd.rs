//! Monte Carlo dropout: repeated stochastic forward passes, their mean,
//! variance and binary entropy, aggregated per length category.
//!
//! `P` below is always the positive-class (PVP) probability. Every number
//! in a report can be recomputed from the per-pass predictions file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ImageTensor, Model, Predictor, POSITIVE_CLASS};
use crate::dataset::{sample_category, DatasetError, LengthCategory};
use crate::rng;

/// Allowed deviation of a softmax vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum McdError {
    #[error("need at least 2 stochastic passes, got {0}")]
    TooFewPasses(usize),
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidRate(f64),
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("uncertainty analysis needs a binary model, got {0} classes")]
    NotBinary(usize),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("predictions line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("distribution {id} ({category}, rate {rate}): {message}")]
    InvalidDistribution {
        id: String,
        category: String,
        rate: f64,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct McdConfig {
    pub passes: usize,
    pub dropout_rates: Vec<f64>,
    pub samples_per_category: usize,
    pub seed: u64,
    /// Worker threads for the passes; 0 lets rayon decide. Output does not
    /// depend on this.
    pub jobs: usize,
}

impl Default for McdConfig {
    fn default() -> Self {
        McdConfig {
            passes: 100,
            dropout_rates: vec![0.1, 0.2, 0.3],
            samples_per_category: 100,
            seed: 0,
            jobs: 1,
        }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<(), McdError> {
        if self.passes < 2 {
            return Err(McdError::TooFewPasses(self.passes));
        }
        for &rate in &self.dropout_rates {
            check_rate(rate)?;
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<(), McdError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(McdError::InvalidRate(rate))
    }
}

/// `T` softmax vectors for one input at one dropout rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub id: String,
    pub category: LengthCategory,
    pub dropout_rate: f64,
    pub passes: Vec<Vec<f64>>,
}

impl PredictionDistribution {
    /// `P_t`, the positive-class probability of each pass.
    pub fn positive_probs(&self) -> Vec<f64> {
        self.passes.iter().map(|p| p[POSITIVE_CLASS]).collect()
    }

    pub fn histogram(&self, bins: usize) -> Result<Vec<HistogramBin>, McdError> {
        histogram(&self.positive_probs(), bins)
    }

    fn invalid(&self, message: String) -> McdError {
        McdError::InvalidDistribution {
            id: self.id.clone(),
            category: self.category.to_string(),
            rate: self.dropout_rate,
            message,
        }
    }

    pub fn validate(&self) -> Result<(), McdError> {
        if self.passes.is_empty() {
            return Err(self.invalid("no passes".into()));
        }
        let classes = self.passes[0].len();
        if classes != 2 {
            return Err(self.invalid(format!("expected 2 classes, got {classes}")));
        }
        for (t, probs) in self.passes.iter().enumerate() {
            if probs.len() != classes {
                return Err(self.invalid(format!("pass {t} has {} classes", probs.len())));
            }
            if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(self.invalid(format!("pass {t} has probability {bad}")));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(self.invalid(format!("pass {t} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// `T` stochastic passes with fresh dropout masks. The random stream is keyed
/// by `(seed, id, rate)`, so results do not depend on scheduling.
pub fn mc_predict(
    model: &Model,
    input: &ImageTensor,
    id: &str,
    category: LengthCategory,
    passes: usize,
    rate: f64,
    seed: u64,
) -> Result<PredictionDistribution, McdError> {
    if passes < 2 {
        return Err(McdError::TooFewPasses(passes));
    }
    check_rate(rate)?;
    if model.classes() != 2 {
        return Err(McdError::NotBinary(model.classes()));
    }
    let mut rng = rng::derive(
        seed,
        &[b"mcd", id.as_bytes(), &rate.to_bits().to_le_bytes()],
    );
    let passes = (0..passes)
        .map(|_| model.predict_stochastic(input, rate, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionDistribution {
        id: id.to_owned(),
        category,
        dropout_rate: rate,
        passes,
    })
}

/// Mean probability vector over passes.
pub fn expectation(dist: &PredictionDistribution) -> Vec<f64> {
    let t = dist.passes.len() as f64;
    let classes = dist.passes.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; classes];
    for probs in &dist.passes {
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    mean
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `T`), two-pass form. Exactly zero when
/// all values are equal, even if their floating-point mean is not.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// `(1/T) Σ P_t² - E[P]²`; cross-checks [`population_variance`].
pub fn moment_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64 - m * m
}

/// Variance of the positive-class probability across passes.
pub fn variance(dist: &PredictionDistribution) -> f64 {
    population_variance(&dist.positive_probs())
}

/// Binary entropy in bits, with `0 * log(1/0)` taken as 0.
pub fn entropy(p: f64) -> Result<f64, McdError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(McdError::ProbabilityOutOfRange(p));
    }
    let term = |q: f64| if q > 0.0 { q * (1.0 / q).log2() } else { 0.0 };
    Ok(term(p) + term(1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, 1]`; 1.0 lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, McdError> {
    if bins < 2 {
        return Err(McdError::TooFewBins(bins));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(McdError::ProbabilityOutOfRange(v));
        }
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: i as f64 / bins as f64,
            high: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

pub fn format_histogram(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.low, b.high, b.count);
    }
    out
}

/// Per-distribution statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub id: String,
    pub category: LengthCategory,
    pub dropout_rate: f64,
    pub mean_p: f64,
    pub variance: f64,
    pub entropy_mean_of_passes: f64,
    pub entropy_of_mean: f64,
}

impl SampleSummary {
    pub fn of(dist: &PredictionDistribution) -> Result<Self, McdError> {
        let probs = dist.positive_probs();
        let mean_p = mean(&probs);
        let per_pass = probs
            .iter()
            .map(|&p| entropy(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SampleSummary {
            id: dist.id.clone(),
            category: dist.category,
            dropout_rate: dist.dropout_rate,
            mean_p,
            variance: population_variance(&probs),
            entropy_mean_of_passes: mean(&per_pass),
            entropy_of_mean: entropy(mean_p.clamp(0.0, 1.0))?,
        })
    }
}

/// One `(category, rate)` row: means over the sampled sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: LengthCategory,
    pub dropout_rate: f64,
    pub mean_p: f64,
    pub variance: f64,
    pub entropy_mean_of_passes: f64,
    pub entropy_of_mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeKind {
    HighVariance,
    LowVariance,
}

impl ExtremeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtremeKind::HighVariance => "high",
            ExtremeKind::LowVariance => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extreme {
    pub kind: ExtremeKind,
    pub sample: SampleSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UncertaintyReport {
    pub rows: Vec<CategoryRow>,
    /// Highest- and lowest-variance sample of each `(category, rate)`.
    pub extremes: Vec<Extreme>,
}

pub const REPORT_HEADER: &str =
    "category,dropout_rate,mean_P,variance,entropy_mean_of_passes,entropy_of_mean,n";
pub const EXTREMES_HEADER: &str =
    "category,dropout_rate,rank,id,mean_P,variance,entropy_mean_of_passes,entropy_of_mean";

impl UncertaintyReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.category,
                r.dropout_rate,
                r.mean_p,
                r.variance,
                r.entropy_mean_of_passes,
                r.entropy_of_mean,
                r.n
            );
        }
        out
    }

    pub fn extremes_csv(&self) -> String {
        let mut out = format!("{EXTREMES_HEADER}\n");
        for e in &self.extremes {
            let s = &e.sample;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.category,
                s.dropout_rate,
                e.kind.as_str(),
                s.id,
                s.mean_p,
                s.variance,
                s.entropy_mean_of_passes,
                s.entropy_of_mean
            );
        }
        out
    }
}

/// Builds the report from distributions. Rows are ordered by category, then
/// by rate; within a group, extremes prefer the earliest sample on ties.
pub fn summarize(dists: &[PredictionDistribution]) -> Result<UncertaintyReport, McdError> {
    let mut groups: BTreeMap<(LengthCategory, u64), Vec<SampleSummary>> = BTreeMap::new();
    for dist in dists {
        dist.validate()?;
        groups
            .entry((dist.category, dist.dropout_rate.to_bits()))
            .or_default()
            .push(SampleSummary::of(dist)?);
    }
    // f64 bit patterns of non-negative rates sort like the rates themselves
    let mut report = UncertaintyReport::default();
    for ((category, rate_bits), samples) in groups {
        let n = samples.len();
        let avg = |f: fn(&SampleSummary) -> f64| samples.iter().map(f).sum::<f64>() / n as f64;
        report.rows.push(CategoryRow {
            category,
            dropout_rate: f64::from_bits(rate_bits),
            mean_p: avg(|s| s.mean_p),
            variance: avg(|s| s.variance),
            entropy_mean_of_passes: avg(|s| s.entropy_mean_of_passes),
            entropy_of_mean: avg(|s| s.entropy_of_mean),
            n,
        });
        let mut high = &samples[0];
        let mut low = &samples[0];
        for s in &samples[1..] {
            if s.variance > high.variance {
                high = s;
            }
            if s.variance < low.variance {
                low = s;
            }
        }
        report.extremes.push(Extreme {
            kind: ExtremeKind::HighVariance,
            sample: high.clone(),
        });
        report.extremes.push(Extreme {
            kind: ExtremeKind::LowVariance,
            sample: low.clone(),
        });
    }
    Ok(report)
}

/// A candidate input for the analysis.
#[derive(Debug, Clone)]
pub struct McdSample {
    pub id: String,
    pub category: LengthCategory,
    pub input: ImageTensor,
}

/// Samples `k` inputs per category, runs [`mc_predict`] for every dropout
/// rate, and summarizes. Distributions come back ordered by category, sample
/// draw order, then rate.
pub fn run_category_analysis(
    model: &Model,
    population: &[McdSample],
    cfg: &McdConfig,
) -> Result<(Vec<PredictionDistribution>, UncertaintyReport), McdError> {
    cfg.validate()?;
    if model.classes() != 2 {
        return Err(McdError::NotBinary(model.classes()));
    }
    let categories: Vec<LengthCategory> = population.iter().map(|s| s.category).collect();
    let mut jobs = Vec::new();
    for category in LengthCategory::ALL {
        for idx in sample_category(&categories, category, cfg.samples_per_category, cfg.seed)? {
            for &rate in &cfg.dropout_rates {
                jobs.push((idx, rate));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| McdError::ThreadPool(e.to_string()))?;
    let dists = pool.install(|| {
        jobs.par_iter()
            .map(|&(idx, rate)| {
                let s = &population[idx];
                mc_predict(
                    model, &s.input, &s.id, s.category, cfg.passes, rate, cfg.seed,
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = summarize(&dists)?;
    Ok((dists, report))
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub category: String,
    pub dropout_rate: f64,
    pub pass_index: usize,
    pub probs: Vec<f64>,
}

/// Newline-delimited JSON, one record per pass.
pub fn format_predictions(dists: &[PredictionDistribution]) -> String {
    let mut out = String::new();
    for d in dists {
        for (t, probs) in d.passes.iter().enumerate() {
            let rec = PredictionRecord {
                id: d.id.clone(),
                category: d.category.to_string(),
                dropout_rate: d.dropout_rate,
                pass_index: t,
                probs: probs.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

/// Parses and regroups a predictions file. Records of one distribution must
/// carry pass indices `0..T` (any order); groups keep first-appearance order.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionDistribution>, McdError> {
    type Key = (String, LengthCategory, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(line).map_err(|e| McdError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let category: LengthCategory =
            rec.category
                .parse()
                .map_err(|e: DatasetError| McdError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
        check_rate(rec.dropout_rate).map_err(|e| McdError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let key = (rec.id, category, rec.dropout_rate.to_bits());
        let passes = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            BTreeMap::new()
        });
        if passes.insert(rec.pass_index, rec.probs).is_some() {
            return Err(McdError::Malformed {
                line: line_no,
                message: format!("duplicate pass_index {}", rec.pass_index),
            });
        }
    }

    order
        .into_iter()
        .map(|key| {
            let passes = groups.remove(&key).expect("grouped");
            let (id, category, rate_bits) = key;
            let t = passes.len();
            if passes.keys().last() != Some(&(t - 1)) {
                return Err(McdError::InvalidDistribution {
                    id,
                    category: category.to_string(),
                    rate: f64::from_bits(rate_bits),
                    message: format!("pass indices are not 0..{t}"),
                });
            }
            let dist = PredictionDistribution {
                id,
                category,
                dropout_rate: f64::from_bits(rate_bits),
                passes: passes.into_values().collect(),
            };
            dist.validate()?;
            Ok(dist)
        })
        .collect()
}
