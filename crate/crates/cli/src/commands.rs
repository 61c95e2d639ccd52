//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use proteoknight::classifier::{
    argmax, confusion, format_ratio, metrics, train as train_model, Architecture, ImageTensor,
    Model, Optimizer, Predictor, TrainConfig,
};
use proteoknight::corpus::{
    encode_corpus, format_index, parse_index, parse_lengths, CorpusOptions, IndexRow, LENGTHS_FILE,
};
use proteoknight::dataset::{
    categorize, find_equilibrium_delta, format_categories, parse_categories, stratified_split,
    LengthCategory, SplitConfig, CATEGORIES_FILE,
};
use proteoknight::mcd::{
    self, format_histogram, format_predictions, parse_predictions, run_category_analysis,
    summarize, McdConfig, McdSample, PredictionDistribution, UncertaintyReport,
};
use proteoknight::seq::load_manifest;
use proteoknight::{
    parse_fasta, rng, AngleColorTable, ClassLabel, EncodedImage, EncodingConfig, SanitizePolicy,
};

use crate::config::{pick, FileConfig};
use crate::{EncodeArgs, EvalArgs, McdArgs, PredictArgs, ReportArgs, SplitArgs, TrainArgs};

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.csv";
pub const EXTREMES_FILE: &str = "extremes.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";

/// A command failure and the exit code it maps to. Panics exit with 3.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, settings or parameter values (exit 1).
    Usage(anyhow::Error),
    /// Unreadable or inconsistent input data (exit 2).
    Data(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) => e,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

trait UsageExt<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

fn usage(msg: String) -> Failure {
    Failure::Usage(anyhow!(msg))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Directory that relative paths inside `index` resolve against.
fn base_dir(index: &Path) -> anyhow::Result<PathBuf> {
    let parent = index
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parent
        .canonicalize()
        .with_context(|| format!("resolving {}", parent.display()))
}

/// Index rows with their image paths resolved.
fn read_index(path: &Path) -> anyhow::Result<Vec<(IndexRow, PathBuf)>> {
    let rows = parse_index(&read_text(path)?).with_context(|| format!("in {}", path.display()))?;
    let base = base_dir(path)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let p = r.resolve(&base);
            (r, p)
        })
        .collect())
}

fn load_tensor(path: &Path, side: usize) -> anyhow::Result<ImageTensor> {
    let image =
        EncodedImage::load_png(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ImageTensor::from_image(&image, side)?)
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Ok(Model::load(path)?)
}

pub fn encode(a: &EncodeArgs, file: &FileConfig) -> Result<(), Failure> {
    let cfg = EncodingConfig {
        size: pick(a.size, file.size, 512),
        radius: pick(a.radius, file.radius, 15.0),
        point_size: pick(a.point_size, file.point_size, 2),
        ..Default::default()
    };
    cfg.validate().usage()?;
    let policy: SanitizePolicy = pick(a.policy.clone(), file.policy.clone(), "skip".into())
        .parse()
        .map_err(usage)?;
    let strict = a.strict || file.strict.unwrap_or(false);
    let jobs = pick(a.jobs, file.jobs, 0);

    let fasta = fs::read(&a.fasta).with_context(|| format!("reading {}", a.fasta.display()))?;
    let seqs = parse_fasta(&fasta, policy).with_context(|| format!("in {}", a.fasta.display()))?;
    for s in seqs.iter().filter(|s| s.skipped() > 0) {
        log::info!(
            "{}: dropped {} non-standard residue(s)",
            s.id(),
            s.skipped()
        );
    }

    let labels = match &a.manifest {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            Some(load_manifest(&bytes).with_context(|| format!("in {}", path.display()))?)
        }
        None => None,
    };
    let mut missing = Vec::new();
    let items: Vec<_> = seqs
        .into_iter()
        .map(|s| {
            let label = labels.as_ref().and_then(|m| m.get(s.id()).copied());
            if labels.is_some() && label.is_none() {
                missing.push(s.id().to_owned());
            }
            (s, label)
        })
        .collect();
    if !missing.is_empty() {
        let shown = missing
            .iter()
            .take(5)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        if strict {
            return Err(Failure::Data(anyhow!(
                "{} id(s) have no manifest entry: {shown}",
                missing.len()
            )));
        }
        log::warn!(
            "{} id(s) have no manifest entry and are labelled unknown: {shown}",
            missing.len()
        );
    }
    if let Some(m) = &labels {
        let present: std::collections::HashSet<&str> = items.iter().map(|(s, _)| s.id()).collect();
        let unused = m.keys().filter(|id| !present.contains(id.as_str())).count();
        if unused > 0 {
            log::warn!("{unused} manifest id(s) do not occur in the FASTA file");
        }
    }

    let outcome = encode_corpus(
        &items,
        &cfg,
        &AngleColorTable::standard(),
        &a.out,
        &CorpusOptions { jobs, strict },
    )?;
    println!(
        "encoded {} of {} sequences into {}",
        outcome.index.len(),
        items.len(),
        a.out.display()
    );
    if !outcome.failures.is_empty() {
        log::warn!(
            "{} record(s) failed and were skipped",
            outcome.failures.len()
        );
    }
    Ok(())
}

pub fn split(a: &SplitArgs, file: &FileConfig) -> Result<(), Failure> {
    let auto = a.auto_delta || file.auto_delta.unwrap_or(false);
    if auto && (a.delta_pvp.is_some() || a.delta_nonpvp.is_some()) {
        return Err(usage(
            "--auto-delta cannot be combined with explicit thresholds".into(),
        ));
    }
    let defaults = SplitConfig::default();
    let mut cfg = SplitConfig {
        delta_pvp: pick(a.delta_pvp, file.delta_pvp, defaults.delta_pvp),
        delta_nonpvp: pick(a.delta_nonpvp, file.delta_nonpvp, defaults.delta_nonpvp),
        test_fraction: pick(a.test_fraction, file.test_fraction, defaults.test_fraction),
        seed: file.seed(a.seed).usage()?,
    };
    cfg.validate().usage()?;

    let rows = read_index(&a.index)?;
    let lengths_path = match &a.lengths {
        Some(p) => p.clone(),
        None => base_dir(&a.index)?.join(LENGTHS_FILE),
    };
    let lengths = parse_lengths(&read_text(&lengths_path)?)
        .with_context(|| format!("in {}", lengths_path.display()))?;

    let total = rows.len();
    let mut labelled = Vec::new();
    for (row, path) in rows {
        let Some(label) = row.label else { continue };
        let n = *lengths
            .get(&row.id)
            .ok_or_else(|| anyhow!("no length for '{}' in {}", row.id, lengths_path.display()))?;
        labelled.push((row, path, label, n));
    }
    if labelled.len() < total {
        log::warn!(
            "{} record(s) with unknown label excluded from the split",
            total - labelled.len()
        );
    }
    if labelled.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no labelled records in {}",
            a.index.display()
        )));
    }

    if auto {
        let of = |pvp: bool| {
            labelled
                .iter()
                .filter(|r| r.2.is_pvp() == pvp)
                .map(|r| r.3)
                .collect::<Vec<_>>()
        };
        let (pvp, non) = (of(true), of(false));
        if !pvp.is_empty() {
            cfg.delta_pvp = find_equilibrium_delta(&pvp)?;
        }
        if !non.is_empty() {
            cfg.delta_nonpvp = find_equilibrium_delta(&non)?;
        }
    }

    let labels: Vec<ClassLabel> = labelled.iter().map(|r| r.2).collect();
    let split = stratified_split(&labels, &cfg)?;
    let subset = |idx: &[usize]| {
        let rows: Vec<IndexRow> = idx
            .iter()
            .map(|&i| {
                let (row, path, ..) = &labelled[i];
                IndexRow {
                    id: row.id.clone(),
                    path: path.display().to_string(),
                    label: row.label,
                }
            })
            .collect();
        format_index(&rows)
    };
    let categories: Vec<(String, LengthCategory)> = labelled
        .iter()
        .map(|(row, _, label, n)| (row.id.clone(), categorize(*n, *label, &cfg)))
        .collect();

    create_dir(&a.out)?;
    write_text(&a.out.join(TRAIN_FILE), &subset(&split.train))?;
    write_text(&a.out.join(TEST_FILE), &subset(&split.test))?;
    write_text(
        &a.out.join(CATEGORIES_FILE),
        &format_categories(&categories),
    )?;

    println!(
        "delta_pvp\t{}\ndelta_nonpvp\t{}",
        cfg.delta_pvp, cfg.delta_nonpvp
    );
    println!("train\t{}\ntest\t{}", split.train.len(), split.test.len());
    for category in LengthCategory::ALL {
        println!(
            "{category}\t{}",
            categories.iter().filter(|c| c.1 == category).count()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClassMode {
    Binary,
    Multiclass,
}

impl ClassMode {
    fn parse(s: &str) -> Result<Self, Failure> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(ClassMode::Binary),
            "multiclass" => Ok(ClassMode::Multiclass),
            other => Err(usage(format!(
                "unknown class mode '{other}' (expected binary or multiclass)"
            ))),
        }
    }

    fn classes(self) -> usize {
        match self {
            ClassMode::Binary => 2,
            ClassMode::Multiclass => proteoknight::seq::PvpClass::ALL.len(),
        }
    }

    fn target(self, label: ClassLabel) -> Option<usize> {
        match self {
            ClassMode::Binary => Some(label.binary_index()),
            ClassMode::Multiclass => label.subclass().map(|c| c.index()),
        }
    }
}

/// Tensors and class targets for every index row usable in `mode`.
fn load_labelled(
    path: &Path,
    side: usize,
    mode: ClassMode,
) -> anyhow::Result<Vec<(ImageTensor, usize)>> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (row, image) in read_index(path)? {
        match row.label.and_then(|l| mode.target(l)) {
            Some(target) => out.push((load_tensor(&image, side)?, target)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} record(s) in {} have no usable label and were skipped",
            path.display()
        );
    }
    Ok(out)
}

pub fn train(a: &TrainArgs, file: &FileConfig) -> Result<(), Failure> {
    let mode = ClassMode::parse(&pick(
        a.classes.clone(),
        file.classes.clone(),
        "binary".into(),
    ))?;
    let arch = Architecture {
        input_side: pick(a.input_size, file.input_size, 64),
        classes: mode.classes(),
        ..Default::default()
    };
    let optimizer: Optimizer = pick(a.optimizer.clone(), file.optimizer.clone(), "sgd".into())
        .parse()
        .map_err(usage)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: pick(a.epochs, file.epochs, defaults.epochs),
        batch_size: pick(a.batch_size, file.batch_size, defaults.batch_size),
        learning_rate: pick(a.learning_rate, file.learning_rate, defaults.learning_rate),
        optimizer,
        seed: file.seed(a.seed).usage()?,
    };
    cfg.validate().usage()?;
    let mut model =
        Model::init(arch.clone(), pick(a.dropout, file.dropout, 0.2), cfg.seed).usage()?;

    let data = load_labelled(&a.train, arch.input_side, mode)?;
    if data.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no usable training records in {}",
            a.train.display()
        )));
    }
    let report = train_model(&mut model, &data, &cfg)?;
    println!("epoch\tloss");
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("{epoch}\t{loss}");
    }
    println!("train_accuracy\t{:.6}", report.final_accuracy);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    Ok(())
}

pub fn eval(a: &EvalArgs, file: &FileConfig) -> Result<(), Failure> {
    let threshold = pick(a.threshold, file.threshold, 0.5);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("threshold {threshold} is outside [0, 1]")));
    }
    let model = load_model(&a.model)?;
    let side = model.architecture().input_side;
    let mut named: Vec<(&str, String)> = Vec::new();
    if model.classes() == 2 {
        let data = load_labelled(&a.test, side, ClassMode::Binary)?;
        let counts = confusion(&model, &data, threshold)?;
        for (name, v) in [
            ("tp", counts.tp),
            ("tn", counts.tn),
            ("fp", counts.fp),
            ("fn", counts.fn_),
        ] {
            named.push((name, v.to_string()));
        }
        for (name, v) in metrics(&counts).named() {
            named.push((name, format_ratio(v)));
        }
    } else {
        let data = load_labelled(&a.test, side, ClassMode::Multiclass)?;
        let mut correct = 0;
        for (input, target) in &data {
            if argmax(&model.predict(input)?) == *target {
                correct += 1;
            }
        }
        named.push(("n", data.len().to_string()));
        named.push((
            "accuracy",
            format_ratio((!data.is_empty()).then(|| correct as f64 / data.len() as f64)),
        ));
    }
    for (name, v) in &named {
        println!("{name}\t{v}");
    }
    if let Some(path) = &a.metrics_out {
        let mut csv = String::from("metric,value\n");
        for (name, v) in &named {
            let _ = writeln!(csv, "{name},{v}");
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

pub fn predict(a: &PredictArgs, file: &FileConfig) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let passes = pick(a.passes, file.passes, 0);
    let side = model.architecture().input_side;
    if passes == 0 {
        let header: Vec<String> = (0..model.classes()).map(|c| format!("p{c}")).collect();
        println!("image\t{}", header.join("\t"));
        for path in &a.image {
            let probs = model.predict(&load_tensor(path, side)?)?;
            let cols: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
            println!("{}\t{}", path.display(), cols.join("\t"));
        }
        return Ok(());
    }
    if passes < 2 {
        return Err(usage(
            "stochastic prediction needs at least 2 passes".into(),
        ));
    }
    if model.classes() != 2 {
        return Err(usage(
            "stochastic prediction reports need a binary model".into(),
        ));
    }
    let rate = a.rate.unwrap_or(model.dropout());
    let seed = file.seed(a.seed).usage()?;
    println!("image\tmean_P\tvariance\tentropy_mean_of_passes\tentropy_of_mean");
    for path in &a.image {
        let input = load_tensor(path, side)?;
        let key = path.display().to_string();
        let mut stream = rng::derive(
            seed,
            &[b"predict", key.as_bytes(), &rate.to_bits().to_le_bytes()],
        );
        let probs = (0..passes)
            .map(|_| {
                model
                    .predict_stochastic(&input, rate, &mut stream)
                    .map(|p| p[1])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mean_p = probs.iter().sum::<f64>() / passes as f64;
        let mean_h = probs
            .iter()
            .map(|&p| mcd::entropy(p))
            .sum::<Result<f64, _>>()?
            / passes as f64;
        println!(
            "{key}\t{mean_p}\t{}\t{mean_h}\t{}",
            mcd::population_variance(&probs),
            mcd::entropy(mean_p.clamp(0.0, 1.0))?
        );
    }
    Ok(())
}

/// Writes the report, extremes and aggregated histograms.
fn write_reports(
    dists: &[PredictionDistribution],
    report: &UncertaintyReport,
    out: &Path,
    bins: usize,
) -> Result<(), Failure> {
    if bins < 2 {
        return Err(usage(format!("need at least 2 histogram bins, got {bins}")));
    }
    let mut pooled: BTreeMap<(LengthCategory, u64), Vec<f64>> = BTreeMap::new();
    for d in dists {
        pooled
            .entry((d.category, d.dropout_rate.to_bits()))
            .or_default()
            .extend(d.positive_probs());
    }
    let mut hist = String::from("category,dropout_rate,");
    hist.push_str(format_histogram(&[]).trim_end());
    hist.push('\n');
    for ((category, bits), values) in pooled {
        for line in format_histogram(&mcd::histogram(&values, bins)?)
            .lines()
            .skip(1)
        {
            let _ = writeln!(hist, "{category},{},{line}", f64::from_bits(bits));
        }
    }
    create_dir(out)?;
    write_text(&out.join(REPORT_FILE), &report.to_csv())?;
    write_text(&out.join(EXTREMES_FILE), &report.extremes_csv())?;
    write_text(&out.join(HISTOGRAMS_FILE), &hist)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn mcd(a: &McdArgs, file: &FileConfig) -> Result<(), Failure> {
    let defaults = McdConfig::default();
    let cfg = McdConfig {
        passes: pick(a.passes, file.passes, defaults.passes),
        dropout_rates: pick(a.rates.clone(), file.rates.clone(), defaults.dropout_rates),
        samples_per_category: pick(
            a.samples_per_category,
            file.samples_per_category,
            defaults.samples_per_category,
        ),
        seed: file.seed(a.seed).usage()?,
        jobs: pick(a.jobs, file.jobs, 1),
    };
    cfg.validate().usage()?;
    if cfg.dropout_rates.is_empty() {
        return Err(usage("at least one dropout rate is required".into()));
    }
    let bins = pick(a.bins, file.bins, 10);

    let model = load_model(&a.model)?;
    if model.classes() != 2 {
        return Err(Failure::Usage(anyhow!(
            "uncertainty analysis needs a binary model"
        )));
    }
    let categories_path = match &a.categories {
        Some(p) => p.clone(),
        None => base_dir(&a.records)?.join(CATEGORIES_FILE),
    };
    let categories = parse_categories(&read_text(&categories_path)?)
        .with_context(|| format!("in {}", categories_path.display()))?;
    let side = model.architecture().input_side;
    let mut population = Vec::new();
    let mut uncategorized = 0;
    for (row, image) in read_index(&a.records)? {
        match categories.get(&row.id) {
            Some(&category) => population.push(McdSample {
                id: row.id,
                category,
                input: load_tensor(&image, side)?,
            }),
            None => uncategorized += 1,
        }
    }
    if uncategorized > 0 {
        log::warn!("{uncategorized} record(s) have no length category and were skipped");
    }

    let (dists, report) = run_category_analysis(&model, &population, &cfg)?;
    create_dir(&a.out)?;
    write_text(&a.out.join(PREDICTIONS_FILE), &format_predictions(&dists))?;
    write_reports(&dists, &report, &a.out, bins)
}

pub fn report(a: &ReportArgs, file: &FileConfig) -> Result<(), Failure> {
    let bins = pick(a.bins, file.bins, 10);
    let dists = parse_predictions(&read_text(&a.predictions)?)
        .with_context(|| format!("in {}", a.predictions.display()))?;
    if dists.is_empty() {
        return Err(Failure::Data(anyhow!(
            "{} holds no predictions",
            a.predictions.display()
        )));
    }
    let report = summarize(&dists)?;
    write_reports(&dists, &report, &a.out, bins)
}
