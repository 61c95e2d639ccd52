//! Batch encoding to a directory of PNGs plus the `index.tsv` / `lengths.tsv`
//! files consumed by the later pipeline stages.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{encode, AngleColorTable, EncodeError, EncodingConfig};
use crate::seq::{ClassLabel, ProteinSequence};

pub const INDEX_FILE: &str = "index.tsv";
pub const LENGTHS_FILE: &str = "lengths.tsv";
pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot prepare output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("ids '{first}' and '{second}' map to the same file name '{file}'")]
    DuplicateFile {
        first: String,
        second: String,
        file: String,
    },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("failed to write image for '{id}': {message}")]
    File { id: String, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed index line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// One row of `index.tsv`: `id<TAB>path<TAB>label`.
///
/// `path` is stored as written; relative paths resolve against the directory
/// holding the index file. A missing label is written as `unknown`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexRow {
    pub id: String,
    pub path: String,
    pub label: Option<ClassLabel>,
}

impl IndexRow {
    pub fn resolve(&self, base_dir: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

pub fn format_index(rows: &[IndexRow]) -> String {
    let mut out = String::new();
    for row in rows {
        let label = row
            .label
            .map_or_else(|| UNKNOWN_LABEL.to_owned(), |l| l.to_string());
        let _ = writeln!(out, "{}\t{}\t{}", row.id, row.path, label);
    }
    out
}

pub fn parse_index(text: &str) -> Result<Vec<IndexRow>, CorpusError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, path, label] = fields[..] else {
            return Err(CorpusError::Malformed {
                line: i + 1,
                message: "expected 3 tab-separated fields".into(),
            });
        };
        let label = if label == UNKNOWN_LABEL {
            None
        } else {
            Some(
                label
                    .parse::<ClassLabel>()
                    .map_err(|e| CorpusError::Malformed {
                        line: i + 1,
                        message: e.to_string(),
                    })?,
            )
        };
        rows.push(IndexRow {
            id: id.to_owned(),
            path: path.to_owned(),
            label,
        });
    }
    Ok(rows)
}

pub fn format_lengths(lengths: &[(String, usize)]) -> String {
    let mut out = String::new();
    for (id, n) in lengths {
        let _ = writeln!(out, "{id}\t{n}");
    }
    out
}

pub fn parse_lengths(text: &str) -> Result<BTreeMap<String, usize>, CorpusError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CorpusError::Malformed {
            line: i + 1,
            message: "expected 'id<TAB>length'".into(),
        };
        let (id, n) = line.split_once('\t').ok_or_else(bad)?;
        out.insert(id.to_owned(), n.trim().parse().map_err(|_| bad())?);
    }
    Ok(out)
}

/// File name used for a sequence id; path separators and other unsafe
/// characters become `_`.
pub fn image_file_name(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.png")
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Abort on the first per-file failure instead of skipping the record.
    pub strict: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            jobs: 1,
            strict: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct CorpusOutcome {
    pub index: Vec<IndexRow>,
    pub failures: Vec<CorpusError>,
}

/// Encodes every sequence to `<out_dir>/<id>.png` and writes `index.tsv` and
/// `lengths.tsv` in input order. Output bytes do not depend on `opts.jobs`.
pub fn encode_corpus(
    items: &[(ProteinSequence, Option<ClassLabel>)],
    cfg: &EncodingConfig,
    table: &AngleColorTable,
    out_dir: &Path,
    opts: &CorpusOptions,
) -> Result<CorpusOutcome, CorpusError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| CorpusError::OutputDir {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    for (seq, _) in items {
        let file = image_file_name(seq.id());
        if let Some(first) = seen.insert(file.clone(), seq.id()) {
            return Err(CorpusError::DuplicateFile {
                first: first.to_owned(),
                second: seq.id().to_owned(),
                file,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CorpusError::ThreadPool(e.to_string()))?;

    let results: Vec<Result<IndexRow, CorpusError>> = pool.install(|| {
        items
            .par_iter()
            .map(|(seq, label)| {
                let file = image_file_name(seq.id());
                let png = encode(seq, cfg, table)?.to_png()?;
                fs::write(out_dir.join(&file), png).map_err(|e| CorpusError::File {
                    id: seq.id().to_owned(),
                    message: e.to_string(),
                })?;
                Ok(IndexRow {
                    id: seq.id().to_owned(),
                    path: file,
                    label: *label,
                })
            })
            .collect()
    });

    let mut outcome = CorpusOutcome::default();
    let mut written = HashSet::new();
    for result in results {
        match result {
            Ok(row) => {
                written.insert(row.id.clone());
                outcome.index.push(row);
            }
            Err(e) if opts.strict => return Err(e),
            Err(e) => {
                log::warn!("{e}");
                outcome.failures.push(e);
            }
        }
    }

    let lengths: Vec<(String, usize)> = items
        .iter()
        .filter(|(seq, _)| written.contains(seq.id()))
        .map(|(seq, _)| (seq.id().to_owned(), seq.len()))
        .collect();
    write_file(&out_dir.join(INDEX_FILE), &format_index(&outcome.index))?;
    write_file(&out_dir.join(LENGTHS_FILE), &format_lengths(&lengths))?;
    Ok(outcome)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<(ProteinSequence, Option<ClassLabel>)> {
        (0..n)
            .map(|i| {
                let s = ProteinSequence::new(format!("s{i}"), "MKVLAGHWYC".repeat(i + 1)).unwrap();
                (
                    s,
                    Some(if i % 2 == 0 {
                        ClassLabel::Pvp
                    } else {
                        ClassLabel::NonPvp
                    }),
                )
            })
            .collect()
    }

    #[test]
    fn three_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EncodingConfig {
            size: 64,
            ..Default::default()
        };
        let out = encode_corpus(
            &items(3),
            &cfg,
            &AngleColorTable::standard(),
            dir.path(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.index.len(), 3);
        assert!(out.failures.is_empty());
        for i in 0..3 {
            assert!(dir.path().join(format!("s{i}.png")).is_file());
        }
        let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(
            index,
            "s0\ts0.png\tPVP\ns1\ts1.png\tnon-PVP\ns2\ts2.png\tPVP\n"
        );
        assert_eq!(parse_index(&index).unwrap(), out.index);
        let lengths =
            parse_lengths(&fs::read_to_string(dir.path().join(LENGTHS_FILE)).unwrap()).unwrap();
        assert_eq!(lengths["s2"], 30);
    }

    #[test]
    fn empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let out = encode_corpus(
            &[],
            &EncodingConfig::default(),
            &AngleColorTable::standard(),
            dir.path(),
            &Default::default(),
        )
        .unwrap();
        assert!(out.index.is_empty());
        assert_eq!(fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap(), "");
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = encode_corpus(
            &items(1),
            &EncodingConfig::default(),
            &AngleColorTable::standard(),
            &blocker.join("sub"),
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::OutputDir { .. }));
    }

    #[test]
    fn unknown_label_and_file_names() {
        assert_eq!(image_file_name("sp|P1|X/y"), "sp_P1_X_y.png");
        let rows = vec![IndexRow {
            id: "a".into(),
            path: "a.png".into(),
            label: None,
        }];
        let text = format_index(&rows);
        assert_eq!(text, "a\ta.png\tunknown\n");
        assert_eq!(parse_index(&text).unwrap(), rows);
        assert!(parse_index("a\tb\n").is_err());
    }

    #[test]
    fn colliding_file_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = ProteinSequence::new("x/1", "AC").unwrap();
        let b = ProteinSequence::new("x_1", "AC").unwrap();
        let err = encode_corpus(
            &[(a, None), (b, None)],
            &EncodingConfig::default(),
            &AngleColorTable::standard(),
            dir.path(),
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateFile { .. }));
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let (d1, d4) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = EncodingConfig {
            size: 128,
            ..Default::default()
        };
        let t = AngleColorTable::standard();
        let data = items(12);
        encode_corpus(
            &data,
            &cfg,
            &t,
            d1.path(),
            &CorpusOptions {
                jobs: 1,
                strict: true,
            },
        )
        .unwrap();
        encode_corpus(
            &data,
            &cfg,
            &t,
            d4.path(),
            &CorpusOptions {
                jobs: 4,
                strict: true,
            },
        )
        .unwrap();
        for name in ["index.tsv", "lengths.tsv", "s0.png", "s11.png"] {
            assert_eq!(
                fs::read(d1.path().join(name)).unwrap(),
                fs::read(d4.path().join(name)).unwrap()
            );
        }
    }
}
