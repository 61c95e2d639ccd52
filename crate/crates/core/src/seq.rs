//! Protein sequences, FASTA parsing and the label manifest.
//!
//! Residues are kept as uppercase ASCII bytes drawn from the 20-letter
//! [`ALPHABET`]. The alphabet order is load-bearing: a residue's index
//! determines its walk angle in the encoder.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The 20 standard amino acids in encoding order.
pub const ALPHABET: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

const INVALID: u8 = u8::MAX;

const INDEX_TABLE: [u8; 256] = {
    let mut table = [INVALID; 256];
    let mut i = 0;
    while i < ALPHABET.len() {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table
};

/// Position of an uppercase residue in [`ALPHABET`].
#[inline]
pub fn residue_index(residue: u8) -> Option<usize> {
    match INDEX_TABLE[residue as usize] {
        INVALID => None,
        idx => Some(idx as usize),
    }
}

/// What to do with letters outside the 20-residue alphabet (X, B, Z, U, O, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SanitizePolicy {
    /// Drop the residue and count it in [`ProteinSequence::skipped`].
    #[default]
    Skip,
    /// Reject the whole record.
    Strict,
}

impl FromStr for SanitizePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "skip" => Ok(SanitizePolicy::Skip),
            "strict" => Ok(SanitizePolicy::Strict),
            other => Err(format!(
                "unknown sanitize policy '{other}' (expected skip or strict)"
            )),
        }
    }
}

/// A validated protein sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinSequence {
    id: String,
    residues: Vec<u8>,
    skipped: usize,
}

impl ProteinSequence {
    /// Builds a sequence from already-clean residues.
    pub fn new(id: impl Into<String>, residues: impl AsRef<[u8]>) -> Result<Self, SequenceError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(SequenceError::BadId(id));
        }
        let residues = residues.as_ref().to_vec();
        if residues.is_empty() {
            return Err(SequenceError::Empty(id));
        }
        if let Some(&bad) = residues.iter().find(|&&r| residue_index(r).is_none()) {
            return Err(SequenceError::InvalidResidue {
                id,
                residue: bad as char,
            });
        }
        Ok(ProteinSequence {
            id,
            residues,
            skipped: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &[u8] {
        &self.residues
    }

    pub fn as_str(&self) -> &str {
        // residues are ASCII by construction
        std::str::from_utf8(&self.residues).expect("ASCII residues")
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Non-alphabet residues dropped by [`SanitizePolicy::Skip`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// FASTA text for this record, sequence wrapped at `width` columns.
    pub fn to_fasta(&self, width: usize) -> String {
        let width = width.max(1);
        let mut out = String::with_capacity(self.len() + self.len() / width + self.id.len() + 4);
        out.push('>');
        out.push_str(&self.id);
        out.push('\n');
        for chunk in self.residues.chunks(width) {
            out.push_str(std::str::from_utf8(chunk).expect("ASCII residues"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("sequence id '{0}' is empty or contains whitespace")]
    BadId(String),
    #[error("sequence '{0}' has no residues")]
    Empty(String),
    #[error("sequence '{id}' contains residue '{residue}' outside the alphabet")]
    InvalidResidue { id: String, residue: char },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("input is not valid UTF-8 text at byte offset {offset}")]
    NotText { offset: usize },
    #[error("sequence data before the first '>' header at byte offset {offset}")]
    MissingHeader { offset: usize },
    #[error("header at byte offset {offset} has an empty id")]
    EmptyId { offset: usize },
    #[error("record '{id}' (byte offset {offset}) has an empty body")]
    EmptyRecord { id: String, offset: usize },
    #[error("record '{id}' (byte offset {offset}) has no residues left after sanitization")]
    EmptyAfterSanitize { id: String, offset: usize },
    #[error("record '{id}' (byte offset {offset}) contains non-standard residue '{residue}'")]
    NonStandardResidue {
        id: String,
        offset: usize,
        residue: char,
    },
}

struct PendingRecord {
    id: String,
    offset: usize,
    residues: Vec<u8>,
    skipped: usize,
    saw_body: bool,
}

impl PendingRecord {
    fn finish(self) -> Result<ProteinSequence, ParseError> {
        let PendingRecord {
            id,
            offset,
            residues,
            skipped,
            saw_body,
        } = self;
        if !saw_body {
            return Err(ParseError::EmptyRecord { id, offset });
        }
        if residues.is_empty() {
            return Err(ParseError::EmptyAfterSanitize { id, offset });
        }
        if skipped > 0 {
            log::warn!("record '{id}': skipped {skipped} non-standard residue(s)");
        }
        Ok(ProteinSequence {
            id,
            residues,
            skipped,
        })
    }
}

/// Parses FASTA text into sequences.
///
/// Sequence lines are concatenated, whitespace is dropped and letters are
/// uppercased before validation. Both LF and CRLF line endings are accepted.
/// The record id is the header text up to the first whitespace; a header
/// that starts with whitespace has an empty id.
pub fn parse_fasta(
    bytes: &[u8],
    policy: SanitizePolicy,
) -> Result<Vec<ProteinSequence>, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::NotText {
        offset: e.valid_up_to(),
    })?;

    let mut records = Vec::new();
    let mut current: Option<PendingRecord> = None;
    let mut offset = 0usize;

    for raw_line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);

        if let Some(header) = line.strip_prefix('>') {
            if let Some(done) = current.take() {
                records.push(done.finish()?);
            }
            let id = header.split(char::is_whitespace).next().unwrap_or("");
            if id.is_empty() {
                return Err(ParseError::EmptyId {
                    offset: line_offset,
                });
            }
            current = Some(PendingRecord {
                id: id.to_owned(),
                offset: line_offset,
                residues: Vec::new(),
                skipped: 0,
                saw_body: false,
            });
            continue;
        }

        let Some(rec) = current.as_mut() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(ParseError::MissingHeader {
                offset: line_offset,
            });
        };

        for byte in line.bytes() {
            if byte.is_ascii_whitespace() {
                continue;
            }
            rec.saw_body = true;
            let upper = byte.to_ascii_uppercase();
            if residue_index(upper).is_some() {
                rec.residues.push(upper);
            } else {
                match policy {
                    SanitizePolicy::Skip => rec.skipped += 1,
                    SanitizePolicy::Strict => {
                        return Err(ParseError::NonStandardResidue {
                            id: rec.id.clone(),
                            offset: rec.offset,
                            residue: upper as char,
                        });
                    }
                }
            }
        }
    }

    if let Some(done) = current.take() {
        records.push(done.finish()?);
    }
    Ok(records)
}

/// The eight PVP structural subclasses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PvpClass {
    Baseplate,
    Portal,
    TailFiber,
    MajorCapsid,
    MinorCapsid,
    MajorTail,
    MinorTail,
    Others,
}

impl PvpClass {
    pub const ALL: [PvpClass; 8] = [
        PvpClass::Baseplate,
        PvpClass::Portal,
        PvpClass::TailFiber,
        PvpClass::MajorCapsid,
        PvpClass::MinorCapsid,
        PvpClass::MajorTail,
        PvpClass::MinorTail,
        PvpClass::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PvpClass::Baseplate => "Baseplate",
            PvpClass::Portal => "Portal",
            PvpClass::TailFiber => "Tail Fiber",
            PvpClass::MajorCapsid => "Major Capsid",
            PvpClass::MinorCapsid => "Minor Capsid",
            PvpClass::MajorTail => "Major Tail",
            PvpClass::MinorTail => "Minor Tail",
            PvpClass::Others => "Others",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Sequence label: binary PVP / non-PVP, or one of the PVP subclasses.
///
/// A subclass always implies the binary label PVP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    NonPvp,
    Pvp,
    Subclass(PvpClass),
}

impl ClassLabel {
    pub fn is_pvp(self) -> bool {
        !matches!(self, ClassLabel::NonPvp)
    }

    /// Binary class index: 0 = non-PVP, 1 = PVP (the positive class).
    pub fn binary_index(self) -> usize {
        usize::from(self.is_pvp())
    }

    pub fn subclass(self) -> Option<PvpClass> {
        match self {
            ClassLabel::Subclass(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::NonPvp => f.write_str("non-PVP"),
            ClassLabel::Pvp => f.write_str("PVP"),
            ClassLabel::Subclass(c) => f.write_str(c.name()),
        }
    }
}

impl FromStr for ClassLabel {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        let label = match key.as_str() {
            "pvp" => ClassLabel::Pvp,
            "nonpvp" => ClassLabel::NonPvp,
            _ => PvpClass::ALL
                .into_iter()
                .find(|c| c.name().replace(' ', "").to_lowercase() == key)
                .map(ClassLabel::Subclass)
                .ok_or_else(|| ManifestError::UnknownLabel(s.trim().to_owned()))?,
        };
        Ok(label)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("manifest is not valid UTF-8 text at byte offset {offset}")]
    NotText { offset: usize },
    #[error("malformed manifest line {line}: expected 'id<TAB>label'")]
    Malformed { line: usize },
    #[error("unknown class label '{0}'")]
    UnknownLabel(String),
    #[error("line {line}: unknown class label '{label}'")]
    UnknownLabelAt { line: usize, label: String },
    #[error("id '{id}' has conflicting labels '{first}' and '{second}' (line {line})")]
    Conflict {
        id: String,
        first: ClassLabel,
        second: ClassLabel,
        line: usize,
    },
}

/// Reads a `id<TAB>label` manifest. Blank lines and `#` comments are ignored.
/// Repeating an id with the same label is accepted.
pub fn load_manifest(bytes: &[u8]) -> Result<BTreeMap<String, ClassLabel>, ManifestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ManifestError::NotText {
        offset: e.valid_up_to(),
    })?;
    let mut labels = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(ManifestError::Malformed { line: line_no });
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(ManifestError::Malformed { line: line_no });
        }
        let label: ClassLabel = label.parse().map_err(|_| ManifestError::UnknownLabelAt {
            line: line_no,
            label: label.trim().to_owned(),
        })?;
        match labels.get(id) {
            Some(&existing) if existing != label => {
                return Err(ManifestError::Conflict {
                    id: id.to_owned(),
                    first: existing,
                    second: label,
                    line: line_no,
                });
            }
            Some(_) => {}
            None => {
                labels.insert(id.to_owned(), label);
            }
        }
    }
    Ok(labels)
}
