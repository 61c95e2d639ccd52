//! Toy two-class corpora for end-to-end checks.
//!
//! PVP-labelled sequences draw residues from the first half of the alphabet
//! (`ACDEFGHIKL`), non-PVP from the second (`MNPQRSTVWY`). The halves have
//! disjoint colours and walk directions, so an image classifier can separate
//! them. Lengths are uniform over a range straddling both default length
//! thresholds, so all four length categories are populated.

use std::ops::RangeInclusive;

use rand::Rng;

use crate::rng;
use crate::seq::{ClassLabel, ProteinSequence, ALPHABET};

pub const DEFAULT_LENGTHS: RangeInclusive<usize> = 150..=550;

/// `per_class` PVP records followed by `per_class` non-PVP records, ids
/// `pvp_0000...` and `non_0000...`.
pub fn two_class_corpus(
    per_class: usize,
    lengths: RangeInclusive<usize>,
    seed: u64,
) -> Vec<(ProteinSequence, ClassLabel)> {
    let mut rng = rng::derive(seed, &[b"synthetic"]);
    let mut out = Vec::with_capacity(2 * per_class);
    for (prefix, label, residues) in [
        ("pvp", ClassLabel::Pvp, &ALPHABET[..10]),
        ("non", ClassLabel::NonPvp, &ALPHABET[10..]),
    ] {
        for i in 0..per_class {
            let n = rng.random_range(lengths.clone());
            let body: Vec<u8> = (0..n)
                .map(|_| residues[rng.random_range(0..residues.len())])
                .collect();
            let seq =
                ProteinSequence::new(format!("{prefix}_{i:04}"), body).expect("alphabet residues");
            out.push((seq, label));
        }
    }
    out
}

/// FASTA text and `id<TAB>label` manifest for a corpus.
pub fn to_fasta_and_manifest(corpus: &[(ProteinSequence, ClassLabel)]) -> (String, String) {
    let mut fasta = String::new();
    let mut manifest = String::new();
    for (seq, label) in corpus {
        fasta.push_str(&seq.to_fasta(60));
        manifest.push_str(&format!("{}\t{label}\n", seq.id()));
    }
    (fasta, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_use_disjoint_residues() {
        let corpus = two_class_corpus(20, DEFAULT_LENGTHS, 1);
        assert_eq!(corpus.len(), 40);
        for (seq, label) in &corpus {
            assert!(DEFAULT_LENGTHS.contains(&seq.len()));
            let half = if label.is_pvp() {
                &ALPHABET[..10]
            } else {
                &ALPHABET[10..]
            };
            assert!(seq.residues().iter().all(|r| half.contains(r)));
        }
        assert_eq!(corpus, two_class_corpus(20, DEFAULT_LENGTHS, 1));
    }

    #[test]
    fn fasta_and_manifest_parse_back() {
        let corpus = two_class_corpus(3, 10..=20, 2);
        let (fasta, manifest) = to_fasta_and_manifest(&corpus);
        let seqs =
            crate::seq::parse_fasta(fasta.as_bytes(), crate::seq::SanitizePolicy::Strict).unwrap();
        let labels = crate::seq::load_manifest(manifest.as_bytes()).unwrap();
        for ((seq, label), parsed) in corpus.iter().zip(&seqs) {
            assert_eq!(seq, parsed);
            assert_eq!(labels[seq.id()], *label);
        }
    }
}
