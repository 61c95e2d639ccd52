#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proteoknight::synthetic::{to_fasta_and_manifest, two_class_corpus};

pub fn run(args: &[&str]) -> Output {
    run_with_env(args, &[])
}

pub fn run_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_proteoknight"));
    cmd.args(args)
        .env_remove("PROTEOKNIGHT_SEED")
        .env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs and panics with the captured output unless the exit code matches.
pub fn expect_code(args: &[&str], code: i32) -> Output {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "args {args:?}\nstdout:\n{}\nstderr:\n{}",
        stdout(&out),
        stderr(&out)
    );
    out
}

/// Writes `toy.fa` and `labels.tsv` for a synthetic two-class corpus.
pub fn write_toy_corpus(dir: &Path, per_class: usize, seed: u64) -> (PathBuf, PathBuf) {
    let corpus = two_class_corpus(per_class, proteoknight::synthetic::DEFAULT_LENGTHS, seed);
    let (fasta, manifest) = to_fasta_and_manifest(&corpus);
    let fa = dir.join("toy.fa");
    let mf = dir.join("labels.tsv");
    std::fs::write(&fa, fasta).unwrap();
    std::fs::write(&mf, manifest).unwrap();
    (fa, mf)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Value of a `name<TAB>value` line in command output.
pub fn field(text: &str, name: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(name)?.strip_prefix('\t').map(str::to_owned))
}
