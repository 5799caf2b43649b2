//! Shared fixtures and straight-line reference implementations for the
//! integration tests.

#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qarank::data::{write_canonical, AnswerId, AnswerStore, Dataset, QAExample};
use qarank::embeddings::{EmbeddingTable, TokenId, Vocabulary};
use qarank::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Synthetic {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub data: Dataset,
}

pub struct SyntheticSpec {
    /// Word types besides PAD and UNK.
    pub words: usize,
    pub questions: usize,
    pub distractors: usize,
    pub pool: usize,
    pub embed_dim: usize,
    /// Keywords each question shares with its ground-truth answer; 0 gives
    /// unrelated random texts.
    pub keywords: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            words: 48,
            questions: 20,
            distractors: 20,
            pool: 10,
            embed_dim: 16,
            keywords: 0,
            seed: 5,
        }
    }
}

/// Random questions, each with one ground-truth answer in a pool of
/// `spec.pool` candidates.
pub fn synthetic(spec: &SyntheticSpec) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabulary::new();
    for w in 0..spec.words {
        vocab.insert(&format!("w{w}"));
    }
    let table = EmbeddingTable::new(Matrix::uniform(vocab.len(), spec.embed_dim, 0.5, &mut rng), true);
    let text = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<TokenId> {
        let n = rng.random_range(lo..=hi);
        (0..n).map(|_| rng.random_range(2..vocab.len() as TokenId)).collect()
    };

    let mut words: Vec<TokenId> = (2..vocab.len() as TokenId).collect();
    words.shuffle(&mut rng);
    let keys: Vec<Vec<TokenId>> = (0..spec.questions)
        .map(|q| words[q * spec.keywords..(q + 1) * spec.keywords].to_vec())
        .collect();
    let with_keys = |rng: &mut ChaCha8Rng, mut t: Vec<TokenId>, k: &[TokenId]| {
        for &w in k {
            let at = rng.random_range(0..=t.len());
            t.insert(at, w);
        }
        t
    };

    let mut answers = AnswerStore::new();
    let n_answers = spec.questions + spec.distractors;
    for a in 1..=n_answers {
        let mut t = text(&mut rng, 6, 10);
        if a <= spec.questions {
            t = with_keys(&mut rng, t, &keys[a - 1]);
        }
        answers.insert(AnswerId::new(a.to_string()), t).unwrap();
    }
    let all: Vec<AnswerId> = answers.ids().cloned().collect();
    let mut examples = Vec::new();
    for q in 0..spec.questions {
        let gt = AnswerId::new((q + 1).to_string());
        let mut others: Vec<AnswerId> = all.iter().filter(|id| **id != gt).cloned().collect();
        others.shuffle(&mut rng);
        let mut pool: Vec<AnswerId> = others.into_iter().take(spec.pool - 1).collect();
        pool.push(gt.clone());
        pool.shuffle(&mut rng);
        let question = text(&mut rng, 4, 8);
        let question = with_keys(&mut rng, question, &keys[q]);
        examples.push(QAExample::new(format!("q{q}"), question, BTreeSet::from([gt]), Some(pool)).unwrap());
    }
    Synthetic {
        vocab,
        table,
        data: Dataset {
            examples,
            answers,
            dropped: 0,
        },
    }
}

pub struct FixtureFiles {
    pub dir: PathBuf,
    pub embeddings: PathBuf,
    pub answers: PathBuf,
    pub questions: PathBuf,
}

/// Writes the fixture as word2vec text plus canonical question and answer
/// files under `dir`.
pub fn write_fixture(s: &Synthetic, dir: &Path) -> FixtureFiles {
    let embeddings = dir.join("vectors.txt");
    let answers = dir.join("answers.tsv");
    let questions = dir.join("questions.tsv");
    let mut e = fs::File::create(&embeddings).unwrap();
    let words = &s.vocab.tokens()[2..];
    writeln!(e, "{} {}", words.len(), s.table.dim()).unwrap();
    for (i, w) in words.iter().enumerate() {
        let row: Vec<String> = s.table.row(i as TokenId + 2).iter().map(|v| format!("{v:?}")).collect();
        writeln!(e, "{w} {}", row.join(" ")).unwrap();
    }
    let mut q = fs::File::create(&questions).unwrap();
    let mut a = fs::File::create(&answers).unwrap();
    write_canonical(&s.data, &s.vocab, &mut q, &mut a).unwrap();
    FixtureFiles {
        dir: dir.to_path_buf(),
        embeddings,
        answers,
        questions,
    }
}

/// Runs the CLI in-process, returning (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["qarank"];
    argv.extend_from_slice(args);
    let code = qarank::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
