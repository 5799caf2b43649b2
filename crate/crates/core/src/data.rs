//! Answer-selection datasets in canonical form.
//!
//! The canonical layout is two UTF-8, LF-terminated, tab-separated files:
//!
//! ```text
//! answers:    <answer-id> \t <space-separated tokens>
//! questions:  <question-id> \t <tokens> \t <ground-truth ids, comma-separated> \t <pool ids, comma-separated, or '-'>
//! ```
//!
//! Datasets arrive pre-tokenized. Adapters convert the TREC-QA and
//! InsuranceQA release layouts into the same structures.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{TokenId, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Answer identifier. Ordering is numeric when both ids are unsigned
/// integers, lexicographic otherwise, with numeric ids sorting first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AnswerId(String);

impl AnswerId {
    pub fn new(id: impl Into<String>) -> Self {
        AnswerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<u64> {
        if self.0.is_empty() || !self.0.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        self.0.parse().ok()
    }
}

impl Ord for AnswerId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for AnswerId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AnswerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnswerId {
    fn from(s: &str) -> Self {
        AnswerId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QAExample {
    pub id: String,
    pub question: Vec<TokenId>,
    pub ground_truth: BTreeSet<AnswerId>,
    /// Candidate pool; absent for training-only questions.
    pub pool: Option<Vec<AnswerId>>,
}

impl QAExample {
    pub fn new(
        id: impl Into<String>,
        question: Vec<TokenId>,
        ground_truth: BTreeSet<AnswerId>,
        pool: Option<Vec<AnswerId>>,
    ) -> Result<Self> {
        let id = id.into();
        if question.is_empty() {
            return Err(Error::Invalid(format!("question {id} has no tokens")));
        }
        if ground_truth.is_empty() {
            return Err(Error::Invalid(format!("question {id} has no ground truth")));
        }
        if let Some(pool) = &pool {
            if pool.is_empty() {
                return Err(Error::Invalid(format!("question {id} has an empty pool")));
            }
            if let Some(g) = ground_truth.iter().find(|g| !pool.contains(g)) {
                return Err(Error::Invalid(format!(
                    "question {id}: ground truth {g} not in pool"
                )));
            }
        }
        Ok(QAExample {
            id,
            question,
            ground_truth,
            pool,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnswerStore {
    answers: BTreeMap<AnswerId, Vec<TokenId>>,
}

impl AnswerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: AnswerId, tokens: Vec<TokenId>) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("answer {id} has no tokens")));
        }
        if self.answers.contains_key(&id) {
            return Err(Error::Invalid(format!("duplicate answer id {id}")));
        }
        self.answers.insert(id, tokens);
        Ok(())
    }

    pub fn get(&self, id: &AnswerId) -> Option<&[TokenId]> {
        self.answers.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &AnswerId) -> bool {
        self.answers.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &AnswerId> {
        self.answers.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AnswerId, &[TokenId])> {
        self.answers.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<QAExample>,
    pub answers: AnswerStore,
    /// Questions removed by a format-specific filter (TREC-QA only).
    pub dropped: usize,
}

impl Dataset {
    pub fn has_pools(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.pool.is_some())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn tokens_of(field: &str) -> impl Iterator<Item = &str> {
    field.split(' ').filter(|t| !t.is_empty())
}

pub fn read_answers<B: BufRead>(reader: B, source: &str, vocab: &Vocabulary) -> Result<AnswerStore> {
    let mut store = AnswerStore::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected <answer-id>\\t<tokens>"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(source, line_no, "empty answer id"));
        }
        let tokens = vocab.encode(tokens_of(text));
        if tokens.is_empty() {
            return Err(Error::parse(source, line_no, format!("answer {id} has no tokens")));
        }
        let id = AnswerId::from(id);
        if store.contains(&id) {
            return Err(Error::parse(source, line_no, format!("duplicate answer id {id}")));
        }
        store.insert(id, tokens)?;
    }
    Ok(store)
}

pub fn read_questions<B: BufRead>(
    reader: B,
    source: &str,
    vocab: &Vocabulary,
    answers: &AnswerStore,
) -> Result<Vec<QAExample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(source, line_no, msg);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let qid = fields[0].trim();
        if qid.is_empty() {
            return Err(err("empty question id".into()));
        }
        if !seen.insert(qid.to_string()) {
            return Err(err(format!("duplicate question id {qid}")));
        }
        let question = vocab.encode(tokens_of(fields[1]));
        if question.is_empty() {
            return Err(err(format!("question {qid} has no tokens")));
        }
        let resolve = |list: &str| -> Result<Vec<AnswerId>> {
            let mut ids = Vec::new();
            for raw in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let id = AnswerId::from(raw);
                if !answers.contains(&id) {
                    return Err(err(format!("unknown answer id {id}")));
                }
                ids.push(id);
            }
            Ok(ids)
        };
        let gt_list = resolve(fields[2])?;
        let mut ground_truth = BTreeSet::new();
        for g in gt_list {
            if !ground_truth.insert(g.clone()) {
                return Err(err(format!("duplicate ground truth id {g}")));
            }
        }
        if ground_truth.is_empty() {
            return Err(err(format!("question {qid} has no ground truth")));
        }
        let pool = match fields[3].trim() {
            "-" => None,
            list => {
                let pool = resolve(list)?;
                let mut uniq = HashSet::new();
                if let Some(d) = pool.iter().find(|id| !uniq.insert(*id)) {
                    return Err(err(format!("duplicate pool id {d}")));
                }
                if let Some(g) = ground_truth.iter().find(|g| !pool.contains(g)) {
                    return Err(err(format!("ground truth {g} not in pool")));
                }
                Some(pool)
            }
        };
        out.push(QAExample::new(qid, question, ground_truth, pool).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn parse_canonical(questions: &Path, answers: &Path, vocab: &Vocabulary) -> Result<Dataset> {
    let store = read_answers(open(answers)?, &answers.display().to_string(), vocab)?;
    let examples = read_questions(open(questions)?, &questions.display().to_string(), vocab, &store)?;
    Ok(Dataset {
        examples,
        answers: store,
        dropped: 0,
    })
}

fn surface(tokens: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    let words = tokens
        .iter()
        .map(|&id| {
            vocab.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: vocab.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}

fn join_ids<'a>(ids: impl IntoIterator<Item = &'a AnswerId>) -> String {
    ids.into_iter().map(AnswerId::as_str).collect::<Vec<_>>().join(",")
}

/// Writes a dataset back out in the canonical layout.
pub fn write_canonical<Q: Write, A: Write>(data: &Dataset, vocab: &Vocabulary, questions: &mut Q, answers: &mut A) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    for (id, tokens) in data.answers.iter() {
        writeln!(answers, "{id}\t{}", surface(tokens, vocab)?).map_err(io)?;
    }
    for ex in &data.examples {
        let pool = ex.pool.as_ref().map_or_else(|| "-".to_string(), |p| join_ids(p));
        writeln!(
            questions,
            "{}\t{}\t{}\t{}",
            ex.id,
            surface(&ex.question, vocab)?,
            join_ids(&ex.ground_truth),
            pool
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Reads TREC-QA in three-column form, `question \t candidate \t label`.
///
/// Consecutive lines with the same question text (or lines up to a blank
/// line) form one question. Questions whose candidates are all positive or
/// all negative are dropped and counted in [`Dataset::dropped`]. Answer ids
/// are assigned sequentially from 1 over the kept candidates; question ids
/// are `q<block number>`.
pub fn parse_trecqa(path: &Path, vocab: &Vocabulary) -> Result<Dataset> {
    read_trecqa(open(path)?, &path.display().to_string(), vocab)
}

pub fn read_trecqa<B: BufRead>(reader: B, source: &str, vocab: &Vocabulary) -> Result<Dataset> {
    struct Block {
        question: String,
        candidates: Vec<(String, bool)>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    let mut open_block = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            open_block = false;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected question\\tcandidate\\tlabel, found {} fields", fields.len()),
            ));
        }
        let label = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(source, line_no, format!("malformed label {other:?}")))
            }
        };
        let question = fields[0].trim();
        let same = open_block && blocks.last().is_some_and(|b| b.question == question);
        if !same {
            blocks.push(Block {
                question: question.to_string(),
                candidates: Vec::new(),
            });
        }
        open_block = true;
        blocks
            .last_mut()
            .unwrap()
            .candidates
            .push((fields[1].to_string(), label));
    }

    let mut data = Dataset::default();
    let mut next_id = 1u64;
    for (b, block) in blocks.into_iter().enumerate() {
        let positives = block.candidates.iter().filter(|(_, l)| *l).count();
        if positives == 0 || positives == block.candidates.len() {
            data.dropped += 1;
            continue;
        }
        let mut pool = Vec::with_capacity(block.candidates.len());
        let mut ground_truth = BTreeSet::new();
        for (text, label) in block.candidates {
            let id = AnswerId::new(next_id.to_string());
            next_id += 1;
            let tokens = vocab.encode(tokens_of(&text));
            if tokens.is_empty() {
                return Err(Error::Invalid(format!(
                    "{source}: empty candidate in question block {}",
                    b + 1
                )));
            }
            data.answers.insert(id.clone(), tokens)?;
            if label {
                ground_truth.insert(id.clone());
            }
            pool.push(id);
        }
        let question = vocab.encode(tokens_of(&block.question));
        data.examples.push(QAExample::new(
            format!("q{}", b + 1),
            question,
            ground_truth,
            Some(pool),
        )?);
    }
    Ok(data)
}

/// Index-token vocabulary shipped with InsuranceQA (`idx_17 \t word`).
pub fn read_insuranceqa_vocab<B: BufRead>(reader: B, source: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let (idx, word) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, i + 1, "expected idx_N\\tword"))?;
        map.insert(idx.trim().to_string(), word.trim().to_string());
    }
    Ok(map)
}

fn insuranceqa_tokens(
    field: &str,
    index: &BTreeMap<String, String>,
    vocab: &Vocabulary,
    source: &str,
    line_no: usize,
) -> Result<Vec<TokenId>> {
    tokens_of(field)
        .map(|idx| {
            index
                .get(idx)
                .map(|w| vocab.id(w))
                .ok_or_else(|| Error::parse(source, line_no, format!("unknown token index {idx}")))
        })
        .collect()
}

/// Answers file of InsuranceQA: `<answer-id> \t idx_1 idx_2 …`.
pub fn read_insuranceqa_answers<B: BufRead>(
    reader: B,
    source: &str,
    index: &BTreeMap<String, String>,
    vocab: &Vocabulary,
) -> Result<AnswerStore> {
    let mut store = AnswerStore::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected <answer-id>\\t<token indices>"))?;
        let tokens = insuranceqa_tokens(text, index, vocab, source, line_no)?;
        store
            .insert(AnswerId::from(id.trim()), tokens)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
    }
    Ok(store)
}

/// InsuranceQA question files. Training files carry `tokens \t gt-ids`;
/// dev/test pool files carry `gt-ids \t tokens \t pool-ids`. Id lists are
/// space-separated. Question ids are the 1-based line numbers.
pub fn read_insuranceqa_questions<B: BufRead>(
    reader: B,
    source: &str,
    index: &BTreeMap<String, String>,
    vocab: &Vocabulary,
    answers: &AnswerStore,
) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (tokens, gts, pool) = match fields.as_slice() {
            [tokens, gts] => (*tokens, *gts, None),
            [gts, tokens, pool] => (*tokens, *gts, Some(*pool)),
            _ => {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
                ))
            }
        };
        let ids = |list: &str| -> Result<Vec<AnswerId>> {
            tokens_of(list)
                .map(|raw| {
                    let id = AnswerId::from(raw);
                    if answers.contains(&id) {
                        Ok(id)
                    } else {
                        Err(Error::parse(source, line_no, format!("unknown answer id {id}")))
                    }
                })
                .collect()
        };
        let question = insuranceqa_tokens(tokens, index, vocab, source, line_no)?;
        let ground_truth: BTreeSet<AnswerId> = ids(gts)?.into_iter().collect();
        let pool = pool.map(ids).transpose()?;
        out.push(
            QAExample::new(line_no.to_string(), question, ground_truth, pool)
                .map_err(|e| Error::parse(source, line_no, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn parse_insuranceqa(
    token_index: &Path,
    answers: &Path,
    questions: &Path,
    vocab: &Vocabulary,
) -> Result<Dataset> {
    let index = read_insuranceqa_vocab(open(token_index)?, &token_index.display().to_string())?;
    let store = read_insuranceqa_answers(open(answers)?, &answers.display().to_string(), &index, vocab)?;
    let examples = read_insuranceqa_questions(
        open(questions)?,
        &questions.display().to_string(),
        &index,
        vocab,
        &store,
    )?;
    Ok(Dataset {
        examples,
        answers: store,
        dropped: 0,
    })
}

// ---------------------------------------------------------------------------
// batching

/// A token sequence with its mask, ready for the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    /// The first `max_len` tokens, all marked valid.
    pub fn truncated(tokens: &[TokenId], max_len: usize) -> Self {
        let n = tokens.len().min(max_len);
        TokenSeq {
            ids: tokens[..n].to_vec(),
            mask: vec![true; n],
        }
    }

    /// Appends `extra` PAD steps.
    pub fn padded(mut self, extra: usize) -> Self {
        self.ids.extend(std::iter::repeat_n(PAD, extra));
        self.mask.extend(std::iter::repeat_n(false, extra));
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `B × L` token ids with the matching `{0,1}` mask matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<TokenId>,
    pub mask: Matrix,
    /// Index of each row in the input sequence list.
    pub source: Vec<usize>,
}

impl TokenBatch {
    pub fn from_sequences<S: AsRef<[TokenId]>>(seqs: &[S], source: Vec<usize>, max_len: usize) -> Self {
        let rows = seqs.len();
        let mut ids = vec![PAD; rows * max_len];
        let mut mask = Matrix::zeros(rows, max_len);
        for (r, s) in seqs.iter().enumerate() {
            let s = s.as_ref();
            let n = s.len().min(max_len);
            ids[r * max_len..r * max_len + n].copy_from_slice(&s[..n]);
            mask.row_mut(r)[..n].fill(1.0);
        }
        TokenBatch { ids, mask, source }
    }

    pub fn rows(&self) -> usize {
        self.mask.rows()
    }

    pub fn max_len(&self) -> usize {
        self.mask.cols()
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.mask.row(r).iter().filter(|&&m| m != 0.0).count()
    }

    pub fn row(&self, r: usize) -> TokenSeq {
        let l = self.max_len();
        TokenSeq {
            ids: self.ids[r * l..(r + 1) * l].to_vec(),
            mask: self.mask.row(r).iter().map(|&m| m != 0.0).collect(),
        }
    }
}

/// Splits sequences into `B`-row batches truncated to `max_len`. With a
/// seed the order is shuffled deterministically; the last batch may be
/// short.
pub fn make_batches<S: AsRef<[TokenId]>>(
    seqs: &[S],
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<TokenBatch>> {
    if batch_size == 0 || max_len == 0 {
        return Err(Error::Invalid("batch size and max length must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&[TokenId]> = chunk.iter().map(|&i| seqs[i].as_ref()).collect();
            TokenBatch::from_sequences(&rows, chunk.to_vec(), max_len)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// length buckets

/// Upper bounds (inclusive) of the first ten length buckets; the eleventh
/// is open-ended.
pub const BUCKET_BOUNDS: [usize; 10] = [50, 55, 60, 65, 70, 80, 90, 100, 120, 160];
pub const BUCKET_COUNT: usize = BUCKET_BOUNDS.len() + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bucket(usize);

impl Bucket {
    pub fn all() -> impl Iterator<Item = Bucket> {
        (0..BUCKET_COUNT).map(Bucket)
    }

    pub fn for_length(avg_len: f64) -> Bucket {
        Bucket(
            BUCKET_BOUNDS
                .iter()
                .position(|&b| avg_len <= b as f64)
                .unwrap_or(BUCKET_BOUNDS.len()),
        )
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> String {
        match BUCKET_BOUNDS.get(self.0) {
            Some(b) => format!("≤{b}"),
            None => format!(">{}", BUCKET_BOUNDS[BUCKET_BOUNDS.len() - 1]),
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Bucket of a question by the mean untruncated token length of its
/// ground-truth answers.
pub fn bucket_of(example: &QAExample, answers: &AnswerStore) -> Result<Bucket> {
    let mut total = 0usize;
    for g in &example.ground_truth {
        total += answers
            .get(g)
            .ok_or_else(|| Error::Invalid(format!("unknown answer id {g}")))?
            .len();
    }
    Ok(Bucket::for_length(total as f64 / example.ground_truth.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::new();
        for w in ["how", "do", "i", "file", "a", "claim", "call", "us", "no"] {
            v.insert(w);
        }
        v
    }

    fn parse(q: &str, a: &str) -> Result<Dataset> {
        let v = vocab();
        let answers = read_answers(a.as_bytes(), "a.tsv", &v)?;
        let examples = read_questions(q.as_bytes(), "q.tsv", &v, &answers)?;
        Ok(Dataset {
            examples,
            answers,
            dropped: 0,
        })
    }

    const ANSWERS: &str = "a1\tcall us\na2\tno\n";

    #[test]
    fn canonical_well_formed() {
        let d = parse("q1\thow do i file a claim\ta1\ta1,a2\n", ANSWERS).unwrap();
        assert_eq!(d.examples.len(), 1);
        let ex = &d.examples[0];
        assert_eq!(ex.question.len(), 6);
        assert_eq!(ex.ground_truth, [AnswerId::from("a1")].into_iter().collect());
        assert_eq!(ex.pool.as_ref().unwrap().len(), 2);
        assert_eq!(d.answers.len(), 2);

        let d = parse("q1\tfile claim\ta1\t-\n", ANSWERS).unwrap();
        assert!(d.examples[0].pool.is_none());
        assert!(!d.has_pools());

        let d = parse("q1\tzebra\ta1\t-\n", ANSWERS).unwrap();
        assert_eq!(d.examples[0].question, vec![crate::embeddings::UNK]);
    }

    #[test]
    fn canonical_errors_name_the_problem() {
        let err = parse("q1\tfile\ta9\t-\n", ANSWERS).unwrap_err();
        assert!(err.to_string().contains("a9"), "{err}");
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let err = parse("q1\tfile\ta1\ta2\n", ANSWERS).unwrap_err();
        assert!(err.to_string().contains("not in pool"));

        let err = parse("q1\tfile\ta1\t-\nq1\tclaim\ta2\t-\n", ANSWERS).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().contains("duplicate"));

        let err = parse("q1\tfile\ta1\t-\n", "a1\tno\na1\tno\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        assert!(parse("q1\tfile\ta1\n", ANSWERS).is_err());
    }

    #[test]
    fn canonical_roundtrip() {
        let q = "q1\thow do i file a claim\ta1\ta1,a2\nq2\tcall\ta2\t-\n";
        let d = parse(q, ANSWERS).unwrap();
        let mut qo = Vec::new();
        let mut ao = Vec::new();
        write_canonical(&d, &vocab(), &mut qo, &mut ao).unwrap();
        let again = parse(
            std::str::from_utf8(&qo).unwrap(),
            std::str::from_utf8(&ao).unwrap(),
        )
        .unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn trecqa_filtering() {
        let text = "\
who wrote it\tsomeone wrote it\t1
who wrote it\tno idea\t0
who wrote it\tfile claim\t0
what is it\tno\t0
what is it\tcall\t0
when\tnow\t1
when\tthen\t1
";
        let d = read_trecqa(text.as_bytes(), "trec", &vocab()).unwrap();
        assert_eq!(d.examples.len(), 1);
        assert_eq!(d.dropped, 2);
        let ex = &d.examples[0];
        assert_eq!(ex.ground_truth.len(), 1);
        assert_eq!(ex.pool.as_ref().unwrap().len(), 3);
        assert_eq!(d.answers.len(), 3);

        let err = read_trecqa("q\ta\tyes\n".as_bytes(), "trec", &vocab()).unwrap_err();
        assert!(err.to_string().contains("malformed label"));
    }

    #[test]
    fn insuranceqa_adapter() {
        let index = read_insuranceqa_vocab("idx_1\tcall\nidx_2\tus\nidx_3\tclaim\n".as_bytes(), "vocab").unwrap();
        let v = vocab();
        let answers = read_insuranceqa_answers("10\tidx_1 idx_2\n11\tidx_3\n".as_bytes(), "answers", &index, &v).unwrap();
        let train = read_insuranceqa_questions("idx_3 idx_1\t10 11\n".as_bytes(), "train", &index, &v, &answers).unwrap();
        assert_eq!(train[0].ground_truth.len(), 2);
        assert!(train[0].pool.is_none());
        let test = read_insuranceqa_questions("11\tidx_3\t10 11\n".as_bytes(), "test", &index, &v, &answers).unwrap();
        assert_eq!(test[0].pool.as_ref().unwrap().len(), 2);
        assert_eq!(test[0].question, vec![v.id("claim")]);
        assert!(read_insuranceqa_questions("idx_9\t10\n".as_bytes(), "bad", &index, &v, &answers).is_err());
    }

    #[test]
    fn batches_and_masks() {
        let seqs: Vec<Vec<TokenId>> = vec![vec![2, 3, 4], vec![5], vec![6, 7]];
        let b = make_batches(&seqs, 2, 5, None).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].rows(), 2);
        assert_eq!(b[1].rows(), 1);
        assert_eq!(b[0].mask.row(0), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&b[0].ids[..5], &[2, 3, 4, PAD, PAD]);

        let long: Vec<Vec<TokenId>> = vec![(0..250).map(|i| 2 + i % 5).collect()];
        let b = make_batches(&long, 20, 200, None).unwrap();
        assert_eq!(b[0].row_len(0), 200);
        assert_eq!(b[0].row(0).ids.len(), 200);

        let a = make_batches(&seqs, 2, 5, Some(9)).unwrap();
        let again = make_batches(&seqs, 2, 5, Some(9)).unwrap();
        assert_eq!(a, again);
        assert!(make_batches(&seqs, 0, 5, None).is_err());
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(Bucket::for_length(58.0).label(), "≤60");
        assert_eq!(Bucket::for_length(50.0).label(), "≤50");
        assert_eq!(Bucket::for_length(50.5).label(), "≤55");
        assert_eq!(Bucket::for_length(500.0).label(), ">160");
        assert_eq!(Bucket::for_length(160.0).label(), "≤160");
        assert_eq!(Bucket::all().count(), 11);

        let mut answers = AnswerStore::new();
        answers.insert("1".into(), vec![2; 56]).unwrap();
        answers.insert("2".into(), vec![2; 60]).unwrap();
        let ex = QAExample::new("q", vec![2], ["1".into(), "2".into()].into_iter().collect(), None).unwrap();
        assert_eq!(bucket_of(&ex, &answers).unwrap().label(), "≤60");
    }

    #[test]
    fn answer_id_order() {
        let mut ids: Vec<AnswerId> = ["10", "9", "b", "a", "010"].iter().map(|s| AnswerId::from(*s)).collect();
        ids.sort();
        let got: Vec<&str> = ids.iter().map(AnswerId::as_str).collect();
        assert_eq!(got, vec!["9", "010", "10", "a", "b"]);
    }

    proptest! {
        #[test]
        fn masks_are_prefix_ones(lens in prop::collection::vec(1usize..30, 1..12), b in 1usize..5, l in 1usize..20) {
            let seqs: Vec<Vec<TokenId>> = lens.iter().map(|&n| vec![3; n]).collect();
            for batch in make_batches(&seqs, b, l, Some(1)).unwrap() {
                for r in 0..batch.rows() {
                    let true_len = seqs[batch.source[r]].len().min(l);
                    let row = batch.mask.row(r);
                    prop_assert!(row[..true_len].iter().all(|&m| m == 1.0));
                    prop_assert!(row[true_len..].iter().all(|&m| m == 0.0));
                    for c in true_len..l {
                        prop_assert_eq!(batch.ids[r * l + c], PAD);
                    }
                }
            }
        }

        #[test]
        fn every_length_in_one_bucket(len in 0.0f64..1000.0) {
            let hits = Bucket::all()
                .filter(|b| {
                    let lo = if b.index() == 0 { f64::NEG_INFINITY } else { BUCKET_BOUNDS[b.index() - 1] as f64 };
                    let hi = BUCKET_BOUNDS.get(b.index()).map_or(f64::INFINITY, |&x| x as f64);
                    len > lo && len <= hi
                })
                .collect::<Vec<_>>();
            prop_assert_eq!(hits, vec![Bucket::for_length(len)]);
        }
    }
}
