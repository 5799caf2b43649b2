//! Vocabulary, word-vector tables and idf statistics.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Scale of the uniform initialisation used for the UNK row.
pub const UNK_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, TokenId>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only PAD and UNK.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        v.tokens.push(PAD_TOKEN.to_string());
        v.tokens.push(UNK_TOKEN.to_string());
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        v
    }

    /// Builds a vocabulary from the full token list, specials included.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Invalid(
                "vocabulary must start with the PAD and UNK tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { index, tokens })
    }

    /// Adds a token, returning `None` if it is already present.
    pub fn insert(&mut self, token: &str) -> Option<TokenId> {
        if self.index.contains_key(token) {
            return None;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Some(id)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a surface form to its id, falling back to UNK.
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<TokenId> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vectors: Matrix,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Wraps a `vocab × dim` matrix. The PAD row is forced to zero.
    pub fn new(mut vectors: Matrix, trainable: bool) -> Self {
        if vectors.rows() > 0 {
            vectors.row_mut(PAD as usize).fill(0.0);
        }
        EmbeddingTable { vectors, trainable }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Mutable access to the raw table. Callers must keep the PAD row zero.
    pub fn vectors_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        self.vectors.row(id as usize)
    }

    pub fn lookup_sequence(&self, tokens: &[TokenId]) -> Result<Matrix> {
        let mut out = Matrix::zeros(tokens.len(), self.dim());
        for (t, &id) in tokens.iter().enumerate() {
            if id as usize >= self.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.vocab_size(),
                });
            }
            out.row_mut(t).copy_from_slice(self.row(id));
        }
        Ok(out)
    }
}

pub fn lookup_sequence(tokens: &[TokenId], table: &EmbeddingTable) -> Result<Matrix> {
    table.lookup_sequence(tokens)
}

/// Reads the word2vec text format: a `<count> <dim>` header followed by one
/// `<token> v1 … v_dim` line per word. Rows keep file order after PAD and
/// UNK; the UNK row is drawn uniformly from `[-0.1, 0.1]`.
pub fn load_word2vec_text<R: Rng + ?Sized>(
    path: &Path,
    rng: &mut R,
) -> Result<(Vocabulary, EmbeddingTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_text(BufReader::new(file), &path.display().to_string(), rng)
}

pub fn read_word2vec_text<B: BufRead, R: Rng + ?Sized>(
    reader: B,
    source_name: &str,
    rng: &mut R,
) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(source_name, e))?,
        None => return Err(Error::parse(source_name, 1, "malformed header")),
    };
    let mut fields = header.split_whitespace();
    let (count, dim) = match (
        fields.next().and_then(|f| f.parse::<usize>().ok()),
        fields.next().and_then(|f| f.parse::<usize>().ok()),
        fields.next(),
    ) {
        (Some(c), Some(d), None) if d > 0 => (c, d),
        _ => return Err(Error::parse(source_name, 1, "malformed header")),
    };

    let mut vocab = Vocabulary::new();
    let mut data = Vec::with_capacity((count + 2) * dim);
    data.extend(std::iter::repeat_n(0.0, dim));
    data.extend((0..dim).map(|_| rng.random_range(-UNK_INIT_SCALE..=UNK_INIT_SCALE)));

    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let token = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(source_name, line_no, format!("bad vector value: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(source_name, line_no, "non-finite vector value"));
        }
        if vocab.insert(token).is_none() {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("duplicate token {token:?}"),
            ));
        }
        data.extend_from_slice(&values);
        seen += 1;
    }
    if seen != count {
        return Err(Error::parse(
            source_name,
            1,
            format!("header declares {count} vectors, file has {seen}"),
        ));
    }
    let vectors = Matrix::from_vec(vocab.len(), dim, data)?;
    Ok((vocab, EmbeddingTable::new(vectors, true)))
}

/// Inverse document frequency `ln(N / (1 + df))`, floored at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    n_docs: usize,
    weights: HashMap<TokenId, f64>,
}

impl IdfTable {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Weight of a token; tokens never seen get `ln(N)`.
    pub fn weight(&self, id: TokenId) -> f64 {
        self.weights
            .get(&id)
            .copied()
            .unwrap_or_else(|| idf_formula(self.n_docs, 0))
    }

    /// A table in which every token weighs zero.
    pub fn zeros() -> Self {
        IdfTable {
            n_docs: 1,
            weights: HashMap::new(),
        }
    }
}

fn idf_formula(n_docs: usize, df: usize) -> f64 {
    (n_docs as f64 / (1.0 + df as f64)).ln().max(0.0)
}

pub fn compute_idf<D: AsRef<[TokenId]>>(corpus: &[D]) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::Invalid("idf corpus is empty".into()));
    }
    let mut df: HashMap<TokenId, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<TokenId> = doc.as_ref().iter().copied().collect();
        for id in unique {
            *df.entry(id).or_default() += 1;
        }
    }
    let n = corpus.len();
    Ok(IdfTable {
        n_docs: n,
        weights: df
            .into_iter()
            .map(|(id, d)| (id, idf_formula(n, d)))
            .collect(),
    })
}

/// idf-weighted sum of the word vectors of `tokens`.
pub fn bow_embed(tokens: &[TokenId], table: &EmbeddingTable, idf: &IdfTable) -> Result<Vector> {
    if tokens.is_empty() {
        return Err(Error::Invalid("bag-of-words over an empty sequence".into()));
    }
    let mut out = vec![0.0; table.dim()];
    for &id in tokens {
        if id as usize >= table.vocab_size() {
            return Err(Error::TokenOutOfRange {
                id,
                size: table.vocab_size(),
            });
        }
        let w = idf.weight(id);
        if w != 0.0 {
            crate::tensor::axpy(w, table.row(id), &mut out);
        }
    }
    Ok(Vector::from(out))
}
