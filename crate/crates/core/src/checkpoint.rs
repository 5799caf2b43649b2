//! Bit-exact model persistence.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      7 bytes  "QALSTM1"
//! config     u64 length, then UTF-8 "key = value\n" lines
//! vocabulary u64 count, then per token: u32 byte length, UTF-8 bytes
//! tensors    u64 count, then per tensor:
//!              u32 name length, name, u64 rows, u64 cols,
//!              rows × cols f64 values, row-major
//! ```
//!
//! Tensors appear in parameter traversal order: `embeddings`, then
//! `encoder.*`, then `head.*`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::params::Params;

pub const MAGIC: &[u8; 7] = b"QALSTM1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(params: &ModelParams, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != params.embeddings.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the embedding table has {} rows",
            vocab.len(),
            params.embeddings.vocab_size()
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let config: String = params
        .config
        .pairs()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(config.as_bytes());
    put_u64(&mut out, vocab.len() as u64);
    for t in vocab.tokens() {
        put_str(&mut out, t);
    }
    let names = params.tensor_names("");
    put_u64(&mut out, names.len() as u64);
    params.visit("", &mut |name, (rows, cols), data| {
        put_str(&mut out, name);
        put_u64(&mut out, rows as u64);
        put_u64(&mut out, cols as u64);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in header".into()))
    }
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let variant = kv
        .get("variant")
        .ok_or_else(|| Error::Checkpoint("config echo lacks a variant".into()))?
        .parse()?;
    let mut config = ModelConfig::new(variant, 0);
    config
        .apply(&mut kv)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(k) = kv.keys().next() {
        return Err(Error::Checkpoint(format!("unknown config key {k:?}")));
    }
    Ok(config)
}

/// Decodes a checkpoint. With `expected`, the stored tensor shapes must
/// match the shapes that configuration implies.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let n = r.len()?;
    let config = parse_config(&r.string(n)?)?;

    let count = r.len()?;
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        tokens.push(r.string(n)?);
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let layout = expected.copied().unwrap_or(config);
    let mut params = ModelParams::zeros(layout, vocab.len()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    params.config = config;
    let want = params.tensor_names("");
    let stored = r.len()?;
    if stored != want.len() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: {stored} tensors stored, {} expected",
            want.len()
        )));
    }
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(stored);
    for (name, shape) in &want {
        let n = r.u32()? as usize;
        let got = r.string(n)?;
        let rows = r.len()?;
        let cols = r.len()?;
        if got != *name || (rows, cols) != *shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: expected {name} {}x{}, found {got} {rows}x{cols}",
                shape.0, shape.1
            )));
        }
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Checkpoint("truncated file".into()))?)?;
        values.push(
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut i = 0;
    params.visit_mut("", &mut |_, _, d| {
        d.copy_from_slice(&values[i]);
        i += 1;
    });
    params.embeddings.trainable = config.trainable_embeddings;
    if params.embeddings.row(crate::embeddings::PAD).iter().any(|&v| v != 0.0) {
        return Err(Error::Checkpoint("PAD embedding row is not zero".into()));
    }
    Ok(Checkpoint { vocab, params })
}

pub fn save_checkpoint(params: &ModelParams, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let bytes = to_bytes(params, vocab)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, None)
}

/// Loads a checkpoint and validates its shapes against `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, Some(expected))
}
