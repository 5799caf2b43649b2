//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::composition::ModelVariant;
use crate::error::{Error, Result};
use crate::evaluation::Metric;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Canonical,
    TrecQa,
    InsuranceQa,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(DataFormat::Canonical),
            "trecqa" => Ok(DataFormat::TrecQa),
            "insuranceqa" => Ok(DataFormat::InsuranceQa),
            _ => Err(Error::Config(format!(
                "unknown data format {s:?} (expected canonical, trecqa or insuranceqa)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataPaths {
    pub format: DataFormat,
    /// word2vec text file.
    pub embeddings: Option<PathBuf>,
    /// Shared answers file (canonical and InsuranceQA layouts).
    pub answers: Option<PathBuf>,
    /// InsuranceQA `idx_N → word` table.
    pub token_map: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `embed_dim` is 0 until embeddings are loaded.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub selection_metric: Metric,
    pub metrics: Vec<Metric>,
    pub buckets: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse_str(&text, &path.display().to_string(), base)?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, source: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::parse(source, i + 1, format!("duplicate key {k}")));
            }
        }

        let mut model = ModelConfig::new(ModelVariant::LstmMax, 0);
        model.apply(&mut kv)?;
        if model.embed_dim != 0 {
            return Err(Error::Config("embed_dim comes from the embeddings file and cannot be set".into()));
        }

        let mut take = |k: &str| kv.remove(k);
        let mut train = TrainConfig::default();
        if let Some(v) = take("batch_size") {
            train.batch_size = parse("batch_size", &v)?;
        }
        if let Some(v) = take("max_len") {
            train.max_len = parse("max_len", &v)?;
        }
        if let Some(v) = take("margin") {
            train.margin = parse("margin", &v)?;
        }
        if let Some(v) = take("learning_rate") {
            train.learning_rate = parse("learning_rate", &v)?;
        }
        if let Some(v) = take("dropout") {
            train.dropout = parse("dropout", &v)?;
        }
        if let Some(v) = take("negatives") {
            train.negatives = parse("negatives", &v)?;
        }
        if let Some(v) = take("epochs") {
            train.epochs = parse("epochs", &v)?;
        }
        if let Some(v) = take("seed") {
            train.seed = parse("seed", &v)?;
        }
        train.validate()?;

        let mut path = |k: &str| take(k).map(|v| base.join(v));
        let data = DataPaths {
            embeddings: path("embeddings"),
            answers: path("answers"),
            token_map: path("token_map"),
            train: path("train"),
            dev: path("dev"),
            test: path("test"),
            checkpoint_dir: path("checkpoint_dir").unwrap_or_else(|| base.join("checkpoints")),
            format: DataFormat::Canonical,
        };
        let format = match take("format") {
            Some(v) => v.parse()?,
            None => DataFormat::Canonical,
        };
        let selection_metric = match take("selection_metric") {
            Some(v) => v.parse()?,
            None => Metric::Top1,
        };
        let metrics = match take("metrics") {
            Some(v) => v
                .split(',')
                .map(|m| m.trim().parse())
                .collect::<Result<Vec<Metric>>>()?,
            None => Metric::ALL.to_vec(),
        };
        if metrics.is_empty() {
            return Err(Error::Config("metrics must name at least one metric".into()));
        }
        let buckets = match take("buckets") {
            Some(v) => parse("buckets", &v)?,
            None => false,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key {k:?} in {source}")));
        }
        Ok(RunConfig {
            model,
            train,
            data: DataPaths { format, ..data },
            selection_metric,
            metrics,
            buckets,
        })
    }

    /// Every configured input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let d = &self.data;
        for (key, p) in [
            ("embeddings", &d.embeddings),
            ("answers", &d.answers),
            ("token_map", &d.token_map),
            ("train", &d.train),
            ("dev", &d.dev),
            ("test", &d.test),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{key} path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn model_config(&self, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            embed_dim,
            ..self.model
        }
    }
}
