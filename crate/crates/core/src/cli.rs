//! `qarank` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration, data or IO error.
//! Reports go to `out`, logs and errors to `err`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
use crate::composition::ModelVariant;
use crate::config::{DataFormat, RunConfig};
use crate::data::{bucket_of, parse_canonical, parse_insuranceqa, parse_trecqa, read_answers, AnswerId, Dataset};
use crate::embeddings::{bow_embed, compute_idf, load_word2vec_text, EmbeddingTable, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{bucket_accuracy, format_buckets, MetricReport, RankedPool};
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::model::ModelParams;
use crate::scoring::cosine;
use crate::training::{train_epoch, TrainingSet};

#[derive(Parser, Debug)]
#[command(name = "qarank", version, about = "Train and evaluate biLSTM answer-selection models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to read; defaults to best.ckpt in the checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Data file overriding the config's test split (rank: answers file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also print top-1 accuracy per answer-length bucket.
    #[arg(long)]
    buckets: bool,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and keep the best checkpoint on the dev split.
    Train(Common),
    /// Report metrics of a checkpoint on a split with candidate pools.
    Evaluate(Common),
    /// Rank the answers of a file against one question.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Question text, space-separated tokens.
        #[arg(long)]
        question: String,
    },
    /// Compare analytic gradients with finite differences on toy models.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Variant to check; all seven when omitted.
        #[arg(long)]
        variant: Option<ModelVariant>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Perturbs the analytic gradient of this tensor.
        #[arg(long, hide = true)]
        corrupt_tensor: Option<String>,
    },
    /// idf-weighted bag-of-words cosine ranking.
    Baseline(Common),
}

enum Outcome {
    Ok,
    CheckFailed,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c, out, err),
        Command::Evaluate(c) => cmd_evaluate(&c, out),
        Command::Rank { common, question } => cmd_rank(&common, &question, out),
        Command::Gradcheck {
            config,
            variant,
            seed,
            corrupt_tensor,
        } => cmd_gradcheck(config.as_deref(), variant, seed, corrupt_tensor.as_deref(), out, err),
        Command::Baseline(c) => cmd_baseline(&c, out, err),
    };
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
    }
    if c.buckets {
        cfg.buckets = true;
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("config does not set {key}")))
}

fn load_split(cfg: &RunConfig, path: &Path, vocab: &Vocabulary) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Config(format!("data path {} does not exist", path.display())));
    }
    let d = &cfg.data;
    match d.format {
        DataFormat::Canonical => parse_canonical(path, required(&d.answers, "answers")?, vocab),
        DataFormat::TrecQa => parse_trecqa(path, vocab),
        DataFormat::InsuranceQa => parse_insuranceqa(
            required(&d.token_map, "token_map")?,
            required(&d.answers, "answers")?,
            path,
            vocab,
        ),
    }
}

fn note_dropped(data: &Dataset, path: &Path, err: &mut dyn Write) -> Result<()> {
    if data.dropped > 0 {
        writeln!(
            err,
            "{}: dropped {} questions without both positive and negative candidates",
            path.display(),
            data.dropped
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn eval_path(c: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    match (&c.data, &cfg.data.test) {
        (Some(p), _) | (None, Some(p)) => Ok(p.clone()),
        (None, None) => Err(Error::Config("no evaluation data: pass --data or set test".into())),
    }
}

fn write_report(cfg: &RunConfig, data: &Dataset, pools: &[RankedPool], out: &mut dyn Write) -> Result<()> {
    write!(out, "{}", MetricReport::compute(pools, &cfg.metrics)).map_err(io_err)?;
    if cfg.buckets {
        let buckets = data
            .examples
            .iter()
            .map(|e| bucket_of(e, &data.answers))
            .collect::<Result<Vec<_>>>()?;
        write!(out, "{}", format_buckets(&bucket_accuracy(pools, &buckets)?)).map_err(io_err)?;
    }
    Ok(())
}

struct Log {
    file: File,
}

impl Log {
    fn line(&mut self, err: &mut dyn Write, text: &str) -> Result<()> {
        writeln!(err, "{text}").map_err(io_err)?;
        writeln!(self.file, "{text}").map_err(io_err)
    }
}

fn cmd_train(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let (vocab, table) = load_word2vec_text(required(&cfg.data.embeddings, "embeddings")?, &mut rng)?;
    let model_cfg = cfg.model_config(table.dim());
    model_cfg.validate()?;

    let train_path = required(&cfg.data.train, "train")?;
    let train = load_split(&cfg, train_path, &vocab)?;
    note_dropped(&train, train_path, err)?;
    let dev = match &cfg.data.dev {
        Some(p) => {
            let d = load_split(&cfg, p, &vocab)?;
            note_dropped(&d, p, err)?;
            Some(d)
        }
        None => None,
    };

    let dir = &cfg.data.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join("train.log");
    let mut log = Log {
        file: File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    };
    let metric = cfg.selection_metric;
    log.line(err, &format!("epoch\tloss\tseconds\t{metric}"))?;

    let mut params = ModelParams::init(model_cfg, table, &mut rng)?;
    let score = |p: &ModelParams| -> Result<Option<f64>> {
        dev.as_ref()
            .map(|d| Ok(metric.compute(&p.rank_examples(&d.examples, &d.answers, cfg.train.max_len)?)))
            .transpose()
    };
    let fmt_score = |s: Option<f64>| s.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));

    let best_path = dir.join("best.ckpt");
    let mut best = score(&params)?;
    save_checkpoint(&params, &vocab, &best_path)?;
    log.line(err, &format!("0\t-\t0.000\t{}", fmt_score(best)))?;

    let set = TrainingSet::new(&train.examples, &train.answers);
    for epoch in 1..=cfg.train.epochs {
        let start = Instant::now();
        let stats = train_epoch(&set, &mut params, &cfg.train, &mut rng)?;
        let secs = start.elapsed().as_secs_f64();
        let s = score(&params)?;
        log.line(
            err,
            &format!("{epoch}\t{:.6}\t{secs:.3}\t{}", stats.mean_loss, fmt_score(s)),
        )?;
        // Without a dev split the latest parameters are kept as best.
        let improved = match (s, best) {
            (Some(v), Some(b)) => v > b,
            _ => true,
        };
        if improved {
            best = s;
            save_checkpoint(&params, &vocab, &best_path)?;
        }
    }
    save_checkpoint(&params, &vocab, &dir.join("last.ckpt"))?;

    let report_on = cfg.data.test.as_ref().or(cfg.data.dev.as_ref());
    if let Some(path) = report_on {
        let data = load_split(&cfg, path, &vocab)?;
        let best_params = load_checkpoint(&best_path)?.params;
        let pools = best_params.rank_examples(&data.examples, &data.answers, cfg.train.max_len)?;
        write_report(&cfg, &data, &pools, out)?;
    }
    Ok(Outcome::Ok)
}

/// Loads the checkpoint and checks it against the run configuration.
fn open_checkpoint(c: &Common, cfg: &RunConfig) -> Result<Checkpoint> {
    let path = c
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.data.checkpoint_dir.join("best.ckpt"));
    let ck = load_checkpoint(&path)?;
    let expected = cfg.model_config(ck.params.config.embed_dim);
    if expected != ck.params.config {
        load_checkpoint_for(&path, &expected)?;
        let diff = expected
            .pairs()
            .into_iter()
            .zip(ck.params.config.pairs())
            .find(|(a, b)| a != b);
        if let Some(((key, want), (_, got))) = diff {
            return Err(Error::Config(format!(
                "{}: checkpoint has {key} = {got}, config has {key} = {want}",
                path.display()
            )));
        }
    }
    Ok(ck)
}

fn cmd_evaluate(c: &Common, out: &mut dyn Write) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let ck = open_checkpoint(c, &cfg)?;
    let data = load_split(&cfg, &eval_path(c, &cfg)?, &ck.vocab)?;
    let pools = ck.params.rank_examples(&data.examples, &data.answers, cfg.train.max_len)?;
    write_report(&cfg, &data, &pools, out)?;
    Ok(Outcome::Ok)
}

fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.encode(text.split_whitespace())
}

fn cmd_rank(c: &Common, question: &str, out: &mut dyn Write) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let ck = open_checkpoint(c, &cfg)?;
    let path = c
        .data
        .as_deref()
        .or(cfg.data.answers.as_deref())
        .ok_or_else(|| Error::Config("no candidate file: pass --data or set answers".into()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let answers = read_answers(BufReader::new(file), &path.display().to_string(), &ck.vocab)?;
    if answers.is_empty() {
        return Err(Error::Invalid(format!("{}: no candidates", path.display())));
    }
    let q = tokenize(question, &ck.vocab);
    if q.is_empty() {
        return Err(Error::Invalid("question has no tokens".into()));
    }
    let ids: Vec<&AnswerId> = answers.ids().collect();
    let texts: Vec<&[TokenId]> = answers.iter().map(|(_, t)| t).collect();
    let scores = ck.params.score_candidates(&q, &texts, cfg.train.max_len)?;
    let mut ranked: Vec<(&AnswerId, f64)> = ids.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    for (i, (id, s)) in ranked.iter().enumerate() {
        writeln!(out, "{}\t{id}\t{s}", i + 1).map_err(io_err)?;
    }
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(
    config: Option<&Path>,
    variant: Option<ModelVariant>,
    seed: u64,
    corrupt: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Outcome> {
    // Only the similarity function is taken from a config.
    let similarity = match config {
        Some(p) => Some(RunConfig::load(p)?.model.similarity),
        None => None,
    };
    let variants = variant.map_or_else(|| ModelVariant::ALL.to_vec(), |v| vec![v]);
    let mut ok = true;
    let mut hooked = false;
    for v in variants {
        let mut gc = GradCheckConfig::toy(v, seed);
        if let Some(s) = similarity {
            gc.similarity = s;
        }
        let report = grad_check(&gc, corrupt)?;
        hooked |= report.tensors.iter().any(|t| Some(t.name.as_str()) == corrupt);
        writeln!(out, "# {v} seed {seed}").map_err(io_err)?;
        write!(out, "{report}").map_err(io_err)?;
        for f in report.failures() {
            ok = false;
            writeln!(err, "gradcheck failed: {v} {} relative error {:.3e}", f.name, f.max_rel_error).map_err(io_err)?;
        }
    }
    if let (Some(name), false) = (corrupt, hooked) {
        return Err(Error::Config(format!("no tensor named {name}")));
    }
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}

/// Cosine of idf-weighted bag-of-words vectors; a zero vector scores 0.
fn bow_score(q: &[f64], a: &[f64]) -> Result<f64> {
    match cosine(q, a) {
        Err(Error::ZeroNorm) => Ok(0.0),
        r => r,
    }
}

fn cmd_baseline(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let (vocab, table): (Vocabulary, EmbeddingTable) =
        load_word2vec_text(required(&cfg.data.embeddings, "embeddings")?, &mut rng)?;
    let path = eval_path(c, &cfg)?;
    let data = load_split(&cfg, &path, &vocab)?;
    note_dropped(&data, &path, err)?;

    let mut corpus: Vec<Vec<TokenId>> = match &cfg.data.train {
        Some(p) => load_split(&cfg, p, &vocab)?
            .examples
            .into_iter()
            .map(|e| e.question)
            .collect(),
        None => data.examples.iter().map(|e| e.question.clone()).collect(),
    };
    corpus.extend(data.answers.iter().map(|(_, t)| t.to_vec()));
    let idf = compute_idf(&corpus)?;

    let pools = data
        .examples
        .iter()
        .map(|e| {
            let pool = e
                .pool
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("question {} has no candidate pool", e.id)))?;
            let qv = bow_embed(&e.question, &table, &idf)?;
            let scores = pool
                .iter()
                .map(|id| {
                    let a = data
                        .answers
                        .get(id)
                        .ok_or_else(|| Error::Invalid(format!("unknown answer id {id}")))?;
                    Ok((id.clone(), bow_score(&qv, &bow_embed(a, &table, &idf)?)?))
                })
                .collect::<Result<Vec<_>>>()?;
            RankedPool::new(e.id.clone(), scores, e.ground_truth.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(&cfg, &data, &pools, out)?;
    Ok(Outcome::Ok)
}
