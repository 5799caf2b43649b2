mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use common::{run_cli, synthetic, write_fixture, FixtureFiles, SyntheticSpec};
use qarank::checkpoint::load_checkpoint;
use qarank::data::{parse_trecqa, AnswerId, TokenSeq};

struct Run {
    _dir: tempfile::TempDir,
    files: FixtureFiles,
    config: PathBuf,
}

impl Run {
    fn ckpt(&self, name: &str) -> PathBuf {
        self.files.dir.join("ckpt").join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }
}

fn setup(extra: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let s = synthetic(&SyntheticSpec {
        keywords: 2,
        ..SyntheticSpec::default()
    });
    let files = write_fixture(&s, dir.path());
    let config = dir.path().join("run.cfg");
    let text = format!(
        "# fixture run\nvariant = lstm_max\nhidden = 8\nbatch_size = 4\nnegatives = 10\nlearning_rate = 0.2\n\
         dropout = 0.0\nepochs = 6\nembeddings = vectors.txt\nanswers = answers.tsv\ntrain = questions.tsv\n\
         dev = questions.tsv\ntest = questions.tsv\ncheckpoint_dir = ckpt\n{extra}"
    );
    fs::write(&config, text).unwrap();
    Run {
        _dir: dir,
        files,
        config,
    }
}

fn train(run: &Run) -> String {
    let (code, out, err) = run_cli(&["train", "--config", run.cfg()]);
    assert_eq!(code, 0, "{err}");
    out
}

fn log_rows(run: &Run) -> Vec<Vec<String>> {
    fs::read_to_string(run.files.dir.join("ckpt/train.log"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn train_writes_checkpoints_and_a_falling_loss() {
    let run = setup("");
    let out = train(&run);
    assert!(out.starts_with("metric\tvalue\n"), "{out}");
    assert!(run.ckpt("best.ckpt").exists() && run.ckpt("last.ckpt").exists());
    let rows = log_rows(&run);
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0][0], "0");
    let first: f64 = rows[1][1].parse().unwrap();
    let last: f64 = rows[6][1].parse().unwrap();
    assert!(first > last, "loss {first} -> {last}");
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let run = setup("");
    let text = fs::read_to_string(&run.config).unwrap().replace("epochs = 6", "epochs = 0");
    fs::write(&run.config, text).unwrap();
    train(&run);
    assert_eq!(log_rows(&run).len(), 1);
    assert_eq!(fs::read(run.ckpt("best.ckpt")).unwrap(), fs::read(run.ckpt("last.ckpt")).unwrap());
}

#[test]
fn missing_embeddings_exit_2_naming_the_path() {
    let run = setup("");
    fs::remove_file(&run.files.embeddings).unwrap();
    let (code, _, err) = run_cli(&["train", "--config", run.cfg()]);
    assert_eq!(code, 2);
    assert!(err.contains("vectors.txt"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let run = setup("hiddn = 3\n");
    let (code, _, err) = run_cli(&["train", "--config", run.cfg()]);
    assert_eq!(code, 2);
    assert!(err.contains("hiddn"), "{err}");
    let (code, _, _) = run_cli(&["evaluate"]);
    assert_eq!(code, 2);
}

#[test]
fn evaluate_is_byte_stable_and_reports_buckets() {
    let run = setup("");
    train(&run);
    let a = run_cli(&["evaluate", "--config", run.cfg()]);
    let b = run_cli(&["evaluate", "--config", run.cfg()]);
    assert_eq!(a.0, 0, "{}", a.2);
    assert_eq!(a, b);
    let lines: Vec<&str> = a.1.lines().collect();
    assert_eq!(lines, ["metric\tvalue", lines[1], lines[2], lines[3]]);
    assert!(lines[1].starts_with("top1\t"));

    let (code, out, _) = run_cli(&["evaluate", "--config", run.cfg(), "--buckets"]);
    assert_eq!(code, 0);
    let table: Vec<&str> = out.lines().skip_while(|l| !l.starts_with("bucket")).collect();
    assert_eq!(table.len(), 12);
    assert_eq!(table[0], "bucket\tcount\taccuracy");
    let counted: usize = table[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counted, 20);
}

#[test]
fn evaluate_rejects_poolless_data() {
    let run = setup("");
    train(&run);
    let questions = fs::read_to_string(&run.files.questions).unwrap();
    let poolless: String = questions
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split('\t').collect();
            f[3] = "-";
            f.join("\t") + "\n"
        })
        .collect();
    let path = run.files.dir.join("poolless.tsv");
    fs::write(&path, poolless).unwrap();
    let (code, _, err) = run_cli(&["evaluate", "--config", run.cfg(), "--data", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("pool"), "{err}");
}

fn rank(run: &Run, question: &str, answers: &Path) -> Vec<(usize, String, f64)> {
    let (code, out, err) = run_cli(&[
        "rank",
        "--config",
        run.cfg(),
        "--question",
        question,
        "--data",
        answers.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    out.lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn rank_orders_candidates_with_the_tie_rule() {
    let run = setup("");
    train(&run);
    let one = run.files.dir.join("one.tsv");
    fs::write(&one, "a9\tw1 w2 w3\n").unwrap();
    let r = rank(&run, "w4 w5", &one);
    assert_eq!(r.len(), 1);
    assert_eq!((r[0].0, r[0].1.as_str()), (1, "a9"));

    let dup = run.files.dir.join("dup.tsv");
    fs::write(&dup, "10\tw1 w2 w3\n9\tw1 w2 w3\nx\tw7 w8\n").unwrap();
    let r = rank(&run, "w4 w5", &dup);
    let pos = |id: &str| r.iter().position(|x| x.1 == id).unwrap();
    assert_eq!(r[pos("9")].2, r[pos("10")].2);
    assert_eq!(pos("9") + 1, pos("10"));
    assert!(r.windows(2).all(|w| w[0].2 >= w[1].2));

    let empty = run.files.dir.join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let (code, _, err) = run_cli(&["rank", "--config", run.cfg(), "--question", "w1", "--data", empty.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("no candidates"), "{err}");
}

#[test]
fn rank_scores_match_evaluation_scores() {
    let run = setup("");
    train(&run);
    let ck = load_checkpoint(&run.ckpt("best.ckpt")).unwrap();
    let s = synthetic(&SyntheticSpec {
        keywords: 2,
        ..SyntheticSpec::default()
    });
    let pools = ck.params.rank_examples(&s.data.examples, &s.data.answers, 200).unwrap();
    let ex = &s.data.examples[0];
    let words: Vec<&str> = ex.question.iter().map(|&t| ck.vocab.token(t).unwrap()).collect();
    let r = rank(&run, &words.join(" "), &run.files.answers);
    for (id, score) in &pools[0].ranked {
        let from_rank = r.iter().find(|x| x.1 == id.as_str()).unwrap().2;
        assert_eq!(from_rank.to_bits(), score.to_bits(), "answer {id}");
    }
}

fn brute_force_map_mrr(pools: &[(Vec<(String, f64)>, BTreeSet<String>)]) -> (f64, f64) {
    let (mut map, mut mrr) = (0.0, 0.0);
    for (scores, gt) in pools {
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.parse::<u64>().unwrap().cmp(&b.0.parse::<u64>().unwrap()))
        });
        let rel: Vec<bool> = sorted.iter().map(|(id, _)| gt.contains(id)).collect();
        map += common::oracle::average_precision(&rel);
        mrr += common::oracle::reciprocal_rank(&rel);
    }
    (map / pools.len() as f64, mrr / pools.len() as f64)
}

#[test]
fn trecqa_evaluation_matches_brute_force() {
    let run = setup("");
    train(&run);
    let trec = run.files.dir.join("trec.tsv");
    let mut text = String::new();
    for (q, cands) in [
        ("w1 w2 w3", vec![("w1 w2", 1), ("w9 w10 w11", 0), ("w4", 0), ("w2 w3 w5", 1)]),
        ("w20 w21", vec![("w22 w23", 0), ("w20", 1), ("w30 w31 w32", 0)]),
        ("w40 w41 w42", vec![("w40 w43", 0), ("w44", 0)]),
        ("w5 w6", vec![("w5 w7", 0), ("w6 w8", 1), ("w11", 0), ("w12 w13", 0), ("w6", 0)]),
    ] {
        for (c, l) in cands {
            text.push_str(&format!("{q}\t{c}\t{l}\n"));
        }
    }
    fs::write(&trec, &text).unwrap();
    let cfg = fs::read_to_string(&run.config).unwrap() + "format = trecqa\n";
    let trec_cfg = run.files.dir.join("trec.cfg");
    fs::write(&trec_cfg, cfg.replace("answers = answers.tsv\n", "")).unwrap();
    let (code, out, err) = run_cli(&[
        "evaluate",
        "--config",
        trec_cfg.to_str().unwrap(),
        "--checkpoint",
        run.ckpt("best.ckpt").to_str().unwrap(),
        "--data",
        trec.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let reported = |m: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{m}\t")))
            .unwrap()
            .parse()
            .unwrap()
    };

    let ck = load_checkpoint(&run.ckpt("best.ckpt")).unwrap();
    let data = parse_trecqa(&trec, &ck.vocab).unwrap();
    assert_eq!(data.dropped, 1);
    let pools: Vec<(Vec<(String, f64)>, BTreeSet<String>)> = data
        .examples
        .iter()
        .map(|e| {
            let pool = e.pool.as_ref().unwrap();
            let texts: Vec<&[u32]> = pool.iter().map(|id| data.answers.get(id).unwrap()).collect();
            let scores = ck.params.score_candidates(&e.question, &texts, 200).unwrap();
            (
                pool.iter().map(AnswerId::to_string).zip(scores).collect(),
                e.ground_truth.iter().map(AnswerId::to_string).collect(),
            )
        })
        .collect();
    let (map, mrr) = brute_force_map_mrr(&pools);
    assert!((reported("map") - map).abs() <= 5e-7, "{out}");
    assert!((reported("mrr") - mrr).abs() <= 5e-7, "{out}");
}

#[test]
fn gradcheck_cli_codes_and_repeatability() {
    let a = run_cli(&["gradcheck", "--variant", "att_cnn", "--seed", "4"]);
    let b = run_cli(&["gradcheck", "--variant", "att_cnn", "--seed", "4"]);
    assert_eq!(a.0, 0, "{}", a.1);
    assert_eq!(a, b);

    let (code, out, err) = run_cli(&["gradcheck", "--variant", "lstm_cnn", "--corrupt-tensor", "head.cnn.filters"]);
    assert_eq!(code, 1);
    assert!(err.contains("head.cnn.filters"), "{err}");
    assert!(out.contains("head.cnn.filters\t") && out.contains("FAIL"));

    let (code, _, err) = run_cli(&["gradcheck", "--variant", "lstm_avg", "--corrupt-tensor", "nothing"]);
    assert_eq!(code, 2);
    assert!(err.contains("nothing"));
}

#[test]
fn baseline_ranks_the_question_text_first() {
    let run = setup("");
    let answers = run.files.dir.join("bow_answers.tsv");
    fs::write(&answers, "1\tw30 w31 w32\n2\tw1 w2 w3 w4\n3\tw40 w41\n4\tw33 w34 w35\n").unwrap();
    let questions = run.files.dir.join("bow_questions.tsv");
    fs::write(&questions, "q1\tw1 w2 w3 w4\t2\t1,2,3,4\n").unwrap();
    let cfg = fs::read_to_string(&run.config)
        .unwrap()
        .replace("answers = answers.tsv", "answers = bow_answers.tsv")
        .replace("train = questions.tsv\n", "")
        .replace("dev = questions.tsv\n", "")
        .replace("test = questions.tsv", "test = bow_questions.tsv");
    fs::write(&run.config, cfg).unwrap();
    let (code, out, err) = run_cli(&["baseline", "--config", run.cfg()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("top1\t1.000000"), "{out}");
}

#[test]
fn baseline_with_zero_idf_falls_back_to_id_order() {
    let run = setup("");
    // Every document holds the same words, so every idf weight is zero.
    let answers = run.files.dir.join("same_answers.tsv");
    fs::write(&answers, "1\tw1 w2\n2\tw1 w2\n3\tw2 w1\n").unwrap();
    let questions = run.files.dir.join("same_questions.tsv");
    fs::write(&questions, "q1\tw1 w2\t2\t1,2,3\n").unwrap();
    let cfg = fs::read_to_string(&run.config)
        .unwrap()
        .replace("answers = answers.tsv", "answers = same_answers.tsv")
        .replace("train = questions.tsv\n", "")
        .replace("dev = questions.tsv\n", "")
        .replace("test = questions.tsv", "test = same_questions.tsv");
    fs::write(&run.config, cfg).unwrap();
    let (code, out, err) = run_cli(&["baseline", "--config", run.cfg()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("top1\t0.000000"), "{out}");
    assert!(out.contains("mrr\t0.500000"), "{out}");
}

#[test]
fn truncation_applies_before_scoring() {
    let run = setup("max_len = 3\n");
    train(&run);
    let ck = load_checkpoint(&run.ckpt("best.ckpt")).unwrap();
    let long = ck.params.forward_question(&TokenSeq::truncated(&[2, 3, 4, 5, 6], 3)).unwrap();
    let short = ck.params.forward_question(&TokenSeq::truncated(&[2, 3, 4], 3)).unwrap();
    assert_eq!(long.comp.repr, short.comp.repr);
}
