use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

use hpdkit::data::{
    synth_corpus, write_corpus, write_embeddings, write_gold, write_scored_pairs, write_triplets, CorpusEntry, GoldPair,
    SynthConfig,
};
use hpdkit::linalg::Matrix;
use hpdkit::reduce::Transform;

fn hpdkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpdkit")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `base` with each `--flag value` pair of `extra` replacing or appending.
fn merged<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    let mut out = base.to_vec();
    let mut i = 0;
    while i < extra.len() {
        let has_value = extra.get(i + 1).is_some_and(|v| !v.starts_with("--"));
        match out.iter().position(|a| *a == extra[i]) {
            Some(p) if has_value => out[p + 1] = extra[i + 1],
            Some(_) => {}
            None => {
                out.push(extra[i]);
                if has_value {
                    out.push(extra[i + 1]);
                }
            }
        }
        i += if has_value { 2 } else { 1 };
    }
    out
}

fn ok(args: &[&str]) -> Output {
    let o = hpdkit(args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    o
}

/// Synthetic triplets and STS splits written to a temporary directory.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let c = synth_corpus(&SynthConfig {
            triplets: 60,
            sts_pairs: 30,
            retrieval_queries: 20,
            retrieval_distractors: 60,
            ..SynthConfig::default()
        })
        .unwrap();
        write_triplets(&dir.path().join("t.jsonl"), &c.triplets).unwrap();
        write_scored_pairs(&dir.path().join("dev.tsv"), &c.sts_dev).unwrap();
        write_scored_pairs(&dir.path().join("val.tsv"), &c.sts_validation).unwrap();
        write_corpus(&dir.path().join("corpus.tsv"), &c.corpus).unwrap();
        write_corpus(&dir.path().join("queries.tsv"), &c.queries).unwrap();
        write_gold(&dir.path().join("gold.tsv"), &c.gold).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn teacher(&self, out: &str, extra: &[&str]) -> Output {
        let t = self.p("t.jsonl");
        let base = [
            "train-teacher", "--triplets", &t, "--model-dim", "16", "--heads", "2", "--ffn-dim", "32", "--layers", "1",
            "--epochs", "1", "--batch-size", "16", "--out-dir", out,
        ];
        hpdkit(&merged(&base, extra))
    }

    /// Teacher, PCA to 4 dimensions and a one-epoch student in `out`.
    fn distilled(&self, out: &str, extra: &[&str]) -> Output {
        assert_eq!(code(&self.teacher(out, &[])), 0);
        let (t, ck) = (self.p("t.jsonl"), format!("{out}/teacher.hpdw"));
        ok(&["fit-pca", "--checkpoint", &ck, "--triplets", &t, "--dim", "4", "--out-dir", out]);
        let pca = format!("{out}/pca.hpdt");
        let base = [
            "distill", "--teacher", &ck, "--triplets", &t, "--pca", &pca, "--dim", "4", "--student-dim", "8",
            "--student-ffn-dim", "16", "--epochs", "1", "--batch-size", "16", "--out-dir", out,
        ];
        hpdkit(&merged(&base, extra))
    }
}

const SUBCOMMANDS: [&str; 8] = ["train-teacher", "fit-pca", "distill", "eval-sts", "build-index", "search", "bench", "pipeline"];

#[test]
fn help_lists_flags_and_defaults() {
    for sub in SUBCOMMANDS {
        let o = ok(&[sub, "--help"]);
        let text = stdout(&o);
        for flag in ["--config", "--seed", "--out-dir", "--verbose"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
        assert!(text.contains("[default: 0]"), "{sub} help lacks the seed default");
        assert!(text.contains("[default: out]"), "{sub} help lacks the output default");
    }
    assert!(stdout(&ok(&["--help"])).contains("pipeline"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&hpdkit(&[])), 2);
    assert_eq!(code(&hpdkit(&["no-such-command"])), 2);
    assert_eq!(code(&hpdkit(&["search", "--k", "many"])), 2);
    assert_eq!(code(&hpdkit(&["fit-pca", "--dim"])), 2);
}

#[test]
fn train_teacher_writes_checkpoint_and_loss() {
    let f = Fixture::new();
    let out = f.p("run");
    let o = f.teacher(&out, &["--validation", &f.p("dev.tsv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for a in ["teacher.hpdw", "teacher.vocab.tsv", "teacher_loss.csv", "train-teacher.conf"] {
        assert!(Path::new(&out).join(a).is_file(), "missing {a}");
    }
    let loss = std::fs::read_to_string(format!("{out}/teacher_loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss\n0,"));
    assert_eq!(loss.lines().count(), 1 + 4);
    assert!(stdout(&o).contains("validation rho x100"));
}

#[test]
fn missing_dataset_exits_2_naming_it() {
    let f = Fixture::new();
    let o = hpdkit(&["train-teacher", "--triplets", &f.p("absent.jsonl"), "--out-dir", &f.p("run")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.jsonl"));
    assert!(!Path::new(&f.p("run")).exists(), "nothing is created before inputs are checked");
}

#[test]
fn zero_epochs_gives_untrained_checkpoint() {
    let f = Fixture::new();
    let (a, b) = (f.p("a"), f.p("b"));
    assert_eq!(code(&f.teacher(&a, &["--epochs", "0"])), 0);
    assert_eq!(code(&f.teacher(&b, &["--epochs", "0", "--seed", "3"])), 0);
    assert_eq!(std::fs::read_to_string(format!("{a}/teacher_loss.csv")).unwrap(), "step,loss\n");
    let (ca, cb) = (std::fs::read(format!("{a}/teacher.hpdw")).unwrap(), std::fs::read(format!("{b}/teacher.hpdw")).unwrap());
    assert_ne!(ca, cb, "different seeds initialize differently");
}

#[test]
fn divergence_exits_3() {
    let f = Fixture::new();
    let o = f.teacher(&f.p("run"), &["--lr", "1e300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    assert!(!Path::new(&f.p("run/teacher.hpdw")).exists());
}

#[test]
fn fitted_pca_has_requested_shape_and_is_reproducible() {
    let f = Fixture::new();
    let out = f.p("run");
    assert_eq!(code(&f.teacher(&out, &[])), 0);
    let (t, ck) = (f.p("t.jsonl"), format!("{out}/teacher.hpdw"));
    let o = ok(&["fit-pca", "--checkpoint", &ck, "--triplets", &t, "--dim", "6", "--out-dir", &out]);
    assert!(stdout(&o).contains("PCA 16 -> 6"));
    let first = std::fs::read(format!("{out}/pca.hpdt")).unwrap();
    match Transform::load(Path::new(&format!("{out}/pca.hpdt"))).unwrap() {
        Transform::Pca(p) => {
            assert_eq!((p.weights.rows(), p.weights.cols()), (16, 6));
        }
        other => panic!("unexpected {:?}", other.kind()),
    }
    ok(&["fit-pca", "--checkpoint", &ck, "--triplets", &t, "--dim", "6", "--out-dir", &out]);
    assert_eq!(first, std::fs::read(format!("{out}/pca.hpdt")).unwrap());

    let same = hpdkit(&["fit-pca", "--checkpoint", &ck, "--triplets", &t, "--dim", "16", "--out-dir", &out]);
    assert_eq!(code(&same), 2);
}

#[test]
fn fit_pca_from_embedding_file() {
    let f = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = Matrix::from_fn(50, 12, |_, _| StandardNormal.sample(&mut rng));
    write_embeddings(Path::new(&f.p("e.hpde")), &m).unwrap();
    let out = f.p("run");
    ok(&["fit-pca", "--embeddings", &f.p("e.hpde"), "--dim", "3", "--out-dir", &out]);
    let t = Transform::load(Path::new(&format!("{out}/pca.hpdt"))).unwrap();
    assert_eq!((t.input_dim(), t.output_dim()), (12, 3));
    let o = hpdkit(&["fit-pca", "--embeddings", &f.p("gone.hpde"), "--dim", "3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gone.hpde"));
}

#[test]
fn distill_writes_student_artifacts() {
    let f = Fixture::new();
    let out = f.p("run");
    let o = f.distilled(&out, &["--validation", &f.p("dev.tsv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for a in ["student.hpdw", "student.vocab.tsv", "projection.hpdt", "distill_loss.csv", "distill.conf"] {
        assert!(Path::new(&out).join(a).is_file(), "missing {a}");
    }
    assert!(!Path::new(&out).join("student_whitened.hpdt").exists());
    let text = stdout(&o);
    assert!(text.contains("final distillation loss"));
    assert!(text.contains("validation rho x100"));
    let proj = Transform::load(Path::new(&format!("{out}/projection.hpdt"))).unwrap();
    assert_eq!((proj.input_dim(), proj.output_dim()), (8, 4));
}

#[test]
fn whiten_after_adds_composed_transform() {
    let f = Fixture::new();
    let out = f.p("run");
    let o = f.distilled(&out, &["--whiten-after"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w = std::fs::read(format!("{out}/student_whitened.hpdt")).unwrap();
    assert_ne!(w, std::fs::read(format!("{out}/projection.hpdt")).unwrap());
}

#[test]
fn distill_dimension_mismatch_exits_2() {
    let f = Fixture::new();
    let out = f.p("run");
    let o = f.distilled(&out, &["--dim", "5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("PCA reduces to 4 dimensions"));
    assert!(!Path::new(&out).join("student.hpdw").exists());
}

#[test]
fn eval_sts_reports_each_dataset_and_average() {
    let f = Fixture::new();
    let out = f.p("run");
    assert_eq!(code(&f.distilled(&out, &[])), 0);
    let (ck, tr) = (format!("{out}/student.hpdw"), format!("{out}/projection.hpdt"));
    let named = format!("held={}", f.p("val.tsv"));
    let o = ok(&["eval-sts", "--checkpoint", &ck, "--transform", &tr, "--dataset", &f.p("dev.tsv"), "--dataset", &named, "--out-dir", &out]);
    let csv = std::fs::read_to_string(format!("{out}/sts.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("dev,"));
    assert!(rows[1].starts_with("held,"));
    assert!(rows[2].starts_with("avg,"));
    assert!(stdout(&o).contains("avg"));

    let missing = hpdkit(&["eval-sts", "--checkpoint", &format!("{out}/nothing.hpdw"), "--dataset", &f.p("dev.tsv")]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("nothing.hpdw"));
}

#[test]
fn full_probe_search_equals_exact_baseline() {
    let f = Fixture::new();
    let out = f.p("run");
    assert_eq!(code(&f.distilled(&out, &[])), 0);
    let (ck, tr) = (format!("{out}/student.hpdw"), format!("{out}/projection.hpdt"));
    let enc = ["--checkpoint", ck.as_str(), "--transform", tr.as_str()];
    let corpus = f.p("corpus.tsv");
    let mut a = vec!["build-index", "--corpus", corpus.as_str(), "--nlist", "4", "--out-dir", &out];
    a.extend_from_slice(&enc);
    ok(&a);
    let (index, queries, gold) = (format!("{out}/index.hpdi"), f.p("queries.tsv"), f.p("gold.tsv"));
    let mut s = vec!["search", "--index", &index, "--queries", &queries, "--k", "10", "--nprobe", "4", "--out-dir", &out];
    s.extend_from_slice(&enc);
    ok(&s);
    let mut b = vec!["bench", "--index", &index, "--queries", &queries, "--gold", &gold, "--exact", "--nprobe", "4", "--repeats", "1", "--out-dir", &out];
    b.extend_from_slice(&enc);
    let o = ok(&b);
    assert!(stdout(&o).contains("MRR@10"));
    let searched = std::fs::read_to_string(format!("{out}/search.tsv")).unwrap();
    assert_eq!(searched, std::fs::read_to_string(format!("{out}/index.exact.tsv")).unwrap());
    assert_eq!(searched.lines().count(), 1 + 20 * 10);
    let bench = std::fs::read_to_string(format!("{out}/bench.csv")).unwrap();
    assert!(bench.starts_with("index,mrr@10,time_ms_per_1k,mem_bytes,payload_bytes\nindex.hpdi,"));
}

fn write_vectors(path: &Path, data: &[f64], rows: usize, cols: usize) {
    write_embeddings(path, &Matrix::new(rows, cols, data.to_vec()).unwrap()).unwrap();
}

#[test]
fn bench_prints_memory_ratio_of_two_widths() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| -> PathBuf { dir.path().join(n) };
    let (n, nq, big, small) = (2000, 20, 1024, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let full = draw(n * big);
    let queries = draw(nq * big);
    let cut = |v: &[f64]| -> Vec<f64> { v.chunks(big).flat_map(|r| r[..small].to_vec()).collect() };
    write_vectors(&p("big.hpde"), &full, n, big);
    write_vectors(&p("small.hpde"), &cut(&full), n, small);
    write_vectors(&p("qbig.hpde"), &queries, nq, big);
    write_vectors(&p("qsmall.hpde"), &cut(&queries), nq, small);
    let corpus: Vec<CorpusEntry> = (0..n as u64).map(|i| CorpusEntry { id: i, text: format!("doc {i}") }).collect();
    let qs: Vec<CorpusEntry> = (0..nq as u64).map(|i| CorpusEntry { id: i, text: format!("query {i}") }).collect();
    let gold: Vec<GoldPair> = (0..nq as u64).map(|i| GoldPair { query_id: i, gold_id: i * 7 }).collect();
    write_corpus(&p("corpus.tsv"), &corpus).unwrap();
    write_corpus(&p("queries.tsv"), &qs).unwrap();
    write_gold(&p("gold.tsv"), &gold).unwrap();
    let s = |x: PathBuf| x.to_str().unwrap().to_string();
    let out = s(p("out"));
    for (emb, name) in [("small.hpde", "d128.hpdi"), ("big.hpde", "d1024.hpdi")] {
        ok(&["build-index", "--corpus", &s(p("corpus.tsv")), "--embeddings", &s(p(emb)), "--output", name, "--out-dir", &out]);
    }
    let o = ok(&[
        "bench", "--index", &format!("{out}/d128.hpdi"), "--index", &format!("{out}/d1024.hpdi"), "--queries",
        &s(p("queries.tsv")), "--gold", &s(p("gold.tsv")), "--query-embeddings", &s(p("qsmall.hpde")),
        "--query-embeddings", &s(p("qbig.hpde")), "--repeats", "1", "--out-dir", &out,
    ]);
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("memory ratio")).expect("ratio printed");
    let ratio: f64 = line.split(": ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((ratio / 8.0 - 1.0).abs() <= 0.02, "{line}");
    assert!(line.contains("vector payload 8.0000"), "{line}");

    let mismatched = hpdkit(&[
        "bench", "--index", &format!("{out}/d128.hpdi"), "--queries", &s(p("queries.tsv")), "--gold",
        &s(p("gold.tsv")), "--query-embeddings", &s(p("qbig.hpde")), "--out-dir", &out,
    ]);
    assert_eq!(code(&mismatched), 2);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let f = Fixture::new();
    let (a, b) = (f.p("a"), f.p("b"));
    assert_eq!(code(&f.distilled(&a, &["--whiten-after"])), 0);
    assert_eq!(code(&f.distilled(&b, &["--whiten-after"])), 0);
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        let (x, y) = (Path::new(&a).join(&n), Path::new(&b).join(&n));
        let (bx, by) = (std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap());
        if n.to_string_lossy().ends_with(".conf") {
            // snapshots record the run's own paths
            let (sx, sy) = (String::from_utf8(bx).unwrap(), String::from_utf8(by).unwrap());
            assert_eq!(sx.replace(&a, &b), sy, "{n:?}");
        } else {
            assert_eq!(bx, by, "{n:?} differs");
        }
    }
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let f = Fixture::new();
    let conf = f.p("run.conf");
    std::fs::write(&conf, "# tiny teacher\nmodel_dim = 16\nheads = 2\nffn-dim = 32\nlayers = 1\nepochs = 0\nbatch-size = 16\n").unwrap();
    let out = f.p("run");
    let t = f.p("t.jsonl");
    ok(&["train-teacher", "--config", &conf, "--triplets", &t, "--out-dir", &out]);
    assert_eq!(std::fs::read_to_string(format!("{out}/teacher_loss.csv")).unwrap().lines().count(), 1);
    ok(&["train-teacher", "--config", &conf, "--triplets", &t, "--out-dir", &out, "--epochs", "1"]);
    assert_eq!(std::fs::read_to_string(format!("{out}/teacher_loss.csv")).unwrap().lines().count(), 1 + 4);

    // the written snapshot reproduces the run
    let snap = format!("{out}/train-teacher.conf");
    let again = f.p("again");
    ok(&["train-teacher", "--config", &snap, "--out-dir", &again]);
    assert_eq!(
        std::fs::read(format!("{out}/teacher.hpdw")).unwrap(),
        std::fs::read(format!("{again}/teacher.hpdw")).unwrap()
    );

    std::fs::write(&conf, "nonsense = 1\n").unwrap();
    assert_eq!(code(&hpdkit(&["train-teacher", "--config", &conf, "--triplets", &t])), 2);
    std::fs::write(&conf, "no equals sign\n").unwrap();
    assert_eq!(code(&hpdkit(&["train-teacher", "--config", &conf, "--triplets", &t])), 2);
    assert_eq!(code(&hpdkit(&["train-teacher", "--config", &f.p("none.conf"), "--triplets", &t])), 2);
}

#[test]
fn thread_cap_is_validated() {
    let f = Fixture::new();
    let t = f.p("t.jsonl");
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_hpdkit"))
            .args(["train-teacher", "--triplets", &t, "--epochs", "0", "--model-dim", "16", "--heads", "2", "--out-dir", &f.p("run")])
            .env("HPDKIT_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("1")), 0);
    assert_eq!(code(&run("zero")), 2);
    assert_eq!(code(&run("0")), 2);
}
