use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::binio::atomic_write;
use crate::data::{
    augment_all, load_corpus, load_gold, load_scored_pairs, load_triplets, read_embeddings, synth_corpus, write_corpus,
    write_gold, write_scored_pairs, write_triplets, CorpusEntry, ScoredPair, SynthConfig,
};
use crate::distill::{
    distill, sentence_pool, teacher_from_file, train_teacher, DistillState, Embedder, TrainConfig,
};
use crate::encoder::{load_backbone, save_backbone, EncoderConfig, TextEncoder, TransformerEncoder, Vocab};
use crate::error::{Error, Result};
use crate::evalsts::{eval_sts, eval_suite};
use crate::linalg::{EmbeddingMatrix, Matrix};
use crate::reduce::{fit_pca_report, fit_whitening, PcaTransform, ProjectionHead, Transform};
use crate::retrieval::{
    bench, build_ivf, exact_search, load_index, save_index, search, FlatIndex, Hit, QuerySet,
};

use super::{
    snapshot, BenchArgs, BuildIndexArgs, Command, CommonArgs, DistillArgs, EncodeArgs, EvalStsArgs, FitPcaArgs, HeadInit,
    PipelineArgs, SearchArgs, TrainArgs, TrainTeacherArgs,
};

pub(super) fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::TrainTeacher(a) => train_teacher_cmd(a),
        Command::FitPca(a) => fit_pca_cmd(a),
        Command::Distill(a) => distill_cmd(a),
        Command::EvalSts(a) => eval_sts_cmd(a),
        Command::BuildIndex(a) => build_index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} not found: {}", path.display())))
    }
}

fn require_opt(path: Option<&PathBuf>, what: &str) -> Result<()> {
    path.map_or(Ok(()), |p| require(p, what))
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf> {
    fs::create_dir_all(&common.out_dir).map_err(|e| Error::io(&common.out_dir, e))?;
    Ok(common.out_dir.clone())
}

fn write_snapshot<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    atomic_write(&out.join(format!("{command}.conf")), snapshot(command, args)?.as_bytes())
}

fn sibling_vocab(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("vocab.tsv")
}

fn save_encoder(enc: &TextEncoder, path: &Path) -> Result<()> {
    save_backbone(&enc.backbone, path)?;
    enc.vocab.save(&sibling_vocab(path))
}

fn load_encoder(checkpoint: &Path, vocab: Option<&Path>) -> Result<TextEncoder> {
    let vocab = vocab.map_or_else(|| sibling_vocab(checkpoint), Path::to_path_buf);
    require(checkpoint, "checkpoint")?;
    require(&vocab, "vocabulary")?;
    TextEncoder::new(Vocab::load(&vocab)?, load_backbone(checkpoint)?)
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        writeln!(s, "{i},{l}").unwrap();
    }
    s
}

fn rho100(r: f64) -> String {
    format!("{:.2}", r * 100.0)
}

struct ModelShape {
    dim: usize,
    layers: usize,
    heads: usize,
    ffn_dim: usize,
    max_len: usize,
    min_count: usize,
}

fn new_transformer<'a>(sentences: impl IntoIterator<Item = &'a str>, shape: &ModelShape, seed: u64) -> Result<TextEncoder> {
    let vocab = Vocab::build(sentences, shape.min_count);
    let enc = TransformerEncoder::new(EncoderConfig {
        vocab_size: vocab.len(),
        layers: shape.layers,
        model_dim: shape.dim,
        heads: shape.heads,
        ffn_dim: shape.ffn_dim,
        max_len: shape.max_len,
        seed,
    })?;
    TextEncoder::new(vocab, enc)
}

fn train_config(t: &TrainArgs, lr: f64, temperature: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: t.batch_size,
        epochs: t.epochs,
        learning_rate: lr,
        weight_decay: t.weight_decay,
        temperature,
        seed,
        eval_every: t.eval_every,
        grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
        max_steps: t.max_steps,
        ..TrainConfig::default()
    }
}

/// An encoder optionally followed by a stored transform.
struct Encoding {
    encoder: TextEncoder,
    transform: Option<Transform>,
}

impl Encoding {
    fn open(a: &EncodeArgs) -> Result<Option<Self>> {
        require_opt(a.transform.as_ref(), "transform")?;
        let Some(ck) = &a.checkpoint else {
            if a.transform.is_some() {
                return Err(Error::Input("--transform needs --checkpoint".into()));
            }
            return Ok(None);
        };
        let encoder = load_encoder(ck, a.vocab.as_deref())?;
        let transform = a.transform.as_deref().map(Transform::load).transpose()?;
        if let Some(t) = &transform {
            if t.input_dim() != encoder.dim() {
                return Err(Error::Config(format!(
                    "transform expects width {}, encoder produces {}",
                    t.input_dim(),
                    encoder.dim()
                )));
            }
        }
        Ok(Some(Self { encoder, transform }))
    }

    fn require(a: &EncodeArgs, needed_for: &str) -> Result<Self> {
        Self::open(a)?.ok_or_else(|| Error::Input(format!("{needed_for} needs --checkpoint")))
    }
}

impl Embedder for Encoding {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let e = self.encoder.embed(text)?;
        match &self.transform {
            Some(t) => t.apply(&e),
            None => Ok(e),
        }
    }

    fn dim(&self) -> usize {
        self.transform.as_ref().map_or(self.encoder.dim(), Transform::output_dim)
    }
}

fn embed_all(embedder: &dyn Embedder, texts: &[&str]) -> Result<EmbeddingMatrix> {
    let rows = texts
        .par_iter()
        .enumerate()
        .map(|(i, t)| embedder.embed(t).map_err(|e| e.context(format!("embedding sentence {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Matrix::new(texts.len(), embedder.dim(), rows.concat())
}

fn train_teacher_cmd(a: &TrainTeacherArgs) -> Result<()> {
    require(&a.triplets, "triplet file")?;
    require_opt(a.validation.as_ref(), "validation file")?;
    let out = out_dir(&a.common)?;
    let triplets = load_triplets(&a.triplets)?;
    let validation = a.validation.as_deref().map(load_scored_pairs).transpose()?;
    let shape = ModelShape {
        dim: a.model_dim,
        layers: a.layers,
        heads: a.heads,
        ffn_dim: a.ffn_dim,
        max_len: a.max_len,
        min_count: a.min_count,
    };
    let encoder = new_transformer(triplets.iter().flat_map(|t| t.sentences()), &shape, a.common.seed)?;
    let cfg = train_config(&a.train, a.lr, a.temperature, a.common.seed);
    let run = train_teacher(encoder, &triplets, &cfg, validation.as_deref())?;

    save_encoder(&run.encoder, &out.join("teacher.hpdw"))?;
    atomic_write(&out.join("teacher_loss.csv"), loss_csv(&run.loss_trace).as_bytes())?;
    write_snapshot(&out, "train-teacher", a)?;
    println!("teacher: {} steps", run.loss_trace.len());
    if let Some(l) = run.loss_trace.last() {
        println!("final contrastive loss {l:.6}");
    }
    match run.best_rho {
        Some(r) => println!("validation rho x100 {} (step {})", rho100(r), run.best_step),
        None => println!("no validation set given"),
    }
    Ok(())
}

fn pca_summary(pca: &PcaTransform, samples: &EmbeddingMatrix) -> String {
    let m = samples.rows() as f64;
    let (mean, _) = crate::linalg::center_rows(samples);
    let total: f64 = samples
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(x, mu)| (x - mu) * (x - mu)).sum::<f64>())
        .sum::<f64>()
        / m;
    let mut s = String::new();
    writeln!(s, "PCA {} -> {} on {} samples", pca.input_dim(), pca.output_dim(), samples.rows()).unwrap();
    writeln!(s, "{:>4}  {:>14}  {:>8}", "k", "variance", "cum %").unwrap();
    let mut cum = 0.0;
    for (k, v) in pca.explained_variances.iter().enumerate() {
        cum += v;
        if k < 10 || k + 1 == pca.output_dim() {
            writeln!(s, "{:>4}  {:>14.6e}  {:>8.2}", k + 1, v, 100.0 * cum / total).unwrap();
        }
    }
    s
}

fn fit_pca_cmd(a: &FitPcaArgs) -> Result<()> {
    let samples = if let Some(e) = &a.embeddings {
        require(e, "embedding file")?;
        out_dir(&a.common)?;
        read_embeddings(e)?
    } else {
        let tp = a
            .triplets
            .as_ref()
            .ok_or_else(|| Error::Input("give --embeddings, or --checkpoint with --triplets".into()))?;
        require(tp, "triplet file")?;
        let enc = Encoding::require(&a.encode, "embedding sentences")?;
        out_dir(&a.common)?;
        let pool = sentence_pool(&load_triplets(tp)?);
        let texts: Vec<&str> = pool.iter().map(String::as_str).collect();
        embed_all(&enc, &texts)?
    };
    if a.dim >= samples.cols() {
        return Err(Error::Config(format!(
            "target dimension {} must be below the embedding width {}",
            a.dim,
            samples.cols()
        )));
    }
    let (pca, _) = fit_pca_report(&samples, a.dim)?;
    let summary = pca_summary(&pca, &samples);
    let out = out_dir(&a.common)?;
    Transform::Pca(pca).save(&out.join("pca.hpdt"))?;
    write_snapshot(&out, "fit-pca", a)?;
    print!("{summary}");
    Ok(())
}

fn load_pca(path: &Path) -> Result<PcaTransform> {
    match Transform::load(path)? {
        Transform::Pca(p) => Ok(p),
        other => Err(Error::Input(format!(
            "{} holds a {:?} transform, not PCA",
            path.display(),
            other.kind()
        ))),
    }
}

fn make_head(init: HeadInit, pca: &PcaTransform, student_dim: usize, seed: u64) -> ProjectionHead {
    match init {
        HeadInit::Pca => ProjectionHead::from_pca(pca, student_dim),
        HeadInit::Random => ProjectionHead::random(student_dim, pca.output_dim(), seed),
    }
}

struct Distilled {
    encoder: TextEncoder,
    head: ProjectionHead,
    final_loss: Option<f64>,
    best_rho: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn distill_and_save(
    teacher: &dyn Embedder,
    pca: &PcaTransform,
    student: TextEncoder,
    head: ProjectionHead,
    sentences: &[String],
    cfg: &TrainConfig,
    validation: Option<&[ScoredPair]>,
    whiten_after: bool,
    out: &Path,
) -> Result<Distilled> {
    let state = distill(teacher, pca, DistillState::new(student, head)?, sentences, cfg, validation)?;
    let final_loss = state.loss_history.last().copied();
    let best_rho = state.best.as_ref().map(|b| b.rho);
    atomic_write(&out.join("distill_loss.csv"), loss_csv(&state.loss_history).as_bytes())?;
    let (encoder, head) = state.into_best();
    save_encoder(&encoder, &out.join("student.hpdw"))?;
    Transform::Projection(head.clone()).save(&out.join("projection.hpdt"))?;
    if whiten_after {
        let texts: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let projected = embed_all(
            &Encoding {
                encoder: encoder.clone(),
                transform: Some(Transform::Projection(head.clone())),
            },
            &texts,
        )?;
        let w = fit_whitening(&projected, head.output_dim())?;
        Transform::Projection(head.then_whiten(&w)?).save(&out.join("student_whitened.hpdt"))?;
    }
    Ok(Distilled {
        encoder,
        head,
        final_loss,
        best_rho,
    })
}

fn distill_cmd(a: &DistillArgs) -> Result<()> {
    require(&a.pca, "PCA file")?;
    require_opt(a.validation.as_ref(), "validation file")?;
    let pca = load_pca(&a.pca)?;
    if pca.output_dim() != a.dim {
        return Err(Error::Config(format!(
            "PCA reduces to {} dimensions but the projection is set to {}",
            pca.output_dim(),
            a.dim
        )));
    }
    let (teacher, sentences): (Box<dyn Embedder>, Vec<String>) = match (&a.teacher, &a.teacher_embeddings) {
        (Some(t), None) => {
            let tp = a.triplets.as_ref().ok_or_else(|| Error::Input("--teacher needs --triplets".into()))?;
            require(tp, "triplet file")?;
            let enc = load_encoder(t, a.teacher_vocab.as_deref())?;
            (Box::new(enc), sentence_pool(&load_triplets(tp)?))
        }
        (None, Some(e)) => {
            let c = a.corpus.as_ref().ok_or_else(|| Error::Input("--teacher-embeddings needs --corpus".into()))?;
            require(e, "teacher embedding file")?;
            require(c, "corpus file")?;
            let corpus = load_corpus(c)?;
            let stored = teacher_from_file(e, &corpus)?;
            (Box::new(stored), corpus.into_iter().map(|c| c.text).collect())
        }
        _ => return Err(Error::Input("give --teacher with --triplets, or --teacher-embeddings with --corpus".into())),
    };
    if teacher.dim() != pca.input_dim() {
        return Err(Error::Config(format!(
            "PCA was fitted on width {}, teacher produces {}",
            pca.input_dim(),
            teacher.dim()
        )));
    }
    let validation = a.validation.as_deref().map(load_scored_pairs).transpose()?;
    let out = out_dir(&a.common)?;

    let shape = ModelShape {
        dim: a.student_dim,
        layers: a.student_layers,
        heads: a.student_heads,
        ffn_dim: a.student_ffn_dim,
        max_len: a.max_len,
        min_count: a.min_count,
    };
    let student = new_transformer(sentences.iter().map(String::as_str), &shape, a.common.seed)?;
    let head = make_head(a.head_init, &pca, a.student_dim, a.common.seed);
    let cfg = train_config(&a.train, a.lr, TrainConfig::default().temperature, a.common.seed);
    let done = distill_and_save(
        teacher.as_ref(),
        &pca,
        student,
        head,
        &sentences,
        &cfg,
        validation.as_deref(),
        a.whiten_after,
        &out,
    )?;
    write_snapshot(&out, "distill", a)?;
    if let Some(l) = done.final_loss {
        println!("final distillation loss {l:.6e}");
    }
    match done.best_rho {
        Some(r) => println!("validation rho x100 {}", rho100(r)),
        None => println!("no validation set given"),
    }
    Ok(())
}

fn parse_dataset(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() && !name.contains(['/', '\\']) => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(arg);
            let name = p.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

fn eval_sts_cmd(a: &EvalStsArgs) -> Result<()> {
    let specs: Vec<(String, PathBuf)> = a.dataset.iter().map(|d| parse_dataset(d)).collect();
    for (_, p) in &specs {
        require(p, "dataset")?;
    }
    let enc = Encoding::require(&a.encode, "eval-sts")?;
    let mut datasets = BTreeMap::new();
    for (name, p) in &specs {
        if datasets.insert(name.clone(), load_scored_pairs(p)?).is_some() {
            return Err(Error::Input(format!("dataset name {name} given twice")));
        }
    }
    let out = out_dir(&a.common)?;
    let report = eval_suite(|s| enc.embed(s), &datasets)?;
    atomic_write(&out.join(&a.output), report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn texts(entries: &[CorpusEntry]) -> Vec<&str> {
    entries.iter().map(|e| e.text.as_str()).collect()
}

fn stored_rows(path: &Path, expected: usize, what: &str) -> Result<EmbeddingMatrix> {
    let m = read_embeddings(path)?;
    if m.rows() != expected {
        return Err(Error::Shape(format!(
            "{} has {} rows for {expected} {what}",
            path.display(),
            m.rows()
        )));
    }
    Ok(m)
}

fn build_index_cmd(a: &BuildIndexArgs) -> Result<()> {
    require(&a.corpus, "corpus file")?;
    require_opt(a.embeddings.as_ref(), "embedding file")?;
    let corpus = load_corpus(&a.corpus)?;
    let vectors = match &a.embeddings {
        Some(e) => stored_rows(e, corpus.len(), "corpus entries")?,
        None => embed_all(&Encoding::require(&a.encode, "encoding the corpus")?, &texts(&corpus))?,
    };
    let out = out_dir(&a.common)?;
    let ids: Vec<u64> = corpus.iter().map(|c| c.id).collect();
    let index = build_ivf(&vectors, &ids, a.nlist, a.common.seed)?;
    save_index(&index, &out.join(&a.output))?;
    write_snapshot(&out, "build-index", a)?;
    println!(
        "{} vectors of width {} in {} lists, {} bytes",
        index.total(),
        index.dim(),
        index.nlist(),
        index.memory_bytes()
    );
    Ok(())
}

fn rankings_tsv(results: &[(u64, Vec<Hit>)]) -> String {
    let mut s = String::from("query_id\trank\tdoc_id\tscore\n");
    for (q, hits) in results {
        for (r, h) in hits.iter().enumerate() {
            writeln!(s, "{q}\t{}\t{}\t{}", r + 1, h.id, h.score).unwrap();
        }
    }
    s
}

fn check_width(vectors: &EmbeddingMatrix, index_dim: usize, index: &Path) -> Result<()> {
    if vectors.cols() != index_dim {
        return Err(Error::Shape(format!(
            "queries have width {} but {} stores width {index_dim}",
            vectors.cols(),
            index.display()
        )));
    }
    Ok(())
}

fn search_cmd(a: &SearchArgs) -> Result<()> {
    require(&a.index, "index file")?;
    require(&a.queries, "query file")?;
    require_opt(a.query_embeddings.as_ref(), "query embedding file")?;
    let queries = load_corpus(&a.queries)?;
    let vectors = match &a.query_embeddings {
        Some(e) => stored_rows(e, queries.len(), "queries")?,
        None => embed_all(&Encoding::require(&a.encode, "encoding queries")?, &texts(&queries))?,
    };
    let index = load_index(&a.index)?;
    check_width(&vectors, index.dim(), &a.index)?;
    let out = out_dir(&a.common)?;
    let results = queries
        .iter()
        .zip(vectors.iter_rows())
        .map(|(q, v)| Ok((q.id, search(&index, v, a.k, a.nprobe)?)))
        .collect::<Result<Vec<_>>>()?;
    atomic_write(&out.join(&a.output), rankings_tsv(&results).as_bytes())?;
    println!("{} queries, top {} from {} of {} lists", results.len(), a.k, a.nprobe, index.nlist());
    Ok(())
}

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    for p in &a.index {
        require(p, "index file")?;
    }
    require(&a.queries, "query file")?;
    require(&a.gold, "gold file")?;
    for p in &a.query_embeddings {
        require(p, "query embedding file")?;
    }
    if !a.query_embeddings.is_empty() && a.query_embeddings.len() != a.index.len() {
        return Err(Error::Input(format!(
            "{} query embedding files for {} indices",
            a.query_embeddings.len(),
            a.index.len()
        )));
    }
    let queries = load_corpus(&a.queries)?;
    let gold: HashMap<u64, u64> = load_gold(&a.gold)?.into_iter().map(|g| (g.query_id, g.gold_id)).collect();
    let ids: Vec<u64> = queries.iter().map(|q| q.id).collect();
    let encoded = if a.query_embeddings.is_empty() {
        let enc = Encoding::require(&a.encode, "encoding queries")?;
        let start = Instant::now();
        let m = embed_all(&enc, &texts(&queries))?;
        let ms = start.elapsed().as_secs_f64() * 1e3 * 1000.0 / queries.len().max(1) as f64;
        println!("query encoding: {ms:.3} ms / 1k queries");
        Some(m)
    } else {
        None
    };
    let out = out_dir(&a.common)?;

    let mut csv = String::from("index,mrr@10,time_ms_per_1k,mem_bytes,payload_bytes\n");
    let mut memory = Vec::new();
    for (i, path) in a.index.iter().enumerate() {
        let index = load_index(path)?;
        let vectors = match &encoded {
            Some(m) => m.clone(),
            None => stored_rows(&a.query_embeddings[i], queries.len(), "queries")?,
        };
        check_width(&vectors, index.dim(), path)?;
        if a.exact {
            let flat = FlatIndex::from_ivf(&index);
            let results = ids
                .iter()
                .zip(vectors.iter_rows())
                .map(|(q, v)| Ok((*q, exact_search(&flat, v, a.k)?)))
                .collect::<Result<Vec<_>>>()?;
            let stem = path.file_stem().map_or_else(|| format!("index{i}"), |s| s.to_string_lossy().into_owned());
            atomic_write(&out.join(format!("{stem}.exact.tsv")), rankings_tsv(&results).as_bytes())?;
        }
        let set = QuerySet::new(ids.clone(), vectors)?;
        let report = bench(&index, &set, &gold, a.k, a.nprobe, a.repeats)?;
        let label = file_label(path);
        println!("{label} (width {}, {} lists)", index.dim(), index.nlist());
        print!("{}", report.to_table());
        writeln!(
            csv,
            "{label},{},{},{},{}",
            report.mrr_at_10, report.time_ms_per_1k, report.memory_bytes, report.payload_bytes
        )
        .unwrap();
        memory.push((label, report.memory_bytes, report.payload_bytes));
    }
    for (label, mem, payload) in memory.iter().skip(1) {
        let (base, bmem, bpayload) = &memory[0];
        println!(
            "memory ratio {label} / {base}: {:.4} (vector payload {:.4})",
            *mem as f64 / *bmem as f64,
            *payload as f64 / *bpayload as f64
        );
    }
    atomic_write(&out.join("bench.csv"), csv.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct PipelineSummary {
    teacher_dim: usize,
    dim: usize,
    triplets: usize,
    teacher_rho: f64,
    baseline_rho: f64,
    student_rho: f64,
    final_distill_loss: Option<f64>,
}

fn pipeline_cmd(a: &PipelineArgs) -> Result<()> {
    if a.dim >= a.teacher_dim {
        return Err(Error::Config(format!(
            "reduced dimension {} must be below the teacher width {}",
            a.dim, a.teacher_dim
        )));
    }
    let seed = a.common.seed;
    let out = out_dir(&a.common)?;

    let synth = synth_corpus(&SynthConfig {
        triplets: a.triplets,
        sts_pairs: a.sts_pairs,
        seed,
        ..SynthConfig::default()
    })?;
    write_triplets(&out.join("triplets.jsonl"), &synth.triplets)?;
    write_scored_pairs(&out.join("sts_dev.tsv"), &synth.sts_dev)?;
    write_scored_pairs(&out.join("sts_validation.tsv"), &synth.sts_validation)?;
    synth.synonyms.save(&out.join("synonyms.tsv"))?;
    write_corpus(&out.join("corpus.tsv"), &synth.corpus)?;
    write_corpus(&out.join("queries.tsv"), &synth.queries)?;
    write_gold(&out.join("gold.tsv"), &synth.gold)?;
    let triplets = if a.augment_rate > 0.0 {
        augment_all(&synth.triplets, &synth.synonyms, a.augment_rate, seed)?
    } else {
        synth.triplets.clone()
    };

    let train = |epochs, lr| TrainConfig {
        batch_size: a.batch_size,
        epochs,
        learning_rate: lr,
        weight_decay: a.weight_decay,
        temperature: a.temperature,
        seed,
        eval_every: a.eval_every,
        grad_clip: (a.grad_clip > 0.0).then_some(a.grad_clip),
        ..TrainConfig::default()
    };
    let teacher_shape = ModelShape {
        dim: a.teacher_dim,
        layers: a.teacher_layers,
        heads: a.teacher_heads,
        ffn_dim: a.teacher_ffn_dim,
        max_len: a.max_len,
        min_count: a.min_count,
    };
    let teacher = new_transformer(triplets.iter().flat_map(|t| t.sentences()), &teacher_shape, seed)?;
    let run = train_teacher(teacher, &triplets, &train(a.teacher_epochs, a.teacher_lr), Some(&synth.sts_dev))?;
    let teacher = run.encoder;
    save_encoder(&teacher, &out.join("teacher.hpdw"))?;
    atomic_write(&out.join("teacher_loss.csv"), loss_csv(&run.loss_trace).as_bytes())?;
    log::info!("teacher trained for {} steps", run.loss_trace.len());

    let pool = sentence_pool(&triplets);
    let pool_texts: Vec<&str> = pool.iter().map(String::as_str).collect();
    let samples = embed_all(&teacher, &pool_texts)?;
    let (pca, _) = fit_pca_report(&samples, a.dim)?;
    Transform::Pca(pca.clone()).save(&out.join("pca.hpdt"))?;

    let student_shape = ModelShape {
        dim: a.student_dim,
        layers: a.student_layers,
        heads: a.student_heads,
        ffn_dim: a.student_ffn_dim,
        max_len: a.max_len,
        min_count: a.min_count,
    };
    let student = new_transformer(pool_texts.iter().copied(), &student_shape, seed.wrapping_add(1))?;
    let baseline_rho = eval_sts(|s| student.embed(s), &synth.sts_validation)?;
    let head = make_head(a.head_init, &pca, a.student_dim, seed.wrapping_add(1));
    let done = distill_and_save(
        &teacher,
        &pca,
        student,
        head,
        &pool,
        &train(a.epochs, a.lr),
        Some(&synth.sts_dev),
        a.whiten_after,
        &out,
    )?;

    let student_enc = Encoding {
        encoder: done.encoder,
        transform: Some(Transform::Projection(done.head)),
    };
    let student_rho = eval_sts(|s| student_enc.embed(s), &synth.sts_validation)?;
    let teacher_rho = eval_sts(|s| teacher.embed(s), &synth.sts_validation)?;
    let splits: BTreeMap<String, Vec<ScoredPair>> = [
        ("sts_dev".to_string(), synth.sts_dev.clone()),
        ("sts_validation".to_string(), synth.sts_validation.clone()),
    ]
    .into_iter()
    .collect();
    let report = eval_suite(|s| student_enc.embed(s), &splits)?;
    atomic_write(&out.join("sts.csv"), report.to_csv().as_bytes())?;

    let summary = PipelineSummary {
        teacher_dim: a.teacher_dim,
        dim: a.dim,
        triplets: triplets.len(),
        teacher_rho,
        baseline_rho,
        student_rho,
        final_distill_loss: done.final_loss,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Input(format!("cannot write summary: {e}")))?;
    atomic_write(&out.join("summary.json"), format!("{json}\n").as_bytes())?;
    write_snapshot(&out, "pipeline", a)?;

    println!("teacher  (width {}) rho x100 {}", a.teacher_dim, rho100(teacher_rho));
    println!("baseline (untrained student) rho x100 {}", rho100(baseline_rho));
    println!("student  (width {}) rho x100 {}", a.dim, rho100(student_rho));
    Ok(())
}
