use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use aga_core::corpus::{ingest, read_word_vectors, Corpus, Vocab};
use aga_core::gradcheck::{run_all, Tolerance};
use aga_core::metrics::{paired_t_test, welch_t_test};
use aga_core::model::{parse_key_values, Checkpoint};
use aga_core::report::{merged_curves_csv, RunReport};
use aga_core::synth::{embeddings_to_text, masked_cue_embeddings, to_tsv, SynthSpec};
use aga_core::train::{evaluate, run_experiment, Prepared, TrainConfig, TrainedRun, WordVectors};
use aga_core::{DropoutKind, TcolTable};

use crate::manifest::{create_dir, write_file, Manifest};
use crate::{Failure, TrainArgs};

fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn build_tcol(train: &Path, out: &Path) -> Result<(), Failure> {
    let corpus = Corpus::load(train)?;
    let vocab = Vocab::build(&corpus.docs)?;
    let table = TcolTable::build(&corpus.docs, corpus.num_classes(), vocab.len())?;
    create_dir(out)?;
    write_file(&out.join("tcol.tsv"), table.to_text())?;
    write_file(&out.join("vocab.txt"), vocab.to_text())?;
    write_file(&out.join("labels.txt"), corpus.labels.join("\n") + "\n")?;
    let mut manifest = Manifest::new("build-tcol");
    manifest.input("train", train);
    for f in ["tcol.tsv", "vocab.txt", "labels.txt"] {
        manifest.output(f);
    }
    manifest.write(out)?;
    println!(
        "{} sentences, {} classes, vocabulary {}, {} words with counts",
        corpus.len(),
        corpus.num_classes(),
        vocab.len(),
        table.len()
    );
    Ok(())
}

/// Defaults, then the config file, then flags, in that order.
fn resolve_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        for (k, v) in parse_key_values(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    let flags = [
        ("extractor", &args.extractor),
        ("epsilon", &args.epsilon),
        ("dropout", &args.dropout),
        ("beta", &args.beta),
        ("c_sup", &args.c_sup),
        ("seed", &args.seed),
        ("seeds", &args.seeds),
        ("epochs", &args.epochs),
        ("folds", &args.folds),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("--set `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if args.no_gi {
        cfg.model.gi = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Inputs {
    corpus: Corpus,
    test: Option<Corpus>,
    vectors: Option<WordVectors>,
}

fn load_inputs(
    args: &TrainArgs,
    cfg: &TrainConfig,
    manifest: &mut Manifest,
) -> Result<Inputs, Failure> {
    let (corpus, test) = match (&args.data, &args.train, &args.test) {
        (Some(data), None, None) => {
            if cfg.folds < 2 {
                return Err(Failure::Input("--data needs --folds of at least 2".into()));
            }
            manifest.input("data", data);
            (Corpus::load(data)?, None)
        }
        (None, Some(train), Some(test)) => {
            if cfg.folds >= 2 {
                return Err(Failure::Input(
                    "--folds takes --data, not --train/--test".into(),
                ));
            }
            let train_corpus = Corpus::load(train)?;
            let test_corpus = Corpus::with_labels(&ingest(test)?, train_corpus.labels.clone())?;
            manifest.input("train", train);
            manifest.input("test", test);
            (train_corpus, Some(test_corpus))
        }
        _ => {
            return Err(Failure::Input(
                "give either --data or both --train and --test".into(),
            ))
        }
    };
    let vectors = match &args.embedding_file {
        Some(path) => {
            manifest.input("embeddings", path);
            Some(read_word_vectors(path, cfg.model.embed_dim)?)
        }
        None => None,
    };
    Ok(Inputs {
        corpus,
        test,
        vectors,
    })
}

/// Writes checkpoint, vocabulary, TCoL table and curves of one run.
fn write_run(
    out: &Path,
    suffix: &str,
    run: &TrainedRun,
    manifest: &mut Manifest,
) -> Result<(), Failure> {
    let vocab_file = format!("vocab{suffix}.txt");
    let tcol_file = format!("tcol{suffix}.tsv");
    let ckpt_file = format!("model{suffix}.ckpt");
    let curves_file = format!("curves{suffix}.csv");
    let vocab_text = run.prepared.vocab.to_text();
    let tcol_text = run.prepared.tcol.to_text();
    write_file(&out.join(&vocab_file), &vocab_text)?;
    write_file(&out.join(&tcol_file), &tcol_text)?;
    let meta = vec![
        ("labels".to_string(), run.prepared.labels.join(",")),
        ("vocab_file".to_string(), vocab_file.clone()),
        (
            "vocab_sha256".to_string(),
            sha256_bytes(vocab_text.as_bytes()),
        ),
        ("tcol_file".to_string(), tcol_file.clone()),
        (
            "tcol_sha256".to_string(),
            sha256_bytes(tcol_text.as_bytes()),
        ),
        ("best_epoch".to_string(), run.record.best_epoch.to_string()),
    ];
    Checkpoint::from_model(&run.model, meta).save(&out.join(&ckpt_file))?;
    write_file(&out.join(&curves_file), run.record.curves_csv())?;
    for f in [ckpt_file, vocab_file, tcol_file, curves_file] {
        manifest.output(f);
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    let acc = report.accuracy_summary();
    let f1 = report.f1_summary();
    println!("runs={}", acc.n);
    println!("accuracy mean={:.4} std={:.4}", acc.mean, acc.std);
    println!("macro_f1 mean={:.4} std={:.4}", f1.mean, f1.std);
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    let mut manifest = Manifest::new("train");
    let inputs = load_inputs(args, &cfg, &mut manifest)?;
    let (report, runs) = run_experiment(
        &cfg,
        &inputs.corpus,
        inputs.test.as_ref(),
        inputs.vectors.as_ref(),
    )?;

    create_dir(&args.out)?;
    for run in &runs {
        let suffix = if runs.len() == 1 {
            String::new()
        } else {
            format!("-{}", run.record.label)
        };
        write_run(&args.out, &suffix, run, &mut manifest)?;
        eprintln!(
            "{}: best epoch {} test accuracy {:.4} ({:.1}s)",
            run.record.label,
            run.record.best_epoch,
            run.record.best().test_accuracy,
            run.record.wall_clock.as_secs_f64()
        );
    }
    report.save(&args.out.join("report.txt"))?;
    manifest.output("report.txt");
    manifest.config_file = args.config.clone();
    manifest.config = cfg.to_pairs();
    manifest.seed = Some(cfg.model.seed);
    manifest.write(&args.out)?;
    print_summary(&report);
    Ok(())
}

pub fn gradcheck(seed: u64, fault: Option<String>) -> Result<(), Failure> {
    let fault: Option<&'static str> = fault.map(|f| &*Box::leak(f.into_boxed_str()));
    let results = run_all(seed, Tolerance::default(), fault)?;
    for r in &results {
        println!("{}", r.line());
    }
    let failing: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient mismatch in {}",
            failing.join(", ")
        )))
    }
}

fn sweep_cells(
    kinds: &[String],
    c_list: &[f64],
) -> Result<Vec<(String, DropoutKind, f64)>, Failure> {
    let mut cells = Vec::new();
    for k in kinds {
        let kind: DropoutKind = k.parse().map_err(Failure::Input)?;
        match kind {
            DropoutKind::Leaky => {
                for &c in c_list {
                    cells.push((format!("leaky-c{c}"), kind, c));
                }
            }
            // c only matters for the leaky variant.
            _ => cells.push((kind.to_string(), kind, 1.0)),
        }
    }
    Ok(cells)
}

pub fn dropout_sweep(args: &TrainArgs, kinds: &[String], c_list: &[f64]) -> Result<(), Failure> {
    let mut cfg = resolve_config(args)?;
    cfg.seeds = 1;
    let mut manifest = Manifest::new("dropout-sweep");
    let inputs = load_inputs(args, &cfg, &mut manifest)?;
    let cells = sweep_cells(kinds, c_list)?;
    create_dir(&args.out)?;

    let mut results = Vec::with_capacity(cells.len());
    for (name, kind, c) in &cells {
        let mut cell_cfg = cfg.clone();
        cell_cfg.model.dropout = *kind;
        cell_cfg.model.c_sup = *c;
        let (report, _) = run_experiment(
            &cell_cfg,
            &inputs.corpus,
            inputs.test.as_ref(),
            inputs.vectors.as_ref(),
        )?;
        let file = format!("report-{name}.txt");
        report.save(&args.out.join(&file))?;
        manifest.output(file);
        let best = report.runs[0].best();
        eprintln!("{name}: best test accuracy {:.4}", best.test_accuracy);
        results.push((name.clone(), report));
    }
    let merged = merged_curves_csv(
        results
            .iter()
            .flat_map(|(name, r)| r.runs.iter().map(move |run| (name.as_str(), run))),
    );
    let rows = merged.lines().count() - 1;
    write_file(&args.out.join("sweep.csv"), &merged)?;
    manifest.output("sweep.csv");
    manifest.config_file = args.config.clone();
    manifest.config = cfg.to_pairs();
    manifest.seed = Some(cfg.model.seed);
    manifest.write(&args.out)?;
    println!("cells={} rows={rows}", cells.len());
    Ok(())
}

fn sibling(checkpoint: &Path, ck: &Checkpoint, key: &str) -> Result<PathBuf, Failure> {
    let name = ck.meta(key).ok_or_else(|| {
        Failure::Input(format!("checkpoint records no `{key}`; pass it explicitly"))
    })?;
    Ok(checkpoint.parent().unwrap_or(Path::new(".")).join(name))
}

fn read_checked(path: &Path, expected: Option<&str>, what: &str) -> Result<String, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let Some(hash) = expected {
        if sha256_bytes(text.as_bytes()) != hash {
            return Err(Failure::Input(format!(
                "{what} {} does not match the checkpoint's hash",
                path.display()
            )));
        }
    }
    Ok(text)
}

pub fn eval(
    checkpoint: &Path,
    test: &Path,
    vocab: Option<&Path>,
    tcol: Option<&Path>,
) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let vocab_path = match vocab {
        Some(p) => p.to_path_buf(),
        None => sibling(checkpoint, &ck, "vocab_file")?,
    };
    let tcol_path = match tcol {
        Some(p) => p.to_path_buf(),
        None => sibling(checkpoint, &ck, "tcol_file")?,
    };
    let vocab_text = read_checked(&vocab_path, ck.meta("vocab_sha256"), "vocabulary")?;
    let tcol_text = read_checked(&tcol_path, ck.meta("tcol_sha256"), "TCoL table")?;
    let vocab = Vocab::parse(&vocab_text, &vocab_path)?;
    let table = TcolTable::parse(&tcol_text, &tcol_path)?;
    let labels: Vec<String> = ck
        .meta("labels")
        .ok_or_else(|| Failure::Input("checkpoint records no labels".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let config = ck.config.clone();
    if vocab.len() != config.vocab_size
        || table.num_classes() != config.num_classes
        || labels.len() != config.num_classes
    {
        return Err(Failure::Input(
            "vocabulary or TCoL table does not fit the checkpoint config".into(),
        ));
    }
    let seq_len = config
        .seq_len
        .ok_or_else(|| Failure::Input("checkpoint has no fixed sentence length".into()))?;
    let corpus = Corpus::with_labels(&ingest(test)?, labels.clone())?;
    let index = table.by_index(&vocab);
    let prepared = Prepared {
        vocab,
        tcol: table,
        index,
        seq_len,
        labels,
    };
    let data = prepared.instances(&corpus)?;
    let model = ck.into_model()?;
    let (loss, acc, f1, _) = evaluate(&model, &data)?;
    println!("examples={}", data.len());
    println!("loss={loss:.6}");
    println!("accuracy={acc:.6}");
    println!("macro_f1={f1:.6}");
    Ok(())
}

pub fn synth(
    out: &Path,
    sentences: usize,
    seed: u64,
    test_fraction: f64,
    embedding_dim: Option<usize>,
    embedding_noise: f64,
) -> Result<(), Failure> {
    if !(0.0..1.0).contains(&test_fraction) || sentences < 2 {
        return Err(Failure::Input(
            "need at least 2 sentences and a test fraction in [0, 1)".into(),
        ));
    }
    let spec = SynthSpec {
        sentences,
        seed,
        ..SynthSpec::default()
    };
    let records = spec.generate();
    let n_test = (sentences as f64 * test_fraction).round() as usize;
    let (train, test) = records.split_at(sentences - n_test);
    create_dir(out)?;
    let mut manifest = Manifest::new("synth");
    manifest.seed = Some(seed);
    for (file, recs) in [
        ("corpus.tsv", &records[..]),
        ("train.tsv", train),
        ("test.tsv", test),
    ] {
        write_file(&out.join(file), to_tsv(recs))?;
        manifest.output(file);
    }
    if let Some(dim) = embedding_dim {
        let corpus = Corpus::from_records(train);
        let vocab = Vocab::build(&corpus.docs)?;
        let rows = masked_cue_embeddings(&spec, &vocab, dim, embedding_noise, seed);
        write_file(
            &out.join("embeddings.txt"),
            embeddings_to_text(&rows, &vocab),
        )?;
        manifest.output("embeddings.txt");
    }
    manifest.write(out)?;
    println!("train={} test={}", train.len(), test.len());
    Ok(())
}

pub fn ttest(a: &Path, b: &Path, metric: &str, paired: bool) -> Result<(), Failure> {
    let ra = RunReport::load(a)?;
    let rb = RunReport::load(b)?;
    let pick = |r: &RunReport| match metric {
        "accuracy" => Ok(r.accuracies()),
        "f1" => Ok(r.f1_scores()),
        other => Err(Failure::Input(format!(
            "unknown metric `{other}` (accuracy, f1)"
        ))),
    };
    let (xa, xb) = (pick(&ra)?, pick(&rb)?);
    let result = if paired {
        paired_t_test(&xa, &xb)?
    } else {
        welch_t_test(&xa, &xb)?
    };
    let (sa, sb) = (ra.accuracy_summary(), rb.accuracy_summary());
    println!("test={}", if paired { "paired" } else { "welch" });
    println!("a_mean={:.6} a_n={}", aga_core::metrics::mean(&xa), sa.n);
    println!("b_mean={:.6} b_n={}", aga_core::metrics::mean(&xb), sb.n);
    println!("t={:.6} df={:.4} p={:.6e}", result.t, result.df, result.p);
    Ok(())
}
