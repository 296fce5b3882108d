use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn aga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aga"))
        .args(args)
        .output()
        .expect("spawn aga")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic train/test pair in `dir/data`.
fn synth(dir: &Path, sentences: usize) -> PathBuf {
    let data = dir.join("data");
    let out = aga(&[
        "synth",
        "--out",
        s(&data),
        "--sentences",
        &sentences.to_string(),
        "--embedding-dim",
        "8",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

const SMALL: &[&str] = &[
    "--epochs",
    "2",
    "--set",
    "embed_dim=8",
    "--set",
    "filters_per_window=3",
    "--set",
    "hidden=8",
    "--set",
    "batch_size=16",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let train = data.join("train.tsv");
    let test = data.join("test.tsv");
    let mut args = vec![
        "train",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(out),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    aga(&args)
}

#[test]
fn empty_training_file_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 60);
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let out = aga(&[
        "train",
        "--train",
        s(&empty),
        "--test",
        s(&data.join("test.tsv")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.tsv"));
}

#[test]
fn missing_data_and_bad_keys_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = aga(&["train", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let data = synth(dir.path(), 60);
    let out = train(&data, &dir.path().join("run"), &["--set", "no_such_key=1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = train(&data, &dir.path().join("run"), &["--epsilon", "0.7"]);
    assert_eq!(code(&out), 2);
    let missing = dir.path().join("nope.tsv");
    let out = aga(&["build-tcol", "--train", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn build_tcol_matches_a_recount_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.tsv");
    fs::write(
        &train,
        "pos\tgood good film\nneg\tbad film\npos\tGood, fine\nneg\tbad bad bad\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        code(&aga(&["build-tcol", "--train", s(&train), "--out", s(&a)])),
        0
    );
    assert_eq!(
        code(&aga(&["build-tcol", "--train", s(&train), "--out", s(&b)])),
        0
    );
    for f in ["tcol.tsv", "vocab.txt", "labels.txt", "manifest.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    // Labels sort to [neg, pos].
    let mut expected: BTreeMap<&str, [u64; 2]> = BTreeMap::new();
    for (word, class) in [
        ("good", 1),
        ("good", 1),
        ("film", 1),
        ("bad", 0),
        ("film", 0),
        ("good", 1),
        (",", 1),
        ("fine", 1),
        ("bad", 0),
        ("bad", 0),
        ("bad", 0),
    ] {
        expected.entry(word).or_default()[class] += 1;
    }
    let text = fs::read_to_string(a.join("tcol.tsv")).unwrap();
    let mut got: BTreeMap<&str, [u64; 2]> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let mut parts = line.split('\t');
        let word = parts.next().unwrap();
        let counts: Vec<u64> = parts.map(|c| c.parse().unwrap()).collect();
        got.insert(word, [counts[0], counts[1]]);
    }
    assert_eq!(got, expected);
    assert_eq!(
        fs::read_to_string(a.join("labels.txt")).unwrap(),
        "neg\npos\n"
    );
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_backward() {
    let out = aga(&["gradcheck", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("forward_cnn") && stdout.contains("forward_lstm"));
    assert!(!stdout.contains("FAIL"));

    let out = aga(&["gradcheck", "--inject-fault", "valve"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn train_writes_artifacts_and_eval_reads_them() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 120);
    let run = dir.path().join("run");
    let out = train(&data, &run, &["--seeds", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "report.txt",
        "curves.csv",
        "model.ckpt",
        "vocab.txt",
        "tcol.tsv",
        "manifest.txt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let out = aga(&[
        "eval",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--test",
        s(&data.join("test.tsv")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("examples=24"));
    assert!(stdout.contains("accuracy=") && stdout.contains("macro_f1="));

    // A vocabulary that is not the one the checkpoint was trained with.
    let other = dir.path().join("other_vocab.txt");
    fs::write(&other, "<pad>\t0\n<unk>\t1\nfoo\t2\n").unwrap();
    let out = aga(&[
        "eval",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--test",
        s(&data.join("test.tsv")),
        "--vocab",
        s(&other),
    ]);
    assert_eq!(code(&out), 2);

    let bytes = fs::read(run.join("model.ckpt")).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = aga(&[
        "eval",
        "--checkpoint",
        s(&cut),
        "--test",
        s(&data.join("test.tsv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 120);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = train(&data, out, &["--seeds", "2", "--dropout", "leaky"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut files: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert_eq!(files.len(), 10);
    for f in files {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f:?}"
        );
    }
}

#[test]
fn closed_valve_matches_the_no_gi_model() {
    // CNN features at padded positions start exactly at zero, which puts σ
    // at 0.5 where even a zero-width valve is open. LSTM states never do.
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 120);
    let eps0 = dir.path().join("eps0");
    let nogi = dir.path().join("nogi");
    assert_eq!(
        code(&train(
            &data,
            &eps0,
            &["--seeds", "1", "--extractor", "lstm", "--epsilon", "0"]
        )),
        0
    );
    assert_eq!(
        code(&train(
            &data,
            &nogi,
            &["--seeds", "1", "--extractor", "lstm", "--no-gi"]
        )),
        0
    );
    let epochs = |dir: &Path| -> Vec<String> {
        fs::read_to_string(dir.join("report.txt"))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("record=epoch") || l.starts_with("record=summary"))
            .map(str::to_string)
            .collect()
    };
    let (e, n) = (epochs(&eps0), epochs(&nogi));
    assert!(!e.is_empty());
    assert_eq!(e, n);
}

#[test]
fn sweep_writes_one_row_per_cell_epoch_and_split() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 80);
    let out_dir = dir.path().join("sweep");
    let train = data.join("train.tsv");
    let test = data.join("test.tsv");
    let mut args = vec![
        "dropout-sweep",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(&out_dir),
    ];
    args.extend_from_slice(SMALL);
    let out = aga(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cell,epoch,split,loss,accuracy,f1"));
    // vanilla, none and four leaky cells, 2 epochs, train and test rows.
    assert_eq!(lines.count(), 6 * 2 * 2);
    for cell in [
        "vanilla",
        "none",
        "leaky-c10",
        "leaky-c500",
        "leaky-c1000",
        "leaky-c10000",
    ] {
        assert!(
            out_dir.join(format!("report-{cell}.txt")).exists(),
            "{cell}"
        );
    }
}

#[test]
fn ttest_compares_two_reports() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 80);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&train(&data, &a, &["--seeds", "3"])), 0);
    assert_eq!(
        code(&train(&data, &b, &["--seeds", "3", "--epsilon", "0"])),
        0
    );
    let out = aga(&["ttest", s(&a.join("report.txt")), s(&b.join("report.txt"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("test=welch"));
    assert!(stdout.contains("p="));
    let out = aga(&[
        "ttest",
        s(&a.join("report.txt")),
        s(&b.join("report.txt")),
        "--metric",
        "loss",
    ]);
    assert_eq!(code(&out), 2);
}
