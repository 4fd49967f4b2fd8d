use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shiftpair::data::{serialize_corpus, Split};
use shiftpair::scorer::ExternalVectors;
use shiftpair::synthetic::default_synthetic;

const SMALL_DIMS: &str = "token=8,action=6,distance=4,hidden=8,sentiment_hidden=8,max_distance=5";

fn shiftpair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftpair"))
        .args(args)
        .env_remove("SHIFTPAIR_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_synthetic(path: &Path, seed: u64, count: usize) {
    let mut corpus = default_synthetic(seed, count);
    corpus.split = Split::Test;
    fs::write(path, serialize_corpus(&corpus)).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage() {
    let out = shiftpair(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = shiftpair(&["coverage", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_of_gourmet_sentence() {
    let out = shiftpair(&["trace", "--sentence", "Gourmet food is delicious", "--gold", "([0,1],[3],'POS')"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    let actions: Vec<&str> = lines[2..].iter().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(actions, ["SF", "SF", "M", "SF", "R_n", "SF", "RR", "ST"]);
    assert_eq!(
        lines[8],
        "7\tRR\t[Gourmet food, delicious]\t[]\t[Gourmet food]\t[delicious]\t(Gourmet food -> delicious)\tPOS"
    );
    assert_eq!(lines[9], "8\tST\t[]\t[]\t[Gourmet food]\t[delicious]\t(Gourmet food -> delicious)\tNONE");
}

#[test]
fn trace_replays_given_actions() {
    let out = shiftpair(&[
        "trace",
        "--sentence",
        "Gourmet food is delicious",
        "--actions",
        "SF SF M SF R_n SF RR:POS ST",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let oracle = shiftpair(&["trace", "--sentence", "Gourmet food is delicious", "--gold", "([0,1],[3],'POS')"]);
    assert_eq!(stdout(&out), stdout(&oracle));

    let bad = shiftpair(&["trace", "--sentence", "Gourmet food", "--actions", "M"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).starts_with("ILLEGAL_ACTION"), "{}", stderr(&bad));
}

#[test]
fn coverage_on_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    fs::create_dir(&data).unwrap();
    write_synthetic(&data.join("train_triplets.txt"), 1, 20);
    write_synthetic(&data.join("dev_triplets.txt"), 2, 5);
    write_synthetic(&data.join("test_triplets.txt"), 3, 5);
    let out = shiftpair(&["coverage", "--data", p(&data), "--split", "all", "--jobs", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("train (Precision)"));
    assert!(text.contains("total (F1)"));
    assert!(text.contains("coverage.toy.total.f1=100.00"));
    assert!(text.contains("coverage.toy.dev.recall=100.00"));

    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    write_synthetic(&other.join("train_triplets.txt"), 4, 10);
    let fused = shiftpair(&["coverage", "--data", p(&data), "--split", "all", "--fused", p(&data), p(&other)]);
    assert_eq!(fused.status.code(), Some(0), "{}", stderr(&fused));
    assert!(stdout(&fused).contains("coverage.fused.train.pairs="));
}

#[test]
fn oracle_lines_have_three_fields() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.txt");
    write_synthetic(&file, 5, 6);
    let out = shiftpair(&["oracle", "--data", p(&file)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[1].split(' ').count(), fields[2].split(' ').count());
        assert_eq!(fields[1].split(' ').next_back(), Some("1"));
    }
}

#[test]
fn convert_round_trips_and_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.txt");
    write_synthetic(&file, 6, 8);
    let out = shiftpair(&["convert", "--data", p(&file)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), fs::read_to_string(&file).unwrap());

    let broken = dir.path().join("broken.txt");
    fs::write(&broken, "good food .####[([0], [9], 'POS')\n").unwrap();
    let out = shiftpair(&["convert", "--data", p(&broken)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("PARSE_ERROR"), "{}", stderr(&out));
}

#[test]
fn identical_flags_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    write_synthetic(&train, 7, 12);
    write_synthetic(&test, 8, 6);
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = shiftpair(&[
            "train", "--data", p(&train), "--out", p(&ckpt), "--epochs", "2", "--dims", SMALL_DIMS, "--seed", "4",
            "--w2", "0.5", "--lr", "0.01",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        (stdout(&out), fs::read(&ckpt).unwrap(), ckpt)
    };
    let (log_a, bytes_a, ckpt) = run("a.ckpt");
    let (log_b, bytes_b, _) = run("b.ckpt");
    assert_eq!(log_a, log_b);
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(log_a.lines().count(), 2);

    let serial = shiftpair(&["decode", "--model", p(&ckpt), "--data", p(&test), "--jobs", "1"]);
    let parallel = shiftpair(&["decode", "--model", p(&ckpt), "--data", p(&test), "--jobs", "4"]);
    assert_eq!(serial.status.code(), Some(0), "{}", stderr(&serial));
    assert_eq!(serial.stdout, parallel.stdout);
    assert_eq!(stdout(&serial).lines().count(), 6);

    let pred = dir.path().join("pred.txt");
    fs::write(&pred, &serial.stdout).unwrap();
    let by_file = shiftpair(&["eval", "--gold", p(&test), "--pred", p(&pred)]);
    let by_model = shiftpair(&["eval", "--gold", p(&test), "--model", p(&ckpt), "--jobs", "2"]);
    assert_eq!(by_file.status.code(), Some(0), "{}", stderr(&by_file));
    assert_eq!(by_file.stdout, by_model.stdout);
    assert!(stdout(&by_file).contains("eval.aste.f1="));
}

#[test]
fn eval_rejects_misaligned_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.txt");
    let pred = dir.path().join("pred.txt");
    write_synthetic(&gold, 9, 4);
    write_synthetic(&pred, 10, 3);
    let out = shiftpair(&["eval", "--gold", p(&gold), "--pred", p(&pred)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("ID_MISMATCH"), "{}", stderr(&out));
}

fn write_vectors(path: &Path, corpus_file: &Path, dim: usize) {
    let corpus = shiftpair::data::read_corpus(corpus_file, "c", Split::Test).unwrap();
    let mut vectors = ExternalVectors::new(dim);
    for s in &corpus.sentences {
        for i in 0..s.len() {
            let v = (0..dim).map(|k| ((i * dim + k) as f64 * 0.17).sin()).collect();
            vectors.insert(s.id(), i, v).unwrap();
        }
    }
    fs::write(path, vectors.to_text()).unwrap();
}

#[test]
fn decode_with_external_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_synthetic(&corpus, 11, 8);
    let vectors = dir.path().join("out.vec");
    write_vectors(&vectors, &corpus, 6);
    let ckpt = dir.path().join("m.ckpt");
    let dims = "action=6,distance=4,hidden=8,sentiment_hidden=8,max_distance=5";
    let out = shiftpair(&[
        "train", "--data", p(&corpus), "--out", p(&ckpt), "--epochs", "1", "--dims", dims, "--embeddings", p(&vectors),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let decoded = shiftpair(&["decode", "--model", p(&ckpt), "--data", p(&corpus), "--embeddings", p(&vectors)]);
    assert_eq!(decoded.status.code(), Some(0), "{}", stderr(&decoded));
    assert_eq!(stdout(&decoded).lines().count(), 8);

    let missing = shiftpair(&["decode", "--model", p(&ckpt), "--data", p(&corpus)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).starts_with("CONFIG_ERROR"));

    let wide = dir.path().join("wide.vec");
    write_vectors(&wide, &corpus, 9);
    let mismatch = shiftpair(&["decode", "--model", p(&ckpt), "--data", p(&corpus), "--embeddings", p(&wide)]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(stderr(&mismatch).starts_with("DIM_MISMATCH"), "{}", stderr(&mismatch));
}

#[test]
fn gradcheck_and_bench_run() {
    let out = shiftpair(&["gradcheck", "--sentences", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));

    let out = shiftpair(&["bench", "--lengths", "5,20", "--dims", "token=4,hidden=4"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("violations=0"));
}
