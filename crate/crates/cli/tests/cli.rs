use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tension_core::brnn::{read_model, write_model, ModelFile, ModelParams};
use tension_core::score_features::canonical_features;

fn tension(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tension")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = tension(args);
    assert!(out.status.success(), "tension {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const SCORE: &str = "#meter 0 4 4 duple\n#key 0 major\n\
a\t0\t1\t60\tC\t0\t4\t0\n\
b\t0\t1\t64\tE\t0\t4\t1\n\
c\t1\t1\t67\tG\t0\t4\t1\n\
d\t2\t2\t65\tF\t0\t4\t1\n\
e\t4\t1\t60\tC\t0\t4\t1\n";

const MATCH: &str = "a\t0\t0.5\t60\nb\t0.01\t0.5\t70\nc\t0.5\t0.5\t72\nd\t1.1\t1\t65\ne\t2.0\t0.5\t50\n";

fn manifest_digest(text: &str) -> String {
    text.lines().find_map(|l| l.strip_prefix("# manifest_sha256=")).unwrap().to_string()
}

#[test]
fn extract_score_only_writes_features() {
    let dir = tempfile::tempdir().unwrap();
    let score = dir.path().join("tiny.score.tsv");
    fs::write(&score, SCORE).unwrap();
    let out = dir.path().join("out");
    ok(&["extract", "--score", &s(&score), "--groups", "P,T", "--out-dir", &s(&out)]);
    let features = fs::read_to_string(out.join("tiny.features.csv")).unwrap();
    assert!(features.contains("frame,beat,pitch_h,pitch_l,pitch_m,vic1,vic2,vic3,t_cd,t_cm,t_ts\n"));
    assert_eq!(features.lines().filter(|l| !l.starts_with('#')).count(), 5);
    assert!(!out.join("tiny.targets.csv").exists());
    let manifest = fs::read_to_string(out.join("tiny.extract.manifest.txt")).unwrap();
    assert!(manifest.contains("input tiny.score.tsv sha256="));
    let body: String = manifest.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert_eq!(manifest_digest(&features), sha256_hex(&body));
}

fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn extract_with_match_writes_targets() {
    let dir = tempfile::tempdir().unwrap();
    let score = dir.path().join("tiny.score.tsv");
    let matched = dir.path().join("tiny.match.tsv");
    fs::write(&score, SCORE).unwrap();
    fs::write(&matched, MATCH).unwrap();
    let out = dir.path().join("out");
    ok(&["extract", "--score", &s(&score), "--match", &s(&matched), "--id", "p1", "--out-dir", &s(&out)]);
    let targets = fs::read_to_string(out.join("p1.targets.csv")).unwrap();
    let rows: Vec<&str> = targets.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "frame,beat,bpr,d_bpr,vel,d_vel");
    assert_eq!(rows.len(), 5);
    assert!(out.join("p1.features.csv").exists());
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = tension(&["extract", "--score", "/nonexistent/x.score.tsv", "--out-dir", &s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/x.score.tsv"), "{err}");
    assert!(out.stdout.is_empty());

    let score = dir.path().join("bad.score.tsv");
    fs::write(&score, "#meter 0 4 4 duple\nx\t0\t0\t60\tC\t0\t4\t1\n").unwrap();
    let out = tension(&["extract", "--score", &s(&score), "--out-dir", &s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.score.tsv"));
}

#[test]
fn synth_is_deterministic_and_rejects_zero_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--pieces", "3", "--length", "20", "--seed", "12", "--out-dir", &s(d)]);
    }
    for name in ["piece0.score.tsv", "piece2.match.tsv", "ground_truth.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let truth = fs::read_to_string(a.join("ground_truth.txt")).unwrap();
    assert!(truth.contains("synth.rule=none"));

    let out = tension(&["synth", "--pieces", "0", "--seed", "1", "--out-dir", &s(&dir.path().join("c"))]);
    assert!(!out.status.success());
    let out = tension(&["synth", "--pieces", "2", "--out-dir", &s(&dir.path().join("d"))]);
    assert!(!out.status.success(), "seed must be mandatory");
}

fn small_dataset(root: &Path) -> String {
    let corpus = root.join("corpus");
    let data = root.join("data");
    ok(&["synth", "--pieces", "4", "--length", "30", "--seed", "2", "--out-dir", &s(&corpus)]);
    ok(&["extract", "--corpus", &s(&corpus), "--out-dir", &s(&data)]);
    s(&data)
}

#[test]
fn train_with_zero_learning_rate_keeps_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let first = dir.path().join("m1");
    ok(&["train", "--data", &data, "--target", "vel", "--seed", "1", "--epochs", "2", "--out-dir", &s(&first)]);
    let init = first.join("model.vel.txt");
    let second = dir.path().join("m2");
    ok(&[
        "train",
        "--data",
        &data,
        "--target",
        "vel",
        "--seed",
        "3",
        "--lr",
        "0",
        "--epochs",
        "4",
        "--init",
        &s(&init),
        "--out-dir",
        &s(&second),
    ]);
    let a = read_model(&fs::read_to_string(&init).unwrap()).unwrap();
    let b = read_model(&fs::read_to_string(second.join("model.vel.txt")).unwrap()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.input_mean, b.input_mean);
    assert_eq!(a.input_scale, b.input_scale);
    let log = fs::read_to_string(second.join("train_log.vel.csv")).unwrap();
    let losses: Vec<&str> =
        log.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn sensitivity_of_zero_model_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let names: Vec<String> = canonical_features().iter().map(|s| s.to_string()).collect();
    let model = ModelFile {
        params: ModelParams::zeros(names.len(), 5),
        input_mean: vec![0.0; names.len()],
        input_scale: vec![1.0; names.len()],
        features: names,
        meta: vec!["target=d_bpr".into()],
    };
    let path = dir.path().join("zero.txt");
    fs::write(&path, write_model(&model)).unwrap();
    let out = dir.path().join("sens");
    ok(&["sensitivity", "--model", &s(&path), "--data", &data, "--out-dir", &s(&out)]);
    let csv = fs::read_to_string(out.join("sensitivity.d_bpr.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "feature,offset,value");
    assert_eq!(rows.len(), 1 + 13 * 11);
    assert!(rows[1..].iter().all(|r| r.ends_with(",0")));
}

#[test]
fn mi_and_eval_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let mi = dir.path().join("mi");
    ok(&["mi", "--data", &data, "--fs-seed", "3", "--out-dir", &s(&mi)]);
    let table = fs::read_to_string(mi.join("mi_normalized.csv")).unwrap();
    assert!(table.contains("feature,bpr,d_bpr,vel,d_vel\n"));
    let selected = fs::read_to_string(mi.join("selected.csv")).unwrap();
    assert_eq!(selected.lines().filter(|l| l.starts_with("bpr,")).count(), 10);
    assert!(!tension(&["mi", "--data", &data, "--out-dir", &s(&mi)]).status.success());

    let eval = dir.path().join("eval");
    ok(&[
        "eval",
        "--data",
        &data,
        "--seed",
        "1",
        "--folds",
        "4",
        "--targets",
        "vel",
        "--sets",
        "P,FS",
        "--epochs",
        "3",
        "--out-dir",
        &s(&eval),
    ]);
    let results = fs::read_to_string(eval.join("results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "target,feature_set,mean_r2,mean_r2_plus_T,p_value,cohens_d");
    assert!(rows[1].starts_with("vel,P,"));
    assert!(rows[2].starts_with("vel,FS,") && rows[2].ends_with(",,,"));
    let per_piece = fs::read_to_string(eval.join("per_piece_r2.csv")).unwrap();
    assert!(per_piece.contains("vel,P+T,piece0,"));
}
