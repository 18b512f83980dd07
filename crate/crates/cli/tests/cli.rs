use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ertalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ertalign")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ertalign(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "stages = 3\ncoarse_trees = 6\nfine_trees = 2\ncandidates = 15\naugment_count = 120\nworkers = 1\n";

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn synth_corpus(dir: &Path, name: &str, seed: &str, count: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--seed", seed, "--count", count, "--out", s(&out)]);
    out.join("annotations.jsonl")
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(&["synth", "--seed", "7", "--count", "20", "--write-maps", "--out", s(&dir.path().join(name))]);
    }
    for file in ["annotations.jsonl", "manifest.json", "maps/synth_7_000003.lmpm"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let manifest = fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
    assert_eq!(fs::read_to_string(dir.path().join("a/annotations.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn train_is_reproducible_and_echoes_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path(), "corpus", "3", "40");
    let cfg = tiny_config(dir.path(), "");
    let mut models = Vec::new();
    for name in ["m1", "m2"] {
        let out = dir.path().join(name);
        ok(&[
            "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--init", "mean", "--features", "gray",
            "--coarse-to-fine", "off", "--seed", "5",
        ]);
        models.push(fs::read(out.join("model.ert")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    let log = fs::read_to_string(dir.path().join("m1/train.log")).unwrap();
    assert!(log.contains("T=3 K1=6 K2=2 depth=4"), "{log}");
    assert!(log.contains("init=mean features=gray coarse_to_fine=off"), "{log}");
    assert!(log.contains("seed=5"), "{log}");
}

#[test]
fn early_stop_is_recorded_on_the_last_log_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path(), "corpus", "4", "40");
    let cfg = tiny_config(dir.path(), "early_stop = 60.0\n");
    let out = dir.path().join("m");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let last = log.lines().last().unwrap();
    assert!(last.starts_with("stop: early"), "{last}");
    assert!(last.contains("< 60.0000%"), "{last}");
    assert!(last.ends_with("of T = 3"), "{last}");
}

#[test]
fn eval_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cfg = tiny_config(
        dir.path(),
        "coordinate_noise_sigma = 0.0\noutlier_rate = 0.0\noccluded_dropout = 0.0\ndeformation = 0.0\n",
    );
    ok(&["synth", "--config", s(&cfg), "--seed", "9", "--count", "40", "--out", s(&corpus)]);
    let data = corpus.join("annotations.jsonl");
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let model = run.join("model.ert");
    let mut reports = Vec::new();
    for (eps, name) in [("8", "e1"), ("8", "e2"), ("10", "e3")] {
        let out = dir.path().join(name);
        ok(&["eval", "--config", s(&cfg), "--model", s(&model), "--data", s(&data), "--epsilon", eps, "--out", s(&out)]);
        reports.push(fs::read_to_string(out.join("report.txt")).unwrap());
        assert!(out.join("ced.txt").exists());
    }
    assert_eq!(reports[0], reports[1]);
    let field = |r: &str, key: &str| -> f64 {
        r.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    let nme = field(&reports[0], "nme ");
    assert!(nme.is_finite());
    assert!(field(&reports[0], "fr_8 ") < 100.0);
    assert!(reports[2].contains("auc_10 "));
    assert!(reports[0].contains("  nose_tip "));
}

#[test]
fn predict_and_map_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--seed", "2", "--count", "30", "--write-maps", "--out", s(&corpus)]);
    let maps_dir = corpus.join("maps");
    let cfg = tiny_config(dir.path(), &format!("maps = \"files\"\nmaps_dir = {:?}\n", s(&maps_dir)));
    let data = corpus.join("annotations.jsonl");
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    ok(&["predict", "--config", s(&cfg), "--model", s(&run.join("model.ert")), "--data", s(&data), "--out", s(&run)]);
    let preds = fs::read_to_string(run.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 30);

    // Files rendered from the synthetic source give the same model.
    let synthetic = dir.path().join("synthetic");
    let plain = tiny_config(dir.path(), "");
    ok(&["train", "--config", s(&plain), "--data", s(&data), "--out", s(&synthetic)]);
    assert_eq!(fs::read(run.join("model.ert")).unwrap(), fs::read(synthetic.join("model.ert")).unwrap());
}

#[test]
fn cross_writes_a_pooled_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_corpus(dir.path(), "a", "11", "30");
    let b = synth_corpus(dir.path(), "b", "12", "30");
    let ta = synth_corpus(dir.path(), "ta", "13", "10");
    let tb = synth_corpus(dir.path(), "tb", "14", "10");
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("x");
    ok(&["cross", "--config", s(&cfg), "--train", s(&a), "--train", s(&b), "--test", s(&ta), "--test", s(&tb), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("cross.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4, "{text}");
    assert!(rows[3].starts_with("All "));
    for row in &rows[1..] {
        let values: Vec<f64> = row.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 3);
        assert!(values.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ertalign(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(ertalign(&["train", "--init", "sideways"]).status.code(), Some(1));
    assert_eq!(ertalign(&["train", "--config", s(&dir.path().join("none.toml"))]).status.code(), Some(1));
    assert_eq!(ertalign(&["train", "--out", s(dir.path())]).status.code(), Some(1));
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(ertalign(&["train", "--data", s(&missing), "--out", s(dir.path())]).status.code(), Some(2));
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(ertalign(&["train", "--data", s(&bad), "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(ertalign(&["--help"]).status.code(), Some(0));
}
