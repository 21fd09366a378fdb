use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use storyclass::data::{write_dataset, LabelSet, Story};

const BIN: &str = env!("CARGO_BIN_EXE_storyclass");
const SMALL: &str = r#"{"max_epochs":3,"embedding_dim":12,"filters_per_width":6,"lstm_hidden":8,"char_embedding_dim":4,"char_filters_per_width":3,"learning_rate":0.01}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains a tiny multi-label model on synthetic stories and returns the output directory.
fn trained(root: &Path, arch: &str) -> std::path::PathBuf {
    let out = root.join(format!("train-{arch}"));
    ok(&["--quiet", "--out", path(&out), "--seed", "5", "--config", SMALL, "train", "--synthetic", "96", "--arch", arch, "--task", "multi", "--reduced"]);
    out
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn-rnn");
    for f in ["model.ckpt", "history.csv", "train.manifest.json", "synthetic.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["architecture"], "cnn-rnn");
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["outputs"].as_array().unwrap().iter().all(|o| o["hash"].as_str().unwrap().len() == 64));
    assert!(manifest["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("synthetic")));
}

#[test]
fn eval_reproduces_manifest_dev_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("train.manifest.json")).unwrap()).unwrap();
    let eval_dir = dir.path().join("eval");
    let res = ok(&["--quiet", "--out", path(&eval_dir), "eval", "--checkpoint", path(&out.join("model.ckpt")), "--data", path(&out.join("synthetic.csv"))]);
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["hamming_score"], manifest["results"]["best_dev_metric"]);
    let em = report["exact_match"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&em));
}

#[test]
fn same_seed_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    let a = trained(&dir.path().join("a"), "rnn");
    let b = trained(&dir.path().join("b"), "rnn");
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let res = run(&["--out", path(&dir.path().join("o")), "train", "--data", path(&missing)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nowhere.csv"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["--out", path(dir.path()), "train", "--synthetic", "10", "--arch", "transformer"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn report_fills_checkboxes_consistently() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn");
    let ckpt = out.join("model.ckpt");
    let input = dir.path().join("incidents.csv");
    fs::write(&input, "description,location\n\"he grabbed me, then stared\",metro\nsomeone whistled at us,\n").unwrap();
    let res = ok(&["--quiet", "--out", path(&dir.path().join("r")), "report", "--checkpoint", path(&ckpt), "--input", path(&input), "--threshold", "0.45"]);
    let lines: Vec<Value> = String::from_utf8(res.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["location"], "metro");
    assert!(lines[1].get("location").is_none());
    for l in &lines {
        let t = l["threshold"].as_f64().unwrap();
        assert_eq!(t, 0.45);
        for c in ["commenting", "ogling", "groping"] {
            assert_eq!(l[c].as_bool().unwrap(), l["confidence"][c].as_f64().unwrap() >= t);
        }
    }
    let blank = run(&["--quiet", "--out", path(&dir.path().join("r2")), "report", "--checkpoint", path(&ckpt), "--text", "  \t "]);
    assert_eq!(blank.status.code(), Some(2));
}

#[test]
fn explain_emits_json_and_svg_for_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn-rnn-bidirec-char");
    let ckpt = out.join("model.ckpt");
    let x = dir.path().join("x");
    let story = "a man touched me and whistled near the market";
    for method in ["lime", "saliency"] {
        let res = ok(&["--quiet", "--out", path(&x), "explain", "--checkpoint", path(&ckpt), "--text", story, "--method", method, "--samples", "200"]);
        let e: Value = serde_json::from_slice(&res.stdout).unwrap();
        assert_eq!(e["technique"], method);
        assert_eq!(e["weights"].as_array().unwrap().len(), 9);
        let svg = fs::read_to_string(x.join(format!("explain-{method}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("whistled"));
    }
}

#[test]
fn cluster_emits_one_row_per_story() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn");
    let c = dir.path().join("c");
    ok(&["--quiet", "--out", path(&c), "cluster", "--checkpoint", path(&out.join("model.ckpt")), "--data", path(&out.join("synthetic.csv")), "--k", "10"]);
    let rows = fs::read_to_string(c.join("clusters.csv")).unwrap();
    assert_eq!(rows.lines().count(), 96 + 1);
    let summary: Value = serde_json::from_str(&fs::read_to_string(c.join("clusters.json")).unwrap()).unwrap();
    assert_eq!(summary["clusters"].as_array().unwrap().len(), 10);
    let history: Vec<f64> = summary["inertia_history"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn tsne_emits_coordinates_and_neighbors_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let words = ["groping", "ogling", "commenting", "touching", "staring", "whistling", "bus", "road", "night", "college"];
    let stories: Vec<Story> = (0..120)
        .map(|i| {
            let text = (0..8).map(|j| words[(i * 7 + j * 3) % words.len()]).collect::<Vec<_>>().join(" ");
            Story::new(i, text, LabelSet::from_bits((i % 8) as u8))
        })
        .collect();
    let data = dir.path().join("stories.csv");
    write_dataset(&data, &stories).unwrap();
    let out = dir.path().join("m");
    ok(&["--quiet", "--out", path(&out), "--config", SMALL, "train", "--data", path(&data), "--arch", "cnn", "--reduced"]);
    let t = dir.path().join("t");
    ok(&["--quiet", "--out", path(&t), "tsne", "--checkpoint", path(&out.join("model.ckpt")), "--top", "2000", "--seeds", "groping,ogling,commenting", "--perplexity", "3", "--iterations", "300"]);
    let csv = fs::read_to_string(t.join("tsne.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "word,x,y");
    assert_eq!(csv.lines().count(), words.len() + 1);
    for seed in ["groping", "ogling", "commenting"] {
        let nb: Value = serde_json::from_str(&fs::read_to_string(t.join(format!("neighbors-{seed}.json"))).unwrap()).unwrap();
        assert_eq!(nb["seed"], seed);
        assert!(nb["original"].as_array().unwrap().iter().all(|n| n["word"] != seed));
    }
    let too_few = run(&["--quiet", "--out", path(&t), "tsne", "--checkpoint", path(&out.join("model.ckpt")), "--perplexity", "30"]);
    assert_eq!(too_few.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&too_few.stderr).contains("perplexity"));
}

#[test]
fn tune_threshold_reports_the_best_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "cnn");
    let res = ok(&["--quiet", "--out", path(&dir.path().join("u")), "tune-threshold", "--checkpoint", path(&out.join("model.ckpt")), "--data", path(&out.join("synthetic.csv")), "--grid", "0.4,0.5,0.6"]);
    let choice: Value = serde_json::from_slice(&res.stdout).unwrap();
    let best = choice["hamming_score"].as_f64().unwrap();
    assert!(choice["grid"].as_array().unwrap().iter().all(|p| p[1].as_f64().unwrap() <= best));
}
