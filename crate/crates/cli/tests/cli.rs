use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cptree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cptree")).args(args).env_remove("CPTREE_MODEL_DIR").output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let text: String = lines.into_iter().map(|l| l + "\n").collect();
    fs::write(path, text).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(stdout(out).trim()).unwrap()
}

#[test]
fn online_tree_with_alpha_one_over_eight_labels_has_depth_three() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, (0..8).map(|i| format!("ad{i} w{i}:0.5 common")));
    let model = dir.path().join("m.cpt");
    let out = cptree(&["train", "--method", "cpt-online", "--alpha", "1", "--train", p(&train), "--model", p(&model), "--json"]);
    let v = json(&out);
    assert_eq!(v["max_depth"], 3);
    assert_eq!(v["labels"], 8);
    assert!(v["examples_per_second"].as_f64().unwrap() > 0.0);
}

#[test]
fn pecoc_reports_padded_code_size() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, ["a f", "b f", "c f", "d f", "e f"].map(String::from));
    let model = dir.path().join("m.cpt");
    let v = json(&cptree(&["train", "--method", "pecoc", "--train", p(&train), "--model", p(&model), "--json"]));
    assert_eq!(v["code_size"], 8);
    let out = cptree(&["train", "--method", "pecoc", "--capacity", "4", "--train", p(&train), "--model", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, (0..300).map(|i| format!("y{} t{} t{}", i % 17, i % 5, i % 11)));
    for method in ["cpt-online", "cpt-random", "cpecoc", "ova", "table"] {
        let (a, b) = (dir.path().join("a.cpt"), dir.path().join("b.cpt"));
        for path in [&a, &b] {
            let mut args = vec!["train", "--method", method, "--train", p(&train), "--model", p(path), "--passes", "2", "--seed", "3"];
            match method {
                "cpt-online" => args.extend(["--alpha", "0.9"]),
                "cpecoc" => args.extend(["--k", "4"]),
                _ => {}
            }
            let out = cptree(&args);
            assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{method}");
    }
}

#[test]
fn frozen_uniform_model_over_four_labels_scores_nine_sixteenths() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, ["a f", "b f", "c f", "d f"].map(String::from));
    let model = dir.path().join("m.cpt");
    // A vanishing step leaves every regressor at exactly 1/2.
    let out = cptree(&["train", "--method", "cpt-static", "--eta0", "1e-300", "--train", p(&train), "--model", p(&model)]);
    assert!(out.status.success());
    let report = dir.path().join("r.jsonl");
    let v = json(&cptree(&["eval", "--mode", "holdout", "--test", p(&train), "--model", p(&model), "--delta", "0.1", "--report", p(&report), "--json"]));
    assert_eq!(v["mean_loss"], 0.5625);
    assert_eq!(v["mode"], "holdout");
    assert_eq!(v["delta"], 0.1);
    assert!(v["ci"].as_f64().unwrap() > 0.0);
    let logged: serde_json::Value = serde_json::from_str(fs::read_to_string(&report).unwrap().trim()).unwrap();
    assert_eq!(logged, v);
}

#[test]
fn progressive_eval_scores_unseen_labels_as_loss_one() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    write_lines(&train, ["a f", "b g"].map(String::from));
    write_lines(&test, ["x f", "z g", "w h"].map(String::from));
    let model = dir.path().join("m.cpt");
    for method in ["cpt-online", "ova", "table", "cpt-static"] {
        let mut args = vec!["train", "--method", method, "--train", p(&train), "--model", p(&model)];
        if method == "cpt-online" {
            args.extend(["--alpha", "0.5"]);
        }
        assert!(cptree(&args).status.success());
        let v = json(&cptree(&["eval", "--test", p(&test), "--model", p(&model), "--json"]));
        assert_eq!(v["mean_loss"], 1.0, "{method}");
        assert_eq!(v["m"], 3);
    }
}

#[test]
fn eval_rejects_a_method_mismatch_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, ["a f", "b g"].map(String::from));
    let model = dir.path().join("m.cpt");
    assert!(cptree(&["train", "--method", "ova", "--train", p(&train), "--model", p(&model)]).status.success());
    let out = cptree(&["eval", "--test", p(&train), "--model", p(&model), "--method", "table"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&model, b"garbage").unwrap();
    assert_eq!(cptree(&["eval", "--test", p(&train), "--model", p(&model)]).status.code(), Some(2));
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "a f:oops\n").unwrap();
    let out = cptree(&["train", "--method", "ova", "--train", p(&bad), "--model", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(cptree(&["train"]).status.code(), Some(1));
    assert_eq!(cptree(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, ["a f".to_string()]);
    let m = dir.path().join("m");
    assert_eq!(cptree(&["train", "--method", "cpt-online", "--train", p(&train), "--model", p(&m)]).status.code(), Some(1));
    assert_eq!(cptree(&["train", "--method", "ova", "--alpha", "0.5", "--train", p(&train), "--model", p(&m)]).status.code(), Some(1));
    assert_eq!(cptree(&["train", "--method", "ova", "--bits", "40", "--train", p(&train), "--model", p(&m)]).status.code(), Some(1));
    assert_eq!(cptree(&["eval", "--test", p(&train), "--model", p(&m), "--delta", "2"]).status.code(), Some(1));
    assert_eq!(cptree(&["eval", "--test", p(&train), "--model", p(&m)]).status.code(), Some(2));
    assert!(cptree(&["--help"]).status.success());
}

#[test]
fn model_dir_environment_variable_sets_the_default_location() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write_lines(&train, ["a f", "b g"].map(String::from));
    let models = dir.path().join("models");
    fs::create_dir(&models).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cptree"))
        .args(["train", "--method", "table", "--train", p(&train), "--model", "t.cpt"])
        .env("CPTREE_MODEL_DIR", &models)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(models.join("t.cpt").exists());
}

#[test]
fn verify_bounds_passes_and_emits_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.tsv");
    let out = cptree(&["verify-bounds", "--trials", "300", "--depth-labels", "300", "--curve", "4096", "--curve-out", p(&curve)]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
    let text = fs::read_to_string(&curve).unwrap();
    let multipliers: Vec<f64> = text.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(multipliers.len(), 12);
    assert!(multipliers.windows(2).all(|w| w[1] < w[0]));

    let out = cptree(&["verify-bounds", "--trials", "0", "--depth-labels", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn synth_is_deterministic_and_feeds_the_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = cptree(&["synth", "--out", p(out), "--contexts", "20", "--labels", "200", "--examples", "3000", "--topics", "10", "--seed", "5"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["train.txt", "test.txt", "test.contexts", "truth.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let model = dir.path().join("m.cpt");
    assert!(cptree(&["train", "--method", "cpt-online", "--alpha", "0.75", "--train", p(&a.join("train.txt")), "--model", p(&model)]).status.success());
    let v = json(&cptree(&[
        "eval",
        "--test",
        p(&a.join("test.txt")),
        "--model",
        p(&model),
        "--truth",
        p(&a.join("truth.jsonl")),
        "--contexts",
        p(&a.join("test.contexts")),
        "--json",
    ]));
    assert_eq!(v["m"], 300);
    let regret = v["true_regret"].as_f64().unwrap();
    assert!(regret > 0.0 && regret < 1.0);
    let best = json(&cptree(&["best-possible", "--test", p(&a.join("test.txt")), "--json"]));
    assert!(best["mean_loss"].as_f64().unwrap() < v["mean_loss"].as_f64().unwrap());
}

#[test]
fn synth_one_hot_gives_zero_best_possible_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let r = cptree(&["synth", "--out", p(&out), "--contexts", "10", "--labels", "4", "--examples", "500", "--shape", "one-hot"]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("optimal loss             0.000000"));
    let best = json(&cptree(&["best-possible", "--test", p(&out.join("test.txt")), "--json"]));
    assert_eq!(best["mean_loss"], 0.0);
    let r = cptree(&["synth", "--out", p(&out), "--contexts", "10", "--labels", "4", "--examples", "500", "--shape", "uniform"]);
    assert!(stdout(&r).contains("optimal loss             0.562500"));
    assert_eq!(cptree(&["synth", "--out", p(&out), "--contexts", "0"]).status.code(), Some(1));
}
