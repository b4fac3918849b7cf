use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sentivote::metrics::{ConfusionMatrix, EvaluationReport, ReportBundle};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn sentivote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentivote"))
        .args(args)
        .env_remove("SENTIVOTE_CORPUS__PATH")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a config for the review fixture and trains into `dir/run`.
fn trained(dir: &Path) -> PathBuf {
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        format!(
            "corpus.path = {:?}\noutput.dir = \"run\"\ntrain.lr_iterations = 200\ntrain.svm_iterations = 200\n",
            fixture("reviews.csv")
        ),
    )
    .unwrap();
    let out = sentivote(&["--config", config.to_str().unwrap(), "train"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    config
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "prepare", "train", "predict", "evaluate", "ensemble", "explain", "ablate", "report",
    ] {
        let out = sentivote(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        let text = stdout(&out);
        for flag in ["--config", "--seed", "--output-dir", "--json"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
    assert_eq!(code(&sentivote(&["--help"])), 0);
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(code(&sentivote(&["train", "--bogus"])), 1);
    assert_eq!(code(&sentivote(&["frobnicate"])), 1);
    assert_eq!(code(&sentivote(&[])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "vectorizer.max_featurez = 10\n").unwrap();
    let out = sentivote(&["--config", config.to_str().unwrap(), "train"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    std::fs::write(&config, "corpus.path = \"missing.csv\"\n").unwrap();
    let out = sentivote(&["--config", config.to_str().unwrap(), "train"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing.csv"));
}

#[test]
fn predict_without_artifacts_hints_at_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = sentivote(&[
        "--output-dir",
        dir.path().to_str().unwrap(),
        "predict",
        "--text",
        "fine",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sentivote train"), "{}", stderr(&out));
}

#[test]
fn train_predict_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let cfg = config.to_str().unwrap();

    let review = "A brilliant, wonderful film. The cast was superb and the ending was great.";
    let out = sentivote(&["--config", cfg, "predict", "--text", review]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("label: positive"), "{text}");
    for model in ["naive_bayes", "logistic_regression", "svm", "combined"] {
        assert!(text.contains(model), "{model}");
    }

    let out = sentivote(&["--config", cfg, "--json", "predict", "--text", review]);
    assert_eq!(code(&out), 0);
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verdict["label"], "positive");
    assert!(verdict["combined"][1].as_f64().unwrap() > 0.5);
    let per_model = verdict["per_model"].as_object().unwrap();
    assert_eq!(per_model.len(), 3);
    for (model, p) in per_model {
        assert!(p[1].as_f64().unwrap() > 0.5, "{model} disagrees");
    }
    assert!(verdict.get("attribution").is_none());

    let out = sentivote(&["--config", cfg, "--json", "predict", "--text", review, "--explain", "svm"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let attribution = &verdict["attribution"];
    for key in ["base_value", "output_value", "items"] {
        assert!(attribution.get(key).is_some(), "{key}");
    }

    let out = sentivote(&["--config", cfg, "predict", "--text", "   "]);
    assert_eq!(code(&out), 1);

    let out = sentivote(&["--config", cfg, "evaluate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("ensemble"));

    let out = sentivote(&["--config", cfg, "report"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("model,accuracy,f1,roc_auc"));
    assert_eq!(text.lines().filter(|l| l.starts_with("svm,")).count(), 1);

    let csv = dir.path().join("plot.csv");
    let out = sentivote(&["--config", cfg, "report", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);
}

#[test]
fn explain_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let svg = dir.path().join("attr.svg");
    let out = sentivote(&[
        "--config",
        config.to_str().unwrap(),
        "explain",
        "--text",
        "Not good at all; the script was awful.",
        "--model",
        "logistic_regression",
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("base "));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let out = sentivote(&[
        "--config",
        config.to_str().unwrap(),
        "--json",
        "explain",
        "--text",
        "great fun",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let attr: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(attr["items"].is_array());

    let out = sentivote(&["--config", config.to_str().unwrap(), "explain", "--text", "x", "--model", "gpt"]);
    assert_eq!(code(&out), 1);
}

fn report(model: &str, accuracy: f64) -> EvaluationReport {
    EvaluationReport {
        model: model.into(),
        n: 25_000,
        accuracy,
        precision: accuracy,
        recall: accuracy,
        f1: accuracy,
        roc_auc: Some(accuracy),
        confusion: ConfusionMatrix { tp: 1, fp: 0, tn: 1, fn_: 0 },
        degenerate: Vec::new(),
    }
}

#[test]
fn report_orders_by_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    let bundle = ReportBundle {
        reports: vec![
            report("naive_bayes", 0.8640),
            report("logistic_regression", 0.8891),
            report("svm", 0.8961),
            report("lightgbm", 0.8691),
            report("lstm", 0.8515),
            report("distilbert", 0.9259),
            report("roberta", 0.9302),
        ],
    };
    bundle.save(&path).unwrap();
    let out = sentivote(&["report", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).take(7).collect();
    assert!(rows[0].starts_with("roberta"), "{text}");
    assert!(rows[6].starts_with("lstm"), "{text}");

    let single = ReportBundle { reports: vec![report("svm", 0.9)] };
    single.save(&path).unwrap();
    let out = sentivote(&["report", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().take_while(|l| !l.is_empty()).count(), 2);

    std::fs::write(&path, "{\"reports\": []}").unwrap();
    assert_eq!(code(&sentivote(&["report", path.to_str().unwrap()])), 2);
    std::fs::write(&path, "not json").unwrap();
    assert_eq!(code(&sentivote(&["report", path.to_str().unwrap()])), 2);
}

#[test]
fn ensemble_fuses_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    std::fs::write(&a, "{\"id\": 0, \"model\": \"a\", \"probs\": [0.2, 0.8]}\n{\"id\": 1, \"model\": \"a\", \"probs\": [0.6, 0.4]}\n").unwrap();
    std::fs::write(&b, "{\"id\": 1, \"model\": \"b\", \"probs\": [0.9, 0.1]}\n{\"id\": 0, \"model\": \"b\", \"probs\": [0.4, 0.6]}\n").unwrap();
    let out = sentivote(&["ensemble", a.to_str().unwrap(), b.to_str().unwrap(), "--weights", "1,1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["label"], "positive");
    assert!((lines[0]["combined"][1].as_f64().unwrap() - 0.7).abs() < 1e-12);

    std::fs::write(&b, "{\"id\": 0, \"model\": \"b\", \"probs\": [0.7, 0.7]}\n").unwrap();
    let out = sentivote(&["ensemble", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn seed_flag_changes_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("corpus.path = {:?}\nvectorizer.max_features = 50\n", fixture("smoke.csv")),
    )
    .unwrap();
    let mut splits = Vec::new();
    for (seed, sub) in [("1", "a"), ("2", "b")] {
        let out_dir = dir.path().join(sub);
        let out = sentivote(&[
            "--config",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--json",
            "prepare",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(manifest["config"]["split"]["seed"], seed.parse::<u64>().unwrap());
        assert!(out_dir.join("features_test.txt").is_file());
        splits.push(manifest["split"]["test"].clone());
    }
    assert_ne!(splits[0], splits[1]);
}
