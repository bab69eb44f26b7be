use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use codemix_core::tokenizer::{TokenizerConfig, Vocabulary, SPECIAL_TOKENS};
use codemix_core::transformer::{init_params, save_model, EncoderConfig, ModelFile, TrainConfig};
use codemix_core::ArtifactRef;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn codemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codemix"))
        .args(args)
        .output()
        .unwrap()
}

fn codemix_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_codemix"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Sixteen short messages with two of each label's signal words.
fn write_small_corpus(path: &Path) {
    let rows = [
        ("mast movie yaar", "positive"),
        ("badhiya gaana bhai", "positive"),
        ("accha laga aaj", "positive"),
        ("shandaar match tha", "positive"),
        ("khush hu aaj", "positive"),
        ("pyaara scene yaar", "positive"),
        ("bekar movie yaar", "negative"),
        ("ganda gaana bhai", "negative"),
        ("bura laga aaj", "negative"),
        ("ghatiya match tha", "negative"),
        ("dukhi hu aaj", "negative"),
        ("faltu scene yaar", "negative"),
        ("kal office jana", "neutral"),
        ("ghar pe khana", "neutral"),
        ("bus late aayi", "neutral"),
        ("market band tha", "neutral"),
    ];
    let mut raw = String::new();
    for (i, (text, label)) in rows.iter().enumerate() {
        raw.push_str(&format!(
            "{{\"id\": {i}, \"text\": \"{text}\", \"label\": \"{label}\"}}\n"
        ));
    }
    fs::write(path, raw).unwrap();
}

#[test]
fn unmapped_labels_exit_2_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(
        &input,
        "{\"text\": \"a b\", \"label\": \"meh\"}\n{\"text\": \"c d\", \"label\": \"2\"}\n",
    )
    .unwrap();
    let out = codemix(&[
        "prepare",
        "--input",
        s(&input),
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2, meh"), "{err}");
}

#[test]
fn parse_errors_carry_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(
        &input,
        "{\"text\": \"a b\", \"label\": \"positive\"}\n{\"text\": \n",
    )
    .unwrap();
    let out = codemix(&[
        "prepare",
        "--input",
        s(&input),
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("in.jsonl:2:"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(
        codemix(&["train", "--model", "xgboost", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        codemix(&["evaluate", "--model", "nb", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        codemix(&["train", "--model", "nb", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        codemix(&["predict", "--model", "nb", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(codemix(&["report", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(codemix(&["prepare", "--out-dir", d]).status.code(), Some(2));
}

#[test]
fn empty_prediction_stream_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = codemix_stdin(
        &[
            "predict",
            "--model",
            "nb",
            "--out-dir",
            s(dir.path()),
            "--input",
            "-",
        ],
        "",
    );
    assert_eq!(ok(&out), "");
}

#[test]
fn zero_head_transformer_predicts_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let tokens: Vec<String> = SPECIAL_TOKENS
        .iter()
        .chain(&["accha", "movie", "##a"])
        .map(|t| t.to_string())
        .collect();
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let text = vocab.to_text();
    fs::write(dir.path().join("vocab.txt"), &text).unwrap();
    let cfg = EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: 8,
        vocab_size: vocab.len(),
        ..EncoderConfig::default()
    };
    let mut params = init_params(&cfg, 1).unwrap();
    params.head_weight.fill(0.0);
    params.head_bias.fill(0.0);
    let file = ModelFile {
        encoder_config: cfg,
        train_config: TrainConfig::default(),
        tokenizer_config: TokenizerConfig {
            max_len: 8,
            max_word_chars: 100,
        },
        vocab_ref: ArtifactRef {
            path: "vocab.txt".into(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        },
        params,
    };
    save_model(&dir.path().join("model_transformer.bin"), &file).unwrap();

    let out = ok(&codemix(&[
        "predict",
        "--model",
        "transformer",
        "--out-dir",
        s(dir.path()),
        "--text",
        "accha movie",
        "--text",
        "kuch bhi 😂",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[1..], ["0.3333", "0.3333", "0.3333"], "{line}");
    }

    // a vocabulary edited after training is refused
    fs::write(dir.path().join("vocab.txt"), text + "extra\n").unwrap();
    let out = codemix(&[
        "predict",
        "--model",
        "transformer",
        "--out-dir",
        s(dir.path()),
        "--text",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_transformer_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    write_small_corpus(&input);
    let run = dir.path().join("run");
    ok(&codemix(&[
        "prepare",
        "--input",
        s(&input),
        "--out-dir",
        s(&run),
    ]));
    ok(&codemix(&[
        "train",
        "--model",
        "transformer",
        "--out-dir",
        s(&run),
    ]));
    let manifest = read_json(&run.join("manifest_train_transformer.json"));
    let train = &manifest["config"]["train"];
    assert_eq!(train["learning_rate"], 2e-5);
    assert_eq!(train["epochs"], 3);
    assert_eq!(train["batch_size"], 8);
    assert_eq!(train["weight_decay"], 0.01);
    assert_eq!(train["warmup_steps"], 500);
    assert_eq!(manifest["seed"], 42);
    let log = read_json(&run.join("train_transformer_log.json"));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 3);
    assert!(log["epochs"][0]["val_weighted_f1"].is_f64());
}

#[test]
fn overfit_fixture_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    write_small_corpus(&input);
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"vocab_size": 120, "tokenizer": {"max_len": 10},
            "encoder": {"num_layers": 2, "num_heads": 2, "d_model": 16, "d_ff": 32, "dropout": 0.0},
            "train": {"learning_rate": 0.003, "epochs": 150, "batch_size": 4, "weight_decay": 0.0,
                      "warmup_steps": 0, "schedule": "constant"}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let common = ["--out-dir", s(&run), "--config", s(&config)];
    ok(&codemix(
        &[&["prepare", "--input", s(&input)][..], &common].concat(),
    ));
    ok(&codemix(
        &[&["train", "--model", "transformer"][..], &common].concat(),
    ));

    // memorized training samples come back with their labels
    let train_split = fs::read_to_string(run.join("train.jsonl")).unwrap();
    let rows: Vec<Value> = train_split
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let texts: String = rows
        .iter()
        .map(|r| format!("{}\n", r["text"].as_str().unwrap()))
        .collect();
    let out = ok(&codemix_stdin(
        &[
            &["predict", "--model", "transformer", "--input", "-"][..],
            &common,
        ]
        .concat(),
        &texts,
    ));
    let predicted: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    let expected: Vec<&str> = rows.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(predicted, expected);

    let score = |split: &str| {
        let out = ok(&codemix(
            &[
                &[
                    "evaluate",
                    "--model",
                    "transformer",
                    "--split",
                    split,
                    "--json",
                ][..],
                &common,
            ]
            .concat(),
        ));
        let v: Value = serde_json::from_str(&out).unwrap();
        v["report"]["weighted"]["f1"].as_f64().unwrap()
    };
    let train_f1 = score("train");
    assert_eq!(train_f1, 1.0);
    assert!(train_f1 >= score("test"));
}

#[test]
fn baselines_evaluate_predict_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    write_small_corpus(&input);
    let run = dir.path().join("run");
    let d = s(&run);
    ok(&codemix(&[
        "prepare",
        "--input",
        s(&input),
        "--out-dir",
        d,
        "--json",
    ]));
    for model in ["nb", "svm"] {
        ok(&codemix(&["train", "--model", model, "--out-dir", d]));
        let text = ok(&codemix(&["evaluate", "--model", model, "--out-dir", d]));
        assert!(text.contains("Weighted\t"), "{text}");
        assert!(text.contains("Class\tF1\n"), "{text}");
    }

    let train_rows: Vec<Value> = fs::read_to_string(run.join("train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let negative = train_rows
        .iter()
        .find(|r| r["label"] == "negative")
        .unwrap();
    let raw = format!(
        "@friend {} 😡 http://t.co/x",
        negative["text"].as_str().unwrap().to_uppercase()
    );
    let nb = ok(&codemix(&[
        "predict",
        "--model",
        "nb",
        "--out-dir",
        d,
        "--text",
        &raw,
    ]));
    let fields: Vec<&str> = nb.trim_end().split('\t').collect();
    assert_eq!(fields[0], "negative", "{raw}");
    let total: f64 = fields[1..].iter().map(|f| f.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 2e-4);

    let positive = train_rows
        .iter()
        .find(|r| r["label"] == "positive")
        .unwrap();
    let text = positive["text"].as_str().unwrap();
    let svm = ok(&codemix(&[
        "predict",
        "--model",
        "svm",
        "--out-dir",
        d,
        "--text",
        text,
        "--json",
    ]));
    let v: Value = serde_json::from_str(svm.trim_end()).unwrap();
    assert_eq!(v["label"], "positive");
    assert_eq!(v["text"], text);
    assert!(v["scores"]["positive"].is_f64());

    let table = ok(&codemix(&["report", "--out-dir", d]));
    assert!(table.starts_with("Model\tAccuracy\t"));
    assert_eq!(table.lines().count(), 3);
    let csv = fs::read_to_string(run.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("model,weighted_f1\nNB,"));

    // a term index that no longer matches the model is refused
    fs::write(
        run.join("term_index.json"),
        "{\"terms\": [], \"df\": [], \"num_docs\": 1}",
    )
    .unwrap();
    assert_eq!(
        codemix(&["evaluate", "--model", "nb", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
}
