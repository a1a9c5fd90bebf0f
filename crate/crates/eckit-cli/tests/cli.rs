//! CLI behavior: exit codes, config-file resolution, manifests and
//! pipeline composability through the binary.

use std::process::Command;

fn eckit(dir: &std::path::Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eckit"));
    cmd.current_dir(dir).arg("--manifest").arg(dir.join("run.json"));
    cmd
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = eckit(dir.path()).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage:"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = eckit(dir.path()).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flag_value_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let corpus = dir.join("c.jsonl");
    std::fs::write(&corpus, "{\"id\":\"a\",\"source\":\"x\",\"target\":\"y\"}\n").unwrap();
    let out = eckit(dir)
        .args(["filter", "--criteria", "bogus", "--use-tag-scores"])
        .arg(&corpus)
        .arg(dir.join("out.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown criteria"));
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let out = eckit(dir)
        .args(["score", "--lm"])
        .arg(dir.join("missing.json"))
        .arg("in.jsonl")
        .arg("out.jsonl")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let corpus = dir.join("bad.jsonl");
    std::fs::write(&corpus, "{nope\n").unwrap();
    let out = eckit(dir)
        .args(["edit-filter", "--threshold", "0.5"])
        .arg(&corpus)
        .arg(dir.join("out.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let corpus = dir.join("c.jsonl");
    // one effective pair with ratio tags right at 0.4
    std::fs::write(
        &corpus,
        "{\"id\":\"a\",\"source\":\"x\",\"target\":\"y\",\"tags\":{\"c1_log_ratio\":\"0.4\",\"c2_log_ratio\":\"0.4\"}}\n",
    )
    .unwrap();
    std::fs::write(dir.join("cfg.json"), "{\"log_c1\": 1.0, \"log_c2\": 1.0}").unwrap();

    // from config: thresholds 1.0 -> the pair (0.4) is noisy and replaced
    let out = eckit(dir)
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .args(["filter", "--use-tag-scores", "--stats"])
        .arg(dir.join("s1.json"))
        .arg(&corpus)
        .arg(dir.join("o1.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("s1.json")).unwrap()).unwrap();
    assert_eq!(stats["replaced"], 1);

    // flag overrides config: threshold 0 -> the pair is clean
    let out = eckit(dir)
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .args(["filter", "--use-tag-scores", "--log-c1", "0", "--log-c2", "0", "--stats"])
        .arg(dir.join("s2.json"))
        .arg(&corpus)
        .arg(dir.join("o2.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("s2.json")).unwrap()).unwrap();
    assert_eq!(stats["replaced"], 0);
}

#[test]
fn manifest_captures_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let out = eckit(dir)
        .args(["synth", "--seed", "3", "--n", "10"])
        .arg(dir.join("c.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "eckit");
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["args"]["seed"], 3);
    assert_eq!(manifest["args"]["n"], 10);
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = eckit(dir)
            .args(["synth", "--seed", "5", "--n", "100"])
            .arg(dir.join(name))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let a = std::fs::read(dir.join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.join("b.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn subcommands_compose_into_a_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let corpus = dir.join("c.jsonl");
    let run = |args: &[&str]| {
        let out = eckit(dir).args(args).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{:?}: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["synth", "--seed", "9", "--n", "300", corpus.to_str().unwrap()]);
    run(&[
        "train-lm",
        "--order",
        "3",
        "--input",
        corpus.to_str().unwrap(),
        "--output",
        dir.join("lm.json").to_str().unwrap(),
    ]);
    run(&[
        "score",
        "--lm",
        dir.join("lm.json").to_str().unwrap(),
        corpus.to_str().unwrap(),
        dir.join("scored.jsonl").to_str().unwrap(),
    ]);
    run(&[
        "filter",
        "--criteria",
        "c1",
        "--use-tag-scores",
        dir.join("scored.jsonl").to_str().unwrap(),
        dir.join("filtered.jsonl").to_str().unwrap(),
    ]);
    run(&[
        "edit-filter",
        "--threshold",
        "0.5",
        dir.join("filtered.jsonl").to_str().unwrap(),
        dir.join("edited.jsonl").to_str().unwrap(),
    ]);
    run(&[
        "hist",
        "--criterion",
        "c1",
        "--use-tag-scores",
        dir.join("scored.jsonl").to_str().unwrap(),
        dir.join("c1.csv").to_str().unwrap(),
    ]);

    // each stage's output is a loadable corpus of the same schema
    let final_corpus = std::fs::read_to_string(dir.join("edited.jsonl")).unwrap();
    let records: Vec<&str> =
        final_corpus.lines().filter(|l| !l.contains("\"meta\"")).collect();
    assert!(!records.is_empty());
    for line in records {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string());
        assert!(v["source"].is_string());
        assert!(v["target"].is_string());
        assert!(v["tags"]["filter_decision"].is_string());
    }
    let csv = std::fs::read_to_string(dir.join("c1.csv")).unwrap();
    assert!(csv.starts_with("bin_left,count\n"));
}
