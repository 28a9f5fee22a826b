#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cpm_service::cli::main_with_args;

pub const SMALL_CONFIG: &str = r#"{"k": 2, "m": 2, "max_iterations": 1, "seeds": [1, 2], "n_boot": 100}"#;

/// Writes a small planted corpus and a config file into `dir`.
pub fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let code = main_with_args([
        "cpm", "synth", "--out", data.to_str().unwrap(), "--notes", "200", "--k", "2", "--distractors", "2", "--seed", "3",
    ]);
    assert_eq!(code, 0);
    let config = dir.join("config.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    (data.join("corpus.jsonl"), config)
}

/// Creates run `run_id` under `root` and runs its first round.
pub fn run_round_one(root: &Path, corpus: &Path, config: &Path, run_id: &str) {
    let code = main_with_args([
        "cpm",
        "run",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--root",
        root.to_str().unwrap(),
        "--run-id",
        run_id,
    ]);
    assert_eq!(code, 0);
}
