use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST: &[&str] = &[
    "model.c=4",
    "model.n_h=4",
    "fusion.k_loc=2",
    "align.m_comp=2",
    "train.epochs=3",
    "train.warmup=1",
    "train.lr=0.001",
    "eval.seeds=1",
    "eval.k_folds=2",
];

fn mosare(args: &[&str], runs: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosare"))
        .args(args)
        .env("MOSARE_RUNS_DIR", runs)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run mosare")
}

fn with_fast(mut args: Vec<String>) -> Vec<String> {
    for kv in FAST {
        args.push("--set".into());
        args.push((*kv).into());
    }
    args
}

fn run(args: &[String], runs: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mosare(&refs, runs)
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    synth_sized(dir, seed, 4)
}

fn synth_sized(dir: &Path, seed: u64, per_class: usize) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    let out = mosare(
        &[
            "synth",
            "--seed",
            &seed.to_string(),
            "--per-class",
            &per_class.to_string(),
            "--dim",
            "8",
            "--c",
            "4",
            "--n-h",
            "4",
            "--out",
            data.to_str().unwrap(),
        ],
        &dir.join("runs"),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), 5);
    let b = tmp.path().join("again");
    fs::rename(&a, &b).unwrap();
    let a = synth(tmp.path(), 5);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = synth(tmp.path(), 6);
    assert_ne!(tree(&c), ta);
}

#[test]
fn invalid_schedule_exits_with_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 0);
    let out_dir = tmp.path().join("bad");
    let out = mosare(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "train.epochs=5",
            "--set",
            "train.warmup=5",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        &tmp.path().join("runs"),
    );
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "user");
    assert!(err["message"].as_str().unwrap().contains("warmup"), "{err}");
}

#[test]
fn unknown_override_and_missing_data_are_user_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let out = mosare(&["train", "--data", "/nonexistent/mosare", "--set", "no.such.key=1"], &runs);
    assert_eq!(out.status.code(), Some(1));
    let out = mosare(&["train", "--data", "/nonexistent/mosare"], &runs);
    assert_eq!(out.status.code(), Some(1));
    let out = mosare(&["no-such-command"], &runs);
    assert_eq!(out.status.code(), Some(1));
    assert!(mosare(&["--help"], &runs).status.success());
}

#[test]
fn train_eval_and_export_share_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let data = synth(tmp.path(), 1);
    let data = data.to_str().unwrap().to_string();
    let train_dir = tmp.path().join("train");
    let out = run(
        &with_fast(vec!["train".into(), "--data".into(), data.clone(), "--out-dir".into(), train_dir.display().to_string()]),
        &runs,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "invocation.json", "run.log", "metrics.jsonl", "checkpoint.bin"] {
        assert!(train_dir.join(f).exists(), "missing {f}");
    }
    let lines = fs::read_to_string(train_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);

    let ckpt = train_dir.join("checkpoint.bin").display().to_string();
    let eval_dir = tmp.path().join("eval");
    let out = run(
        &[
            "eval".into(),
            "--data".into(),
            data.clone(),
            "--checkpoint".into(),
            ckpt.clone(),
            "--out-dir".into(),
            eval_dir.display().to_string(),
        ],
        &runs,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_dir.join("scores.json").exists());

    let export_dir = tmp.path().join("export");
    let out = run(
        &[
            "export-attn".into(),
            "--data".into(),
            data,
            "--checkpoint".into(),
            ckpt,
            "--out-dir".into(),
            export_dir.display().to_string(),
        ],
        &runs,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jsonl = fs::read_to_string(export_dir.join("attention").join("attention.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 12);
}

#[test]
fn scenarios_table_has_nine_rows_and_na_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    // large enough that a few complete training samples survive 30% masking
    let data = synth_sized(tmp.path(), 2, 30);
    let out = run(
        &with_fast(vec![
            "scenarios".into(),
            "--data".into(),
            data.display().to_string(),
            "--fractions".into(),
            "0,0.3,0.5".into(),
        ]),
        &runs,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs: Vec<PathBuf> = fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with("-scenarios"))
        .collect();
    assert_eq!(dirs.len(), 1);
    let table = fs::read_to_string(dirs[0].join("scenarios.txt")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 9, "{table}");
    let na: Vec<&&str> = rows.iter().filter(|r| r.contains("NA")).collect();
    assert_eq!(na.len(), 1, "{table}");
    assert!(na[0].starts_with("50%"));
    assert_eq!(na[0].matches("NA").count(), 3);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dirs[0].join("scenarios.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 9);
}
