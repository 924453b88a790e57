use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cir"))
        .args(args)
        .env_remove("CIR_LLM_URL")
        .output()
        .expect("cir runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cir(args);
    assert!(
        out.status.success(),
        "cir {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    cir(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/good4cir")
}

fn gen(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("data{seed}"));
    ok(&[
        "--seed",
        seed,
        "gen-data",
        "--n",
        "12",
        "--ops",
        "1-2",
        "--extra-images",
        "4",
        "--out",
        s(&out),
    ]);
    out
}

fn train(data: &Path, out: &Path, steps: &str) {
    ok(&[
        "--seed",
        "3",
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--steps",
        steps,
        "--batch-size",
        "4",
    ]);
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let (x, y) = (a.join(&n), b.join(&n));
        if x.is_dir() {
            same_files(&x, &y);
        } else {
            assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{} differs", x.display());
        }
    }
}

#[test]
fn full_pipeline_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let runs: Vec<PathBuf> = (0..2)
        .map(|i| {
            let root = tmp.path().join(format!("r{i}"));
            fs::create_dir_all(&root).unwrap();
            let data = gen(&root, "5");
            let run = root.join("run");
            train(&data, &run, "6");
            let ck = run.join("checkpoint.bin");
            let idx = root.join("index.bin");
            ok(&["index", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&idx)]);
            let ev = root.join("eval");
            ok(&[
                "eval",
                "--checkpoint",
                s(&ck),
                "--index",
                s(&idx),
                "--data",
                s(&data),
                "--out",
                s(&ev),
            ]);
            let attn = root.join("attn");
            ok(&[
                "attn-dump",
                "--checkpoint",
                s(&ck),
                "--data",
                s(&data),
                "--all",
                "--out",
                s(&attn),
            ]);
            root
        })
        .collect();
    same_files(&runs[0], &runs[1]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs[0].join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_queries"], 12);
    assert!(fs::read_dir(runs[0].join("attn/00000")).unwrap().count() >= 2);
}

#[test]
fn seeds_change_the_data() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (gen(tmp.path(), "1"), gen(tmp.path(), "2"));
    assert_ne!(
        fs::read(a.join("grids.bin")).unwrap(),
        fs::read(b.join("grids.bin")).unwrap()
    );
}

#[test]
fn query_prints_k_ranked_lines() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "4");
    let run = tmp.path().join("run");
    train(&data, &run, "2");
    let ck = run.join("checkpoint.bin");
    let idx = tmp.path().join("i.bin");
    ok(&["index", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&idx)]);
    let first = fs::read_to_string(data.join("triplets.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let q = rec["query_id"].as_str().unwrap();
    let out = ok(&[
        "query",
        "--checkpoint",
        s(&ck),
        "--index",
        s(&idx),
        "--data",
        s(&data),
        "--image",
        q,
        "--text",
        "add a red ball",
        "--k",
        "5",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let scores: Vec<f64> = text
        .lines()
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 5);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn resume_matches_a_straight_run() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "7");
    let straight = tmp.path().join("straight");
    train(&data, &straight, "8");
    let split = tmp.path().join("split");
    train(&data, &split, "4");
    let half = tmp.path().join("half.bin");
    fs::copy(split.join("checkpoint.bin"), &half).unwrap();
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&split),
        "--resume",
        s(&half),
        "--steps",
        "8",
    ]);
    for f in ["checkpoint.bin", "metrics.jsonl"] {
        assert_eq!(
            fs::read(straight.join(f)).unwrap(),
            fs::read(split.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 9\n[synthetic]\nn = 3\ngrid = 4\n").unwrap();
    let a = tmp.path().join("a");
    ok(&["--config", s(&cfg), "gen-data", "--out", s(&a)]);
    assert_eq!(fs::read_to_string(a.join("triplets.jsonl")).unwrap().lines().count(), 3);
    let b = tmp.path().join("b");
    ok(&["--config", s(&cfg), "gen-data", "--n", "5", "--out", s(&b)]);
    assert_eq!(fs::read_to_string(b.join("triplets.jsonl")).unwrap().lines().count(), 5);
    fs::write(&cfg, "sede = 9\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "gen-data", "--out", s(&a)]), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "1");
    let out = tmp.path().join("x");
    assert_eq!(code(&["grad-check", "--op", "nope"]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--tau", "-1"]), 2);
    assert_eq!(
        code(&["train", "--data", s(&data), "--out", s(&out), "--lambda", "-0.5"]),
        2
    );
    assert_eq!(code(&["gen-data", "--ops", "x", "--out", s(&out)]), 2);
    assert_eq!(code(&["gen-data", "--source", "good4cir", "--out", s(&out)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "1");
    let out = tmp.path().join("x");
    assert_eq!(code(&["train", "--data", "/nonexistent", "--out", s(&out)]), 3);

    // A dataset with images but no records.
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("triplets.jsonl"), "").unwrap();
    fs::copy(data.join("grids.bin"), empty.join("grids.bin")).unwrap();
    let run = tmp.path().join("run");
    train(&data, &run, "1");
    let ck = run.join("checkpoint.bin");
    let idx = tmp.path().join("i.bin");
    ok(&["index", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&idx)]);
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&ck),
            "--index",
            s(&idx),
            "--data",
            s(&empty),
            "--out",
            s(&out)
        ]),
        3
    );
    assert_eq!(code(&["train", "--data", s(&empty), "--out", s(&out)]), 3);

    // An index built by another model.
    let other = tmp.path().join("other");
    ok(&[
        "--seed",
        "11",
        "train",
        "--data",
        s(&data),
        "--out",
        s(&other),
        "--steps",
        "1",
        "--init-seed",
        "11",
    ]);
    let ck2 = other.join("checkpoint.bin");
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&ck2),
            "--index",
            s(&idx),
            "--data",
            s(&data),
            "--out",
            s(&out)
        ]),
        3
    );

    // Corrupt checkpoint.
    let bad = tmp.path().join("bad.bin");
    fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(
        code(&["index", "--checkpoint", s(&bad), "--data", s(&data), "--out", s(&idx)]),
        3
    );

    // Unknown query image.
    assert_eq!(
        code(&[
            "query",
            "--checkpoint",
            s(&ck),
            "--index",
            s(&idx),
            "--data",
            s(&data),
            "--image",
            "nope"
        ]),
        3
    );
}

#[test]
fn missing_fixtures_exit_3() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("fx");
    fs::create_dir_all(&dir).unwrap();
    fs::copy(fixtures().join("pairs.json"), dir.join("pairs.json")).unwrap();
    fs::copy(fixtures().join("grids.bin"), dir.join("grids.bin")).unwrap();
    fs::create_dir_all(dir.join("responses")).unwrap();
    let out = tmp.path().join("out");
    let o = cir(&[
        "gen-data",
        "--source",
        "good4cir",
        "--fixtures",
        s(&dir),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixture"));
}

#[test]
fn live_mode_without_gateway_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let f = fixtures();
    assert_eq!(
        code(&[
            "gen-data",
            "--source",
            "good4cir",
            "--live",
            "--fixtures",
            s(&f),
            "--out",
            s(&out)
        ]),
        2
    );
}

#[test]
fn good4cir_replay_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let f = fixtures();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--source", "good4cir", "--fixtures", s(&f), "--out", s(d)]);
    }
    same_files(&a, &b);
    assert_eq!(
        fs::read_to_string(a.join("triplets.jsonl")).unwrap().lines().count(),
        11
    );
}

#[test]
fn numeric_failures_exit_4() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "1");
    let out = tmp.path().join("nan");
    let o = cir(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--steps",
        "5",
        "--lr-max",
        "1e300",
        "--lr-min",
        "1e300",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(out.join("nonfinite.json").exists());
    assert!(out.join("checkpoint-last-finite.bin").exists());
    assert_eq!(code(&["grad-check", "--op", "relu", "--tol", "0"]), 4);
}

#[test]
fn grad_check_single_primitive_writes_report() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("gc.json");
    let out = ok(&["grad-check", "--op", "layer_norm", "--out", s(&p)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v[0]["name"], "layer_norm");
    assert_eq!(v[0]["passed"], true);
}

#[test]
fn periodic_checkpoints_are_written() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "2");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--steps",
        "4",
        "--batch-size",
        "4",
        "--checkpoint-every",
        "2",
    ]);
    assert!(run.join("checkpoint-000002.bin").exists());
    assert_eq!(
        fs::read(run.join("checkpoint-000004.bin")).unwrap(),
        fs::read(run.join("checkpoint.bin")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(),
        4
    );
}
