use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ts2img"));
    c.env_remove("TS2IMG_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ts2img")
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

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// File name to contents, for every file in `dir` except the manifest.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.file_name().unwrap() != "manifest.json")
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
        .collect()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn activity(dir: &Path) -> PathBuf {
    let out = dir.join("act");
    ok(&["synth", "--kind", "activity", "--participants", "3", "--frames", "200", "--seed", "4", "-o", p(&out)]);
    out.join("activity.txt")
}

#[test]
fn help_documents_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("synth", &["--kind", "--participants", "--classes", "--frames", "--separability", "--seed", "--output"]),
        (
            "encode",
            &["--input", "--format", "--window", "--step", "--channels", "--method", "--bins", "--layout", "--image-channels", "--output"],
        ),
        ("train", &["--epochs", "--batch-size", "--lr", "--momentum", "--seed", "--test-fraction", "--subset", "--output"]),
        ("pretrain2d", &["--input", "--images", "--side", "--method", "--output"]),
        ("transfer", &["--base", "--frozen", "--head", "--train-windows", "--output"]),
        ("fuse", &["--image-base", "--image-channels", "--head", "--train-image", "--output"]),
        ("eval", &["--checkpoint", "--output", "--label-base", "--rate"]),
        ("inspect", &[]),
    ];
    for (cmd, flags) in cases {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        for f in flags.iter().chain(&["--config", "--jobs"]) {
            assert!(text.contains(f), "`{cmd} --help` lacks {f}");
        }
    }
    ok(&["--help"]);
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["bogus"][..], &["encode", "--no-such-flag"], &["eval", "sideways", "-i", "x"]] {
        assert_eq!(run(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn synth_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--seed", "42", "--participants", "4", "--classes", "5", "--frames", "400", "-o", p(out)]);
    }
    let sa = snapshot(&a);
    assert_eq!(sa.len(), 4);
    assert_eq!(sa, snapshot(&b));
    let m = manifest(&a.join("manifest.json"));
    assert_eq!(m["seeds"]["seed"], 42);
    assert_eq!(m["config"]["classes"], "5");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
    let labels: std::collections::BTreeSet<String> = String::from_utf8(sa["participant_001.csv"].clone())
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().to_string())
        .collect();
    assert!(labels.iter().all(|l| ("1"..="5").contains(&l.as_str())), "{labels:?}");
}

#[test]
fn seed_env_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--seed", "7", "--participants", "2", "--frames", "400", "-o", p(&a)]);
    let out = bin()
        .args(["synth", "--participants", "2", "--frames", "400", "-o", p(&b)])
        .env("TS2IMG_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(snapshot(&a), snapshot(&b));
    let out = bin()
        .args(["synth", "--seed", "8", "--participants", "2", "--frames", "400", "-o", p(&c)])
        .env("TS2IMG_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(snapshot(&a), snapshot(&c));
}

#[test]
fn encode_outputs_are_named_and_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let input = activity(dir.path());
    let (one, all) = (dir.path().join("one"), dir.path().join("all"));
    ok(&["encode", "--method", "gadf", "-i", p(&input), "-o", p(&one), "--jobs", "1"]);
    ok(&["encode", "--method", "gadf", "-i", p(&input), "-o", p(&all)]);
    let files = snapshot(&one);
    assert_eq!(files, snapshot(&all));
    let windows = files.keys().filter(|k| k.ends_with(".tsim")).count();
    assert!(windows > 0);
    assert_eq!(files.keys().filter(|k| k.ends_with(".png")).count(), windows);
    assert!(files.contains_key("1_0_gadf.tsim"), "{:?}", files.keys().take(4).collect::<Vec<_>>());
    let index = String::from_utf8(files["index.csv"].clone()).unwrap();
    assert_eq!(index.lines().count(), windows + 1);

    let m = manifest(&one.join("manifest.json"));
    let digest = m["inputs"][p(&input)].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert_eq!(m["config"]["window"], "100");
    assert_eq!(m["config"]["step"], "20");

    let out = ok(&["inspect", p(&one.join("1_0_gadf.tsim"))]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dims"], serde_json::json!([3, 100, 100]));
    assert_eq!(v["crc_ok"], true);
}

#[test]
fn encode_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = activity(dir.path());
    let out = dir.path().join("x");
    assert_eq!(run(&["encode", "--method", "mtf", "--bins", "0", "-i", p(&input), "-o", p(&out)]).status.code(), Some(1));
    assert_eq!(run(&["encode", "--method", "swirl", "-i", p(&input), "-o", p(&out)]).status.code(), Some(1));
    assert_eq!(run(&["encode", "-i", "/no/such/file.txt", "-o", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["inspect", "/no/such/file.tsim"]).status.code(), Some(2));
}

#[test]
fn config_file_overrides_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let input = activity(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small windows\nwindow = 40\nstep=40\nmethod=mtf\nbins=4\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["encode", "--config", p(&cfg), "-i", p(&input), "-o", p(&a)]);
    ok(&["encode", "--config", p(&cfg), "--step", "80", "-i", p(&input), "-o", p(&b)]);
    let m = manifest(&a.join("manifest.json"));
    assert_eq!(m["config"]["window"], "40");
    assert_eq!(m["config"]["bins"], "4");
    assert!(snapshot(&a).keys().any(|k| k.ends_with("_mtf.tsim")));
    let (na, nb) = (snapshot(&a).len(), snapshot(&b).len());
    assert!(nb < na, "step 80 gave {nb} files, step 40 gave {na}");
    assert_eq!(manifest(&b.join("manifest.json"))["config"]["step"], "80");

    std::fs::write(&cfg, "window = forty\n").unwrap();
    assert_eq!(run(&["encode", "--config", p(&cfg), "-i", p(&input), "-o", p(&a)]).status.code(), Some(1));
}

#[test]
fn train_transfer_fuse_and_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = activity(d);
    let target = d.join("stress");
    ok(&["synth", "--classes", "2", "--participants", "3", "--frames", "600", "--seed", "2", "-o", p(&target)]);
    let fast = ["--epochs", "1", "--batch-size", "32", "--seed", "3"];

    let base = d.join("models/base.json");
    let mut args = vec!["train", "-i", p(&input), "--subset", "2users", "-o", p(&base)];
    args.extend(fast);
    let out = ok(&args);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["confusion"].as_array().unwrap().len(), 6);
    assert!(d.join("models/base.manifest.json").exists());
    assert!(d.join("models/base.params").is_dir());

    let tl = d.join("models/tl.json");
    let mut args = vec!["transfer", "--base", p(&base), "-i", p(&target), "--train-windows", "20", "-o", p(&tl)];
    args.extend(fast);
    let v: serde_json::Value = serde_json::from_slice(&ok(&args).stdout).unwrap();
    assert_eq!(v["n_train"], 20);
    let info: serde_json::Value = serde_json::from_slice(&ok(&["inspect", p(&tl)]).stdout).unwrap();
    assert_eq!(info["provenance"]["parent"], p(&base));
    let layers = info["branches"][0]["layers"].as_array().unwrap();
    let conv1 = layers.iter().find(|l| l["spec"]["name"] == "conv1").unwrap();
    assert_eq!(conv1["spec"]["trainable"], false);

    // A 2D trunk for 24-sample windows so fusion stays small.
    let img = d.join("models/img.json");
    let mut args = vec!["pretrain2d", "--images", "60", "--side", "24", "-o", p(&img)];
    args.extend(fast);
    ok(&args);
    let fused = d.join("models/fused.json");
    let mut args = vec!["fuse", "--image-base", p(&img), "-i", p(&target), "--window", "24", "--step", "24", "-o", p(&fused)];
    args.extend(fast);
    let v: serde_json::Value = serde_json::from_slice(&ok(&args).stdout).unwrap();
    assert!(v["report"]["accuracy"].as_f64().is_some());
    let mut args = vec!["fuse", "--image-base", p(&img), "-i", p(&target), "-o", p(&fused)];
    args.extend(fast);
    assert_eq!(run(&args).status.code(), Some(1), "window 100 against a 24-pixel trunk");

    let mut args = vec!["eval", "loocv", "-i", p(&target)];
    args.extend(fast);
    let v: serde_json::Value = serde_json::from_slice(&ok(&args).stdout).unwrap();
    assert_eq!(v["folds"].as_array().unwrap().len(), 3);

    let report = d.join("eval.json");
    let mut args = vec!["eval", "holdout", "-i", p(&target), "--checkpoint", p(&tl), "-o", p(&report)];
    args.extend(fast);
    ok(&args);
    assert!(manifest(&report)["report"]["accuracy"].as_f64().is_some());
    assert!(d.join("eval.manifest.json").exists());
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = activity(dir.path());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        ok(&["train", "-i", p(&input), "--epochs", "1", "--batch-size", "64", "--seed", "5", "-o", p(out)]);
    }
    let params = |m: &Path| snapshot(&m.with_extension("params"));
    assert_eq!(params(&a), params(&b));
}
