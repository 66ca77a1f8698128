use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msenc::config::TrainSettings;
use msenc::report::ReportJson;
use serde_json::Value;

const SYNTH: &[&str] = &[
    "--num-subjects",
    "3",
    "--num-samples",
    "400",
    "--layers",
    "2x2x4,1x2x3",
    "--latent-dim",
    "6",
    "--pca-dim",
    "4",
    "--activity-dim",
    "10",
];

const SHORT: &[&str] = &[
    "--preset",
    "phase1-desk",
    "--latent-dim",
    "6",
    "--batch-size",
    "32",
    "--steps",
    "60",
    "--warmup",
    "5",
    "--eval-interval",
    "20",
];

fn msenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msenc"))
        .args(args)
        .env_remove("MSENC_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = msenc(args);
    assert!(
        out.status.success(),
        "msenc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(args: &[&str]) -> (i32, String) {
    let out = msenc(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    (out.status.code().unwrap(), stderr)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small dataset under `root/data` and returns its path.
fn synth(root: &Path, extra: &[&str]) -> PathBuf {
    let data = root.join("data");
    let mut args = vec!["synth", "--out", s(&data)];
    args.extend_from_slice(SYNTH);
    args.extend_from_slice(extra);
    ok(&args);
    data
}

fn fit_pca(data: &Path) {
    ok(&["fit-pca", "--data", s(data), "--components", "4"]);
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(SHORT);
    args.extend_from_slice(extra);
    ok(&args)
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
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

fn report(dir: &Path) -> ReportJson {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let (code, err) = failure(&["train"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error kind=Usage code=1 message="), "{err}");
    assert_eq!(err.lines().count(), 1);

    let dir = tempfile::tempdir().unwrap();
    let (code, err) = failure(&["train", "--out", s(dir.path()), "--preset", "phase3"]);
    assert_eq!(code, 1);
    assert!(err.contains("phase3"), "{err}");

    let (code, _) = failure(&["synth", "--out", s(dir.path()), "--layers", "4x4"]);
    assert_eq!(code, 1);
    let (code, _) = failure(&["--threads", "x", "params"]);
    assert_eq!(code, 1);
}

#[test]
fn training_without_embedding_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let mut args = vec!["train", "--data", s(&data)];
    let out = dir.path().join("run");
    args.extend(["--out", s(&out)]);
    args.extend_from_slice(SHORT);
    let (code, err) = failure(&args);
    assert_eq!(code, 2);
    assert!(err.starts_with("error kind=MissingEmbedding code=2"), "{err}");
}

#[test]
fn nan_targets_abort_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    fit_pca(&data);
    let blob = data.join("activity.f32");
    let mut bytes = fs::read(&blob).unwrap();
    // The first 40 samples; some of them are in the train split.
    for chunk in bytes[..40 * 10 * 4].chunks_exact_mut(4) {
        chunk.copy_from_slice(&f32::NAN.to_le_bytes());
    }
    fs::write(&blob, bytes).unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out)];
    args.extend_from_slice(SHORT);
    let (code, err) = failure(&args);
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("error kind=NonFiniteLoss code=3"), "{err}");
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    fit_pca(&data);
    let first = dir.path().join("first");
    train(&data, &first, &["--seed", "4"]);
    let second = dir.path().join("second");
    ok(&["train", "--config", s(&first.join("config.json")), "--out", s(&second)]);
    let a = files_under(&first);
    let b = files_under(&second);
    assert_eq!(a, b);

    let echo: TrainSettings = serde_json::from_slice(&fs::read(first.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo.seed, 4);
    assert_eq!(echo.total_steps, 60);
    assert_eq!(echo.peak_lr, 6e-3);

    let log = fs::read_to_string(first.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for (i, line) in log.lines().enumerate() {
        assert!(
            line.starts_with(&format!("{{\"step\":{},\"lr\":", 20 * (i + 1))),
            "{line}"
        );
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["val_median_r2"].is_f64());
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    fit_pca(&data);
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("run{threads}"));
        train(&data, &out, &["--threads", threads]);
        let eval = dir.path().join(format!("eval{threads}"));
        ok(&[
            "--threads",
            threads,
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(&out.join("best")),
            "--out",
            s(&eval),
            "--split",
            "all",
        ]);
        runs.push((files_under(&out), fs::read(eval.join("r2_per_vertex.f32")).unwrap()));
    }
    assert!(runs[0] == runs[1]);
}

#[test]
fn planted_checkpoint_explains_noiseless_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let eval = dir.path().join("eval");
    let line = ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&data.join("planted")),
        "--out",
        s(&eval),
        "--split",
        "all",
    ]);
    assert!(
        line.starts_with("split=all route=subject samples=400 median_r2="),
        "{line}"
    );
    let r = report(&eval);
    assert!(r.group_median.unwrap() > 0.9999, "{:?}", r.group_median);
    assert_eq!(r.samples_per_subject.iter().sum::<usize>(), 400);
    assert_eq!(r.per_roi.len(), 2);
    assert!(r.challenge.is_some());
    let per_subject = fs::read(eval.join("r2_per_subject.f32")).unwrap();
    assert_eq!(per_subject.len(), 3 * 10 * 4);
}

#[test]
fn predict_and_cluster_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    fit_pca(&data);
    let run = dir.path().join("run");
    train(&data, &run, &[]);

    let pred = dir.path().join("pred");
    ok(&[
        "predict",
        "--data",
        s(&data),
        "--checkpoint",
        s(&run.join("last")),
        "--out",
        s(&pred),
        "--subject",
        "group",
    ]);
    let meta: Value = serde_json::from_slice(&fs::read(pred.join("predictions.json")).unwrap()).unwrap();
    let n = meta["sample_indices"].as_array().unwrap().len();
    assert_eq!(meta["route"], "group");
    assert_eq!(meta["split"], "test");
    assert_eq!(fs::read(pred.join("predictions.f32")).unwrap().len(), n * 10 * 4);

    let clusters = dir.path().join("clusters");
    ok(&[
        "cluster-maps",
        "--checkpoint",
        s(&run.join("best")),
        "--out",
        s(&clusters),
        "--k",
        "2",
        "--pc-maps",
        "3",
    ]);
    assert_eq!(fs::read(clusters.join("exemplars_0.f32")).unwrap().len(), 2 * 4 * 4);
    assert_eq!(fs::read(clusters.join("exemplars_1.f32")).unwrap().len(), 2 * 2 * 4);
    assert_eq!(fs::read(clusters.join("pc_maps.f32")).unwrap().len(), 3 * 10 * 4);
    let (code, _) = failure(&[
        "cluster-maps",
        "--checkpoint",
        s(&run.join("best")),
        "--out",
        s(&clusters),
        "--k",
        "7",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn adding_subjects_through_init() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    fit_pca(&data);
    let run = dir.path().join("run");
    train(&data, &run, &[]);

    let bigger = dir.path().join("bigger");
    let mut args = vec!["synth", "--out", s(&bigger)];
    args.extend_from_slice(SYNTH);
    args[4] = "4";
    ok(&args);
    let adapted = dir.path().join("adapted");
    let pca = data.join("pca");
    train(
        &bigger,
        &adapted,
        &["--init", s(&run.join("best")), "--pca", s(&pca), "--freeze-shared"],
    );
    let before = fs::read(run.join("best/shared_weight.f32")).unwrap();
    let after = fs::read(adapted.join("best/shared_weight.f32")).unwrap();
    assert_eq!(before, after);
    let params: Value = serde_json::from_slice(&fs::read(adapted.join("best/params.json")).unwrap()).unwrap();
    assert_eq!(params["num_subjects"], 4);
}

#[test]
fn params_prints_base_counts() {
    let out = ok(&["params"]);
    let json: Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(json["trainable_total"], 25_180_160);
    assert_eq!(json["grand_total"], 106_214_012);
    assert!(out.contains("trainable"));
}
