use std::path::Path;
use std::process::{Command, Output};

fn fryshort(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fryshort"))
        .args(args)
        .env("FRYSHORT_NUM_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "command failed: {stderr}");
    stderr
}

fn split_line(log: &str, split: &str) -> usize {
    let line = log.lines().find(|l| l.starts_with(split)).expect("split line");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

fn manifest(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join("dataset/manifest.json")).expect("manifest written")
}

const TINY: &[&str] = &[
    "videos.total=7",
    "videos.frames_per_video=3",
    "train.total_iters=3",
    "train.warmup_iters=1",
    "train.batch_size=2",
];

#[test]
fn generate_default_split_is_20_4_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    let log = ok(fryshort(&[
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--overrides",
        "videos.frames_per_video=1",
    ]));
    assert_eq!(split_line(&log, "train"), 20);
    assert_eq!(split_line(&log, "val"), 4);
    assert_eq!(split_line(&log, "test"), 4);
    assert!(out.join("config.lock").is_file());
    assert!(out.join("logs/generate.log").is_file());
}

#[test]
fn generate_seven_videos_splits_5_1_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    let log = ok(fryshort(&[
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--overrides",
        "videos.total=7",
        "videos.frames_per_video=1",
    ]));
    assert_eq!(split_line(&log, "train"), 5);
    assert_eq!(split_line(&log, "val"), 1);
    assert_eq!(split_line(&log, "test"), 1);
}

#[test]
fn same_seed_gives_identical_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c")];
    for (dir, seed) in dirs.iter().zip(["3", "3", "4"]) {
        ok(fryshort(&[
            "generate",
            "--out",
            dir.to_str().unwrap(),
            "--overrides",
            "videos.total=7",
            "videos.frames_per_video=2",
            &format!("videos.seed={seed}"),
        ]));
    }
    assert_eq!(manifest(&dirs[0]), manifest(&dirs[1]));
    assert_ne!(manifest(&dirs[0]), manifest(&dirs[2]));
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fryshort(&[
        "generate",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--overrides",
        "train.warmup_iters=5000",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[videos]\ntotal = \"many\"\n").unwrap();
    let out = fryshort(&["generate", "--out", tmp.path().join("y").to_str().unwrap(), "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_worker_count_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fryshort"))
        .args(["plot", "--run", tmp.path().to_str().unwrap()])
        .env("FRYSHORT_NUM_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_probe_plot_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    let mut args = vec!["generate", "--out", gen.to_str().unwrap(), "--overrides"];
    args.extend_from_slice(TINY);
    ok(fryshort(&args));
    let data = gen.join("dataset");

    let run = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--out",
        run.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--variant",
        "full",
        "--overrides",
    ];
    args.extend_from_slice(TINY);
    ok(fryshort(&args));
    for f in ["checkpoints/final.safetensors", "checkpoints/best.safetensors", "metrics/curves.csv", "metrics/val.csv", "config.lock"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let curves = std::fs::read_to_string(run.join("metrics/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3);
    assert!(curves.lines().next().unwrap().starts_with("iter,lr,total,loss_"));

    let ckpt = run.join("checkpoints/best.safetensors");
    ok(fryshort(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "test",
    ]));
    let eval = std::fs::read_to_string(run.join("metrics/eval_test.csv")).unwrap();
    assert!(eval.starts_with("split,n_frames,miou_pct"));
    let preds = std::fs::read_to_string(run.join("metrics/predictions_test.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 3);

    // regenerating from the checkpoint's own config reproduces the same data
    ok(fryshort(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--out", run.to_str().unwrap(), "--split", "val"]));

    ok(fryshort(&["probe", "--checkpoint", ckpt.to_str().unwrap(), "--out", run.to_str().unwrap(), "--data", data.to_str().unwrap()]));
    let probe = std::fs::read_to_string(run.join("metrics/probe.csv")).unwrap();
    assert!(probe.starts_with("checkpoint_iter,n_domains,probe_acc_pct"));

    ok(fryshort(&["plot", "--run", run.to_str().unwrap()]));
    for f in ["loss_curves.svg", "val_metrics.svg", "mae_test.svg", "mae_val.svg"] {
        let svg = std::fs::read_to_string(run.join("plots").join(f)).unwrap();
        assert!(svg.contains("<svg"), "{f} is not svg");
    }
}

#[test]
fn eval_against_other_dataset_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--out", run.to_str().unwrap(), "--overrides"];
    args.extend_from_slice(TINY);
    ok(fryshort(&args));

    let other = tmp.path().join("other");
    let mut args = vec!["generate", "--out", other.to_str().unwrap(), "--seed", "1", "--overrides", "videos.seed=99"];
    args.extend_from_slice(TINY);
    ok(fryshort(&args));

    let out = fryshort(&[
        "eval",
        "--checkpoint",
        run.join("checkpoints/final.safetensors").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--data",
        other.join("dataset").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn write_metrics(run: &Path, curves: &str) {
    std::fs::create_dir_all(run.join("metrics")).unwrap();
    std::fs::write(run.join("metrics/curves.csv"), curves).unwrap();
    std::fs::write(
        run.join("metrics/eval_test.csv"),
        "split,n_frames,mae_pv,mae_p_av,mae_totox,mae_temp_f\ntest,8,0.5,1.5,2.0,4.0\n",
    )
    .unwrap();
}

const CURVES: &str = "iter,lr,total,loss_seg,loss_cls\n0,1e-4,3.0,1.0,2.0\n1,2e-4,2.5,0.9,1.6\n2,3e-4,2.0,0.8,1.2\n";

#[test]
fn plot_without_curves_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fryshort(&["plot", "--run", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("plots").exists());
}

#[test]
fn plot_header_only_curves_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    write_metrics(tmp.path(), "iter,lr,total,loss_seg\n");
    let out = fryshort(&["plot", "--run", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("plots").exists());
}

#[test]
fn plot_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_metrics(&a, CURVES);
    write_metrics(&b, CURVES);
    ok(fryshort(&["plot", "--run", a.to_str().unwrap()]));
    ok(fryshort(&["plot", "--run", b.to_str().unwrap()]));
    for f in ["loss_curves.svg", "mae_test.svg"] {
        let x = std::fs::read(a.join("plots").join(f)).unwrap();
        let y = std::fs::read(b.join("plots").join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}
