use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swrn::checkpoint::Checkpoint;
use swrn::data::{evaluate, frame_indices, load_clip, save_clip, synth_clip, DatasetManifest, SynthKind};
use swrn::{init_params, ModelConfig, Variant};

fn swrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swrn"))
        .args(args)
        .output()
        .expect("spawn swrn")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Two 3-frame 32x32 HR clips prepared into `root/data`.
fn prepared(root: &Path) -> PathBuf {
    let hr = root.join("hr");
    for (i, kind) in [SynthKind::BouncingRect, SynthKind::ScrollingText].into_iter().enumerate() {
        let clip = synth_clip(kind, 3, 32, i as u64).unwrap();
        save_clip(&clip, &hr.join(format!("clip{i}"))).unwrap();
    }
    let out = root.join("data");
    assert_ok(&swrn(&["prepare", "--hr", s(&hr), "--out", s(&out)]));
    out.join("manifest.json")
}

fn write_ckpt(path: &Path, channels: usize) {
    let params = init_params(&ModelConfig::with_channels(channels), 3).unwrap();
    Checkpoint::new(params).save(path).unwrap();
}

#[test]
fn prepare_writes_lr_frames_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = prepared(dir.path());
    let m = DatasetManifest::load(&manifest_path).unwrap();
    assert_eq!(m.scale, 4);
    assert_eq!(m.clips.len(), 2);
    for c in &m.clips {
        let lr = m.resolve(&c.lr);
        assert_eq!(frame_indices(&lr).unwrap(), c.frames);
        assert_eq!(frame_indices(&m.resolve(&c.hr)).unwrap(), c.frames);
        let s = load_clip(&lr).unwrap().frame_shape();
        assert_eq!((s.height, s.width), (8, 8));
    }
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let first = fs::read(&manifest).unwrap();
    let frame = dir.path().join("data/lr/clip0/frame_00000000.png");
    let frame_bytes = fs::read(&frame).unwrap();
    assert_ok(&swrn(&["prepare", "--hr", s(&dir.path().join("hr")), "--out", s(&dir.path().join("data"))]));
    assert_eq!(fs::read(&manifest).unwrap(), first);
    assert_eq!(fs::read(&frame).unwrap(), frame_bytes);
}

#[test]
fn prepare_rejects_indivisible_sizes_with_crop_hint() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr/odd");
    let frame = swrn::Tensor::<f32>::full(swrn::Shape::new(1, 3, 30, 32), 0.5);
    save_clip(&swrn::data::FrameSequence::new("odd", vec![frame]).unwrap(), &hr).unwrap();
    let o = swrn(&["prepare", "--hr", s(&dir.path().join("hr")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("28x32"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["bench"][..], &["frobnicate"], &["bench", "--ckpt", "x", "--size", "12"], &[]] {
        assert_eq!(swrn(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn contract_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.swrn");
    let o = swrn(&["bench", "--ckpt", s(&missing), "--size", "4x4", "--runs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.swrn");
    fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(swrn(&["bench", "--ckpt", s(&bad), "--size", "4x4"]).status.code(), Some(1));
}

#[test]
fn infer_matches_frame_count_and_scale() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let ckpt = dir.path().join("m.swrn");
    write_ckpt(&ckpt, 4);
    let lr = dir.path().join("data/lr/clip1");
    let out = dir.path().join("sr");
    assert_ok(&swrn(&["infer", "--ckpt", s(&ckpt), "--in", s(&lr), "--out", s(&out)]));
    let seq = load_clip(&out).unwrap();
    assert_eq!(seq.len(), 3);
    let sh = seq.frame_shape();
    assert_eq!((sh.height, sh.width), (32, 32));
    let o = swrn(&["infer", "--ckpt", s(&ckpt), "--in", s(&lr), "--out", s(&out), "--quantized"]);
    assert_eq!(o.status.code(), Some(1), "float-only checkpoint has no INT8 section");
    drop(manifest);
}

#[test]
fn eval_equals_in_process_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let ckpt = dir.path().join("m.swrn");
    write_ckpt(&ckpt, 4);
    let csv_path = dir.path().join("eval.csv");
    let o = swrn(&["eval", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--out", s(&csv_path)]);
    assert_ok(&o);
    let params = Checkpoint::load(&ckpt).unwrap().params;
    let want = evaluate(&params, &DatasetManifest::load(&manifest).unwrap()).unwrap().to_csv();
    assert_eq!(stdout(&o), want);
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), want);
}

#[test]
fn quantize_then_quantized_eval_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let ckpt = dir.path().join("m.swrn");
    write_ckpt(&ckpt, 4);
    let q = dir.path().join("q.swrn");
    let o = swrn(&["quantize", "--ckpt", s(&ckpt), "--calib", s(&manifest), "--out", s(&q)]);
    assert_ok(&o);
    assert!(stdout(&o).starts_with("quantized_vs_float_psnr_db,"));
    let loaded = Checkpoint::load(&q).unwrap();
    assert!(loaded.quant.is_some());
    assert_eq!(loaded.params, Checkpoint::load(&ckpt).unwrap().params);

    let o = swrn(&["eval", "--ckpt", s(&q), "--manifest", s(&manifest), "--quantized"]);
    assert_ok(&o);
    assert!(stdout(&o).lines().last().unwrap().starts_with("ALL,6,"));

    let q2 = dir.path().join("q2.swrn");
    let calib_dir = dir.path().join("data/lr");
    assert_ok(&swrn(&["quantize", "--ckpt", s(&ckpt), "--calib", s(&calib_dir), "--out", s(&q2)]));
    assert_eq!(fs::read(&q2).unwrap(), fs::read(&q).unwrap(), "same LR clips, same calibration");
    let q3 = dir.path().join("q3.swrn");
    let one_clip = dir.path().join("data/lr/clip0");
    assert_ok(&swrn(&["quantize", "--ckpt", s(&ckpt), "--calib", s(&one_clip), "--out", s(&q3)]));
}

fn write_config(root: &Path, manifest: &Path, iters: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "model": {"channels": 4},
        "train": {"batch_size": 2, "crop": 4, "clip_len": 3, "total_iters": iters, "log_every": 1, "checkpoint_every": 2},
        "data": {"train_manifest": manifest, "test_manifest": manifest},
        "output": {"dir": "run"},
        "seed": 5,
        "ablation": {"bench_runs": 1}
    });
    let path = root.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let cfg = write_config(dir.path(), &manifest, 3);
    let o = swrn(&["train", "--config", s(&cfg)]);
    assert_ok(&o);
    let run = dir.path().join("run");
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("iter,lr,loss"));
    assert_eq!(out.lines().count(), 4);
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap(), out);
    for f in ["final.swrn", "ckpt_0000002.swrn", "eval.csv", "config.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let first = fs::read(run.join("final.swrn")).unwrap();
    assert_ok(&swrn(&["train", "--config", s(&cfg)]));
    assert_eq!(fs::read(run.join("final.swrn")).unwrap(), first);
    let ckpt = Checkpoint::load(&run.join("final.swrn")).unwrap();
    assert_eq!(ckpt.params.config().channels, 4);
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"data": {"train_manifest": "m"}, "output": {"dir": "o"}, "epochs": 3}"#).unwrap();
    let o = swrn(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));
}

#[test]
fn ablate_reports_every_variant_with_ordered_param_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path());
    let cfg = write_config(dir.path(), &manifest, 2);
    let o = swrn(&["ablate", "--config", s(&cfg)]);
    assert_ok(&o);
    let out = stdout(&o);
    assert_eq!(fs::read_to_string(dir.path().join("run/ablation.csv")).unwrap(), out);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(names, [Variant::Baseline.name(), Variant::SlidingWindow.name(), Variant::Full.name()]);
    let counts: Vec<usize> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
}

#[test]
fn ablate_param_counts_at_default_width_match_reference_bands() {
    for (v, reference) in [(Variant::Baseline, 24_000.0), (Variant::SlidingWindow, 34_000.0), (Variant::Full, 43_000.0)] {
        let n = ModelConfig::default().with_variant(v).param_count() as f64;
        assert!((n - reference).abs() / reference <= 0.10, "{v:?}: {n}");
    }
}

#[test]
fn bench_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.swrn");
    write_ckpt(&ckpt, 4);
    let o = swrn(&["bench", "--ckpt", s(&ckpt), "--size", "8x12", "--runs", "2", "--warmups", "1"]);
    assert_ok(&o);
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("size,runs,warmups,mean_ms,min_ms,max_ms"));
    assert!(lines.next().unwrap().starts_with("8x12,2,1,"));
}

#[test]
fn synth_then_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    assert_ok(&swrn(&["synth", "--out", s(&out), "--clips", "2", "--frames", "2", "--size", "16"]));
    let m = DatasetManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.clips.len(), 2);
    assert_eq!(swrn(&["synth", "--out", s(&out), "--kind", "nope"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = swrn(&["gradcheck"]);
    assert_ok(&o);
    assert!(stdout(&o).lines().all(|l| l.starts_with("ok")));
}
