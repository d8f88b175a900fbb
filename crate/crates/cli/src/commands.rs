use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use swrn::ablation::run_ablation;
use swrn::bench::bench_steps;
use swrn::checkpoint::Checkpoint;
use swrn::data::{
    evaluate_pairs_with, frame_file_name, load_clip, psnr, save_clip, synth_clip, ClipPair,
    DatasetManifest, EvalReport, FrameSequence, ManifestClip, SynthKind,
};
use swrn::gradcheck::run_suites;
use swrn::quant::{calibrate, quantize_model};
use swrn::recurrence::run_frames;
use swrn::training::{self, TrainEvent};
use swrn::Mode;

use crate::config::RunConfig;

pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size '{s}': {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got '{s}'"));
    }
    Ok((h, w))
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn dir_name(p: &Path) -> Result<String> {
    p.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .ok_or_else(|| anyhow!("{} has no usable directory name", p.display()))
}

/// Writes `out/lr/<clip>/` for every clip directory under `hr` plus
/// `out/manifest.json`. HR directories are referenced by absolute path.
pub fn prepare(hr: &Path, out: &Path, scale: usize) -> Result<ExitCode> {
    if scale != 4 {
        bail!("only --scale 4 is supported, got {scale}");
    }
    let clips = sorted_subdirs(hr)?;
    if clips.is_empty() {
        bail!("{} contains no clip directories", hr.display());
    }
    let mut entries = Vec::new();
    for dir in clips {
        let id = dir_name(&dir)?;
        let seq = load_clip(&dir).with_context(|| format!("clip '{id}'"))?;
        let s = seq.frame_shape();
        if s.height % scale != 0 || s.width % scale != 0 {
            bail!(
                "clip '{id}': HR size {}x{} is not divisible by {scale}; center-crop it to {}x{} first",
                s.height,
                s.width,
                s.height / scale * scale,
                s.width / scale * scale
            );
        }
        let pair = ClipPair::from_hr(seq).with_context(|| format!("clip '{id}'"))?;
        let lr_rel = PathBuf::from("lr").join(&id);
        save_clip(&pair.lr, &out.join(&lr_rel))?;
        entries.push(ManifestClip {
            id,
            lr: lr_rel,
            hr: fs::canonicalize(&dir)?,
            frames: pair.hr.len(),
        });
        eprintln!("prepared {} ({} frames)", dir.display(), pair.hr.len());
    }
    let manifest = DatasetManifest {
        scale,
        clips: entries,
        base_dir: out.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(&out.join("manifest.json"))?;
    println!("{}", out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

/// Renders HR clips into `out/hr/<id>/` and prepares them like `prepare`.
pub fn synth(out: &Path, kind: Option<&str>, clips: usize, frames: usize, size: usize, seed: u64) -> Result<ExitCode> {
    if clips == 0 {
        bail!("--clips must be at least 1");
    }
    let kinds = match kind {
        Some(k) => vec![k.parse::<SynthKind>()?],
        None => vec![SynthKind::MovingGradient, SynthKind::ScrollingText, SynthKind::BouncingRect],
    };
    let hr_root = out.join("hr");
    for i in 0..clips {
        let clip = synth_clip(kinds[i % kinds.len()], frames, size, seed + i as u64)?;
        save_clip(&clip, &hr_root.join(&clip.clip_id))?;
    }
    prepare(&hr_root, out, 4)
}

fn load_params(ckpt: &Path) -> Result<Checkpoint> {
    Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))
}

pub fn train(config: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let manifest = DatasetManifest::load(&cfg.data.train_manifest)
        .with_context(|| format!("loading {}", cfg.data.train_manifest.display()))?;
    let data = manifest.load_pairs()?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!("iter,lr,loss");
    let trained = training::train(&cfg.model, &cfg.train, &data, &mut |event| {
        match event {
            TrainEvent::Log(r) => println!("{},{},{}", r.iter, r.lr, r.loss),
            TrainEvent::Checkpoint { iter, params } => {
                Checkpoint::new(params.clone()).save(&out.join(format!("ckpt_{iter:07}.swrn")))?;
            }
        }
        Ok(())
    })?;
    fs::write(out.join("loss.csv"), trained.report.to_csv())?;
    Checkpoint::new(trained.params.clone()).save(&out.join("final.swrn"))?;
    if let Some(test) = &cfg.data.test_manifest {
        let report = swrn::data::evaluate(&trained.params, &DatasetManifest::load(test)?)?;
        fs::write(out.join("eval.csv"), report.to_csv())?;
        eprintln!("test mean PSNR {:.4} dB", report.mean_psnr_db);
    }
    eprintln!("wrote {}", out.join("final.swrn").display());
    Ok(ExitCode::SUCCESS)
}

fn run_clip(ckpt: &Checkpoint, frames: &[swrn::Tensor<f32>], quantized: bool) -> Result<Vec<swrn::Tensor<f32>>> {
    if quantized {
        let q = ckpt
            .quant
            .as_ref()
            .ok_or_else(|| anyhow!("checkpoint has no INT8 section; run `swrn quantize` first"))?;
        Ok(q.run_frames(frames)?)
    } else {
        Ok(run_frames(&ckpt.params, frames, Mode::Infer)?.outputs)
    }
}

pub fn infer(ckpt: &Path, input: &Path, out: &Path, quantized: bool) -> Result<ExitCode> {
    let ckpt = load_params(ckpt)?;
    let clip = load_clip(input)?;
    let outputs = run_clip(&ckpt, &clip.frames, quantized)?
        .into_iter()
        .map(|y| y.clamp01())
        .collect();
    let seq = FrameSequence::new(clip.clip_id.clone(), outputs)?;
    save_clip(&seq, out)?;
    eprintln!("wrote {} frames to {}", seq.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval_report(ckpt: &Checkpoint, manifest: &Path, quantized: bool) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    if quantized {
        let q = ckpt
            .quant
            .as_ref()
            .ok_or_else(|| anyhow!("checkpoint has no INT8 section; run `swrn quantize` first"))?;
        let pairs = manifest.load_pairs()?;
        Ok(evaluate_pairs_with(&pairs, &mut |frames| q.run_frames(frames))?)
    } else {
        Ok(swrn::data::evaluate(&ckpt.params, &manifest)?)
    }
}

pub fn eval(ckpt: &Path, manifest: &Path, quantized: bool, out: Option<&Path>) -> Result<ExitCode> {
    let ckpt = load_params(ckpt)?;
    let csv = eval_report(&ckpt, manifest, quantized)?.to_csv();
    print!("{csv}");
    if let Some(out) = out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

/// LR calibration clips from a manifest file, a single clip directory, or a
/// directory of clip directories.
fn calibration_clips(path: &Path) -> Result<Vec<FrameSequence>> {
    if path.is_file() {
        let pairs = DatasetManifest::load(path)?.load_pairs()?;
        return Ok(pairs.into_iter().map(|p| p.lr).collect());
    }
    if path.join(frame_file_name(0)).is_file() {
        return Ok(vec![load_clip(path)?]);
    }
    let dirs = sorted_subdirs(path)?;
    if dirs.is_empty() {
        bail!("{} holds no frames or clip directories", path.display());
    }
    dirs.iter()
        .map(|d| load_clip(d).with_context(|| format!("loading {}", d.display())))
        .collect()
}

pub fn quantize(ckpt_path: &Path, calib: &Path, out: &Path) -> Result<ExitCode> {
    let ckpt = load_params(ckpt_path)?;
    let clips = calibration_clips(calib)?;
    let stats = calibrate(&ckpt.params, &clips)?;
    let q = quantize_model(&ckpt.params, &stats)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for clip in &clips {
        let float = run_frames(&ckpt.params, &clip.frames, Mode::Infer)?.outputs;
        let quant = q.run_frames(&clip.frames)?;
        for (f, q) in float.iter().zip(&quant) {
            sum += psnr(q, f)?;
            n += 1;
        }
    }
    Checkpoint::with_quant(ckpt.params, q)?.save(out)?;
    println!("quantized_vs_float_psnr_db,{:.4}", sum / n as f64);
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn bench(ckpt: &Path, (h, w): (usize, usize), runs: usize, warmups: usize) -> Result<ExitCode> {
    let ckpt = load_params(ckpt)?;
    let s = bench_steps(&ckpt.params, h, w, runs, warmups)?;
    println!("size,runs,warmups,mean_ms,min_ms,max_ms");
    println!("{h}x{w},{},{warmups},{:.3},{:.3},{:.3}", s.runs, s.mean_ms, s.min_ms, s.max_ms);
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(config: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let train_set = DatasetManifest::load(&cfg.data.train_manifest)?.load_pairs()?;
    let test_set = DatasetManifest::load(cfg.test_manifest()?)?.load_pairs()?;
    let report = run_ablation(
        &cfg.model,
        &cfg.train,
        &train_set,
        &test_set,
        cfg.ablation.bench_runs,
        &mut |v, iter, loss| eprintln!("{} iter {iter} loss {loss}", v.name()),
    )?;
    fs::create_dir_all(&cfg.output.dir)?;
    fs::write(cfg.output.dir.join("ablation.csv"), report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(seed: u64) -> Result<ExitCode> {
    let results = run_suites(seed)?;
    let mut ok = true;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{verdict:4} {:<40} rel_error {:.3e} (tol {:.0e})", r.name, r.rel_error, r.tolerance);
        ok &= r.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
