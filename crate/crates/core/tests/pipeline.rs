use swrn::checkpoint::Checkpoint;
use swrn::data::{evaluate, psnr, save_clip, synth_clip, ClipPair, DatasetManifest, ManifestClip, SynthKind};
use swrn::quant::{calibrate, quantize_model};
use swrn::recurrence::run_frames;
use swrn::training::{train, TrainConfig, TrainEvent};
use swrn::{Mode, ModelConfig};

#[test]
fn synth_train_quantize_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut clips = Vec::new();
    let mut pairs = Vec::new();
    for (i, kind) in [SynthKind::MovingGradient, SynthKind::BouncingRect].into_iter().enumerate() {
        let pair = ClipPair::from_hr(synth_clip(kind, 4, 32, i as u64).unwrap()).unwrap();
        let id = pair.hr.clip_id.clone();
        save_clip(&pair.lr, &dir.path().join("lr").join(&id)).unwrap();
        save_clip(&pair.hr, &dir.path().join("hr").join(&id)).unwrap();
        clips.push(ManifestClip {
            id: id.clone(),
            lr: format!("lr/{id}").into(),
            hr: format!("hr/{id}").into(),
            frames: 4,
        });
        pairs.push(pair);
    }
    let manifest = DatasetManifest {
        scale: 4,
        clips,
        base_dir: dir.path().into(),
    };
    let manifest_path = dir.path().join("manifest.json");
    manifest.save(&manifest_path).unwrap();
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let data = manifest.load_pairs().unwrap();

    let cfg = TrainConfig {
        batch_size: 2,
        crop: 4,
        clip_len: 4,
        total_iters: 6,
        log_every: 2,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    let mut checkpoints = Vec::new();
    let trained = train(&ModelConfig::with_channels(4), &cfg, &data, &mut |e| {
        if let TrainEvent::Checkpoint { iter, .. } = e {
            checkpoints.push(iter);
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(checkpoints, [3, 6]);
    assert_eq!(trained.report.records.iter().map(|r| r.iter).collect::<Vec<_>>(), [0, 2, 4, 5]);
    assert!(trained.params.is_finite());

    let lr: Vec<_> = data.iter().map(|p| p.lr.clone()).collect();
    let q = quantize_model(&trained.params, &calibrate(&trained.params, &lr).unwrap()).unwrap();
    let path = dir.path().join("model.swrn");
    Checkpoint::with_quant(trained.params.clone(), q).unwrap().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.params, trained.params);
    let q = loaded.quant.unwrap();

    let report = evaluate(&loaded.params, &manifest).unwrap();
    assert_eq!(report.total_frames, 8);
    assert_eq!(report.clips.len(), 2);
    let float = run_frames(&loaded.params, &pairs[0].lr.frames, Mode::Infer).unwrap().outputs;
    let quant = q.run_frames(&pairs[0].lr.frames).unwrap();
    for (f, qy) in float.iter().zip(&quant) {
        assert!(psnr(qy, f).unwrap() > 25.0);
    }
}
