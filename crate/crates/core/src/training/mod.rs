//! Charbonnier loss, Adam with step-decay learning rate, random clip-patch
//! sampling and the training loop.

mod adam;
mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClipPair;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, Mode, Parameters};
use crate::ops::SCALE;
use crate::recurrence::{backward_through_time, run_frames};
use crate::tensor::{Real, Tensor};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use loss::charbonnier_loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// LR patch side.
    pub crop: usize,
    pub clip_len: usize,
    pub total_iters: usize,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub charbonnier_eps: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Loss records are kept every `log_every` iterations and at the end.
    pub log_every: usize,
    /// 0 disables periodic checkpoints; the final one is always emitted.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            crop: 64,
            clip_len: 10,
            total_iters: 250_000,
            base_lr: 1e-3,
            lr_halving_period: 50_000,
            charbonnier_eps: 1e-6,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("crop", self.crop),
            ("clip_len", self.clip_len),
            ("total_iters", self.total_iters),
            ("lr_halving_period", self.lr_halving_period),
            ("log_every", self.log_every),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("train.{name} must be >= 1")));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("train.base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::Config("train.charbonnier_eps must be > 0".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("train.adam_eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// `base_lr * 0.5^floor(iter / lr_halving_period)`.
pub fn lr_at(iter: usize, config: &TrainConfig) -> f64 {
    let halvings = (iter / config.lr_halving_period.max(1)).min(i32::MAX as usize) as i32;
    config.base_lr * 0.5f64.powi(halvings)
}

/// Time-major batch: `lr[t]` is `(B, 3, crop, crop)`, `hr[t]` the aligned
/// `(B, 3, 4 crop, 4 crop)` window.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatch {
    pub lr: Vec<Tensor<f32>>,
    pub hr: Vec<Tensor<f32>>,
    /// `(clip index, start frame, LR y, LR x)` per batch element.
    pub origins: Vec<(usize, usize, usize, usize)>,
}

pub fn check_dataset(data: &[ClipPair], config: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for pair in data {
        let s = pair.lr.frame_shape();
        if pair.lr.len() < config.clip_len {
            return Err(Error::Config(format!(
                "clip '{}' has {} frames, clip_len is {}",
                pair.lr.clip_id,
                pair.lr.len(),
                config.clip_len
            )));
        }
        if s.height < config.crop || s.width < config.crop {
            return Err(Error::Config(format!(
                "clip '{}' LR frames are {}x{}, smaller than crop {}",
                pair.lr.clip_id, s.height, s.width, config.crop
            )));
        }
    }
    Ok(())
}

/// Each element draws a clip, a start frame and one LR crop position
/// shared by all `clip_len` frames.
pub fn sample_batch(data: &[ClipPair], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<ClipBatch> {
    check_dataset(data, config)?;
    let (crop, len) = (config.crop, config.clip_len);
    let mut origins = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let clip = rng.gen_range(0..data.len());
        let pair = &data[clip];
        let s = pair.lr.frame_shape();
        let start = rng.gen_range(0..=pair.lr.len() - len);
        let y = rng.gen_range(0..=s.height - crop);
        let x = rng.gen_range(0..=s.width - crop);
        origins.push((clip, start, y, x));
    }
    let mut lr = Vec::with_capacity(len);
    let mut hr = Vec::with_capacity(len);
    for t in 0..len {
        let mut lr_parts = Vec::with_capacity(origins.len());
        let mut hr_parts = Vec::with_capacity(origins.len());
        for &(clip, start, y, x) in &origins {
            let pair = &data[clip];
            lr_parts.push(pair.lr.frames[start + t].crop(y, x, crop, crop)?);
            hr_parts.push(pair.hr.frames[start + t].crop(
                SCALE * y,
                SCALE * x,
                SCALE * crop,
                SCALE * crop,
            )?);
        }
        lr.push(Tensor::stack_batch(&lr_parts)?);
        hr.push(Tensor::stack_batch(&hr_parts)?);
    }
    Ok(ClipBatch { lr, hr, origins })
}

/// Mean Charbonnier over every frame of a clip batch, with per-frame output
/// cotangents.
pub fn sequence_loss<T: Real>(
    outputs: &[Tensor<T>],
    targets: &[Tensor<T>],
    eps: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::Contract(format!(
            "sequence_loss needs equal nonzero lengths, got {} outputs and {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let n = outputs.len() as f64;
    let inv = T::lit(1.0 / n);
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (y, t) in outputs.iter().zip(targets) {
        let (l, g) = charbonnier_loss(y, t, eps)?;
        total += l;
        grads.push(g.scale(inv));
    }
    Ok((total / n, grads))
}

/// Loss of one forward pass and its parameter gradients.
pub fn loss_and_grads<T: Real>(
    params: &Parameters<T>,
    lr: &[Tensor<T>],
    hr: &[Tensor<T>],
    eps: f64,
) -> Result<(f64, Parameters<T>)> {
    let run = run_frames(params, lr, Mode::Train)?;
    let (loss, grads_y) = sequence_loss(&run.outputs, hr, eps)?;
    let grads = backward_through_time(params, &run, &grads_y)?;
    Ok((loss, grads))
}

/// Full-length inference loss on one clip pair, no clamping.
pub fn clip_loss(params: &Parameters<f32>, pair: &ClipPair, eps: f64) -> Result<f64> {
    let run = run_frames(params, &pair.lr.frames, Mode::Infer)?;
    Ok(sequence_loss(&run.outputs, &pair.hr.frames, eps)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    /// Batch loss before the first update.
    pub initial_loss: f64,
    /// Batch loss of the last iteration, before its update.
    pub final_loss: f64,
    pub iters: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lr,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.iter, r.lr, r.loss));
        }
        out
    }
}

pub enum TrainEvent<'a> {
    Log(&'a LossRecord),
    /// Parameters after `iter` completed updates.
    Checkpoint { iter: usize, params: &'a Parameters<f32> },
}

pub struct Trained {
    pub params: Parameters<f32>,
    pub adam: AdamState<f32>,
    pub report: TrainReport,
}

fn group_snapshot(params: &Parameters<f32>) -> String {
    params
        .specs()
        .iter()
        .zip(params.layers())
        .map(|(s, l)| format!("{}={}", s.name(), l.weights.iter().fold(0.0f32, |m, v| m.max(v.abs()))))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Trains from `init_params(model, seed)`.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    data: &[ClipPair],
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Trained> {
    model.validate()?;
    let params = init_params(model, config.seed)?;
    train_from(params, config, data, on_event)
}

/// Deterministic for fixed inputs: batches come from a ChaCha8 stream
/// derived from `config.seed`, separate from the initialization stream.
pub fn train_from(
    mut params: Parameters<f32>,
    config: &TrainConfig,
    data: &[ClipPair],
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Trained> {
    config.validate()?;
    check_dataset(data, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let hyper = config.adam();
    let mut adam = AdamState::new(&params);
    let mut records = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for iter in 0..config.total_iters {
        let batch = sample_batch(data, config, &mut rng)?;
        let lr = lr_at(iter, config);
        let (loss, grads) = loss_and_grads(&params, &batch.lr, &batch.hr, config.charbonnier_eps)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "iteration {iter}: loss {loss} at lr {lr} (last finite {final_loss}); weight max-abs: {}",
                group_snapshot(&params)
            )));
        }
        if iter == 0 {
            initial_loss = loss;
        }
        final_loss = loss;
        if iter % config.log_every == 0 || iter + 1 == config.total_iters {
            let rec = LossRecord { iter, lr, loss };
            on_event(TrainEvent::Log(&rec))?;
            records.push(rec);
        }
        adam_step(&mut params, &grads, &mut adam, lr, &hyper)
            .map_err(|e| Error::Divergence(format!("iteration {iter}: {e}")))?;
        let done = iter + 1;
        if done == config.total_iters
            || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0)
        {
            on_event(TrainEvent::Checkpoint {
                iter: done,
                params: &params,
            })?;
        }
    }
    Ok(Trained {
        params,
        adam,
        report: TrainReport {
            records,
            initial_loss,
            final_loss,
            iters: config.total_iters,
        },
    })
}
