//! Host wall-clock timing of single inference steps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{forward, Mode, Parameters};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_WARMUPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl BenchStats {
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::Config("benchmark needs at least one timed run".into()));
        }
        Ok(BenchStats {
            runs: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(0.0, f64::max),
        })
    }
}

/// Times `runs` recurrent inference steps on random `height`x`width` LR
/// frames after `warmups` untimed steps. Hidden states carry over between
/// steps as in a real clip.
pub fn bench_steps(
    params: &Parameters<f32>,
    height: usize,
    width: usize,
    runs: usize,
    warmups: usize,
) -> Result<BenchStats> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!("bad benchmark size {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = Shape::new(1, 3, height, width);
    let frames: Vec<Tensor<f32>> = (0..3)
        .map(|_| Tensor::from_fn(s, |_, _, _, _| rng.gen::<f32>()))
        .collect();
    let hidden = s.with_channels(params.config().channels);
    let (mut hf, mut hb) = (Tensor::zeros(hidden), Tensor::zeros(hidden));
    let mut samples = Vec::with_capacity(runs);
    for i in 0..warmups + runs {
        let start = Instant::now();
        let out = forward(params, &frames[0], &frames[1], &frames[2], &hf, &hb, Mode::Infer)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        hf = out.h_fwd_next;
        hb = out.h_bwd_next;
        if i >= warmups {
            samples.push(ms);
        }
    }
    BenchStats::from_samples(&samples)
}
