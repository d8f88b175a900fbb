use crate::error::{shape_err, Error, Result};
use crate::model::{Mode, Parameters};
use crate::recurrence::run_frames;
use crate::tensor::{Real, Tensor};

use super::{ClipPair, DatasetManifest};

/// `10 log10(1 / mse)` over all elements after clamping both inputs to
/// `[0, 1]`. Identical inputs give `f64::INFINITY`.
pub fn psnr<T: Real>(pred: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return shape_err("psnr", format!("{} vs {}", pred.shape(), reference.shape()));
    }
    let clamp = |v: T| v.to_f64_lossy().clamp(0.0, 1.0);
    let sse: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| {
            let d = clamp(a) - clamp(b);
            d * d
        })
        .sum();
    let mse = sse / pred.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipScore {
    pub clip_id: String,
    pub frames: usize,
    pub mean_psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by clip id.
    pub clips: Vec<ClipScore>,
    pub total_frames: usize,
    /// Mean of the per-clip means.
    pub mean_psnr_db: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip_id,frames,mean_psnr_db\n");
        for c in &self.clips {
            out.push_str(&format!("{},{},{:.4}\n", c.clip_id, c.frames, c.mean_psnr_db));
        }
        out.push_str(&format!("ALL,{},{:.4}\n", self.total_frames, self.mean_psnr_db));
        out
    }
}

/// Per-frame PSNR of one clip run at full length.
pub fn clip_psnrs(params: &Parameters<f32>, pair: &ClipPair) -> Result<Vec<f64>> {
    let run = run_frames(params, &pair.lr.frames, Mode::Infer)?;
    frame_psnrs(&run.outputs, pair)
}

fn frame_psnrs(outputs: &[Tensor<f32>], pair: &ClipPair) -> Result<Vec<f64>> {
    if outputs.len() != pair.hr.len() {
        return Err(Error::Contract(format!(
            "clip '{}': {} outputs for {} frames",
            pair.hr.clip_id,
            outputs.len(),
            pair.hr.len()
        )));
    }
    outputs
        .iter()
        .zip(&pair.hr.frames)
        .map(|(y, hr)| psnr(&y.clamp01(), hr))
        .collect()
}

pub fn evaluate_pairs(params: &Parameters<f32>, pairs: &[ClipPair]) -> Result<EvalReport> {
    evaluate_pairs_with(pairs, &mut |frames| Ok(run_frames(params, frames, Mode::Infer)?.outputs))
}

/// Evaluation with any clip runner mapping LR frames to HR outputs.
pub fn evaluate_pairs_with(
    pairs: &[ClipPair],
    run: &mut dyn FnMut(&[Tensor<f32>]) -> Result<Vec<Tensor<f32>>>,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut clips = pairs
        .iter()
        .map(|pair| {
            let scores = frame_psnrs(&run(&pair.lr.frames)?, pair)?;
            Ok(ClipScore {
                clip_id: pair.hr.clip_id.clone(),
                frames: scores.len(),
                mean_psnr_db: scores.iter().sum::<f64>() / scores.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let total_frames = clips.iter().map(|c| c.frames).sum();
    let mean_psnr_db = clips.iter().map(|c| c.mean_psnr_db).sum::<f64>() / clips.len() as f64;
    Ok(EvalReport {
        clips,
        total_frames,
        mean_psnr_db,
    })
}

pub fn evaluate(params: &Parameters<f32>, manifest: &DatasetManifest) -> Result<EvalReport> {
    if manifest.scale != params.config().scale {
        return Err(Error::Config(format!(
            "manifest scale {} does not match model scale {}",
            manifest.scale,
            params.config().scale
        )));
    }
    let pairs = manifest.load_pairs()?;
    evaluate_pairs(params, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn identical_is_infinite() {
        let t = Tensor::full(Shape::new(1, 3, 4, 4), 0.3f32);
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
    }

    #[test]
    fn analytic_values() {
        let s = Shape::new(1, 3, 8, 8);
        let a = Tensor::full(s, 0.6f64);
        let b = Tensor::full(s, 0.5f64);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        let half = Tensor::full(s, 0.5f32);
        let zero = Tensor::zeros(s);
        assert!((psnr(&half, &zero).unwrap() - 6.0206).abs() < 1e-4);
        assert!(psnr(&half, &Tensor::zeros(Shape::new(1, 3, 8, 7))).is_err());
    }

    #[test]
    fn symmetric_and_monotone() {
        let s = Shape::new(1, 3, 4, 4);
        let r = Tensor::from_fn(s, |_, c, y, x| ((c + y + x) % 5) as f32 / 5.0);
        let p = r.map(|v| (v + 0.05).min(1.0));
        assert_eq!(psnr(&p, &r).unwrap(), psnr(&r, &p).unwrap());
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let r = Tensor::full(s, 0.2f32);
            let v = psnr(&r.map(|v| v + 0.05 * k as f32), &r).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn clamps_before_comparing() {
        let s = Shape::new(1, 1, 2, 2);
        let over = Tensor::full(s, 1.7f32);
        let one = Tensor::full(s, 1.0f32);
        assert_eq!(psnr(&over, &one).unwrap(), f64::INFINITY);
    }
}
