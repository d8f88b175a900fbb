//! Drives the model over a clip in one left-to-right sweep.

use crate::error::{Error, Result};
use crate::model::{backward_accumulate, forward, ActivationTrace, Mode, ParamGrads, Parameters};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenPair<T = f32> {
    pub h_fwd: Tensor<T>,
    pub h_bwd: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ClipRun<T = f32> {
    pub outputs: Vec<Tensor<T>>,
    pub final_state: HiddenPair<T>,
    /// Number of model evaluations performed.
    pub steps: usize,
    /// One trace per step in train mode, empty otherwise.
    pub traces: Vec<ActivationTrace<T>>,
}

/// `(prev, cur, next)` around frame `i`, replicating the first and last
/// frames at the clip boundaries.
pub fn window_at<F>(clip: &[F], i: usize) -> Result<(&F, &F, &F)> {
    if i >= clip.len() {
        return Err(Error::Contract(format!(
            "window index {i} outside clip of length {}",
            clip.len()
        )));
    }
    let prev = &clip[i.saturating_sub(1)];
    let next = &clip[(i + 1).min(clip.len() - 1)];
    Ok((prev, &clip[i], next))
}

/// Runs the network over `frames` (each `(B, 3, H, W)`), starting from zero
/// hidden states.
pub fn run_frames<T: Real>(
    params: &Parameters<T>,
    frames: &[Tensor<T>],
    mode: Mode,
) -> Result<ClipRun<T>> {
    let Some(first) = frames.first() else {
        return Err(Error::Contract("clip must contain at least one frame".into()));
    };
    let s = first.shape();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != s) {
        return Err(Error::Shape {
            op: "run_clip",
            detail: format!("frame {i} is {} but frame 0 is {s}", f.shape()),
        });
    }
    let hidden = s.with_channels(params.config().channels);
    let mut state = HiddenPair {
        h_fwd: Tensor::zeros(hidden),
        h_bwd: Tensor::zeros(hidden),
    };
    let mut outputs = Vec::with_capacity(frames.len());
    let mut traces = Vec::new();
    let mut steps = 0;
    for i in 0..frames.len() {
        let (prev, cur, next) = window_at(frames, i)?;
        let out = forward(params, prev, cur, next, &state.h_fwd, &state.h_bwd, mode)?;
        steps += 1;
        state = HiddenPair {
            h_fwd: out.h_fwd_next,
            h_bwd: out.h_bwd_next,
        };
        outputs.push(out.y);
        if mode == Mode::Train {
            traces.push(out.trace);
        }
    }
    Ok(ClipRun {
        outputs,
        final_state: state,
        steps,
        traces,
    })
}

/// Backpropagation through time over a train-mode run. `grads_y[t]` is the
/// loss cotangent of output `t`; the final hidden states receive none.
pub fn backward_through_time<T: Real>(
    params: &Parameters<T>,
    run: &ClipRun<T>,
    grads_y: &[Tensor<T>],
) -> Result<ParamGrads<T>> {
    if run.traces.len() != run.outputs.len() || grads_y.len() != run.outputs.len() {
        return Err(Error::Contract(format!(
            "BPTT needs one trace and one output gradient per step ({} steps, {} traces, {} grads)",
            run.outputs.len(),
            run.traces.len(),
            grads_y.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut carry: Option<(Tensor<T>, Tensor<T>)> = None;
    for t in (0..run.traces.len()).rev() {
        let (gf, gb) = backward_accumulate(
            params,
            &run.traces[t],
            &grads_y[t],
            carry.as_ref().map(|c| &c.0),
            carry.as_ref().map(|c| &c.1),
            &mut grads,
        )?;
        carry = Some((gf, gb));
    }
    Ok(grads)
}
