//! The sliding-window recurrent network.
//!
//! Per step the network sees three consecutive LR frames and two hidden
//! states:
//!
//! ```text
//! fea_fwd = f1(concat(x_prev, x_cur, h_fwd))
//! fea_bwd = f2(concat(x_next, x_cur, h_bwd))
//! y       = depth_to_space(f3(concat(fea_fwd, fea_bwd))) + bilinear_x4(x_cur)
//! h_fwd'  = relu(conv(fea_fwd)),   h_bwd' = relu(conv(fea_bwd))
//! ```
//!
//! Every conv is 3x3 and followed by ReLU except the last conv of `f3`, which
//! emits 48 signed residual maps. The ablation variants drop the hidden state
//! (`SlidingWindow`) or the neighbouring frames as well (`Baseline`, a plain
//! head-only network on the current frame).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    bilinear_upsample_x4, concat_channels, conv2d_backward, conv2d_forward, depth_to_space_x4, relu_backward, relu_inplace, slice_channels,
    space_to_depth_x4, split_channels, ConvKernel, SCALE,
};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    SlidingWindow,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::SlidingWindow, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SlidingWindow => "sliding_window",
            Variant::Full => "full",
        }
    }

    pub fn uses_neighbours(self) -> bool {
        self != Variant::Baseline
    }

    pub fn uses_hidden(self) -> bool {
        self == Variant::Full
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub color_channels: usize,
    pub scale: usize,
    pub layers_f1: usize,
    pub layers_f2: usize,
    pub layers_f3: usize,
    pub hidden_update_layers: usize,
    /// Depth of the single-branch `Baseline` network.
    pub baseline_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            channels: 16,
            color_channels: 3,
            scale: 4,
            layers_f1: 4,
            layers_f2: 4,
            layers_f3: 4,
            hidden_update_layers: 2,
            baseline_layers: 9,
        }
    }
}

impl ModelConfig {
    pub fn with_channels(channels: usize) -> Self {
        ModelConfig {
            channels,
            ..Default::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.color_channels != 3 {
            return fail(format!("color_channels must be 3, got {}", self.color_channels));
        }
        if self.scale != SCALE {
            return fail(format!("scale must be {SCALE}, got {}", self.scale));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if self.layers_f1 == 0 || self.layers_f2 == 0 || self.layers_f3 == 0 {
            return fail("every branch needs at least one layer".into());
        }
        if self.baseline_layers == 0 {
            return fail("baseline_layers must be >= 1".into());
        }
        if self.hidden_update_layers != 2 {
            return fail(format!(
                "hidden_update_layers is fixed at 2 (one per direction), got {}",
                self.hidden_update_layers
            ));
        }
        if self.variant == Variant::Full {
            let total = self.layers_f1 + self.layers_f2 + self.layers_f3 + self.hidden_update_layers;
            if total != 14 {
                return fail(format!("full variant must have 14 conv layers, got {total}"));
            }
        }
        Ok(())
    }

    /// Maps emitted by the last head conv: `color * scale^2`.
    pub fn head_channels(&self) -> usize {
        self.color_channels * self.scale * self.scale
    }

    /// Layer wiring in declared order (f1, f2, f3, h_fwd_update, h_bwd_update).
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = self.channels;
        let color = self.color_channels;
        let mut specs = Vec::new();
        let mut chain = |group, n: usize, input: usize, last: Option<usize>| {
            for index in 0..n {
                let is_last = index + 1 == n;
                let (out, relu) = match last {
                    Some(out) if is_last => (out, false),
                    _ => (c, true),
                };
                specs.push(LayerSpec {
                    group,
                    index,
                    in_channels: if index == 0 { input } else { c },
                    out_channels: out,
                    relu,
                });
            }
        };
        match self.variant {
            Variant::Baseline => {
                chain(Group::F3, self.baseline_layers, color, Some(self.head_channels()));
            }
            Variant::SlidingWindow | Variant::Full => {
                let hidden = if self.variant == Variant::Full { c } else { 0 };
                chain(Group::F1, self.layers_f1, 2 * color + hidden, None);
                chain(Group::F2, self.layers_f2, 2 * color + hidden, None);
                chain(Group::F3, self.layers_f3, 2 * c, Some(self.head_channels()));
                if self.variant == Variant::Full {
                    chain(Group::HiddenFwd, 1, c, None);
                    chain(Group::HiddenBwd, 1, c, None);
                }
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    F1,
    F2,
    F3,
    HiddenFwd,
    HiddenBwd,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::F1, Group::F2, Group::F3, Group::HiddenFwd, Group::HiddenBwd];

    pub fn name(self) -> &'static str {
        match self {
            Group::F1 => "f1",
            Group::F2 => "f2",
            Group::F3 => "f3",
            Group::HiddenFwd => "h_fwd_update",
            Group::HiddenBwd => "h_bwd_update",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub group: Group,
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        9 * self.in_channels * self.out_channels + self.out_channels
    }

    pub fn name(&self) -> String {
        format!("{}[{}]", self.group.name(), self.index)
    }
}

/// Conv kernels in declared group order. Also used as the gradient and
/// optimizer-moment container, since those mirror the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T = f32> {
    config: ModelConfig,
    specs: Vec<LayerSpec>,
    layers: Vec<ConvKernel<T>>,
}

pub type ParamGrads<T = f32> = Parameters<T>;

impl<T: Real> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        let layers = specs
            .iter()
            .map(|s| ConvKernel::zeros(s.out_channels, s.in_channels))
            .collect();
        Ok(Parameters {
            config: config.clone(),
            specs,
            layers,
        })
    }

    /// Builds parameters from kernels in declared order, validating widths.
    pub fn from_layers(config: &ModelConfig, layers: Vec<ConvKernel<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return Err(Error::Contract(format!(
                "config declares {} layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for (s, k) in specs.iter().zip(&layers) {
            if (k.out_channels(), k.in_channels()) != (s.out_channels, s.in_channels) {
                return Err(Error::Shape {
                    op: "Parameters::from_layers",
                    detail: format!(
                        "layer {} expects ({}, {}, 3, 3), got ({}, {}, 3, 3)",
                        s.name(),
                        s.out_channels,
                        s.in_channels,
                        k.out_channels(),
                        k.in_channels()
                    ),
                });
            }
        }
        Ok(Parameters {
            config: config.clone(),
            specs,
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            config: self.config.clone(),
            specs: self.specs.clone(),
            layers: self
                .specs
                .iter()
                .map(|s| ConvKernel::zeros(s.out_channels, s.in_channels))
                .collect(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[ConvKernel<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvKernel<T>] {
        &mut self.layers
    }

    fn group_range(&self, g: Group) -> std::ops::Range<usize> {
        let start = self.specs.iter().position(|s| s.group == g).unwrap_or(0);
        let len = self.specs.iter().filter(|s| s.group == g).count();
        start..start + len
    }

    pub fn group(&self, g: Group) -> &[ConvKernel<T>] {
        &self.layers[self.group_range(g)]
    }

    pub fn group_specs(&self, g: Group) -> &[LayerSpec] {
        &self.specs[self.group_range(g)]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvKernel::param_count).sum()
    }

    /// Flat views in serialization order: per layer, weights then bias.
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|k| [k.weights.as_slice(), k.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|k| [k.weights.as_mut_slice(), k.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(ConvKernel::is_finite)
    }

    pub fn add_assign(&mut self, other: &Parameters<T>) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for s in self.slices_mut() {
            for x in s {
                *x *= k;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            specs: self.specs.clone(),
            layers: self.layers.iter().map(ConvKernel::cast).collect(),
        }
    }
}

/// Init gain on the output conv (the only layer without ReLU). At full He
/// scale the initial residual is O(1), and the first Adam steps then push
/// whole ReLU layers of the head below zero for good.
pub const OUTPUT_INIT_GAIN: f64 = 0.1;

/// He-normal weights (std = sqrt(2 / (9 * in_channels))), scaled by
/// [`OUTPUT_INIT_GAIN`] on the output conv; zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Parameters<f32>> {
    let mut params = Parameters::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (spec, k) in params.specs.clone().iter().zip(params.layers.iter_mut()) {
        let mut std = (2.0 / (9.0 * spec.in_channels as f64)).sqrt();
        if !spec.relu {
            std *= OUTPUT_INIT_GAIN;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in k.weights.iter_mut() {
            *w = normal.sample(&mut rng) as f32;
        }
    }
    Ok(params)
}

pub fn param_count<T: Real>(params: &Parameters<T>) -> usize {
    params.param_count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Intermediate activations of one forward step, kept for the backward pass.
///
/// Each chain stores the input of every layer followed by the chain output,
/// all post-activation. Empty in inference mode.
#[derive(Clone, Debug)]
pub struct ActivationTrace<T = f32> {
    f1: Vec<Tensor<T>>,
    f2: Vec<Tensor<T>>,
    f3: Vec<Tensor<T>>,
    h_fwd: Option<Tensor<T>>,
    h_bwd: Option<Tensor<T>>,
}

impl<T> Default for ActivationTrace<T> {
    fn default() -> Self {
        ActivationTrace {
            f1: Vec::new(),
            f2: Vec::new(),
            f3: Vec::new(),
            h_fwd: None,
            h_bwd: None,
        }
    }
}

impl<T: Real> ActivationTrace<T> {
    pub fn is_empty(&self) -> bool {
        self.f3.is_empty()
    }

    /// Forward features `fea_fwd` (output of f1), if traced.
    pub fn fea_fwd(&self) -> Option<&Tensor<T>> {
        self.f1.last()
    }

    pub fn fea_bwd(&self) -> Option<&Tensor<T>> {
        self.f2.last()
    }

    /// Pre-upsampling head output (48 residual maps).
    pub fn head(&self) -> Option<&Tensor<T>> {
        self.f3.last()
    }

    /// Layer inputs of a group followed by its output. Hidden-update groups
    /// yield `[fea, h_next]`; empty when the group did not run.
    pub fn group_activations(&self, g: Group) -> Vec<&Tensor<T>> {
        let (fea, h) = match g {
            Group::F1 => return self.f1.iter().collect(),
            Group::F2 => return self.f2.iter().collect(),
            Group::F3 => return self.f3.iter().collect(),
            Group::HiddenFwd => (self.fea_fwd(), self.h_fwd.as_ref()),
            Group::HiddenBwd => (self.fea_bwd(), self.h_bwd.as_ref()),
        };
        match (fea, h) {
            (Some(f), Some(h)) => vec![f, h],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput<T = f32> {
    pub y: Tensor<T>,
    pub h_fwd_next: Tensor<T>,
    pub h_bwd_next: Tensor<T>,
    pub trace: ActivationTrace<T>,
}

fn layer_error(spec: &LayerSpec, e: Error) -> Error {
    Error::Shape {
        op: "forward",
        detail: format!("layer {}: {e}", spec.name()),
    }
}

fn run_chain<T: Real>(
    layers: &[ConvKernel<T>],
    specs: &[LayerSpec],
    input: Tensor<T>,
    trace: Option<&mut Vec<Tensor<T>>>,
) -> Result<Tensor<T>> {
    let mut x = input;
    let mut acts = trace;
    for (k, spec) in layers.iter().zip(specs) {
        let mut y = conv2d_forward(&x, k).map_err(|e| layer_error(spec, e))?;
        if spec.relu {
            relu_inplace(&mut y);
        }
        let prev = std::mem::replace(&mut x, y);
        if let Some(a) = acts.as_mut() {
            a.push(prev);
        }
    }
    if let Some(a) = acts {
        a.push(x.clone());
    }
    Ok(x)
}

fn check_frame<T: Real>(name: &str, t: &Tensor<T>, expected: Shape) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("{name} is {} but expected {expected}", t.shape()),
        });
    }
    Ok(())
}

/// One network evaluation. `h_fwd`/`h_bwd` are ignored (and may have any
/// shape) unless the variant uses hidden state; returned next states are
/// zeros for those variants.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Real>(
    params: &Parameters<T>,
    x_prev: &Tensor<T>,
    x_cur: &Tensor<T>,
    x_next: &Tensor<T>,
    h_fwd: &Tensor<T>,
    h_bwd: &Tensor<T>,
    mode: Mode,
) -> Result<StepOutput<T>> {
    let cfg = &params.config;
    let s = x_cur.shape();
    if s.channels != cfg.color_channels {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("x_cur {s} must have {} channels", cfg.color_channels),
        });
    }
    let keep = mode == Mode::Train;
    let mut trace = ActivationTrace::default();
    let hidden_shape = s.with_channels(cfg.channels);

    let (head_in, fea) = if cfg.variant.uses_neighbours() {
        check_frame("x_prev", x_prev, s)?;
        check_frame("x_next", x_next, s)?;
        let (in_f, in_b) = if cfg.variant.uses_hidden() {
            check_frame("h_fwd", h_fwd, hidden_shape)?;
            check_frame("h_bwd", h_bwd, hidden_shape)?;
            (
                concat_channels(&[x_prev, x_cur, h_fwd])?,
                concat_channels(&[x_next, x_cur, h_bwd])?,
            )
        } else {
            (
                concat_channels(&[x_prev, x_cur])?,
                concat_channels(&[x_next, x_cur])?,
            )
        };
        let fea_f = run_chain(
            params.group(Group::F1),
            params.group_specs(Group::F1),
            in_f,
            keep.then_some(&mut trace.f1),
        )?;
        let fea_b = run_chain(
            params.group(Group::F2),
            params.group_specs(Group::F2),
            in_b,
            keep.then_some(&mut trace.f2),
        )?;
        (concat_channels(&[&fea_f, &fea_b])?, Some((fea_f, fea_b)))
    } else {
        (x_cur.clone(), None)
    };

    let head = run_chain(
        params.group(Group::F3),
        params.group_specs(Group::F3),
        head_in,
        keep.then_some(&mut trace.f3),
    )?;
    let y = depth_to_space_x4(&head)?.add(&bilinear_upsample_x4(x_cur))?;

    let (h_fwd_next, h_bwd_next) = match fea {
        Some((fea_f, fea_b)) if cfg.variant.uses_hidden() => {
            let update = |g: Group, fea: &Tensor<T>| -> Result<Tensor<T>> {
                let spec = &params.group_specs(g)[0];
                let mut h = conv2d_forward(fea, &params.group(g)[0]).map_err(|e| layer_error(spec, e))?;
                relu_inplace(&mut h);
                Ok(h)
            };
            let hf = update(Group::HiddenFwd, &fea_f)?;
            let hb = update(Group::HiddenBwd, &fea_b)?;
            if keep {
                trace.h_fwd = Some(hf.clone());
                trace.h_bwd = Some(hb.clone());
            }
            (hf, hb)
        }
        _ => (Tensor::zeros(hidden_shape), Tensor::zeros(hidden_shape)),
    };

    Ok(StepOutput {
        y,
        h_fwd_next,
        h_bwd_next,
        trace,
    })
}

/// Backward through one chain. Accumulates kernel gradients into `grads`
/// and returns the gradient of the chain input when `need_input` is set.
fn chain_backward<T: Real>(
    layers: &[ConvKernel<T>],
    specs: &[LayerSpec],
    acts: &[Tensor<T>],
    grad_out: Tensor<T>,
    grads: &mut [ConvKernel<T>],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let mut g = grad_out;
    for k in (0..layers.len()).rev() {
        if specs[k].relu {
            g = relu_backward(&acts[k + 1], &g)?;
        }
        if k == 0 && !need_input {
            let cg = conv2d_backward(&acts[0], &layers[0], &g)?;
            add_kernel(&mut grads[0], &cg.kernel);
            return Ok(None);
        }
        let cg = conv2d_backward(&acts[k], &layers[k], &g)?;
        add_kernel(&mut grads[k], &cg.kernel);
        g = cg.input;
    }
    Ok(Some(g))
}

fn add_kernel<T: Real>(acc: &mut ConvKernel<T>, g: &ConvKernel<T>) {
    for (a, &b) in acc.weights.iter_mut().zip(&g.weights) {
        *a += b;
    }
    for (a, &b) in acc.bias.iter_mut().zip(&g.bias) {
        *a += b;
    }
}

/// Gradients of one step for cotangents on `y` and on both next hidden
/// states. Returns `(param grads, grad_h_fwd, grad_h_bwd)`.
pub fn backward<T: Real>(
    params: &Parameters<T>,
    trace: &ActivationTrace<T>,
    grad_y: &Tensor<T>,
    grad_h_fwd_next: &Tensor<T>,
    grad_h_bwd_next: &Tensor<T>,
) -> Result<(ParamGrads<T>, Tensor<T>, Tensor<T>)> {
    let mut grads = params.zeros_like();
    let (gf, gb) = backward_accumulate(
        params,
        trace,
        grad_y,
        Some(grad_h_fwd_next),
        Some(grad_h_bwd_next),
        &mut grads,
    )?;
    Ok((grads, gf, gb))
}

/// As [`backward`], accumulating into `grads`. `None` hidden cotangents are
/// treated as zero.
pub fn backward_accumulate<T: Real>(
    params: &Parameters<T>,
    trace: &ActivationTrace<T>,
    grad_y: &Tensor<T>,
    grad_h_fwd_next: Option<&Tensor<T>>,
    grad_h_bwd_next: Option<&Tensor<T>>,
    grads: &mut ParamGrads<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if trace.is_empty() {
        return Err(Error::Contract(
            "backward needs an activation trace from a train-mode forward".into(),
        ));
    }
    let cfg = params.config.clone();
    let head = trace.f3.last().expect("non-empty trace");
    let lr_shape = head.shape();
    let hidden_shape = lr_shape.with_channels(cfg.channels);
    let expected_y = Shape::new(
        lr_shape.batch,
        cfg.color_channels,
        lr_shape.height * SCALE,
        lr_shape.width * SCALE,
    );
    if grad_y.shape() != expected_y {
        return Err(Error::Shape {
            op: "backward",
            detail: format!("grad_y {} vs output {expected_y}", grad_y.shape()),
        });
    }

    let grad_head = space_to_depth_x4(grad_y)?;
    let r3 = params.group_range(Group::F3);
    let g_head_in = chain_backward(
        &params.layers[r3.clone()],
        &params.specs[r3.clone()],
        &trace.f3,
        grad_head,
        &mut grads.layers[r3],
        cfg.variant.uses_neighbours(),
    )?;

    let zero_hidden = || Tensor::zeros(hidden_shape);
    let Some(g_head_in) = g_head_in else {
        return Ok((zero_hidden(), zero_hidden()));
    };
    let mut parts = split_channels(&g_head_in, &[cfg.channels, cfg.channels])?.into_iter();
    let mut g_fea_f = parts.next().expect("two parts");
    let mut g_fea_b = parts.next().expect("two parts");

    let hidden = cfg.variant.uses_hidden();
    if hidden {
        let mut hidden_update = |g: Group, h_out: Option<&Tensor<T>>, fea: &Tensor<T>, cot: Option<&Tensor<T>>, g_fea: &mut Tensor<T>| -> Result<()> {
            let Some(cot) = cot else { return Ok(()) };
            let h_out = h_out.ok_or_else(|| Error::Contract("trace lacks hidden outputs".into()))?;
            if cot.shape() != hidden_shape {
                return Err(Error::Shape {
                    op: "backward",
                    detail: format!("hidden cotangent {} vs {hidden_shape}", cot.shape()),
                });
            }
            let idx = params.group_range(g).start;
            let g_pre = relu_backward(h_out, cot)?;
            let cg = conv2d_backward(fea, &params.layers[idx], &g_pre)?;
            add_kernel(&mut grads.layers[idx], &cg.kernel);
            g_fea.add_assign(&cg.input)
        };
        hidden_update(
            Group::HiddenFwd,
            trace.h_fwd.as_ref(),
            trace.f1.last().expect("f1 traced"),
            grad_h_fwd_next,
            &mut g_fea_f,
        )?;
        hidden_update(
            Group::HiddenBwd,
            trace.h_bwd.as_ref(),
            trace.f2.last().expect("f2 traced"),
            grad_h_bwd_next,
            &mut g_fea_b,
        )?;
    }

    let mut branch = |g: Group, acts: &[Tensor<T>], cot: Tensor<T>| -> Result<Tensor<T>> {
        let r = params.group_range(g);
        let g_in = chain_backward(
            &params.layers[r.clone()],
            &params.specs[r.clone()],
            acts,
            cot,
            &mut grads.layers[r],
            hidden,
        )?;
        match g_in {
            Some(g_in) => slice_channels(&g_in, 2 * cfg.color_channels, cfg.channels),
            None => Ok(zero_hidden()),
        }
    };
    let gh_f = branch(Group::F1, &trace.f1, g_fea_f)?;
    let gh_b = branch(Group::F2, &trace.f2, g_fea_b)?;
    Ok((gh_f, gh_b))
}
