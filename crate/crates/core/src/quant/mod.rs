//! Post-training INT8 quantization: max-abs calibration, symmetric
//! per-tensor weight quantization and an integer-domain inference path.
//!
//! Activation sites are named after the tensors they observe:
//! `input` (LR frames), `<layer>.in` for every conv input, `h_fwd`/`h_bwd`
//! for the carried hidden states, `head` for the last conv output and
//! `output` for the final frame.

mod intconv;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::model::{forward, Group, LayerSpec, ModelConfig, Mode, Parameters};
use crate::ops::{bilinear_upsample_x4, concat_channels, depth_to_space_x4};
use crate::recurrence::window_at;
use crate::tensor::{Shape, Tensor};

use intconv::conv_i8;

pub const QMAX: i32 = 127;

/// `max_abs / 127`, or 1 for an all-zero tensor.
pub fn scale_for(max_abs: f32) -> f32 {
    if max_abs > 0.0 {
        max_abs / QMAX as f32
    } else {
        1.0
    }
}

/// `clamp(round(v / scale), -127, 127)` with rounding half away from zero.
pub fn quantize_value(v: f32, scale: f32) -> i8 {
    (v as f64 / scale as f64).round().clamp(-(QMAX as f64), QMAX as f64) as i8
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    pub shape: Shape,
    pub data: Vec<i8>,
    pub scale: f32,
}

impl QuantTensor {
    pub fn quantize(t: &Tensor<f32>, scale: f32) -> Self {
        QuantTensor {
            shape: t.shape(),
            data: t.data().iter().map(|&v| quantize_value(v, scale)).collect(),
            scale,
        }
    }

    pub fn zeros(shape: Shape, scale: f32) -> Self {
        QuantTensor {
            shape,
            data: vec![0; shape.numel()],
            scale,
        }
    }

    pub fn dequantize(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&q| q as f32 * self.scale).collect();
        Tensor::from_vec(self.shape, data).expect("length matches shape")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteStat {
    pub max_abs: f32,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationStats {
    pub sites: BTreeMap<String, SiteStat>,
}

impl CalibrationStats {
    pub fn observe(&mut self, site: &str, t: &Tensor<f32>) {
        let s = self.sites.entry(site.to_string()).or_default();
        s.max_abs = s.max_abs.max(t.max_abs());
        s.count += 1;
    }

    pub fn max_abs(&self, site: &str) -> Option<f32> {
        self.sites.get(site).map(|s| s.max_abs)
    }

    /// Frozen activation scales; fails if a site was never observed.
    pub fn scales(&self, sites: &[String]) -> Result<BTreeMap<String, f32>> {
        sites
            .iter()
            .map(|name| match self.sites.get(name) {
                Some(s) if s.count >= 1 => Ok((name.clone(), scale_for(s.max_abs))),
                _ => Err(Error::Config(format!("activation site '{name}' was not calibrated"))),
            })
            .collect()
    }
}

fn input_site(spec: &LayerSpec) -> String {
    format!("{}.in", spec.name())
}

/// Every activation site the quantized path needs for `config`.
pub fn activation_sites(config: &ModelConfig) -> Vec<String> {
    let mut sites = vec!["input".to_string()];
    sites.extend(config.layer_specs().iter().map(input_site));
    if config.variant.uses_hidden() {
        sites.push("h_fwd".into());
        sites.push("h_bwd".into());
    }
    sites.push("head".into());
    sites.push("output".into());
    sites
}

/// Runs float inference over every clip from zero hidden states and records
/// the running max-abs of every activation site.
pub fn calibrate(params: &Parameters<f32>, clips: &[FrameSequence]) -> Result<CalibrationStats> {
    if clips.is_empty() {
        return Err(Error::Config("calibration needs at least one clip".into()));
    }
    let cfg = params.config();
    let mut stats = CalibrationStats::default();
    for clip in clips {
        let s = clip.frame_shape();
        let hidden = s.with_channels(cfg.channels);
        let (mut hf, mut hb) = (Tensor::zeros(hidden), Tensor::zeros(hidden));
        for i in 0..clip.len() {
            let (prev, cur, next) = window_at(&clip.frames, i)?;
            stats.observe("input", cur);
            let out = forward(params, prev, cur, next, &hf, &hb, Mode::Train)?;
            for g in Group::ALL {
                let acts = out.trace.group_activations(g);
                for (spec, act) in params.group_specs(g).iter().zip(&acts) {
                    stats.observe(&input_site(spec), act);
                }
            }
            if cfg.variant.uses_hidden() {
                stats.observe("h_fwd", &out.h_fwd_next);
                stats.observe("h_bwd", &out.h_bwd_next);
            }
            if let Some(head) = out.trace.head() {
                stats.observe("head", head);
            }
            stats.observe("output", &out.y);
            hf = out.h_fwd_next;
            hb = out.h_bwd_next;
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    /// `(out, in, 3, 3)` row-major, like the float kernel.
    pub weights: Vec<i8>,
    pub weight_scale: f32,
    /// In units of `weight_scale * input_scale`.
    pub bias: Vec<i32>,
    pub input_scale: f32,
}

impl QuantLayer {
    pub fn dequantized_weights(&self) -> Vec<f32> {
        self.weights.iter().map(|&q| q as f32 * self.weight_scale).collect()
    }

    fn run(&self, input: &QuantTensor) -> Result<Tensor<f32>> {
        debug_assert_eq!(input.scale, self.input_scale);
        let acc = conv_i8(
            &input.data,
            input.shape,
            &self.weights,
            &self.bias,
            self.spec.out_channels,
            &self.spec.name(),
        )?;
        let k = self.weight_scale * self.input_scale;
        let mut out: Vec<f32> = acc.into_iter().map(|a| a as f32 * k).collect();
        if self.spec.relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Tensor::from_vec(input.shape.with_channels(self.spec.out_channels), out)
    }
}

/// Immutable INT8 model.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantModel {
    pub config: ModelConfig,
    pub layers: Vec<QuantLayer>,
    /// Activation scale per site.
    pub sites: BTreeMap<String, f32>,
}

pub fn quantize_weights(w: &[f32]) -> (Vec<i8>, f32) {
    let max_abs = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = scale_for(max_abs);
    (w.iter().map(|&v| quantize_value(v, scale)).collect(), scale)
}

pub fn quantize_model(params: &Parameters<f32>, stats: &CalibrationStats) -> Result<QuantModel> {
    let config = params.config().clone();
    let sites = stats.scales(&activation_sites(&config))?;
    let layers = params
        .specs()
        .iter()
        .zip(params.layers())
        .map(|(spec, k)| {
            let (weights, weight_scale) = quantize_weights(&k.weights);
            let input_scale = sites[&input_site(spec)];
            let unit = weight_scale as f64 * input_scale as f64;
            let bias = k
                .bias
                .iter()
                .map(|&b| {
                    let q = (b as f64 / unit).round();
                    if q.abs() > i32::MAX as f64 {
                        Err(Error::Overflow(format!(
                            "layer {}: bias {b} does not fit 32 bits at scale {unit:e}",
                            spec.name()
                        )))
                    } else {
                        Ok(q as i32)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(QuantLayer {
                spec: *spec,
                weights,
                weight_scale,
                bias,
                input_scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantModel {
        config,
        layers,
        sites,
    })
}

/// Hidden states carried between quantized steps.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantHidden {
    pub h_fwd: QuantTensor,
    pub h_bwd: QuantTensor,
}

impl QuantModel {
    fn group(&self, g: Group) -> impl Iterator<Item = &QuantLayer> {
        self.layers.iter().filter(move |l| l.spec.group == g)
    }

    fn site(&self, name: &str) -> f32 {
        self.sites.get(name).copied().unwrap_or(1.0)
    }

    pub fn zero_hidden(&self, frame: Shape) -> QuantHidden {
        let s = frame.with_channels(self.config.channels);
        QuantHidden {
            h_fwd: QuantTensor::zeros(s, self.site("h_fwd")),
            h_bwd: QuantTensor::zeros(s, self.site("h_bwd")),
        }
    }

    fn chain(&self, g: Group, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut x = input.clone();
        for layer in self.group(g) {
            let q = QuantTensor::quantize(&x, layer.input_scale);
            x = layer.run(&q)?;
        }
        Ok(x)
    }

    fn hidden_update(&self, g: Group, fea: &Tensor<f32>, site: &str) -> Result<QuantTensor> {
        let h = self.chain(g, fea)?;
        Ok(QuantTensor::quantize(&h, self.site(site)))
    }

    /// One quantized step, infer mode. Conv inputs are requantized to their
    /// calibrated site scales; the bilinear residual stays in float.
    pub fn forward(
        &self,
        x_prev: &Tensor<f32>,
        x_cur: &Tensor<f32>,
        x_next: &Tensor<f32>,
        hidden: &QuantHidden,
    ) -> Result<(Tensor<f32>, QuantHidden)> {
        let s = x_cur.shape();
        let variant = self.config.variant;
        for (name, t) in [("x_prev", x_prev), ("x_next", x_next)] {
            if variant.uses_neighbours() && t.shape() != s {
                return Err(Error::Shape {
                    op: "quantized_forward",
                    detail: format!("{name} is {} but x_cur is {s}", t.shape()),
                });
            }
        }
        let mut next = self.zero_hidden(s);
        let head_in = if variant.uses_neighbours() {
            let (in_f, in_b) = if variant.uses_hidden() {
                for h in [&hidden.h_fwd, &hidden.h_bwd] {
                    if h.shape != s.with_channels(self.config.channels) {
                        return Err(Error::Shape {
                            op: "quantized_forward",
                            detail: format!("hidden state is {} for frame {s}", h.shape),
                        });
                    }
                }
                let (hf, hb) = (hidden.h_fwd.dequantize(), hidden.h_bwd.dequantize());
                (
                    concat_channels(&[x_prev, x_cur, &hf])?,
                    concat_channels(&[x_next, x_cur, &hb])?,
                )
            } else {
                (concat_channels(&[x_prev, x_cur])?, concat_channels(&[x_next, x_cur])?)
            };
            let fea_f = self.chain(Group::F1, &in_f)?;
            let fea_b = self.chain(Group::F2, &in_b)?;
            if variant.uses_hidden() {
                next.h_fwd = self.hidden_update(Group::HiddenFwd, &fea_f, "h_fwd")?;
                next.h_bwd = self.hidden_update(Group::HiddenBwd, &fea_b, "h_bwd")?;
            }
            concat_channels(&[&fea_f, &fea_b])?
        } else {
            x_cur.clone()
        };
        let head = self.chain(Group::F3, &head_in)?;
        let y = depth_to_space_x4(&head)?.add(&bilinear_upsample_x4(x_cur))?;
        Ok((y, next))
    }

    /// Quantized counterpart of a full-clip inference run.
    pub fn run_frames(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let Some(first) = frames.first() else {
            return Err(Error::Contract("clip must contain at least one frame".into()));
        };
        let mut hidden = self.zero_hidden(first.shape());
        let mut outputs = Vec::with_capacity(frames.len());
        for i in 0..frames.len() {
            let (prev, cur, next) = window_at(frames, i)?;
            if cur.shape() != first.shape() {
                return Err(Error::Shape {
                    op: "quantized run",
                    detail: format!("frame {i} is {} but frame 0 is {}", cur.shape(), first.shape()),
                });
            }
            let (y, h) = self.forward(prev, cur, next, &hidden)?;
            outputs.push(y);
            hidden = h;
        }
        Ok(outputs)
    }
}

pub fn quantized_forward(
    model: &QuantModel,
    x_prev: &Tensor<f32>,
    x_cur: &Tensor<f32>,
    x_next: &Tensor<f32>,
    hidden: &QuantHidden,
) -> Result<(Tensor<f32>, QuantHidden)> {
    model.forward(x_prev, x_cur, x_next, hidden)
}
