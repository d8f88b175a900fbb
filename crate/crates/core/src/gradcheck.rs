//! Central finite-difference checks of every analytic backward pass, run in
//! f64 through the same generic code used for f32 training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{init_params, Group, ModelConfig, Mode, Parameters, Variant};
use crate::ops::{
    bilinear_upsample_x4, bilinear_upsample_x4_backward, conv2d_backward, conv2d_forward,
    depth_to_space_x4, space_to_depth_x4, ConvKernel,
};
use crate::recurrence::run_frames;
use crate::tensor::{Shape, Tensor};
use crate::training::{charbonnier_loss, loss_and_grads, sequence_loss};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;

/// `||a - n|| / max(||a||, ||n||)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Central difference that notices a ReLU kink inside `[x - h, x + h]`:
/// when steps `h` and `h / 10` disagree, the estimate is retaken at
/// `h / 100`, which shrinks the chance of straddling the kink a hundredfold.
fn kink_aware_central(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let coarse = central(f, x, h)?;
    let fine = central(f, x, h / 10.0)?;
    if (coarse - fine).abs() <= 1e-9 + 1e-6 * coarse.abs().max(fine.abs()) {
        return Ok(coarse);
    }
    central(f, x, h / 100.0)
}

/// Element `j` of layer `l`, counting weights first and then biases.
fn param_mut(p: &mut Parameters<f64>, l: usize, j: usize, n_w: usize) -> &mut f64 {
    let layer = &mut p.layers_mut()[l];
    if j < n_w {
        &mut layer.weights[j]
    } else {
        &mut layer.bias[j - n_w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: &'static str,
    pub count: usize,
    pub rel_error: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, s: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Compares BPTT gradients of the mean Charbonnier loss over a random
/// `frames`-long clip of `size`x`size` LR frames against central
/// differences, one relative error per parameter group.
pub fn model_gradcheck(
    config: &ModelConfig,
    frames: usize,
    size: usize,
    seed: u64,
    step: f64,
) -> Result<Vec<GroupCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Parameters<f64> = init_params(config, seed)?.cast();
    for layer in params.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.05..0.05));
    }
    let lr: Vec<_> = (0..frames)
        .map(|_| random_tensor(&mut rng, Shape::new(1, 3, size, size), 0.0, 1.0))
        .collect();
    let hr: Vec<_> = (0..frames)
        .map(|_| random_tensor(&mut rng, Shape::new(1, 3, 4 * size, 4 * size), 0.0, 1.0))
        .collect();
    let eps = 1e-6;
    let (_, grads) = loss_and_grads(&params, &lr, &hr, eps)?;

    let loss = |p: &Parameters<f64>| -> Result<f64> {
        let run = run_frames(p, &lr, Mode::Infer)?;
        Ok(sequence_loss(&run.outputs, &hr, eps)?.0)
    };
    let mut out: Vec<GroupCheck> = Vec::new();
    let specs = params.specs().to_vec();
    for g in Group::ALL {
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (l, spec) in specs.iter().enumerate() {
            if spec.group != g {
                continue;
            }
            let n_w = params.layers()[l].weights.len();
            let n_b = params.layers()[l].bias.len();
            for j in 0..n_w + n_b {
                let x0 = *param_mut(&mut params, l, j, n_w);
                let mut f = |x: f64| -> Result<f64> {
                    *param_mut(&mut params, l, j, n_w) = x;
                    loss(&params)
                };
                numeric.push(kink_aware_central(&mut f, x0, step)?);
                *param_mut(&mut params, l, j, n_w) = x0;
                let gl = &grads.layers()[l];
                analytic.push(if j < n_w { gl.weights[j] } else { gl.bias[j - n_w] });
            }
        }
        if !analytic.is_empty() {
            out.push(GroupCheck {
                group: g.name(),
                count: analytic.len(),
                rel_error: relative_error(&analytic, &numeric),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }
}

/// Linear op check: `<g, op(x)>` differentiated numerically with respect to
/// every input element against the analytic adjoint.
fn linear_suite(
    name: &str,
    x: &Tensor<f64>,
    g: &Tensor<f64>,
    op: &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    adjoint: &Tensor<f64>,
    step: f64,
) -> Result<SuiteResult> {
    let dot = |t: &Tensor<f64>| t.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>();
    let mut xm = x.clone();
    let mut numeric = Vec::with_capacity(x.data().len());
    for i in 0..x.data().len() {
        let x0 = xm.data()[i];
        let mut f = |v: f64| -> Result<f64> {
            xm.data_mut()[i] = v;
            Ok(dot(&op(&xm)?))
        };
        numeric.push(central(&mut f, x0, step)?);
        xm.data_mut()[i] = x0;
    }
    Ok(SuiteResult {
        name: name.into(),
        rel_error: relative_error(adjoint.data(), &numeric),
        tolerance: DEFAULT_TOLERANCE,
    })
}

/// Every finite-difference suite: conv (input, weights, bias), bilinear x4,
/// depth-to-space, Charbonnier and full-model BPTT for each variant.
pub fn run_suites(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = DEFAULT_STEP;
    let mut results = Vec::new();

    let s = Shape::new(2, 3, 5, 4);
    let x = random_tensor(&mut rng, s, -1.0, 1.0);
    let w: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = ConvKernel::from_parts(2, 3, w, b)?;
    let g = random_tensor(&mut rng, s.with_channels(2), -1.0, 1.0);
    let grads = conv2d_backward(&x, &k, &g)?;
    results.push(linear_suite("conv2d/input", &x, &g, &|t| conv2d_forward(t, &k), &grads.input, step)?);
    let params_as_tensor = |k: &ConvKernel<f64>| {
        let mut v = k.weights.clone();
        v.extend_from_slice(&k.bias);
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v)
    };
    let n_w = k.weights.len();
    let kernel_op = |t: &Tensor<f64>| {
        let kk = ConvKernel::from_parts(2, 3, t.data()[..n_w].to_vec(), t.data()[n_w..].to_vec())?;
        conv2d_forward(&x, &kk)
    };
    results.push(linear_suite(
        "conv2d/kernel",
        &params_as_tensor(&k)?,
        &g,
        &kernel_op,
        &params_as_tensor(&grads.kernel)?,
        step,
    )?);

    let x = random_tensor(&mut rng, Shape::new(1, 2, 3, 4), 0.0, 1.0);
    let g = random_tensor(&mut rng, Shape::new(1, 2, 12, 16), -1.0, 1.0);
    let adj = bilinear_upsample_x4_backward(x.shape(), &g)?;
    results.push(linear_suite("bilinear_x4", &x, &g, &|t| Ok(bilinear_upsample_x4(t)), &adj, step)?);

    let x = random_tensor(&mut rng, Shape::new(1, 32, 2, 3), -1.0, 1.0);
    let g = random_tensor(&mut rng, Shape::new(1, 2, 8, 12), -1.0, 1.0);
    let adj = space_to_depth_x4(&g)?;
    results.push(linear_suite("depth_to_space_x4", &x, &g, &|t| depth_to_space_x4(t), &adj, step)?);

    let pred = random_tensor(&mut rng, Shape::new(1, 3, 4, 4), 0.0, 1.0);
    let target = random_tensor(&mut rng, Shape::new(1, 3, 4, 4), 0.0, 1.0);
    let (_, analytic) = charbonnier_loss(&pred, &target, 1e-6)?;
    let mut pm = pred.clone();
    let mut numeric = Vec::new();
    for i in 0..pred.data().len() {
        let x0 = pm.data()[i];
        let mut f = |v: f64| -> Result<f64> {
            pm.data_mut()[i] = v;
            Ok(charbonnier_loss(&pm, &target, 1e-6)?.0)
        };
        numeric.push(central(&mut f, x0, step)?);
        pm.data_mut()[i] = x0;
    }
    results.push(SuiteResult {
        name: "charbonnier".into(),
        rel_error: relative_error(analytic.data(), &numeric),
        tolerance: DEFAULT_TOLERANCE,
    });

    for v in Variant::ALL {
        let cfg = ModelConfig::with_channels(4).with_variant(v);
        for c in model_gradcheck(&cfg, 3, 8, seed, step)? {
            results.push(SuiteResult {
                name: format!("model/{}/{}", v.name(), c.group),
                rel_error: c.rel_error,
                tolerance: DEFAULT_TOLERANCE,
            });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_model_small_instance() {
        let cfg = ModelConfig::with_channels(2);
        let checks = model_gradcheck(&cfg, 2, 4, 3, DEFAULT_STEP).unwrap();
        let names: Vec<_> = checks.iter().map(|c| c.group).collect();
        assert_eq!(names, vec!["f1", "f2", "f3", "h_fwd_update", "h_bwd_update"]);
        for c in &checks {
            assert!(c.rel_error < DEFAULT_TOLERANCE, "{c:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let a = [1.0, 2.0, 3.0];
        let n = [1.0, 2.0, 3.001];
        assert!(relative_error(&a, &n) > DEFAULT_TOLERANCE);
    }
}
