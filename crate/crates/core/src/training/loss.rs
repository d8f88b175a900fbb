use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean of `sqrt(d^2 + eps^2)` over all elements, with its gradient.
///
/// The sum is taken over `sqrt(d^2 + eps^2) - eps`, computed as
/// `d^2 / (sqrt(d^2 + eps^2) + eps)`, and `eps` is added back at the end. This
/// keeps precision for small residuals and makes `pred == target` yield
/// exactly `eps`.
pub fn charbonnier_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    eps: f64,
) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return shape_err(
            "charbonnier_loss",
            format!("pred {} vs target {}", pred.shape(), target.shape()),
        );
    }
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("charbonnier eps must be > 0, got {eps}")));
    }
    let n = pred.data().len() as f64;
    let eps2 = eps * eps;
    let mut excess = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p.to_f64_lossy() - t.to_f64_lossy();
        let r = (d * d + eps2).sqrt();
        excess += d * d / (r + eps);
        *g = T::lit(d / r / n);
    }
    Ok((eps + excess / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::full(Shape::new(1, 1, 1, 1), v)
    }

    #[test]
    fn equal_inputs_give_eps_exactly() {
        let t = Tensor::from_fn(Shape::new(2, 3, 5, 4), |b, c, y, x| {
            (b + c * 3 + y * 7 + x) as f32 / 40.0
        });
        let (loss, grad) = charbonnier_loss(&t, &t, 1e-6).unwrap();
        assert_eq!(loss, 1e-6);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn closed_form_values() {
        let (l, _) = charbonnier_loss(&one(3e-6), &one(0.0), 1e-6).unwrap();
        assert!((l - 1e-11f64.sqrt()).abs() < 1e-18, "{l}");
        let (l, g) = charbonnier_loss(&one(1.0), &one(0.0), 1e-6).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_and_bad_eps() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 3));
        assert!(matches!(charbonnier_loss(&a, &b, 1e-6), Err(Error::Shape { .. })));
        assert!(charbonnier_loss(&a, &a, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12)
        ) {
            let n = vals.len();
            let s = Shape::new(1, 1, 1, n);
            let pred = Tensor::from_vec(s, vals.iter().map(|v| v.0).collect()).unwrap();
            let target = Tensor::from_vec(s, vals.iter().map(|v| v.1).collect()).unwrap();
            let eps = 1e-3;
            let (_, grad) = charbonnier_loss(&pred, &target, eps).unwrap();
            let h = 1e-7;
            for i in 0..n {
                let mut up = pred.clone();
                up.data_mut()[i] += h;
                let mut dn = pred.clone();
                dn.data_mut()[i] -= h;
                let fd = (charbonnier_loss(&up, &target, eps).unwrap().0
                    - charbonnier_loss(&dn, &target, eps).unwrap().0)
                    / (2.0 * h);
                prop_assert!((fd - grad.data()[i]).abs() < 1e-6, "{fd} vs {}", grad.data()[i]);
            }
        }
    }
}
