//! Regression and segmentation losses on network outputs.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Saturations at or below this value count as "no injected phase".
pub const BINARIZE_THRESHOLD: f64 = 1e-8;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// A scalar loss and its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct Loss<T: Real> {
    pub value: f64,
    pub grad: Tensor<T>,
    /// Per-sample contribution before averaging over the batch.
    pub per_sample: Vec<f64>,
}

fn check_pair<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<usize> {
    target.expect_shape(pred.shape())?;
    match pred.shape().first() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(Error::ShapeMismatch {
            expected: vec![1],
            found: pred.shape().to_vec(),
        }),
    }
}

/// Squared L2 error per sample, summed over every field and pixel, then
/// averaged over the batch.
///
/// ```
/// use deepflow::train::mse_loss;
/// use deepflow::Tensor;
/// let y = Tensor::<f64>::zeros(&[1, 2, 50, 50]);
/// let p = Tensor::full(&[1, 2, 50, 50], 0.1);
/// assert!((mse_loss(&p, &y).unwrap().value - 50.0).abs() < 1e-9);
/// ```
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Loss<T>> {
    let n = check_pair(pred, target)?;
    let scale = T::of(2.0 / n as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut per_sample = vec![0.0; n];
    for (b, acc) in per_sample.iter_mut().enumerate() {
        let (p, y) = (pred.outer(b), target.outer(b));
        let g = grad.outer_mut(b);
        for k in 0..p.len() {
            let d = p[k] - y[k];
            *acc += d.as_f64() * d.as_f64();
            g[k] = scale * d;
        }
    }
    Ok(Loss {
        value: per_sample.iter().sum::<f64>() / n as f64,
        grad,
        per_sample,
    })
}

/// Non-negative binary cross entropy averaged over pixels and samples.
pub fn bce_loss<T: Real>(prob: &Tensor<T>, mask: &Tensor<T>) -> Result<Loss<T>> {
    let n = check_pair(prob, mask)?;
    let pixels = prob.len() / n;
    let norm = 1.0 / (n * pixels) as f64;
    let mut grad = Tensor::zeros(prob.shape());
    let mut per_sample = vec![0.0; n];
    for (b, acc) in per_sample.iter_mut().enumerate() {
        let (p, z) = (prob.outer(b), mask.outer(b));
        let g = grad.outer_mut(b);
        for k in 0..p.len() {
            let raw = p[k].as_f64();
            let pc = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let zk = z[k].as_f64();
            *acc -= zk * pc.ln() + (1.0 - zk) * (1.0 - pc).ln();
            if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                g[k] = T::of(-norm * (zk / pc - (1.0 - zk) / (1.0 - pc)));
            }
        }
        *acc /= pixels as f64;
    }
    Ok(Loss {
        value: per_sample.iter().sum::<f64>() / n as f64,
        grad,
        per_sample,
    })
}

/// Pixel-wise indicator of the invaded region: 1 where `Sg > 0`.
pub fn binarize<T: Real>(saturation: &Tensor<T>) -> Tensor<T> {
    binarize_at(saturation, BINARIZE_THRESHOLD)
}

/// [`binarize`] with an explicit threshold.
pub fn binarize_at<T: Real>(saturation: &Tensor<T>, threshold: f64) -> Tensor<T> {
    saturation.map(|v| if v.as_f64() > threshold { T::one() } else { T::zero() })
}
