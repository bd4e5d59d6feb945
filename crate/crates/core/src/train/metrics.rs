use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Coefficient of determination and root mean squared error over samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
}

/// R² and RMSE where the leading axis of both tensors indexes samples and
/// each sample's error is the squared L2 norm over everything else.
/// R² is measured against the dataset-mean field.
pub fn r2_rmse<T: Real>(preds: &Tensor<T>, targets: &Tensor<T>) -> Result<Metrics> {
    targets.expect_shape(preds.shape())?;
    let n = preds.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let per = preds.len() / n;
    let mut mean = vec![0.0f64; per];
    for i in 0..n {
        for (m, &y) in mean.iter_mut().zip(targets.outer(i)) {
            *m += y.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let (mut sse, mut sst) = (0.0f64, 0.0f64);
    for i in 0..n {
        for ((&y, &p), &m) in targets.outer(i).iter().zip(preds.outer(i)).zip(&mean) {
            let (y, p) = (y.as_f64(), p.as_f64());
            sse += (y - p) * (y - p);
            sst += (y - m) * (y - m);
        }
    }
    let rmse = (sse / n as f64).sqrt();
    let constant = (1..n).all(|i| targets.outer(i) == targets.outer(0));
    if constant || sst == 0.0 {
        return Err(Error::UndefinedR2);
    }
    Ok(Metrics {
        r2: 1.0 - sse / sst,
        rmse,
    })
}

/// Predicted saturation above this counts as invaded when scoring fronts.
pub const FRONT_SATURATION: f64 = 0.05;

/// Intersection over union of two binary masks; two empty masks agree fully.
pub fn iou<T: Real>(pred: &[T], truth: &[T]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mask sizes differ");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p > T::zero(), t > T::zero());
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean_predictions() {
        let y = Tensor::<f64>::from_fn(&[4, 2, 3], |i| (i as f64 * 0.7).cos());
        let m = r2_rmse(&y, &y).unwrap();
        assert_eq!((m.r2, m.rmse), (1.0, 0.0));
        let mut mean = Tensor::zeros(&[6]);
        for i in 0..4 {
            for (a, &b) in mean.data_mut().iter_mut().zip(y.outer(i)) {
                *a += b / 4.0;
            }
        }
        let ybar = Tensor::stack(&[&mean, &mean, &mean, &mean]).unwrap().reshape(&[4, 2, 3]).unwrap();
        assert!(r2_rmse(&ybar, &y).unwrap().r2.abs() < 1e-12);
    }

    #[test]
    fn hand_computed_case() {
        // three samples of two values; mean field (2, 3)
        let y = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, 2.0, 3.0, 3.0, 4.0]).unwrap();
        let p = Tensor::<f64>::from_vec(&[3, 2], vec![1.5, 2.0, 2.0, 2.0, 3.0, 4.5]).unwrap();
        // SSE = 0.25 + 1 + 0.25 = 1.5, SST = 2 + 0 + 2 = 4
        let m = r2_rmse(&p, &y).unwrap();
        assert!((m.r2 - 0.625).abs() <= 1e-10);
        assert!((m.rmse - 0.5f64.sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        let c = Tensor::<f64>::full(&[3, 2], 1.0);
        assert!(matches!(r2_rmse(&c, &c), Err(Error::UndefinedR2)));
        let one = Tensor::<f64>::zeros(&[1, 2]);
        assert!(matches!(r2_rmse(&one, &one), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn iou_counts() {
        assert_eq!(iou(&[1.0f32, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]), 1.0 / 3.0);
        assert_eq!(iou::<f32>(&[0.0; 3], &[0.0; 3]), 1.0);
    }
}
