use crate::network::Param;
use crate::tensor::{Real, Tensor};

pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        AdamState {
            first: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update using the gradients stored in `params`.
    pub fn update(&mut self, params: &mut [Param<T>], lr: f64, betas: (f64, f64)) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        self.step += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        let (tlr, eps) = (T::of(lr), T::of(ADAM_EPSILON));
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = tb1 * m[k] + ob1 * g[k];
                v[k] = tb2 * v[k] + ob2 * g[k] * g[k];
                let m_hat = m[k] * ic1;
                let v_hat = v[k] * ic2;
                *theta -= tlr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
