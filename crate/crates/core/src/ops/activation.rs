//! Scaled exponential linear unit.

use crate::autodiff::{Tape, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Self-normalizing fixed-point scale λ.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// Self-normalizing fixed-point α.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

#[inline]
pub fn selu<T: Real>(x: T) -> T {
    let lambda = T::from_f64_lossy(SELU_LAMBDA);
    if x > T::zero() {
        lambda * x
    } else {
        lambda * T::from_f64_lossy(SELU_ALPHA) * x.exp_m1()
    }
}

/// Derivative of [`selu`]; the left branch is used at 0.
#[inline]
pub fn selu_derivative<T: Real>(x: T) -> T {
    let lambda = T::from_f64_lossy(SELU_LAMBDA);
    if x > T::zero() {
        lambda
    } else {
        lambda * T::from_f64_lossy(SELU_ALPHA) * x.exp()
    }
}

pub fn selu_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(selu)
}

impl<T: Real> Tape<T> {
    pub fn selu(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let out = selu_tensor(input);
        let margin = input.data().iter().fold(f64::INFINITY, |m, v| m.min(v.to_f64_lossy().abs()));
        let var = self.custom("selu", out, &[x], |g, inputs| {
            let d = inputs[0].map(selu_derivative);
            vec![Some(g.mul(&d).expect("selu grad shape"))]
        });
        self.set_kink_margin(var, margin);
        var
    }
}
