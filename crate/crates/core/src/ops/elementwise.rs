use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.custom("add", out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.custom("sub", out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.scale(-T::one()))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.custom("mul", out, &[a, b], |g, inputs| {
            vec![Some(g.mul(inputs[1]).expect("mul grad shape")), Some(g.mul(inputs[0]).expect("mul grad shape"))]
        }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).scale(factor);
        self.custom("scale", out, &[x], move |g, _| vec![Some(g.scale(factor))])
    }

    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.custom("sum", out, &[x], |g, inputs| vec![Some(Tensor::full(inputs[0].shape(), g.data()[0]))])
    }
}
