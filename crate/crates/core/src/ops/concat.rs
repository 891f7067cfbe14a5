use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Channel-axis concatenation, `a`'s channels first.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::shape(format!("concat_channels: {sa} and {sb} disagree on (n,h,w)")));
    }
    let out_shape = sa.with_c(sa.c + sb.c);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(out_shape, data)
}

impl<T: Real> Tape<T> {
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.custom("concat_channels", out, &[a, b], |g, inputs| {
            let ca = inputs[0].shape().c;
            let cb = inputs[1].shape().c;
            vec![
                Some(g.slice_channels(0, ca).expect("concat grad slice")),
                Some(g.slice_channels(ca, cb).expect("concat grad slice")),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn shapes_and_slices() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 2, 4, 4).unwrap(), |_, c, h, w| (c * 16 + h * 4 + w) as f64);
        let b = Tensor::<f64>::full(Shape::new(1, 3, 4, 4).unwrap(), -1.0);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), Shape::new(1, 5, 4, 4).unwrap());
        assert_eq!(ab.slice_channels(0, 2).unwrap(), a);
        assert_eq!(ab.slice_channels(2, 3).unwrap(), b);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4).unwrap());
        let b = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 2).unwrap());
        assert!(matches!(concat_channels(&a, &b), Err(Error::Shape(_))));
    }

    // Channel counts are at least one by the Shape invariant, so an empty
    // operand cannot even be constructed.
    #[test]
    fn empty_channel_operand_unconstructible() {
        assert!(Shape::new(1, 0, 4, 4).is_err());
    }
}
