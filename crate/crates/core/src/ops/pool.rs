use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// 2×2 max-pooling with stride 2.
///
/// Returns the pooled tensor, the flat input index chosen for every output
/// element (first maximum in row-major block order), and the smallest gap
/// between a block's maximum and its runner-up.
pub fn maxpool2_with_argmax<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>, f64)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(format!("maxpool2 needs even height and width, got {s}")));
    }
    let out_shape = s.with_hw(s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let mut margin = f64::INFINITY;
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..out_shape.h {
                for j in 0..out_shape.w {
                    let block = [
                        s.index(n, c, 2 * i, 2 * j),
                        s.index(n, c, 2 * i, 2 * j + 1),
                        s.index(n, c, 2 * i + 1, 2 * j),
                        s.index(n, c, 2 * i + 1, 2 * j + 1),
                    ];
                    let mut best = block[0];
                    for &idx in &block[1..] {
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    let top = x.data()[best];
                    for &idx in &block {
                        if idx != best {
                            margin = margin.min((top - x.data()[idx]).to_f64_lossy());
                        }
                    }
                    out.push(top);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax, margin))
}

pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(maxpool2_with_argmax(x)?.0)
}

impl<T: Real> Tape<T> {
    /// Differentiable [`maxpool2`]; the gradient flows to each block's argmax.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax, margin) = maxpool2_with_argmax(self.value(x))?;
        let var = self.custom("maxpool2", out, &[x], move |g, inputs| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            for (&idx, &gv) in argmax.iter().zip(g.data()) {
                dx.data_mut()[idx] += gv;
            }
            vec![Some(dx)]
        });
        self.set_kink_margin(var, margin);
        Ok(var)
    }
}
