//! Contextual convolution.
//!
//! Two filter banks run over feature maps of different spatial size: a small
//! (context) map `h1 × w1` and a large map `h2 × w2`. Their positions are
//! tied: while the large-map bank steps through `(i, j)`, the small-map bank
//! sits at `(⌊i·h1/h2⌋, ⌊j·w1/w2⌋)`, i.e. it advances `h1/h2` (`w1/w2`) of a
//! step per large-map step and reaches its last row (column) exactly when the
//! large traversal does. Responses are summed, then passed through SeLU:
//!
//! `out[n,o,i,j] = selu(conv(large)[n,o,i,j] + conv(small)[n,o,r(i),s(j)])`
//!
//! The gradient with respect to the small map is the scatter-add of the
//! large-grid gradient over all positions that map to the same small cell.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::activation::selu_tensor;
use crate::ops::conv::{conv2d_same, ConvFilter};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Small-grid position of the filter bank when the large-grid bank is at
/// `(i, j)`: `(⌊i·h1/h2⌋, ⌊j·w1/w2⌋)` in exact integer arithmetic.
pub fn context_index_map(i: usize, j: usize, h1: usize, w1: usize, h2: usize, w2: usize) -> Result<(usize, usize)> {
    if h1 == 0 || w1 == 0 || h1 > h2 || w1 > w2 {
        return Err(Error::contract(format!(
            "context_index_map: small grid {h1}x{w1} must be non-empty and fit in {h2}x{w2}"
        )));
    }
    if i >= h2 || j >= w2 {
        return Err(Error::contract(format!("context_index_map: ({i},{j}) outside {h2}x{w2}")));
    }
    Ok((scale_index(i, h1, h2), scale_index(j, w1, w2)))
}

#[inline]
fn scale_index(i: usize, small: usize, large: usize) -> usize {
    ((i as u128 * small as u128) / large as u128) as usize
}

/// Precomputed row and column maps between a small and a large grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextGrid {
    pub small: (usize, usize),
    pub large: (usize, usize),
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl ContextGrid {
    pub fn new(small: (usize, usize), large: (usize, usize)) -> Result<Self> {
        let (h1, w1) = small;
        let (h2, w2) = large;
        // Validates the grid pair once; every index below is then in range.
        context_index_map(0, 0, h1, w1, h2, w2)?;
        Ok(ContextGrid {
            small,
            large,
            rows: (0..h2).map(|i| scale_index(i, h1, h2)).collect(),
            cols: (0..w2).map(|j| scale_index(j, w1, w2)).collect(),
        })
    }

    pub fn row(&self, i: usize) -> usize {
        self.rows[i]
    }

    pub fn col(&self, j: usize) -> usize {
        self.cols[j]
    }

    /// `out[n,c,i,j] = small[n,c,row(i),col(j)]` on the large grid.
    pub fn gather<T: Real>(&self, small: &Tensor<T>) -> Result<Tensor<T>> {
        let s = small.shape();
        if (s.h, s.w) != self.small {
            return Err(Error::shape(format!("gather: {s} is not on the {:?} grid", self.small)));
        }
        let (h2, w2) = self.large;
        let out_shape = s.with_hw(h2, w2);
        let mut out = Vec::with_capacity(out_shape.len());
        for plane in small.data().chunks(s.plane()) {
            for &r in &self.rows {
                let src = &plane[r * s.w..(r + 1) * s.w];
                out.extend(self.cols.iter().map(|&c| src[c]));
            }
        }
        Tensor::from_vec(out_shape, out)
    }

    /// Adjoint of [`ContextGrid::gather`]: every large-grid value is added to
    /// the small cell it was gathered from.
    pub fn scatter_add<T: Real>(&self, large: &Tensor<T>) -> Result<Tensor<T>> {
        let s = large.shape();
        if (s.h, s.w) != self.large {
            return Err(Error::shape(format!("scatter_add: {s} is not on the {:?} grid", self.large)));
        }
        let (h1, w1) = self.small;
        let out_shape = s.with_hw(h1, w1);
        let mut out = vec![T::zero(); out_shape.len()];
        for (src, dst) in large.data().chunks(s.plane()).zip(out.chunks_mut(h1 * w1)) {
            for (i, &r) in self.rows.iter().enumerate() {
                let row = &src[i * s.w..(i + 1) * s.w];
                for (&v, &c) in row.iter().zip(&self.cols) {
                    dst[r * w1 + c] += v;
                }
            }
        }
        Tensor::from_vec(out_shape, out)
    }
}

/// The two tied filter banks of one contextual convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextLink<T> {
    pub bank_small: ConvFilter<T>,
    pub bank_large: ConvFilter<T>,
}

impl<T: Real> ContextLink<T> {
    pub fn new(bank_small: ConvFilter<T>, bank_large: ConvFilter<T>) -> Result<Self> {
        if bank_small.out_channels() != bank_large.out_channels() {
            return Err(Error::shape(format!(
                "context banks disagree on output channels: {} vs {}",
                bank_small.out_channels(),
                bank_large.out_channels()
            )));
        }
        Ok(ContextLink { bank_small, bank_large })
    }

    pub fn out_channels(&self) -> usize {
        self.bank_large.out_channels()
    }
}

fn check_pair(small: Shape, large: Shape) -> Result<()> {
    if small.n != large.n {
        return Err(Error::shape(format!("contextual_conv: batch {} vs {}", small.n, large.n)));
    }
    if small.h > large.h || small.w > large.w {
        return Err(Error::shape(format!("contextual_conv: context map {small} is larger than {large}")));
    }
    Ok(())
}

/// `selu(conv2d_same(large, bank_large) + gather(conv2d_same(small, bank_small)))`.
pub fn contextual_conv<T: Real>(small: &Tensor<T>, large: &Tensor<T>, link: &ContextLink<T>) -> Result<Tensor<T>> {
    let (ss, ls) = (small.shape(), large.shape());
    check_pair(ss, ls)?;
    let grid = ContextGrid::new((ss.h, ss.w), (ls.h, ls.w))?;
    let context = grid.gather(&conv2d_same(small, &link.bank_small)?)?;
    let local = conv2d_same(large, &link.bank_large)?;
    Ok(selu_tensor(&local.add(&context)?))
}

/// Weight and bias of one filter bank recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Real> Tape<T> {
    /// Differentiable [`ContextGrid::gather`] onto an `h2 × w2` grid.
    pub fn context_gather(&mut self, small: Var, h2: usize, w2: usize) -> Result<Var> {
        let s = self.value(small).shape();
        let grid = ContextGrid::new((s.h, s.w), (h2, w2))?;
        let out = grid.gather(self.value(small))?;
        Ok(self.custom("context_gather", out, &[small], move |g, _| {
            vec![Some(grid.scatter_add(g).expect("scatter shape"))]
        }))
    }

    /// Differentiable [`contextual_conv`].
    pub fn contextual_conv(
        &mut self,
        small: Var,
        large: Var,
        bank_small: BankVars,
        bank_large: BankVars,
    ) -> Result<Var> {
        self.contextual_conv_multi(large, bank_large, &[(small, bank_small)])
    }

    /// Contextual convolution with any number of context maps, each with its
    /// own bank; all responses are summed before the SeLU. With no context
    /// maps this is a plain convolution followed by SeLU.
    pub fn contextual_conv_multi(
        &mut self,
        large: Var,
        bank_large: BankVars,
        contexts: &[(Var, BankVars)],
    ) -> Result<Var> {
        let ls = self.value(large).shape();
        let mut sum = self.conv2d_same(large, bank_large.weight, bank_large.bias)?;
        for &(small, bank) in contexts {
            check_pair(self.value(small).shape(), ls)?;
            let response = self.conv2d_same(small, bank.weight, bank.bias)?;
            let tied = self.context_gather(response, ls.h, ls.w)?;
            sum = self.add(sum, tied)?;
        }
        Ok(self.selu(sum))
    }
}
