use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Per-pixel class indices for a batch, laid out `(n, h, w)` row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::shape(format!("{} labels for an {n}x{h}x{w} map", data.len())));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn at(&self, n: usize, i: usize, j: usize) -> u32 {
        self.data[(n * self.h + i) * self.w + j]
    }

    pub fn stack(items: &[&LabelMap]) -> Result<LabelMap> {
        let first = items.first().ok_or_else(|| Error::shape("stack of zero label maps"))?;
        let mut data = Vec::new();
        for m in items {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(Error::shape("label maps differ in size"));
            }
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(items.iter().map(|m| m.n).sum(), first.h, first.w, data)
    }

    pub fn item(&self, n: usize) -> LabelMap {
        let len = self.h * self.w;
        LabelMap { n: 1, h: self.h, w: self.w, data: self.data[n * len..(n + 1) * len].to_vec() }
    }
}

fn check_labels(logits: Shape, labels: &LabelMap) -> Result<()> {
    if (logits.n, logits.h, logits.w) != (labels.n, labels.h, labels.w) {
        return Err(Error::shape(format!("logits {logits} vs labels ({},{},{})", labels.n, labels.h, labels.w)));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l as usize >= logits.c) {
        return Err(Error::data(format!("label {bad} outside [0, {})", logits.c)));
    }
    Ok(())
}

// Per-pixel softmax over channels (max-subtracted) and the mean negative
// log-likelihood of the labelled class.
fn softmax_and_loss<T: Real>(logits: &Tensor<T>, labels: &LabelMap) -> (Tensor<T>, T) {
    let s = logits.shape();
    let plane = s.plane();
    let mut probs = Tensor::zeros(s);
    let mut total = T::zero();
    for n in 0..s.n {
        let item = logits.item(n);
        for p in 0..plane {
            let max = (0..s.c).map(|c| item[c * plane + p]).fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for c in 0..s.c {
                denom += (item[c * plane + p] - max).exp();
            }
            let label = labels.data[n * plane + p] as usize;
            total += denom.ln() - (item[label * plane + p] - max);
            for c in 0..s.c {
                let prob = (item[c * plane + p] - max).exp() / denom;
                probs.data_mut()[(n * s.c + c) * plane + p] = prob;
            }
        }
    }
    let count = T::from_usize(s.n * plane).expect("pixel count");
    (probs, total / count)
}

/// Mean over pixels of `-log softmax(logits)[label]`, softmax over channels.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &LabelMap) -> Result<T> {
    check_labels(logits.shape(), labels)?;
    Ok(softmax_and_loss(logits, labels).1)
}

/// Mean of `(pred - target)²` over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let diff = pred.sub(target)?;
    let count = T::from_usize(diff.len()).expect("element count");
    Ok(diff.dot(&diff)? / count)
}

impl<T: Real> Tape<T> {
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &LabelMap) -> Result<Var> {
        let s = self.value(logits).shape();
        check_labels(s, labels)?;
        let (probs, loss) = softmax_and_loss(self.value(logits), labels);
        let labels = labels.clone();
        Ok(self.custom("softmax_cross_entropy", Tensor::scalar(loss), &[logits], move |g, _| {
            // (softmax - onehot) / pixels, scaled by the upstream gradient.
            let plane = s.plane();
            let scale = g.data()[0] / T::from_usize(s.n * plane).expect("pixel count");
            let mut grad = probs.clone();
            for n in 0..s.n {
                for p in 0..plane {
                    let label = labels.data[n * plane + p] as usize;
                    grad.data_mut()[(n * s.c + label) * plane + p] -= T::one();
                }
            }
            vec![Some(grad.scale(scale))]
        }))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = mse_loss(self.value(pred), self.value(target))?;
        Ok(self.custom("mse_loss", Tensor::scalar(loss), &[pred, target], |g, inputs| {
            let count = T::from_usize(inputs[0].len()).expect("element count");
            let factor = g.data()[0] * (T::one() + T::one()) / count;
            let d = inputs[0].sub(inputs[1]).expect("mse shape").scale(factor);
            let neg = d.scale(-T::one());
            vec![Some(d), Some(neg)]
        }))
    }
}
