//! Segmentation and counting metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::hourglass::Network;
use crate::ops::LabelMap;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
}

/// Per-pixel argmax over channels; ties go to the lower class.
pub fn argmax_labels<T: Real>(logits: &Tensor<T>) -> LabelMap {
    let s = logits.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let item = logits.item(n);
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.c {
                if item[c * plane + p] > item[best * plane + p] {
                    best = c;
                }
            }
            data.push(best as u32);
        }
    }
    LabelMap { n: s.n, h: s.h, w: s.w, data }
}

/// Pixel accuracy and IoU averaged over the classes that occur in either
/// predictions or ground truth, pooled over all maps.
pub fn segmentation_metrics(pred: &[LabelMap], truth: &[LabelMap]) -> Result<SegmentationMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::contract("prediction and label counts differ"));
    }
    let classes = pred.iter().chain(truth).flat_map(|m| m.data.iter()).max().map_or(0, |&m| m as usize + 1);
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    let (mut correct, mut total) = (0u64, 0u64);
    for (p, t) in pred.iter().zip(truth) {
        if p.data.len() != t.data.len() {
            return Err(Error::shape("prediction and label map sizes differ"));
        }
        for (&a, &b) in p.data.iter().zip(&t.data) {
            total += 1;
            if a == b {
                correct += 1;
                inter[a as usize] += 1;
                union[a as usize] += 1;
            } else {
                union[a as usize] += 1;
                union[b as usize] += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::data("no pixels to evaluate"));
    }
    let present: Vec<f64> =
        inter.iter().zip(&union).filter(|(_, &u)| u > 0).map(|(&i, &u)| i as f64 / u as f64).collect();
    Ok(SegmentationMetrics {
        pixel_accuracy: correct as f64 / total as f64,
        mean_iou: present.iter().sum::<f64>() / present.len() as f64,
    })
}

pub fn counting_mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("count lists must be non-empty and of equal length"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn evaluate_segmentation<T: Real>(net: &Network<T>, samples: &[Sample<T>]) -> Result<SegmentationMetrics> {
    let preds =
        samples.par_iter().map(|s| net.predict(&s.image).map(|out| argmax_labels(&out))).collect::<Result<Vec<_>>>()?;
    let truth = samples
        .iter()
        .map(|s| s.labels().cloned().ok_or_else(|| Error::data(format!("sample {} has no labels", s.id))))
        .collect::<Result<Vec<_>>>()?;
    segmentation_metrics(&preds, &truth)
}

/// Predicted count of every sample: the sum of its predicted density map.
pub fn predicted_counts<T: Real>(net: &Network<T>, samples: &[Sample<T>]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| net.predict(&s.image).map(|out| out.data().iter().map(|v| v.to_f64_lossy()).sum()))
        .collect()
}

pub fn evaluate_counting<T: Real>(net: &Network<T>, samples: &[Sample<T>]) -> Result<f64> {
    let pred = predicted_counts(net, samples)?;
    let truth = samples
        .iter()
        .map(|s| {
            s.density()
                .map(|d| d.data().iter().map(|v| v.to_f64_lossy()).sum())
                .ok_or_else(|| Error::data(format!("sample {} has no density", s.id)))
        })
        .collect::<Result<Vec<f64>>>()?;
    counting_mae(&pred, &truth)
}
