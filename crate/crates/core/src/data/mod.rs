//! Samples, dataset splits, image and annotation I/O, synthetic datasets and
//! checkpoints.

pub mod checkpoint;
pub mod density;
pub mod directory;
pub mod image_io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::LabelMap;
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use density::{density_from_dots, read_dots_csv, write_dots_csv, Dot};
pub use directory::{read_dataset, write_dataset, Dataset};
pub use image_io::load_image;
pub use synth::{synth_counting_set, synth_segmentation_set, CountingSynth, SegmentationSynth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Segment,
    Count,
}

/// Annotation as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Annotation {
    Labels(LabelMap),
    Dots(Vec<Dot>),
}

/// Image with its raw annotation, before targets are built.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub image: Tensor<f32>,
    pub annotation: Annotation,
}

impl Record {
    pub fn task(&self) -> Task {
        match self.annotation {
            Annotation::Labels(_) => Task::Segment,
            Annotation::Dots(_) => Task::Count,
        }
    }

    /// Training sample; dot annotations become density maps with Gaussian
    /// width `sigma`.
    pub fn to_sample<T: Real>(&self, sigma: f64) -> Result<Sample<T>> {
        let s = self.image.shape();
        let target = match &self.annotation {
            Annotation::Labels(l) => Target::Labels(l.clone()),
            Annotation::Dots(d) => Target::Density(density_from_dots(d, s.h, s.w, sigma)?),
        };
        Sample::new(self.id.clone(), self.image.cast(), target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    /// One class index per pixel, `n = 1`.
    Labels(LabelMap),
    /// Non-negative density `(1, 1, h, w)` whose sum is the object count.
    Density(Tensor<T>),
}

/// One image with its per-pixel target. The image is `(1, c, h, w)` with
/// values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub image: Tensor<T>,
    pub target: Target<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(id: impl Into<String>, image: Tensor<T>, target: Target<T>) -> Result<Self> {
        let s = image.shape();
        let (th, tw) = match &target {
            Target::Labels(l) => (l.h, l.w),
            Target::Density(d) => (d.shape().h, d.shape().w),
        };
        if s.n != 1 || (th, tw) != (s.h, s.w) {
            return Err(Error::shape(format!("sample {}: image {s} and target {th}x{tw} disagree", image.shape())));
        }
        Ok(Sample { id: id.into(), image, target })
    }

    pub fn labels(&self) -> Option<&LabelMap> {
        match &self.target {
            Target::Labels(l) => Some(l),
            Target::Density(_) => None,
        }
    }

    pub fn density(&self) -> Option<&Tensor<T>> {
        match &self.target {
            Target::Density(d) => Some(d),
            Target::Labels(_) => None,
        }
    }

    /// Object count of a density sample.
    pub fn count(&self) -> Option<f64> {
        self.density().map(|d| d.sum().to_f64_lossy())
    }

    pub fn cast<U: Real>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            image: self.image.cast(),
            target: match &self.target {
                Target::Labels(l) => Target::Labels(l.clone()),
                Target::Density(d) => Target::Density(d.cast()),
            },
        }
    }
}

/// How a dataset of `len` items is divided.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSpec {
    /// Consecutive blocks: the first `train` items, the next `val`, the
    /// next `test`.
    Sequential { train: usize, val: usize, test: usize },
    /// Disjoint random subsets drawn with `seed`.
    Random { train: usize, val: usize, test: usize, seed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// 32 training, 68 validation and 100 test images out of 200, scaled
    /// proportionally for other sizes.
    pub fn counting_protocol(len: usize) -> SplitSpec {
        let train = (len * 32).div_ceil(200);
        let val = ((len * 100).div_ceil(200)).saturating_sub(train).min(len - train);
        SplitSpec::Sequential { train, val, test: len - train - val }
    }

    /// 25 training and 5 validation images out of 30 labelled ones.
    pub fn segmentation_protocol(len: usize) -> SplitSpec {
        let train = (len * 25).div_ceil(30);
        SplitSpec::Sequential { train, val: len - train, test: 0 }
    }

    pub fn apply(&self, len: usize) -> Result<Split> {
        let (train, val, test) = match *self {
            SplitSpec::Sequential { train, val, test } | SplitSpec::Random { train, val, test, .. } => {
                (train, val, test)
            }
        };
        if train + val + test > len {
            return Err(Error::config(format!(
                "split {train}/{val}/{test} needs {} items, dataset has {len}",
                train + val + test
            )));
        }
        let mut order: Vec<usize> = (0..len).collect();
        if let SplitSpec::Random { seed, .. } = *self {
            RngState::new(seed).substream("split").shuffle(&mut order);
        }
        Ok(Split {
            train: order[..train].to_vec(),
            val: order[train..train + val].to_vec(),
            test: order[train + val..train + val + test].to_vec(),
        })
    }
}

impl Split {
    pub fn part(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}
