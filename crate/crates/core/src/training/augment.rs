//! Random flips, quarter turns and elastic warps applied identically to an
//! image and its target.

use serde::{Deserialize, Serialize};

use crate::data::{Sample, Target};
use crate::ops::LabelMap;
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticSpec {
    /// Distance in pixels between control points of the displacement grid.
    pub grid_spacing: usize,
    /// Standard deviation of control-point displacements, in pixels.
    pub sigma: f64,
}

impl Default for ElasticSpec {
    fn default() -> Self {
        ElasticSpec { grid_spacing: 16, sigma: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Quarter turns; non-square inputs only get half turns.
    pub rotate90: bool,
    pub elastic: Option<ElasticSpec>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            flip_horizontal: true,
            flip_vertical: true,
            rotate90: true,
            elastic: Some(ElasticSpec::default()),
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        AugmentationSpec { flip_horizontal: false, flip_vertical: false, rotate90: false, elastic: None }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

/// A sampled transform: elastic warp, then flips, then counter-clockwise
/// quarter turns.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub h: usize,
    pub w: usize,
    /// Per-pixel source offsets `(dy, dx)`, row-major.
    pub displacement: Option<Vec<(f64, f64)>>,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub fn identity(h: usize, w: usize) -> Self {
        Transform { h, w, displacement: None, flip_horizontal: false, flip_vertical: false, quarter_turns: 0 }
    }

    pub fn sample(spec: &AugmentationSpec, h: usize, w: usize, rng: &mut RngState) -> Self {
        let mut t = Transform::identity(h, w);
        if let Some(e) = &spec.elastic {
            t.displacement = Some(displacement_field(e, h, w, rng));
        }
        t.flip_horizontal = spec.flip_horizontal && rng.coin();
        t.flip_vertical = spec.flip_vertical && rng.coin();
        if spec.rotate90 {
            t.quarter_turns = if h == w { rng.below(4) as u8 } else { 2 * rng.below(2) as u8 };
        }
        t
    }

    /// Output extents after the quarter turns.
    pub fn output_size(&self) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (self.w, self.h)
        } else {
            (self.h, self.w)
        }
    }

    // Source pixel of output pixel (i, j) under flips and turns.
    fn source(&self, i: usize, j: usize) -> (usize, usize) {
        let (mut i, mut j) = (i, j);
        let (mut h, mut w) = self.output_size();
        // Undo counter-clockwise turns one at a time: output (i, j) of a
        // CCW turn of an (h', w') plane reads (j, w' - 1 - i).
        for _ in 0..self.quarter_turns {
            let (ph, pw) = (w, h);
            (i, j) = (j, pw - 1 - i);
            (h, w) = (ph, pw);
        }
        debug_assert_eq!((h, w), (self.h, self.w));
        if self.flip_vertical {
            i = self.h - 1 - i;
        }
        if self.flip_horizontal {
            j = self.w - 1 - j;
        }
        (i, j)
    }

    fn permute<V: Copy>(&self, plane: &[V]) -> Vec<V> {
        let (oh, ow) = self.output_size();
        let mut out = Vec::with_capacity(plane.len());
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = self.source(i, j);
                out.push(plane[si * self.w + sj]);
            }
        }
        out
    }

    fn warp_linear(&self, plane: &[f64]) -> Vec<f64> {
        match &self.displacement {
            None => plane.to_vec(),
            Some(field) => (0..self.h * self.w)
                .map(|p| {
                    let (dy, dx) = field[p];
                    bilinear(plane, self.h, self.w, (p / self.w) as f64 + dy, (p % self.w) as f64 + dx)
                })
                .collect(),
        }
    }

    fn warp_nearest(&self, plane: &[u32]) -> Vec<u32> {
        match &self.displacement {
            None => plane.to_vec(),
            Some(field) => (0..self.h * self.w)
                .map(|p| {
                    let (dy, dx) = field[p];
                    let i = ((p / self.w) as f64 + dy).round().clamp(0.0, (self.h - 1) as f64) as usize;
                    let j = ((p % self.w) as f64 + dx).round().clamp(0.0, (self.w - 1) as f64) as usize;
                    plane[i * self.w + j]
                })
                .collect(),
        }
    }

    fn apply_tensor<T: Real>(&self, t: &Tensor<T>, renormalize: bool) -> Tensor<T> {
        let s = t.shape();
        let (oh, ow) = self.output_size();
        let mut out = Vec::with_capacity(t.len());
        for plane in t.data().chunks(s.plane()) {
            let src: Vec<f64> = plane.iter().map(|v| v.to_f64_lossy()).collect();
            let mut warped = self.warp_linear(&src);
            if renormalize && self.displacement.is_some() {
                let before: f64 = src.iter().sum();
                let after: f64 = warped.iter().sum();
                if after > 0.0 {
                    let k = before / after;
                    warped.iter_mut().for_each(|v| *v *= k);
                }
            }
            out.extend(self.permute(&warped).into_iter().map(T::from_f64_lossy));
        }
        Tensor::from_vec(s.with_hw(oh, ow), out).expect("same element count")
    }

    pub fn apply<T: Real>(&self, sample: &Sample<T>) -> Sample<T> {
        let (oh, ow) = self.output_size();
        let target = match &sample.target {
            Target::Labels(l) => {
                let data = self.permute(&self.warp_nearest(&l.data));
                Target::Labels(LabelMap { n: 1, h: oh, w: ow, data })
            }
            Target::Density(d) => Target::Density(self.apply_tensor(d, true)),
        };
        Sample { id: sample.id.clone(), image: self.apply_tensor(&sample.image, false), target }
    }
}

// Bilinear sample with coordinates clamped to the plane.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (i0, j0) = (y.floor() as usize, x.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(h - 1), (j0 + 1).min(w - 1));
    let (fy, fx) = (y - i0 as f64, x - j0 as f64);
    let at = |i: usize, j: usize| plane[i * w + j];
    (1.0 - fy) * ((1.0 - fx) * at(i0, j0) + fx * at(i0, j1)) + fy * ((1.0 - fx) * at(i1, j0) + fx * at(i1, j1))
}

// Gaussian displacements on a coarse control grid, bilinearly upsampled.
fn displacement_field(spec: &ElasticSpec, h: usize, w: usize, rng: &mut RngState) -> Vec<(f64, f64)> {
    let step = spec.grid_spacing.max(1);
    let gh = (h - 1) / step + 2;
    let gw = (w - 1) / step + 2;
    let dy: Vec<f64> = (0..gh * gw).map(|_| spec.sigma * rng.normal()).collect();
    let dx: Vec<f64> = (0..gh * gw).map(|_| spec.sigma * rng.normal()).collect();
    (0..h * w)
        .map(|p| {
            let gy = (p / w) as f64 / step as f64;
            let gx = (p % w) as f64 / step as f64;
            (bilinear(&dy, gh, gw, gy, gx), bilinear(&dx, gh, gw, gy, gx))
        })
        .collect()
}

pub fn augment<T: Real>(sample: &Sample<T>, spec: &AugmentationSpec, rng: &mut RngState) -> Sample<T> {
    if spec.is_identity() {
        return sample.clone();
    }
    let s = sample.image.shape();
    Transform::sample(spec, s.h, s.w, rng).apply(sample)
}
