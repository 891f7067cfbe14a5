//! Synthetic stand-ins for microscopy data: fluorescent blobs with dot
//! annotations, and membrane-like curves with binary labels.

use serde::{Deserialize, Serialize};

use crate::data::density::Dot;
use crate::data::{Annotation, Record};
use crate::error::{Error, Result};
use crate::ops::LabelMap;
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingSynth {
    pub size: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Minimum distance between blob centres, in pixels.
    pub min_separation: f64,
    /// Expected photon count at full intensity; noise variance is
    /// `intensity / photons`.
    pub photons: f64,
}

impl Default for CountingSynth {
    fn default() -> Self {
        CountingSynth { size: 64, min_blobs: 5, max_blobs: 25, min_separation: 4.0, photons: 200.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSynth {
    pub size: usize,
    pub min_curves: usize,
    pub max_curves: usize,
}

impl Default for SegmentationSynth {
    fn default() -> Self {
        SegmentationSynth { size: 64, min_curves: 3, max_curves: 6 }
    }
}

fn image_shape(size: usize) -> Result<Shape> {
    if size < 8 {
        return Err(Error::config(format!("synthetic image size {size} is below 8")));
    }
    Shape::new(1, 1, size, size)
}

fn place_dots(spec: &CountingSynth, count: usize, rng: &mut RngState) -> Result<Vec<Dot>> {
    let lo = 2.0;
    let hi = spec.size as f64 - 2.0;
    let mut dots: Vec<Dot> = Vec::with_capacity(count);
    let mut attempts = 0;
    while dots.len() < count {
        attempts += 1;
        if attempts > 10_000 * count.max(1) {
            return Err(Error::config(format!(
                "cannot place {count} blobs {} px apart in a {}px image",
                spec.min_separation, spec.size
            )));
        }
        let d = Dot { x: rng.uniform_in(lo, hi), y: rng.uniform_in(lo, hi) };
        let clear = dots.iter().all(|o| (o.x - d.x).hypot(o.y - d.y) >= spec.min_separation);
        if clear {
            dots.push(d);
        }
    }
    Ok(dots)
}

/// `n` images of Gaussian blobs with signal-dependent noise. Each image holds
/// between `min_blobs` and `max_blobs` blobs and is annotated with one dot per
/// blob centre.
pub fn synth_counting_set(n: usize, spec: &CountingSynth, rng: &RngState) -> Result<Vec<Record>> {
    let shape = image_shape(spec.size)?;
    if spec.min_blobs > spec.max_blobs || spec.photons <= 0.0 {
        return Err(Error::config("invalid blob synthesis parameters"));
    }
    (0..n)
        .map(|k| {
            let mut rng = rng.substream(&format!("count{k}"));
            let count = spec.min_blobs + rng.below(spec.max_blobs - spec.min_blobs + 1);
            let dots = place_dots(spec, count, &mut rng)?;
            let blobs: Vec<(f64, f64)> =
                dots.iter().map(|_| (rng.uniform_in(1.2, 2.0), rng.uniform_in(0.6, 1.0))).collect();
            let mut image = Tensor::from_fn(shape, |_, _, i, j| {
                let mut v = 0.05;
                for (d, &(sigma, amp)) in dots.iter().zip(&blobs) {
                    let r2 = (j as f64 - d.x).powi(2) + (i as f64 - d.y).powi(2);
                    v += amp * (-r2 / (2.0 * sigma * sigma)).exp();
                }
                v as f32
            });
            for v in image.data_mut() {
                let mean = *v as f64;
                let noisy = mean + (mean / spec.photons).sqrt() * rng.normal();
                *v = noisy.clamp(0.0, 1.0) as f32;
            }
            Ok(Record { id: format!("count{k:04}"), image, annotation: Annotation::Dots(dots) })
        })
        .collect()
}

/// `n` images of dark curvilinear boundaries on a bright textured background,
/// labelled 1 on boundaries and 0 elsewhere.
pub fn synth_segmentation_set(n: usize, spec: &SegmentationSynth, rng: &RngState) -> Result<Vec<Record>> {
    let shape = image_shape(spec.size)?;
    if spec.min_curves > spec.max_curves {
        return Err(Error::config("min_curves exceeds max_curves"));
    }
    let size = spec.size;
    (0..n)
        .map(|k| {
            let mut rng = rng.substream(&format!("segment{k}"));
            let mut labels = vec![0u32; size * size];
            let curves = spec.min_curves + rng.below(spec.max_curves - spec.min_curves + 1);
            for _ in 0..curves {
                draw_curve(&mut labels, size, &mut rng);
            }
            let waves: Vec<[f64; 4]> = (0..4)
                .map(|_| {
                    let freq = rng.uniform_in(0.1, 0.4);
                    let angle = rng.uniform_in(0.0, std::f64::consts::TAU);
                    [
                        freq * angle.cos(),
                        freq * angle.sin(),
                        rng.uniform_in(0.0, std::f64::consts::TAU),
                        rng.uniform_in(0.03, 0.08),
                    ]
                })
                .collect();
            let mut image = Tensor::from_fn(shape, |_, _, i, j| {
                let texture: f64 =
                    waves.iter().map(|&[fx, fy, phase, amp]| amp * (fx * j as f64 + fy * i as f64 + phase).sin()).sum();
                let base = if labels[i * size + j] == 1 { 0.25 } else { 0.65 };
                (base + texture) as f32
            });
            for v in image.data_mut() {
                *v = (*v as f64 + 0.03 * rng.normal()).clamp(0.0, 1.0) as f32;
            }
            let labels = LabelMap::new(1, size, size, labels)?;
            Ok(Record { id: format!("segment{k:04}"), image, annotation: Annotation::Labels(labels) })
        })
        .collect()
}

// Smooth random walk entering from a random border point, drawn with a
// radius of one pixel.
fn draw_curve(labels: &mut [u32], size: usize, rng: &mut RngState) {
    let s = size as f64;
    let t = rng.uniform_in(0.0, s);
    let (mut x, mut y, mut heading) = match rng.below(4) {
        0 => (t, 0.0, std::f64::consts::FRAC_PI_2),
        1 => (t, s - 1.0, -std::f64::consts::FRAC_PI_2),
        2 => (0.0, t, 0.0),
        _ => (s - 1.0, t, std::f64::consts::PI),
    };
    heading += rng.uniform_in(-0.6, 0.6);
    let mut turn = 0.0;
    for _ in 0..4 * size {
        for i in (y - 1.0).floor().max(0.0) as usize..=((y + 1.0).ceil() as usize).min(size - 1) {
            for j in (x - 1.0).floor().max(0.0) as usize..=((x + 1.0).ceil() as usize).min(size - 1) {
                if (j as f64 - x).hypot(i as f64 - y) <= 1.0 {
                    labels[i * size + j] = 1;
                }
            }
        }
        turn = 0.8 * turn + 0.08 * rng.normal();
        heading += turn;
        x += 0.5 * heading.cos();
        y += 0.5 * heading.sin();
        if x < -1.0 || y < -1.0 || x > s || y > s {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sets() {
        let rng = RngState::new(1);
        assert!(synth_counting_set(0, &CountingSynth::default(), &rng).unwrap().is_empty());
        assert!(synth_segmentation_set(0, &SegmentationSynth::default(), &rng).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_counting_set(3, &CountingSynth::default(), &RngState::new(5)).unwrap();
        let b = synth_counting_set(3, &CountingSynth::default(), &RngState::new(5)).unwrap();
        let c = synth_counting_set(3, &CountingSynth::default(), &RngState::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let a = synth_segmentation_set(2, &SegmentationSynth::default(), &RngState::new(5)).unwrap();
        let b = synth_segmentation_set(2, &SegmentationSynth::default(), &RngState::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_bright_blob_per_dot() {
        let spec = CountingSynth::default();
        for rec in synth_counting_set(10, &spec, &RngState::new(2)).unwrap() {
            let Annotation::Dots(dots) = &rec.annotation else { panic!() };
            assert!((spec.min_blobs..=spec.max_blobs).contains(&dots.len()));
            for d in dots {
                let v = rec.image.at(0, 0, d.y.round() as usize, d.x.round() as usize);
                assert!(v > 0.3, "blob at {d:?} too dim: {v}");
                for o in dots {
                    assert!(o == d || (o.x - d.x).hypot(o.y - d.y) >= spec.min_separation);
                }
            }
            assert!(rec.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn boundaries_are_dark_and_sparse() {
        for rec in synth_segmentation_set(5, &SegmentationSynth::default(), &RngState::new(3)).unwrap() {
            let Annotation::Labels(labels) = &rec.annotation else { panic!() };
            let on: Vec<f32> =
                labels.data.iter().zip(rec.image.data()).filter(|(&l, _)| l == 1).map(|(_, &v)| v).collect();
            let frac = on.len() as f64 / labels.data.len() as f64;
            assert!(frac > 0.02 && frac < 0.6, "boundary fraction {frac}");
            let mean_on = on.iter().sum::<f32>() / on.len() as f32;
            assert!(mean_on < 0.45);
        }
    }
}
