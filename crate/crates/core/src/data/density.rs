//! Density maps built from dot annotations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Point annotation in pixel coordinates: `x` is the column, `y` the row,
/// both 0-indexed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
}

/// Sum of one 2-D Gaussian per dot. Each Gaussian is cut at `4σ` and at the
/// image border and then rescaled to unit mass, so the map sums to the number
/// of dots.
pub fn density_from_dots<T: Real>(dots: &[Dot], h: usize, w: usize, sigma: f64) -> Result<Tensor<T>> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::contract(format!("density sigma must be positive, got {sigma}")));
    }
    let shape = Shape::new(1, 1, h, w)?;
    let mut map = vec![0.0f64; h * w];
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel = Vec::new();
    for dot in dots {
        if !(dot.x >= 0.0 && dot.x < w as f64 && dot.y >= 0.0 && dot.y < h as f64) {
            return Err(Error::data(format!("dot ({}, {}) outside {w}x{h} image", dot.x, dot.y)));
        }
        let (cx, cy) = (dot.x.round() as isize, dot.y.round() as isize);
        let rows = (cy - radius).max(0)..(cy + radius + 1).min(h as isize);
        let cols = (cx - radius).max(0)..(cx + radius + 1).min(w as isize);
        kernel.clear();
        let mut mass = 0.0;
        for i in rows.clone() {
            for j in cols.clone() {
                let d2 = (j as f64 - dot.x).powi(2) + (i as f64 - dot.y).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                mass += v;
                kernel.push((i as usize * w + j as usize, v));
            }
        }
        for &(idx, v) in &kernel {
            map[idx] += v / mass;
        }
    }
    Tensor::from_vec(shape, map.into_iter().map(T::from_f64_lossy).collect())
}

/// Reads `x,y` pairs, one per line, with an optional header row.
pub fn read_dots_csv(path: &Path) -> Result<Vec<Dot>> {
    let input_err = |message: String| Error::Input { path: path.to_owned(), message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(e.to_string()))?;
    let mut dots = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_err(e.to_string()))?;
        if record.len() < 2 {
            return Err(input_err(format!("line {}: expected x,y", line + 1)));
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        match parsed {
            (Ok(x), Ok(y)) => dots.push(Dot { x, y }),
            _ if line == 0 => continue, // header
            _ => return Err(input_err(format!("line {}: not a number pair", line + 1))),
        }
    }
    Ok(dots)
}

pub fn write_dots_csv(path: &Path, dots: &[Dot]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::Input { path: path.to_owned(), message: e.to_string() })?;
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer.write_record(["x", "y"]).map_err(to_io)?;
    for d in dots {
        writer.write_record([d.x.to_string(), d.y.to_string()]).map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_dots_no_mass() {
        let d: Tensor<f64> = density_from_dots(&[], 8, 8, 3.0).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_dot_has_unit_mass() {
        let d: Tensor<f64> = density_from_dots(&[Dot { x: 15.0, y: 16.0 }], 32, 32, 3.0).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-6);
        assert_eq!(d.at(0, 0, 16, 15), d.data().iter().cloned().fold(0.0, f64::max));
    }

    // Oracle: integrate the untruncated Gaussian numerically over a large
    // grid. A corner dot keeps about a quarter of that mass inside the image,
    // so the renormalization must scale by about 4 to restore unit mass.
    #[test]
    fn corner_dot_is_renormalized() {
        let sigma = 3.0;
        let g = |i: i64, j: i64| (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp();
        let full: f64 = (-40..=40).flat_map(|i| (-40..=40).map(move |j| g(i, j))).sum();
        let inside: f64 = (0..=12).flat_map(|i| (0..=12).map(move |j| g(i, j))).sum();
        let kept = inside / full;
        assert!((kept - 0.25).abs() < 0.1, "kept {kept}");

        let d: Tensor<f64> = density_from_dots(&[Dot { x: 0.0, y: 0.0 }], 32, 32, sigma).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-6);
        // Peak value equals the untruncated peak divided by the kept fraction.
        let peak_untruncated = 1.0 / full;
        assert!((d.at(0, 0, 0, 0) * kept / peak_untruncated - 1.0).abs() < 1e-3);
    }

    #[test]
    fn out_of_bounds_dot_rejected() {
        let r = density_from_dots::<f64>(&[Dot { x: 8.0, y: 1.0 }], 8, 8, 3.0);
        assert!(matches!(r, Err(Error::Data(_))));
        assert!(density_from_dots::<f64>(&[], 8, 8, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dots.csv");
        let dots = vec![Dot { x: 1.5, y: 2.0 }, Dot { x: 0.0, y: 7.25 }];
        write_dots_csv(&path, &dots).unwrap();
        assert_eq!(read_dots_csv(&path).unwrap(), dots);
        std::fs::write(&path, "3,4\n5, 6\n").unwrap();
        assert_eq!(read_dots_csv(&path).unwrap(), vec![Dot { x: 3.0, y: 4.0 }, Dot { x: 5.0, y: 6.0 }]);
        std::fs::write(&path, "x,y\n3,four\n").unwrap();
        assert!(read_dots_csv(&path).is_err());
    }
}
