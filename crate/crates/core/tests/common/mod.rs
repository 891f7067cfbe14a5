//! Naive reference implementations shared by the integration tests. They
//! follow the operator definitions loop by loop and share no code with the
//! library kernels.
#![allow(dead_code)]

use ctxnet::ops::{context_index_map, ConvFilter, SELU_ALPHA, SELU_LAMBDA};
use ctxnet::{RngState, Shape, Tensor};

pub fn random(shape: Shape, rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

pub fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w).unwrap()
}

pub fn random_filter(out: usize, inp: usize, k: usize, rng: &mut RngState) -> ConvFilter<f64> {
    ConvFilter::new(random(shape(out, inp, k, k), rng), random(shape(1, out, 1, 1), rng)).unwrap()
}

/// Zero-padded "same" cross-correlation with odd kernel.
pub fn naive_conv_same(x: &Tensor<f64>, f: &ConvFilter<f64>) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), f.weight.shape());
    let r = (ws.h / 2) as isize;
    Tensor::from_fn(xs.with_c(ws.n), |n, o, i, j| {
        let mut acc = f.bias.at(0, o, 0, 0);
        for c in 0..xs.c {
            for u in 0..ws.h as isize {
                for v in 0..ws.w as isize {
                    let (y, z) = (i as isize + u - r, j as isize + v - r);
                    if y >= 0 && z >= 0 && (y as usize) < xs.h && (z as usize) < xs.w {
                        acc += f.weight.at(o, c, u as usize, v as usize) * x.at(n, c, y as usize, z as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Scatter form: every input pixel stamps `x · w` into the output.
pub fn naive_transposed(x: &Tensor<f64>, f: &ConvFilter<f64>, stride: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), f.weight.shape());
    let k = ws.h;
    let out_shape = shape(xs.n, ws.n, (xs.h - 1) * stride + k, (xs.w - 1) * stride + k);
    let mut out = Tensor::from_fn(out_shape, |_, o, _, _| f.bias.at(0, o, 0, 0));
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    for o in 0..ws.n {
                        for u in 0..k {
                            for v in 0..k {
                                *out.at_mut(n, o, i * stride + u, j * stride + v) +=
                                    x.at(n, c, i, j) * f.weight.at(o, c, u, v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn naive_maxpool(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s.with_hw(s.h / 2, s.w / 2), |n, c, i, j| {
        let mut m = f64::NEG_INFINITY;
        for u in 0..2 {
            for v in 0..2 {
                m = m.max(x.at(n, c, 2 * i + u, 2 * j + v));
            }
        }
        m
    })
}

pub fn naive_selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

/// Floor-scaled index, computed in floating point.
pub fn float_index(i: usize, small: usize, large: usize) -> usize {
    (i as f64 * small as f64 / large as f64).floor() as usize
}

/// Large-grid response plus the small-grid response at the tied position,
/// then SeLU.
pub fn naive_contextual(
    small: &Tensor<f64>,
    large: &Tensor<f64>,
    fs: &ConvFilter<f64>,
    fl: &ConvFilter<f64>,
) -> Tensor<f64> {
    let a = naive_conv_same(small, fs);
    let b = naive_conv_same(large, fl);
    let (ss, ls) = (small.shape(), large.shape());
    Tensor::from_fn(b.shape(), |n, o, i, j| {
        let (p, q) = (float_index(i, ss.h, ls.h), float_index(j, ss.w, ls.w));
        naive_selu(b.at(n, o, i, j) + a.at(n, o, p, q))
    })
}

pub fn conv_linear(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let zero = Tensor::zeros(shape(1, w.shape().n, 1, 1));
    naive_conv_same(x, &ConvFilter::new(w.clone(), zero).unwrap())
}

pub fn gather(small: &Tensor<f64>, h2: usize, w2: usize) -> Tensor<f64> {
    let s = small.shape();
    Tensor::from_fn(s.with_hw(h2, w2), |n, c, i, j| small.at(n, c, float_index(i, s.h, h2), float_index(j, s.w, w2)))
}

pub fn broadcast_bias(b: &Tensor<f64>, like: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(like.shape(), |_, c, _, _| b.at(0, c, 0, 0))
}

// Jacobian-vector product of the contextual convolution, built by hand from
// its linear pieces: d(pre) then multiplied by selu'(pre).
pub fn contextual_jvp(inputs: &[Tensor<f64>], dirs: &[Tensor<f64>]) -> Tensor<f64> {
    let [small, large, ws, bs, wl, bl] = inputs else { unreachable!() };
    let [d_small, d_large, d_ws, d_bs, d_wl, d_bl] = dirs else { unreachable!() };
    let (h2, w2) = (large.shape().h, large.shape().w);
    let a = conv_linear(small, ws).add(&broadcast_bias(bs, &conv_linear(small, ws))).unwrap();
    let b = conv_linear(large, wl).add(&broadcast_bias(bl, &conv_linear(large, wl))).unwrap();
    let pre = b.add(&gather(&a, h2, w2)).unwrap();
    let da = conv_linear(d_small, ws).add(&conv_linear(small, d_ws)).unwrap().add(&broadcast_bias(d_bs, &a)).unwrap();
    let db = conv_linear(d_large, wl).add(&conv_linear(large, d_wl)).unwrap().add(&broadcast_bias(d_bl, &b)).unwrap();
    let dpre = db.add(&gather(&da, h2, w2)).unwrap();
    let slope = pre.map(|x| if x > 0.0 { SELU_LAMBDA } else { SELU_LAMBDA * SELU_ALPHA * x.exp() });
    slope.mul(&dpre).unwrap()
}

/// Checks the index map for every grid pair up to `max` along each axis:
/// in range, equal to the floating-point floor, monotone, identity on equal
/// extents. Returns the number of positions checked.
pub fn index_map_exhaustive(max: usize) -> Result<u64, String> {
    let mut checked = 0u64;
    for h2 in 1..=max {
        for h1 in 1..=h2 {
            for w2 in 1..=max {
                for w1 in 1..=w2 {
                    let mut prev_row = None;
                    for i in 0..h2 {
                        let mut prev_col = None;
                        let mut row = None;
                        for j in 0..w2 {
                            let (p, q) = context_index_map(i, j, h1, w1, h2, w2).map_err(|e| e.to_string())?;
                            let at = || format!("({i},{j}) for {h1}x{w1} -> {h2}x{w2}");
                            if p >= h1 || q >= w1 {
                                return Err(format!("out of range at {}", at()));
                            }
                            if (p, q) != (float_index(i, h1, h2), float_index(j, w1, w2)) {
                                return Err(format!("not the floor-scaled index at {}", at()));
                            }
                            if (h1 == h2 && p != i) || (w1 == w2 && q != j) {
                                return Err(format!("not the identity at {}", at()));
                            }
                            if prev_col.is_some_and(|prev| q < prev) || row.is_some_and(|r| r != p) {
                                return Err(format!("not monotone at {}", at()));
                            }
                            prev_col = Some(q);
                            row = Some(p);
                            checked += 1;
                        }
                        if let (Some(prev), Some(p)) = (prev_row, row) {
                            if p < prev {
                                return Err(format!("rows not monotone at row {i} for {h1} -> {h2}"));
                            }
                        }
                        prev_row = row;
                    }
                }
            }
        }
    }
    Ok(checked)
}
