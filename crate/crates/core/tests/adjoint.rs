//! Dot-product tests: ⟨A·u, v⟩ = ⟨u, Aᵀ·v⟩.

mod common;

use common::*;
use ctxnet::ops::{strided_conv2d, transposed_conv2d, ConvFilter};
use ctxnet::{RngState, Tape, Tensor};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn transposed_conv_is_adjoint_of_strided_conv() {
    for seed in 0..50 {
        let mut rng = RngState::new(seed).substream("adjoint-transposed");
        let k = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let x = random(shape(1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)), &mut rng);
        let out = 1 + rng.below(4);
        let weight = random(shape(out, x.shape().c, k, k), &mut rng);
        let filter = ConvFilter::new(weight.clone(), Tensor::zeros(shape(1, out, 1, 1))).unwrap();
        let tx = transposed_conv2d(&x, &filter, stride).unwrap();
        let y = random(tx.shape(), &mut rng);
        let sy = strided_conv2d(&y, &weight, stride, x.shape().h, x.shape().w).unwrap();
        let (lhs, rhs) = (tx.dot(&y).unwrap(), x.dot(&sy).unwrap());
        assert!(close(lhs, rhs), "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn contextual_conv_dot_product_test() {
    for seed in 0..50 {
        let mut rng = RngState::new(seed).substream("adjoint-contextual");
        let n = 1 + rng.below(2);
        let (h2, w2) = (1 + rng.below(8), 1 + rng.below(8));
        let (h1, w1) = (1 + rng.below(h2), 1 + rng.below(w2));
        let (cs, cl, out) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
        let shapes = [
            shape(n, cs, h1, w1),
            shape(n, cl, h2, w2),
            shape(out, cs, 3, 3),
            shape(1, out, 1, 1),
            shape(out, cl, 3, 3),
            shape(1, out, 1, 1),
        ];
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|&s| random(s, &mut rng)).collect();
        let dirs: Vec<Tensor<f64>> = shapes.iter().map(|&s| random(s, &mut rng)).collect();
        let ju = contextual_jvp(&inputs, &dirs);
        let v = random(ju.shape(), &mut rng);

        let mut tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let small_bank = ctxnet::ops::BankVars { weight: vars[2], bias: vars[3] };
        let large_bank = ctxnet::ops::BankVars { weight: vars[4], bias: vars[5] };
        let y = tape.contextual_conv(vars[0], vars[1], small_bank, large_bank).unwrap();
        let vv = tape.leaf(v.clone());
        let prod = tape.mul(y, vv).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        let rhs: f64 = vars.iter().zip(&dirs).map(|(&x, d)| tape.grad(x).unwrap().dot(d).unwrap()).sum();
        let lhs = ju.dot(&v).unwrap();
        assert!(close(lhs, rhs), "seed {seed} ({h1}x{w1} -> {h2}x{w2}): {lhs} vs {rhs}");
    }
}
