//! Structural invariants of the network, the data layer and augmentation.

mod common;

use common::*;
use ctxnet::data::checkpoint::{decode_checkpoint, encode_checkpoint};
use ctxnet::data::{density_from_dots, Dot, Sample, SplitSpec, Target};
use ctxnet::hourglass::{build_contextual_unet, build_unet, FeatureSource, Head, LinkSpec};
use ctxnet::training::{augment, AugmentationSpec, ElasticSpec};
use ctxnet::{HourglassConfig, Network, RngState, Tape, Tensor};
use proptest::prelude::*;

fn net_config(depth: usize, base: usize, head: Head) -> HourglassConfig {
    let out = if head == Head::SoftmaxSegmentation { 2 } else { 1 };
    HourglassConfig::new(depth, base, 1, out, head)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batch_items_are_independent(seed in 0u64..1000, depth in 1usize..3, n in 2usize..4) {
        let net: Network<f64> = build_contextual_unet(&net_config(depth, 2, Head::LinearDensity), &RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed + 1);
        let side = 4 << depth;
        let items: Vec<Tensor<f64>> = (0..n).map(|_| random(shape(1, 1, side, side), &mut rng)).collect();
        let batched = net.predict(&Tensor::stack(&items).unwrap()).unwrap();
        for (k, item) in items.iter().enumerate() {
            let alone = net.predict(item).unwrap();
            prop_assert_eq!(batched.item(k), alone.data());
        }
    }

    #[test]
    fn shape_program_matches_forward(depth in 1usize..4, base in 1usize..4, hm in 1usize..3, wm in 1usize..3, contextual: bool) {
        let config = net_config(depth, base, Head::SoftmaxSegmentation);
        let (h, w) = (hm << depth, wm << depth);
        let rng = RngState::new(3);
        let net: Network<f64> = if contextual { build_contextual_unet(&config, &rng) } else { build_unet(&config, &rng) }.unwrap();
        let mut tape = Tape::inference();
        let params = net.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(shape(2, 1, h, w)));
        let (out, trace) = net.forward_traced(&mut tape, &params, x).unwrap();
        prop_assert_eq!(&trace, &config.shape_program(2, h, w).unwrap());
        prop_assert_eq!(tape.value(out).shape(), shape(2, 2, h, w));
    }

    #[test]
    fn density_mass_equals_dot_count(dots in prop::collection::vec((0.0f64..23.999, 0.0f64..16.999), 0..20), sigma in 0.5f64..6.0) {
        let dots: Vec<Dot> = dots.into_iter().map(|(x, y)| Dot { x, y }).collect();
        let d: Tensor<f64> = density_from_dots(&dots, 17, 24, sigma).unwrap();
        prop_assert!((d.sum() - dots.len() as f64).abs() < 1e-6);
        prop_assert!(d.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn augmentation_preserves_density_mass(seed in 0u64..10_000, spacing in 2usize..20, sigma in 0.0f64..4.0) {
        let mut rng = RngState::new(seed);
        let dots: Vec<Dot> = (0..1 + rng.below(10)).map(|_| Dot { x: rng.uniform_in(0.0, 23.0), y: rng.uniform_in(0.0, 23.0) }).collect();
        let d: Tensor<f64> = density_from_dots(&dots, 24, 24, 2.0).unwrap();
        let sample = Sample::new("s", d.clone(), Target::Density(d)).unwrap();
        let spec = AugmentationSpec { elastic: Some(ElasticSpec { grid_spacing: spacing, sigma }), ..Default::default() };
        let out = augment(&sample, &spec, &mut rng);
        let (before, after) = (sample.count().unwrap(), out.count().unwrap());
        prop_assert!(((after - before) / before).abs() < 1e-3);
    }

    #[test]
    fn splits_are_disjoint_and_exact(len in 0usize..80, a in 0usize..30, b in 0usize..30, c in 0usize..30, seed: u64, random: bool) {
        let spec = if random { SplitSpec::Random { train: a, val: b, test: c, seed } } else { SplitSpec::Sequential { train: a, val: b, test: c } };
        match spec.apply(len) {
            Ok(split) => {
                prop_assert!(a + b + c <= len);
                prop_assert_eq!((split.train.len(), split.val.len(), split.test.len()), (a, b, c));
                let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), a + b + c);
                prop_assert!(all.iter().all(|&i| i < len));
            }
            Err(_) => prop_assert!(a + b + c > len),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(bits in prop::collection::vec(any::<u32>(), 64)) {
        let config = net_config(1, 1, Head::LinearDensity);
        let mut net: Network<f32> = build_contextual_unet(&config, &RngState::new(1)).unwrap();
        let mut k = 0;
        for p in net.params_mut() {
            for v in p.value.data_mut() {
                let candidate = f32::from_bits(bits[k % bits.len()]);
                *v = if candidate.is_nan() { f32::MIN_POSITIVE / 2.0 } else { candidate };
                k += 1;
            }
        }
        let back: Network<f32> = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        for (a, b) in back.params().iter().zip(net.params()) {
            prop_assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

// Every parameter tensor must receive a non-zero gradient; a dead one would
// mean a wiring mistake.
#[test]
fn no_dead_parameters() {
    let links = vec![
        LinkSpec { source: FeatureSource::Bottleneck, target: 0 },
        LinkSpec { source: FeatureSource::Bottleneck, target: 1 },
        LinkSpec { source: FeatureSource::Encoder(1), target: 0 },
        LinkSpec { source: FeatureSource::Decoder(1), target: 0 },
    ];
    for seed in 0..10 {
        for config in
            [net_config(2, 2, Head::LinearDensity), net_config(2, 2, Head::LinearDensity).with_links(links.clone())]
        {
            let net: Network<f64> = build_contextual_unet(&config, &RngState::new(seed)).unwrap();
            let mut rng = RngState::new(100 + seed);
            let mut tape = Tape::new();
            let params = net.bind(&mut tape);
            let x = tape.leaf(random(shape(2, 1, 8, 8), &mut rng));
            let out = net.forward(&mut tape, &params, x).unwrap();
            let target = tape.leaf(random(shape(2, 1, 8, 8), &mut rng));
            let loss = tape.mse_loss(out, target).unwrap();
            tape.backward(loss).unwrap();
            for (p, &v) in net.params().iter().zip(&params) {
                let g = tape.grad(v).unwrap_or_else(|| panic!("{} unreached", p.name));
                assert!(g.data().iter().any(|&x| x != 0.0), "seed {seed}: {} has zero gradient", p.name);
            }
        }
    }
}
