mod common;

use common::{gap_direct, random_tensor, rng};
use diverse_replay::nets::{BackboneConfig, FeatureGenerator, GeneratorBank, Network};
use diverse_replay::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn cfg() -> BackboneConfig {
    BackboneConfig {
        in_channels: 1,
        image_size: 8,
        widths: vec![4, 6, 8],
        plug_point: 2,
    }
}

#[test]
fn split_forward_equals_full_forward() {
    let net = Network::<f64>::new(cfg(), &mut rng(1)).unwrap();
    let x = random_tensor(&mut rng(2), &[3, 1, 8, 8]);
    let mut t = Tape::no_grad();
    let xv = t.constant(x);
    let h = net.backbone.forward_f1(&mut t, xv).unwrap();
    assert_eq!(t.value(h).shape(), [3, 6, 4, 4]);
    assert_eq!(net.backbone.f1_shape(), (6, 4, 4));
    let split = net.backbone.forward_f2(&mut t, h).unwrap();
    let full = net.backbone.forward(&mut t, xv).unwrap();
    assert_eq!(t.value(split).data(), t.value(full).data());
    assert_eq!(t.value(full).shape(), [3, 8]);
}

#[test]
fn bad_plug_points_are_config_errors() {
    for p in [0, 3] {
        let mut c = cfg();
        c.plug_point = p;
        assert!(matches!(c.validate(), Err(diverse_replay::Error::Config { .. })));
    }
}

#[test]
fn head_growth_keeps_old_rows() {
    let mut net = Network::<f64>::new(cfg(), &mut rng(3)).unwrap();
    let mut r = rng(4);
    net.head.grow(3, &mut r).unwrap();
    let before = net.head.weight().unwrap().value().data().to_vec();
    net.head.grow(1, &mut r).unwrap();
    let after = net.head.weight().unwrap().value();
    assert_eq!(after.shape(), [4, 8]);
    assert_eq!(&after.data()[..before.len()], &before[..]);
    assert_eq!(net.head.task_rows(), [3, 1]);
    assert!(net.head.grow(0, &mut r).is_err());
}

#[test]
fn fresh_generator_passes_semantics_through() {
    let g = FeatureGenerator::<f64>::new(0, 3, 2, 9);
    // non-negative maps, as produced by the ReLU at the plug point
    let mut r = rng(5);
    let mut h = random_tensor(&mut r, &[2, 3, 4, 4]);
    h.data_mut().iter_mut().for_each(|v| *v = v.abs());
    let u = random_tensor(&mut r, &[2, 3, 4, 4]);
    let out = g.generate_detached(&h, &u).unwrap();
    assert_eq!(out.data(), h.data());
}

#[test]
fn generator_rejects_mismatched_maps() {
    let g = FeatureGenerator::<f64>::new(0, 3, 1, 9);
    let a = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
    let b = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
    assert!(g.generate_detached(&a, &b).is_err());
    let c = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    assert!(g.generate_detached(&c, &c).is_err());
}

#[test]
fn generator_init_independent_of_creation_order() {
    let mut a = GeneratorBank::<f64>::new();
    a.create_generators(&[2, 5], 4, 2, 0, 11).unwrap();
    let mut b = GeneratorBank::<f64>::new();
    b.create_generators(&[5], 4, 2, 1, 11).unwrap();
    b.create_generators(&[2], 4, 2, 0, 11).unwrap();
    for c in [2, 5] {
        assert_eq!(a.get(c).unwrap(), b.get(c).unwrap());
    }
    assert_ne!(a.get(2).unwrap().params()[0].value(), a.get(5).unwrap().params()[0].value());
    assert!(a.create_generators(&[2], 4, 2, 3, 11).is_err());
    assert!(a.get(7).is_err());
}

#[test]
fn prediction_ties_go_to_lowest_index() {
    let mut net = Network::<f64>::new(cfg(), &mut rng(6)).unwrap();
    net.head.grow(3, &mut rng(7)).unwrap();
    let w = net.head.params_mut().pop().unwrap();
    *w.value_mut() = Tensor::zeros(&[3, 8]);
    let preds = net.predict(random_tensor(&mut rng(8), &[4, 1, 8, 8])).unwrap();
    assert_eq!(preds, vec![0; 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn semantic_vector_is_channel_mean(seed in 0u64..1000, n in 1usize..4, c in 1usize..5, s in 1usize..5) {
        let h = random_tensor(&mut rng(seed), &[n, c, s, s]);
        let mut t = Tape::no_grad();
        let hv = t.constant(h.clone());
        let v = t.global_avg_pool(hv).unwrap();
        let got = t.value(v).data().to_vec();
        let want = gap_direct(&h);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_params_never_move(seed in 0u64..1000) {
        let mut net = Network::<f64>::new(cfg(), &mut rng(seed)).unwrap();
        net.head.grow(2, &mut rng(seed + 1)).unwrap();
        net.set_frozen(true);
        let before = net.clone();
        let x = random_tensor(&mut rng(seed + 2), &[2, 1, 8, 8]);
        let mut t = Tape::new();
        let xv = t.variable(x);
        let z = net.logits(&mut t, xv).unwrap();
        let l = t.softmax_cross_entropy(z, &[0, 1]).unwrap();
        let g = t.backward(l).unwrap();
        for p in net.params_mut() {
            p.accumulate(&g);
        }
        let mut ps = net.params_mut();
        diverse_replay::tensor::sgd_step(&mut ps, 0.5, 0.9).unwrap();
        prop_assert_eq!(net, before);
    }
}
