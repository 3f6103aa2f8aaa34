mod common;

use common::{fill, random_tensor, rng, set, worst_gradient_error};
use proptest::prelude::*;
use tbnet_core::acf::{FusionMap, Stream, StreamFeature};
use tbnet_core::bal::{fusion_level_for_unit, Bal, BoundaryInput, BoundaryState, Gcl};
use tbnet_core::losses::weighted_bce;
use tbnet_core::morphology::make_boundary_gt;
use tbnet_core::{BinaryMask, Error};
use tbnet_tensor::{Mode, ParamStore, Session, Tensor};

/// Half-pixel bilinear sample of a plane at output pixel (oy, ox).
fn bilinear_at(src: &[f64], h: usize, w: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, n: usize, on: usize| ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).max(0.0);
    let (y, x) = (coord(oy, h, oh), coord(ox, w, ow));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |yy: usize, xx: usize| src[yy * w + xx];
    (p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx) * (1.0 - fy) + (p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx) * fy
}

fn identity(c: usize) -> Vec<f64> {
    (0..c * c).map(|i| if i / c == i % c { 1.0 } else { 0.0 }).collect()
}

#[test]
fn level_schedule_clamps_at_five() {
    let levels: Vec<usize> = (1..=4).map(fusion_level_for_unit).collect();
    assert_eq!(levels, vec![3, 4, 5, 5]);
}

#[test]
fn input_projection_upsamples_to_full_resolution() {
    let mut store = ParamStore::<f32>::new();
    let bi = BoundaryInput::new(&mut store, "b", 64, 8, &mut rng(0)).unwrap();
    let mut s = Session::inference(&mut store);
    let r1 = StreamFeature { level: 1, data: s.input(Tensor::zeros(&[1, 64, 128, 128])), stream: Stream::Rgb };
    let b = bi.forward(&mut s, &r1, 256, 256);
    assert_eq!(s.value(b.feature).shape(), &[1, 8, 256, 256]);
    assert_eq!(b.t, 1);
}

#[test]
fn identity_projection_matches_scalar_bilinear() {
    let c = 3;
    let mut store = ParamStore::<f64>::new();
    let bi = BoundaryInput::new(&mut store, "b", c, c, &mut rng(1)).unwrap();
    set(&mut store, "b.proj.weight", &[c, c, 1, 1], identity(c));
    fill(&mut store, "b.proj.bias", 0.0);
    let x = random_tensor(&[1, c, 6, 7], &mut rng(2));
    let mut s = Session::inference(&mut store);
    let r1 = StreamFeature { level: 1, data: s.input(x.clone()), stream: Stream::Rgb };
    let b = bi.forward(&mut s, &r1, 12, 14);
    let out = s.value(b.feature);
    for &(ch, y, xx) in &[(0, 0, 0), (1, 5, 3), (2, 11, 13), (0, 7, 8), (1, 2, 12)] {
        let want = bilinear_at(x.plane(0, ch), 6, 7, 12, 14, y, xx);
        assert!((out.at(0, ch, y, xx) - want).abs() < 1e-5);
    }
    // constant input stays constant
    let mut s = Session::inference(&mut store);
    let r1 = StreamFeature { level: 1, data: s.input(Tensor::full(&[1, c, 6, 7], 0.25)), stream: Stream::Rgb };
    let b = bi.forward(&mut s, &r1, 12, 14);
    assert!(s.value(b.feature).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

fn gcl_with(store: &mut ParamStore<f64>, c: usize, gate_beta: f64) -> Gcl {
    let gcl = Gcl::new(store, "gcl", c, &mut rng(3)).unwrap();
    set(store, "gcl.channel_weight.weight", &[c, c, 1, 1], identity(c));
    fill(store, "gcl.gate_bn.beta", gate_beta);
    gcl
}

fn run_gcl(store: &mut ParamStore<f64>, gcl: &Gcl, b: &Tensor<f64>, m: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut s = Session::inference(store);
    let state = BoundaryState { t: 1, feature: s.input(b.clone()), attention: None };
    let mv = s.input(m.clone());
    let next = gcl.forward(&mut s, &state, mv).unwrap();
    assert_eq!(next.t, 2);
    (s.value(next.feature).clone(), s.value(next.attention.unwrap()).clone())
}

#[test]
fn closed_gate_is_identity_and_open_gate_doubles() {
    let mut store = ParamStore::<f64>::new();
    let b = random_tensor(&[1, 4, 6, 6], &mut rng(4));
    let m = random_tensor(&[1, 4, 6, 6], &mut rng(5));
    let gcl = gcl_with(&mut store, 4, -1e3);
    let (out, nu) = run_gcl(&mut store, &gcl, &b, &m);
    assert!(nu.data().iter().all(|&v| v < 1e-12));
    assert!(out.max_abs_diff(&b) < 1e-6);
    fill(&mut store, "gcl.gate_bn.beta", 1e3);
    let (out, _) = run_gcl(&mut store, &gcl, &b, &m);
    assert!(out.max_abs_diff(&b.map(|v| 2.0 * v)) < 1e-6);
}

#[test]
fn gated_update_matches_scalar_loop() {
    let (c, h, w) = (2, 4, 4);
    let mut store = ParamStore::<f64>::new();
    let gcl = Gcl::new(&mut store, "gcl", c, &mut rng(6)).unwrap();
    let wg = vec![0.5, -0.4, 0.3, 0.8];
    let wt = vec![0.9, -0.2, 0.4, 1.1];
    set(&mut store, "gcl.gate_conv.weight", &[1, 4, 1, 1], wg.clone());
    set(&mut store, "gcl.gate_conv.bias", &[1], vec![0.05]);
    set(&mut store, "gcl.gate_bn.gamma", &[1], vec![1.3]);
    set(&mut store, "gcl.gate_bn.beta", &[1], vec![-0.1]);
    set(&mut store, "gcl.gate_bn.running_mean", &[1], vec![0.2]);
    set(&mut store, "gcl.gate_bn.running_var", &[1], vec![0.7]);
    set(&mut store, "gcl.channel_weight.weight", &[c, c, 1, 1], wt.clone());
    let b = random_tensor(&[1, c, h, w], &mut rng(7));
    let m = random_tensor(&[1, c, h, w], &mut rng(8));
    let (out, nu) = run_gcl(&mut store, &gcl, &b, &m);
    for y in 0..h {
        for x in 0..w {
            // concatenation order is (m, b)
            let cat = [m.at(0, 0, y, x), m.at(0, 1, y, x), b.at(0, 0, y, x), b.at(0, 1, y, x)];
            let g: f64 = cat.iter().zip(&wg).map(|(a, k)| a * k).sum::<f64>() + 0.05;
            let g = 1.3 * (g - 0.2) / (0.7f64 + 1e-5).sqrt() - 0.1;
            let v = 1.0 / (1.0 + (-g).exp());
            assert!((nu.at(0, 0, y, x) - v).abs() < 1e-6);
            let gated: Vec<f64> = (0..c).map(|k| b.at(0, k, y, x) * v + b.at(0, k, y, x)).collect();
            for o in 0..c {
                let want: f64 = (0..c).map(|k| wt[o * c + k] * gated[k]).sum();
                assert!((out.at(0, o, y, x) - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn gated_conv_rejects_unresampled_fusion_map() {
    let mut store = ParamStore::<f64>::new();
    let gcl = Gcl::new(&mut store, "gcl", 2, &mut rng(9)).unwrap();
    let mut s = Session::inference(&mut store);
    let state = BoundaryState { t: 1, feature: s.input(Tensor::zeros(&[1, 2, 8, 8])), attention: None };
    let m = s.input(Tensor::zeros(&[1, 2, 4, 4]));
    assert!(matches!(gcl.forward(&mut s, &state, m), Err(Error::Shape(_))));
}

fn fusion_maps(s: &mut Session<f64>, chans: [usize; 4], size: usize, zero: bool, seed: u64) -> Vec<FusionMap> {
    let mut r = rng(seed);
    (0..4)
        .map(|i| {
            let side = size >> (i + 2);
            let shape = [2, chans[i], side, side];
            let t = if zero { Tensor::zeros(&shape) } else { random_tensor(&shape, &mut r) };
            FusionMap { level: i + 2, data: s.input(t), gates: None }
        })
        .collect()
}

#[test]
fn stream_stays_at_full_resolution() {
    let chans = [4, 8, 16, 32];
    let mut store = ParamStore::<f64>::new();
    let bal = Bal::new(&mut store, "bal", 4, chans, 6, 4, &mut rng(10)).unwrap();
    let mut s = Session::new(&mut store, Mode::Train);
    let r1 = StreamFeature { level: 1, data: s.input(random_tensor(&[2, 4, 16, 16], &mut rng(11))), stream: Stream::Rgb };
    let fusion = fusion_maps(&mut s, chans, 32, false, 12);
    let out = bal.forward(&mut s, &r1, &fusion, 32, 32).unwrap();
    assert_eq!(out.states.len(), 5);
    for st in &out.states {
        assert_eq!(s.value(st.feature).shape(), &[2, 6, 32, 32]);
        if let Some(a) = st.attention {
            assert!(s.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
    assert_eq!(s.value(out.logits).shape(), &[2, 1, 32, 32]);
    assert_eq!(bal.units.iter().map(|u| u.level).collect::<Vec<_>>(), vec![3, 4, 5, 5]);
}

#[test]
fn missing_fusion_level_is_a_config_error() {
    let chans = [4, 8, 16, 32];
    let mut store = ParamStore::<f64>::new();
    let bal = Bal::new(&mut store, "bal", 4, chans, 6, 4, &mut rng(13)).unwrap();
    let mut s = Session::inference(&mut store);
    let r1 = StreamFeature { level: 1, data: s.input(Tensor::zeros(&[2, 4, 16, 16])), stream: Stream::Rgb };
    let mut fusion = fusion_maps(&mut s, chans, 32, true, 14);
    fusion.retain(|m| m.level != 5);
    assert!(matches!(bal.forward(&mut s, &r1, &fusion, 32, 32), Err(Error::Config(_))));
}

#[test]
fn zero_inputs_with_zero_biases_give_the_head_bias() {
    let chans = [4, 8, 16, 32];
    let mut store = ParamStore::<f64>::new();
    let bal = Bal::new(&mut store, "bal", 4, chans, 6, 4, &mut rng(15)).unwrap();
    let names: Vec<String> = store.iter().map(|(_, e)| e.name().to_owned()).filter(|n| n.ends_with(".bias")).collect();
    for n in names {
        fill(&mut store, &n, 0.0);
    }
    fill(&mut store, "bal.head.bias", 0.3);
    let mut s = Session::inference(&mut store);
    let r1 = StreamFeature { level: 1, data: s.input(Tensor::zeros(&[2, 4, 16, 16])), stream: Stream::Rgb };
    let fusion = fusion_maps(&mut s, chans, 32, true, 16);
    let out = bal.forward(&mut s, &r1, &fusion, 32, 32).unwrap();
    assert!(s.value(out.logits).data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn boundary_loss_gradients_match_finite_differences() {
    let chans = [2, 4, 8, 16];
    let mut store = ParamStore::<f64>::new();
    let bal = Bal::new(&mut store, "bal", 3, chans, 4, 4, &mut rng(17)).unwrap();
    let r1 = random_tensor(&[2, 3, 16, 16], &mut rng(18));
    let fusion_t: Vec<Tensor<f64>> =
        (0..4).map(|i| random_tensor(&[2, chans[i], 32 >> (i + 2), 32 >> (i + 2)], &mut rng(19 + i as u64))).collect();
    let mask = BinaryMask::from_fn(32, 32, |y, x| (8..22).contains(&y) && (5..19).contains(&x));
    let edge = make_boundary_gt(&mask, 3);
    worst_gradient_error(&mut store, &["bal.unit2.gcl."], 4, |st| {
        let mut s = Session::new(st, Mode::Train);
        let r1v = StreamFeature { level: 1, data: s.input(r1.clone()), stream: Stream::Rgb };
        let fusion: Vec<FusionMap> = fusion_t
            .iter()
            .enumerate()
            .map(|(i, t)| FusionMap { level: i + 2, data: s.input(t.clone()), gates: None })
            .collect();
        let out = bal.forward(&mut s, &r1v, &fusion, 32, 32).unwrap();
        let logits = s.value(out.logits).clone();
        let mut value = 0.0;
        let mut grad = Vec::new();
        for n in 0..2 {
            let l = weighted_bce(logits.sample(n), edge.data()).unwrap();
            value += l.value / 2.0;
            grad.extend(l.grad.iter().map(|g| g / 2.0));
        }
        let loss = s.graph.external_scalar(out.logits, value, Tensor::new(logits.shape(), grad).unwrap());
        (s.graph, loss)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn wider_gate_never_shrinks_positive_features(lo in -5.0f64..5.0, delta in 0.0f64..5.0, seed in any::<u64>()) {
        let mut store = ParamStore::<f64>::new();
        let b = random_tensor(&[1, 3, 4, 4], &mut rng(seed)).map(|v| v.abs() + 0.01);
        let m = random_tensor(&[1, 3, 4, 4], &mut rng(seed ^ 1));
        let gcl = gcl_with(&mut store, 3, lo);
        let (low, _) = run_gcl(&mut store, &gcl, &b, &m);
        fill(&mut store, "gcl.gate_bn.beta", lo + delta);
        let (high, _) = run_gcl(&mut store, &gcl, &b, &m);
        for (h, l) in high.data().iter().zip(low.data()) {
            prop_assert!(*h >= *l - 1e-12);
        }
    }
}
