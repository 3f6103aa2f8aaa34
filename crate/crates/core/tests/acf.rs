mod common;

use common::{fill, random_tensor, rng, set, worst_gradient_error};
use proptest::prelude::*;
use tbnet_core::acf::{fuse, Acf, ConcatFusion, GatePair, Stream, StreamFeature};
use tbnet_core::Error;
use tbnet_tensor::{Mode, ParamStore, Session, Tensor, Var};

fn features(s: &mut Session<f64>, f: Tensor<f64>, r: Tensor<f64>, level: usize) -> (StreamFeature, StreamFeature) {
    (
        StreamFeature { level, data: s.input(f), stream: Stream::Frequency },
        StreamFeature { level, data: s.input(r), stream: Stream::Rgb },
    )
}

fn manual_gates(s: &mut Session<f64>, a_r: Tensor<f64>) -> GatePair {
    let a_f = a_r.map(|v| 1.0 - v);
    let (gr, gf) = (s.input(a_r), s.input(a_f));
    GatePair { raw_rgb: gr, raw_freq: gf, gate_rgb: gr, gate_freq: gf }
}

#[test]
fn identical_gate_convs_split_evenly() {
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 2, 3, &mut rng(0)).unwrap();
    let w = store.value(store.id("acf.gate_rgb.weight").unwrap()).clone();
    let b = store.value(store.id("acf.gate_rgb.bias").unwrap()).clone();
    store.set(store.id("acf.gate_freq.weight").unwrap(), w).unwrap();
    store.set(store.id("acf.gate_freq.bias").unwrap(), b).unwrap();
    let mut s = Session::inference(&mut store);
    let (f, r) = features(&mut s, random_tensor(&[1, 3, 4, 4], &mut rng(1)), random_tensor(&[1, 3, 4, 4], &mut rng(2)), 2);
    let g = acf.compute_gates(&mut s, &f, &r).unwrap();
    assert!(s.value(g.gate_rgb).data().iter().all(|&a| (a - 0.5).abs() < 1e-12));
    assert!(s.value(g.gate_freq).data().iter().all(|&a| (a - 0.5).abs() < 1e-12));
}

#[test]
fn logit_gap_of_ln3_gives_three_to_one() {
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 3, 2, &mut rng(3)).unwrap();
    fill(&mut store, "acf.gate_rgb.weight", 0.0);
    fill(&mut store, "acf.gate_freq.weight", 0.0);
    fill(&mut store, "acf.gate_rgb.bias", 3f64.ln() + 0.7);
    fill(&mut store, "acf.gate_freq.bias", 0.7);
    let mut s = Session::inference(&mut store);
    let (f, r) = features(&mut s, random_tensor(&[1, 2, 3, 3], &mut rng(4)), random_tensor(&[1, 2, 3, 3], &mut rng(5)), 3);
    let g = acf.compute_gates(&mut s, &f, &r).unwrap();
    assert!(s.value(g.gate_rgb).data().iter().all(|&a| (a - 0.75).abs() < 1e-12));
    assert!(s.value(g.gate_freq).data().iter().all(|&a| (a - 0.25).abs() < 1e-12));
}

#[test]
fn degenerate_and_uniform_gates() {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::inference(&mut store);
    let (ft, rt) = (random_tensor(&[1, 3, 4, 4], &mut rng(6)), random_tensor(&[1, 3, 4, 4], &mut rng(7)));
    let (f, r) = features(&mut s, ft.clone(), rt.clone(), 4);
    let ones = manual_gates(&mut s, Tensor::full(&[1, 1, 4, 4], 1.0));
    let m = fuse(&mut s, &f, &r, ones).unwrap();
    assert_eq!(s.value(m.data).data(), rt.data());
    let half = manual_gates(&mut s, Tensor::full(&[1, 1, 4, 4], 0.5));
    let m = fuse(&mut s, &f, &r, half).unwrap();
    let avg = ft.zip_map(&rt, |a, b| (a + b) / 2.0);
    assert!(s.value(m.data).max_abs_diff(&avg) < 1e-15);
    assert_eq!(m.level, 4);
}

#[test]
fn matches_scalar_loop_on_micro_features() {
    let (c, h, w) = (2, 4, 4);
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 2, c, &mut rng(8)).unwrap();
    let wr = vec![0.4, -0.7, 0.2, 0.9];
    let wf = vec![-0.3, 0.5, 0.8, -0.1];
    set(&mut store, "acf.gate_rgb.weight", &[1, 4, 1, 1], wr.clone());
    set(&mut store, "acf.gate_freq.weight", &[1, 4, 1, 1], wf.clone());
    set(&mut store, "acf.gate_rgb.bias", &[1], vec![0.1]);
    set(&mut store, "acf.gate_freq.bias", &[1], vec![-0.2]);
    let (ft, rt) = (random_tensor(&[1, c, h, w], &mut rng(9)), random_tensor(&[1, c, h, w], &mut rng(10)));
    let mut s = Session::inference(&mut store);
    let (f, r) = features(&mut s, ft.clone(), rt.clone(), 2);
    let m = acf.forward(&mut s, &f, &r).unwrap();
    let out = s.value(m.data);
    for y in 0..h {
        for x in 0..w {
            // concatenation order is (f, r)
            let cat = [ft.at(0, 0, y, x), ft.at(0, 1, y, x), rt.at(0, 0, y, x), rt.at(0, 1, y, x)];
            let gr: f64 = cat.iter().zip(&wr).map(|(a, b)| a * b).sum::<f64>() + 0.1;
            let gf: f64 = cat.iter().zip(&wf).map(|(a, b)| a * b).sum::<f64>() - 0.2;
            let ar = gr.exp() / (gr.exp() + gf.exp());
            for ch in 0..c {
                let want = rt.at(0, ch, y, x) * ar + ft.at(0, ch, y, x) * (1.0 - ar);
                assert!((out.at(0, ch, y, x) - want).abs() < 1e-6);
            }
        }
    }
    assert!(m.gates.is_some());
}

#[test]
fn mismatched_streams_are_rejected() {
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 2, 3, &mut rng(11)).unwrap();
    let mut s = Session::inference(&mut store);
    let (f, r) = features(&mut s, Tensor::zeros(&[1, 3, 4, 4]), Tensor::zeros(&[1, 3, 2, 2]), 2);
    assert!(matches!(acf.forward(&mut s, &f, &r), Err(Error::Fusion(_))));
    let (f, r) = features(&mut s, Tensor::zeros(&[1, 3, 4, 4]), Tensor::zeros(&[1, 3, 4, 4]), 2);
    assert!(matches!(acf.forward(&mut s, &r, &f), Err(Error::Fusion(_))));
    let (f, r) = features(&mut s, Tensor::zeros(&[1, 2, 4, 4]), Tensor::zeros(&[1, 2, 4, 4]), 2);
    assert!(matches!(acf.forward(&mut s, &f, &r), Err(Error::Fusion(_))));
}

#[test]
fn concat_fusion_keeps_channel_count() {
    let mut store = ParamStore::<f64>::new();
    let cf = ConcatFusion::new(&mut store, "cat", 3, 5, &mut rng(12)).unwrap();
    let mut s = Session::inference(&mut store);
    let (f, r) = features(&mut s, random_tensor(&[2, 5, 3, 3], &mut rng(13)), random_tensor(&[2, 5, 3, 3], &mut rng(14)), 3);
    let m = cf.forward(&mut s, &f, &r).unwrap();
    assert_eq!(s.value(m.data).shape(), &[2, 5, 3, 3]);
    assert!(m.gates.is_none());
}

#[test]
fn gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 2, 2, &mut rng(15)).unwrap();
    let (ft, rt) = (random_tensor(&[1, 2, 4, 4], &mut rng(16)), random_tensor(&[1, 2, 4, 4], &mut rng(17)));
    let wts = random_tensor(&[1, 2, 4, 4], &mut rng(18));
    worst_gradient_error(&mut store, &["acf."], 8, |st| {
        let mut s = Session::new(st, Mode::Train);
        let (f, r) = features(&mut s, ft.clone(), rt.clone(), 2);
        let m = acf.forward(&mut s, &f, &r).unwrap();
        let loss = s.graph.dot_const(m.data, wts.clone());
        (s.graph, loss)
    });
}

fn run_random(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let acf = Acf::new(&mut store, "acf", 2, 3, &mut r).unwrap();
    let (ft, rt) = (random_tensor(&[2, 3, 5, 5], &mut r).map(|v| v * 4.0), random_tensor(&[2, 3, 5, 5], &mut r).map(|v| v * 4.0));
    let mut s = Session::inference(&mut store);
    let (f, rf) = features(&mut s, ft.clone(), rt.clone(), 2);
    let m = acf.forward(&mut s, &f, &rf).unwrap();
    let g = m.gates.unwrap();
    let val = |v: Var| s.value(v).clone();
    (ft, rt, val(m.data), val(g.gate_rgb), val(g.gate_freq))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gates_sum_to_one(seed in any::<u64>()) {
        let (_, _, _, ar, af) = run_random(seed);
        for (a, b) in ar.data().iter().zip(af.data()) {
            prop_assert!(*a > 0.0 && *a < 1.0 && *b > 0.0 && *b < 1.0);
            prop_assert!((a + b - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fused_map_is_a_convex_blend(seed in any::<u64>()) {
        let (ft, rt, m, _, _) = run_random(seed);
        for ((f, r), m) in ft.data().iter().zip(rt.data()).zip(m.data()) {
            prop_assert!(*m >= f.min(*r) - 1e-12 && *m <= f.max(*r) + 1e-12);
        }
    }
}
