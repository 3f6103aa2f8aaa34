mod common;

use common::{random_image, rng};
use tbnet_core::checkpoint;
use tbnet_core::losses::{attach_total_loss, Lambdas};
use tbnet_core::morphology::make_boundary_gt;
use tbnet_core::{Ablation, BinaryMask, Error, FrequencyNorm, ImageTensor, NetworkConfig, TbNet};
use tbnet_tensor::{Mode, ParamStore, Session, Tensor};

fn small(ablation: Ablation) -> NetworkConfig {
    let mut c = NetworkConfig {
        input_size: 64,
        afs_out_channels: 8,
        bal_channels: 4,
        decoder_channels: 8,
        skip_channels: 4,
        ..NetworkConfig::default()
    };
    ablation.apply(&mut c);
    c
}

fn images(n: usize, side: usize, seed: u64) -> Vec<ImageTensor> {
    let mut r = rng(seed);
    (0..n).map(|_| random_image(side, side, &mut r)).collect()
}

#[test]
fn default_config_shapes_at_256() {
    let config = NetworkConfig::default();
    let mut store = ParamStore::<f32>::new();
    let net = TbNet::new(config, &mut store, &mut rng(0)).unwrap();
    let input = net.prepare_input::<f32>(&images(1, 256, 1)).unwrap();
    let mut s = Session::inference(&mut store);
    let out = net.forward(&mut s, &input).unwrap();
    let shape = |v| s.value(v).shape().to_vec();
    assert_eq!(shape(out.rgb[4].data)[2..], [8, 8]);
    assert_eq!(shape(out.frequency[3].data)[2..], [8, 8]);
    assert_eq!(shape(out.fusion[0].data)[2..], [64, 64]);
    // AFS output sits where the post-pool RGB stem would be
    assert_eq!(shape(out.afs.as_ref().unwrap().features), [1, 64, 64, 64]);
    for (r, f) in out.rgb[1..].iter().zip(&out.frequency) {
        assert_eq!(shape(r.data), shape(f.data));
    }
    assert_eq!(shape(out.region_logits), [1, 1, 256, 256]);
    assert_eq!(shape(out.boundary_logits.unwrap()), [1, 1, 256, 256]);
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut NetworkConfig)| {
        let mut c = NetworkConfig::default();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.input_size = 100));
    assert!(bad(|c| c.reduction = 7));
    assert!(bad(|c| c.block_size = 4));
    assert!(bad(|c| {
        c.use_rgb = false;
        c.use_frequency = false;
    }));
    assert!(bad(|c| c.use_rgb = false));
    assert!(NetworkConfig::default().validate().is_ok());
    let json = serde_json::to_string(&NetworkConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<NetworkConfig>(&json).unwrap(), NetworkConfig::default());
}

#[test]
fn every_ablation_builds_and_runs() {
    for ab in Ablation::ALL {
        let config = small(ab);
        assert_eq!(config.ablation(), Some(ab));
        assert_eq!(ab.name().parse::<Ablation>().unwrap(), ab);
        let mut store = ParamStore::<f32>::new();
        let net = TbNet::new(config, &mut store, &mut rng(2)).unwrap();
        let preds = net.predict(&mut store, &images(2, 64, 3), 2).unwrap();
        assert_eq!(preds.len(), 2);
        for p in &preds {
            assert!(p.region_logits.data().iter().all(|v| v.is_finite()));
            assert_eq!(p.boundary_logits.is_some(), ab.flags().3);
            assert_eq!(p.channel_weights.is_some(), ab.flags().1);
        }
        let names: Vec<String> = store.iter().map(|(_, e)| e.name().to_owned()).collect();
        let has = |prefix: &str| names.iter().any(|n| n.starts_with(prefix));
        let (rgb, freq, acf, bal) = ab.flags();
        assert_eq!(has("rgb."), rgb, "{ab}");
        assert_eq!(has("freq."), freq, "{ab}");
        assert_eq!(has("fusion."), rgb && freq, "{ab}");
        assert_eq!(has("fusion.level2.gate_rgb"), acf, "{ab}");
        assert_eq!(has("bal."), bal, "{ab}");
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let mut store = ParamStore::<f32>::new();
    let net = TbNet::new(small(Ablation::TbNet), &mut store, &mut rng(4)).unwrap();
    let imgs = images(2, 64, 5);
    let a = net.predict(&mut store, &imgs, 2).unwrap();
    let b = net.predict(&mut store, &imgs, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.region_logits, y.region_logits);
        assert_eq!(x.boundary_logits, y.boundary_logits);
    }
}

#[test]
fn degenerate_streams_stay_finite() {
    let mut store = ParamStore::<f64>::new();
    let net = TbNet::new(small(Ablation::TbNet), &mut store, &mut rng(6)).unwrap();
    let mut input = net.prepare_input::<f64>(&images(1, 64, 7)).unwrap();
    input.frequency = Some(Tensor::zeros(input.frequency.as_ref().unwrap().shape()));
    let mut s = Session::inference(&mut store);
    let out = net.forward(&mut s, &input).unwrap();
    assert!(s.value(out.region_logits).data().iter().all(|v| v.is_finite()));
    let fusion = out.fusion.clone();
    let zero = s.input(Tensor::zeros(&[1, 4, 64, 64]));
    let logits = net.decoder_forward(&mut s, &fusion, Some(zero), 64, 64).unwrap();
    assert!(s.value(logits).data().iter().all(|v| v.is_finite()));
}

#[test]
fn wrong_input_is_rejected() {
    let mut store = ParamStore::<f32>::new();
    let net = TbNet::new(small(Ablation::TbNet), &mut store, &mut rng(8)).unwrap();
    assert!(net.prepare_input::<f32>(&images(1, 32, 9)).is_err());
    let gray = ImageTensor::zeros(1, 64, 64, tbnet_core::ValueRange::Pixel255);
    assert!(net.prepare_input::<f32>(&[gray]).is_err());
}

#[test]
fn region_loss_gradient_reaches_frequency_selection() {
    let mut store = ParamStore::<f64>::new();
    let net = TbNet::new(small(Ablation::TbNet), &mut store, &mut rng(10)).unwrap();
    let imgs = images(2, 64, 11);
    net.fit_frequency_norm(&mut store, &imgs).unwrap();
    let mask = BinaryMask::from_fn(64, 64, |y, x| (10..40).contains(&y) && (20..50).contains(&x));
    let edge = make_boundary_gt(&mask, 3);
    let input = net.prepare_input::<f64>(&imgs).unwrap();
    let mut s = Session::new(&mut store, Mode::Train);
    let out = net.forward(&mut s, &input).unwrap();
    let lambdas = Lambdas { region: 1.0, boundary: 0.0, aware: 0.0 };
    let (loss, _) = attach_total_loss(&mut s.graph, out.region_logits, None, &[mask.clone(), mask], &[edge.clone(), edge], lambdas).unwrap();
    let grads = s.graph.backward(loss);
    let afs: Vec<_> = s.store.iter().filter(|(_, e)| e.name().starts_with("freq.afs.")).map(|(id, _)| id).collect();
    assert!(!afs.is_empty());
    let norm: f64 = afs.iter().filter_map(|&id| grads.param(id)).flat_map(|g| g.data().iter().map(|v| v * v)).sum();
    assert!(norm > 0.0 && norm.is_finite());
}

#[test]
fn checkpoint_round_trip_and_config_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(Ablation::TbNet);
    let mut store = ParamStore::<f32>::new();
    let net = TbNet::new(config.clone(), &mut store, &mut rng(12)).unwrap();
    let imgs = images(2, 64, 13);
    net.fit_frequency_norm(&mut store, &imgs).unwrap();
    checkpoint::save(dir.path(), &config, &store, 17).unwrap();
    let (net2, mut store2, manifest) = checkpoint::load::<f32>(dir.path()).unwrap();
    assert_eq!(manifest.step, 17);
    assert_eq!(manifest.format_version, checkpoint::FORMAT_VERSION);
    assert_eq!(net2.config(), &config);
    let a = net.predict(&mut store, &imgs, 2).unwrap();
    let b = net2.predict(&mut store2, &imgs, 2).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.region_logits, y.region_logits);
        assert_eq!(x.boundary_logits, y.boundary_logits);
    }

    let mut other = small(Ablation::TNet);
    let mut other_store = ParamStore::<f32>::new();
    TbNet::new(other.clone(), &mut other_store, &mut rng(14)).unwrap();
    assert!(matches!(checkpoint::load_into(dir.path(), &other, &mut other_store), Err(Error::Checkpoint(_))));
    other = config.clone();
    other.frequency_norm = FrequencyNorm::PerImage;
    let mut other_store = ParamStore::<f32>::new();
    TbNet::new(other.clone(), &mut other_store, &mut rng(15)).unwrap();
    assert!(matches!(checkpoint::load_into(dir.path(), &other, &mut other_store), Err(Error::Checkpoint(_))));
}

#[test]
fn edge_head_starts_as_identity_and_needs_the_boundary_stream() {
    let mut store = ParamStore::<f64>::new();
    TbNet::new(small(Ablation::TbNet), &mut store, &mut rng(10)).unwrap();
    let names: Vec<String> = store.iter().map(|(_, e)| e.name().to_string()).collect();
    let out_w = names.iter().find(|n| n.contains("edge_refine.out.weight")).expect("edge head registered");
    let out_b = names.iter().find(|n| n.contains("edge_refine.out.bias")).unwrap();
    // a zero last layer adds exactly nothing to the upsampled logits
    assert!(store.value(store.id(out_w).unwrap()).data().iter().all(|&v| v == 0.0));
    assert!(store.value(store.id(out_b).unwrap()).data().iter().all(|&v| v == 0.0));

    let mut rstore = ParamStore::<f64>::new();
    TbNet::new(small(Ablation::RNet), &mut rstore, &mut rng(12)).unwrap();
    assert!(rstore.iter().all(|(_, e)| !e.name().contains("edge_refine")));
}
