mod common;

use pasc_core::golden::inhibitory_fixture;
use pasc_core::graph::{parse_manifest, MatMulKernel, MatMulParams};
use pasc_core::pasc::{if_generic_layer, PascLayer, PascOp, Signal};
use pasc_core::tensor::{BatchNorm, BnAffine, FcParams};
use pasc_core::{ann_forward, check_equivalence, convert, snn_forward, Error, QcfsConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn toy() -> pasc_core::ModelGraph {
    let text = json!({"name": "toy", "classes": 2, "layers": [
        {"id": "in", "kind": "input", "shape": [2, 1, 1]},
        {"id": "fc1", "kind": "fc", "in_features": 2, "out_features": 2, "bias": true},
        {"id": "a1", "kind": "qcfs_act", "L": 2, "theta": 1.0},
        {"id": "fc2", "kind": "fc", "in_features": 2, "out_features": 2},
        {"id": "a2", "kind": "qcfs_act", "L": 4, "theta": 1.0},
        {"id": "fc3", "kind": "fc", "in_features": 2, "out_features": 2},
    ]})
    .to_string();
    let mut g = parse_manifest(&text).unwrap();
    g.set_weights("fc1", &[1.0, 0.0, 0.0, 1.0, 0.0, 0.25]).unwrap();
    g.set_weights("fc2", &[1.0, 1.0, 0.5, -1.0]).unwrap();
    g.set_weights("fc3", &[1.0, 0.0, 0.0, 1.0]).unwrap();
    g
}

#[test]
fn toy_network_by_hand() {
    let g = toy();
    let x = Tensor::new([1, 2, 1, 1], vec![0.6, 0.2]).unwrap();
    // fc1 → [0.6, 0.45]; L=2, θ=1: levels 1, 1 → [0.5, 0.5].
    // fc2 → [1.0, −0.25]; L=4: [1.0, 0.0]. fc3 is the identity.
    let ann = ann_forward(&g, &x).unwrap();
    assert_eq!(ann.logits().data(), &[1.0, 0.0]);
    let pasc = convert(&g).unwrap();
    let snn = snn_forward(&pasc, &x).unwrap();
    assert_eq!(snn.summed_logits.data(), &[1.0, 0.0]);
    assert_eq!(snn.logits.data(), &[0.25, 0.0]);
    let counts: Vec<Vec<u32>> = snn.trains.iter().map(|t| t.counts()).collect();
    assert_eq!(counts, vec![vec![1, 1], vec![4, 0]]);
}

#[test]
fn converted_constants_are_scaled_by_input_steps() {
    let pasc = convert(&toy()).unwrap();
    let steps: Vec<(String, u32)> = pasc
        .nodes
        .iter()
        .filter_map(|n| match &n.op {
            PascOp::MatMul { steps, .. } => Some((n.id.clone(), *steps)),
            _ => None,
        })
        .collect();
    assert_eq!(steps, vec![("fc1".into(), 1), ("fc2".into(), 2), ("fc3".into(), 4)]);
    let layers: Vec<(u32, u32, bool)> = pasc.if_layers().map(|l| (l.l_in, l.l_out, l.input_layer)).collect();
    assert_eq!(layers, vec![(1, 2, true), (2, 4, false)]);
    let theta_star: Vec<f32> = pasc.if_layers().map(|l| l.theta_star).collect();
    assert_eq!(theta_star, vec![0.5, 0.25]);
}

#[test]
fn affine_scaling_example() {
    let a = BnAffine {
        bias: vec![4.0],
        norm: Some(BatchNorm {
            gamma: vec![1.0],
            beta: vec![2.0],
            mean: vec![8.0],
            var: vec![1.0],
            eps: 1e-5,
        }),
    };
    let s = a.scaled(0.25);
    let bn = s.norm.as_ref().unwrap();
    assert_eq!((s.bias[0], bn.beta[0], bn.mean[0]), (1.0, 0.5, 2.0));
    assert_eq!((bn.gamma[0], bn.var[0]), (1.0, 1.0));

    // Four identical steps of the scaled affine sum to one unscaled pass.
    let p = MatMulParams {
        kernel: MatMulKernel::Fc(FcParams {
            weights: vec![0.5],
            out_features: 1,
            in_features: 1,
        }),
        affine: a.clone(),
    };
    let scaled = MatMulParams {
        kernel: p.kernel.clone(),
        affine: s,
    };
    let x = Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap();
    let quarter = Tensor::new([1, 1, 1, 1], vec![0.75]).unwrap();
    let step = scaled.forward(&quarter, 1.0).unwrap().data()[0];
    let whole = p.forward(&x, 1.0).unwrap().data()[0];
    assert!((4.0 * step - whole).abs() < 1e-6);
}

#[test]
fn zero_weights_stay_silent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = common::random_model(&mut rng, &common::SMALL);
    let dir = tempfile::tempdir().unwrap();
    for l in model.layers.iter().filter(|l| l.kind.is_matmul()) {
        let n = pasc_core::graph::blob_len(&l.kind);
        let bytes = vec![0u8; 4 * n];
        std::fs::write(dir.path().join(format!("{}.f32", l.id)), bytes).unwrap();
    }
    let zero = parse_manifest(&model.to_manifest()).unwrap().load_weights(dir.path());
    // Batch-norm variance of zero is rejected unless eps keeps it positive.
    let Ok(zero) = zero else { return };
    let x = common::random_input(&mut rng, &zero, 3);
    let snn = snn_forward(&convert(&zero).unwrap(), &x).unwrap();
    assert!(snn.trains.iter().all(|t| t.total_spikes() == 0));
    assert!(snn.logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_items_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let model = common::random_model(&mut rng, &common::SMALL);
        let pasc = convert(&model).unwrap();
        let batch = common::random_input(&mut rng, &model, 4);
        let whole = snn_forward(&pasc, &batch).unwrap();
        for b in 0..4 {
            let one = Tensor::new(
                [1, batch.channels(), batch.height(), batch.width()],
                batch.item(b).to_vec(),
            )
            .unwrap();
            let single = snn_forward(&pasc, &one).unwrap();
            assert_eq!(single.logits.data(), whole.logits.item(b));
        }
        let again = snn_forward(&pasc, &batch).unwrap();
        assert_eq!(again.logits, whole.logits);
    }
}

#[test]
fn random_models_are_equivalent() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let model = common::random_model(&mut rng, &common::SMALL);
        let x = common::random_input(&mut rng, &model, 2);
        let rep = check_equivalence(&model, &x).unwrap();
        assert_eq!(rep.argmax_agreement, 1.0);
        assert!(rep.max_rel_dev <= 1e-4, "{rep:?}");
    }
}

#[test]
fn inhibitory_fixture_matches_ann() {
    let g = inhibitory_fixture();
    let x = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
    let rep = check_equivalence(&g, &x).unwrap();
    assert_eq!(rep.inhibitory_spikes, 1);
    assert_eq!(rep.argmax_agreement, 1.0);
    assert_eq!(rep.max_rel_dev, 0.0);
    let ann = ann_forward(&g, &x).unwrap();
    assert_eq!(ann.logits().data(), &[-1.0, 1.0]);
}

#[test]
fn lower_to_higher_precision_boundary() {
    // L_in = 2 feeding L_out = 4: stage 2 runs 3 steps, the output has 4.
    let layer = PascLayer::new("a", 2, QcfsConfig::new(4, 1.0).unwrap(), false);
    let x = vec![Tensor::filled([1, 1, 1, 1], 0.5); 2];
    let (train, stats) = if_generic_layer(&x, &layer).unwrap();
    assert_eq!(stats.stage_steps, [2, 3, 4]);
    assert_eq!(train.counts(), vec![4]);
    let x = vec![Tensor::filled([1, 1, 1, 1], 0.2); 2];
    let (train, _) = if_generic_layer(&x, &layer).unwrap();
    // ANN: 0.4 → level ⌊1.6 + 0.5⌋ = 2.
    assert_eq!(train.counts(), vec![2]);
    assert_eq!(Signal::Train(train).sum().data(), &[0.5]);
}

#[test]
fn max_pool_is_not_convertible() {
    let text = json!({"name": "mp", "classes": 2, "layers": [
        {"id": "in", "kind": "input", "shape": [1, 2, 2]},
        {"id": "c", "kind": "conv", "in_channels": 1, "out_channels": 1, "kernel": [1, 1]},
        {"id": "a", "kind": "qcfs_act", "L": 2, "theta": 1.0},
        {"id": "mp", "kind": "max_pool", "window": 2},
        {"id": "fc", "kind": "fc", "in_features": 1, "out_features": 2},
    ]})
    .to_string();
    let g = parse_manifest(&text).unwrap().init_random(1);
    let err = convert(&g).unwrap_err();
    assert!(matches!(err, Error::Conversion { ref layer, .. } if layer == "mp"));
    assert!(err.to_string().contains("unsupported nonlinearity"));
    // The ANN path still runs it.
    ann_forward(&g, &Tensor::filled([1, 1, 2, 2], 0.5)).unwrap();
}

#[test]
fn unequal_residual_steps_are_rejected() {
    let text = json!({"name": "r", "classes": 2, "layers": [
        {"id": "in", "kind": "input", "shape": [1, 2, 2]},
        {"id": "c1", "kind": "conv", "in_channels": 1, "out_channels": 1, "kernel": [1, 1]},
        {"id": "a1", "kind": "qcfs_act", "L": 2, "theta": 1.0},
        {"id": "c2", "kind": "conv", "in_channels": 1, "out_channels": 1, "kernel": [1, 1]},
        {"id": "a2", "kind": "qcfs_act", "L": 4, "theta": 1.0},
        {"id": "add", "kind": "residual_add", "pred": ["a2", "a1"]},
        {"id": "fc", "kind": "fc", "in_features": 4, "out_features": 2},
    ]})
    .to_string();
    let g = parse_manifest(&text).unwrap().init_random(2);
    let err = convert(&g).unwrap_err();
    assert!(matches!(err, Error::Conversion { ref layer, .. } if layer == "add"), "{err}");
}

#[test]
fn wrong_input_shape_is_a_validation_error() {
    let pasc = convert(&toy()).unwrap();
    let err = snn_forward(&pasc, &Tensor::zeros([1, 3, 1, 1])).unwrap_err();
    assert!(matches!(err, Error::Validation { .. }));
}
