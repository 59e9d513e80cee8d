mod common;

use pasc_core::al::{al_metric, analyze, default_alpha, AlConfig, LevelHistogram};
use pasc_core::graph::parse_manifest;
use pasc_core::{ann_forward, Error, QcfsConfig, StatsError, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn hist(counts: &[u64]) -> LevelHistogram {
    let l = counts.len() as u32 - 1;
    LevelHistogram::new(counts.to_vec(), QcfsConfig::new(l, 1.0).unwrap()).unwrap()
}

fn config(chi: usize, levels: Vec<u32>) -> AlConfig {
    AlConfig {
        alpha: 0.1,
        chi,
        cluster_levels: levels,
        images: 1,
    }
}

#[test]
fn report_clusters_by_m() {
    let layers = vec![
        ("peaked".to_string(), hist(&[80, 10, 5, 3, 2])),
        ("flat".to_string(), hist(&[20, 20, 20, 20, 20])),
        ("peaked2".to_string(), hist(&[160, 20, 10, 6, 4])),
    ];
    let rep = analyze(&layers, config(2, vec![8, 2])).unwrap();
    let m: Vec<f64> = rep.layers.iter().map(|r| r.m.unwrap()).collect();
    assert!(m[0] > m[1] && m[2] > m[1], "{m:?}");
    let clusters: Vec<usize> = rep.layers.iter().map(|r| r.cluster.unwrap()).collect();
    assert_eq!(clusters, vec![1, 0, 1]);
    assert_eq!(rep.levels(), vec![Some(2), Some(8), Some(2)]);
    assert!(rep.warnings.is_empty());
}

#[test]
fn degenerate_layer_is_flagged_not_fatal() {
    let layers = vec![
        ("dead".to_string(), hist(&[50, 0, 0])),
        ("a".to_string(), hist(&[30, 10, 5])),
        ("b".to_string(), hist(&[10, 10, 25])),
    ];
    let rep = analyze(&layers, config(2, vec![4, 2])).unwrap();
    assert!(rep.layers[0].flag.is_some());
    assert_eq!(rep.layers[0].m, None);
    assert_eq!(rep.layers[0].cluster, None);
    assert!(rep.layers[1].cluster.is_some() && rep.layers[2].cluster.is_some());
    let csv = rep.to_csv();
    assert!(csv.starts_with("layer,A,g,kurtosis,M,cluster,assigned_L,flag\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn too_many_clusters_is_an_error() {
    let layers = vec![("a".to_string(), hist(&[30, 10, 5]))];
    let err = analyze(&layers, config(2, vec![4, 2])).unwrap_err();
    assert!(matches!(err, Error::Stats(StatsError::TooManyClusters { chi: 2, n: 1 })));
}

#[test]
fn constant_activations_flag_every_layer() {
    // Zero weights and bias: every QCFS layer sits on level 0.
    let text = json!({"name": "c", "classes": 2, "layers": [
        {"id": "in", "kind": "input", "shape": [1, 2, 2]},
        {"id": "c1", "kind": "conv", "in_channels": 1, "out_channels": 2, "kernel": [1, 1]},
        {"id": "a1", "kind": "qcfs_act", "L": 4, "theta": 1.0},
        {"id": "fc", "kind": "fc", "in_features": 8, "out_features": 2},
        ]})
    .to_string();
    let mut g = parse_manifest(&text).unwrap();
    g.set_weights("c1", &[0.0, 0.0]).unwrap();
    g.set_weights("fc", &[0.0; 16]).unwrap();
    let trace = ann_forward(&g, &Tensor::filled([3, 1, 2, 2], 0.5)).unwrap();
    let h = LevelHistogram::from_trace(&trace.qcfs[0]).unwrap();
    assert_eq!(h.counts, vec![24, 0, 0, 0, 0]);
    assert_eq!(al_metric(&h, 0.25), Err(StatsError::Degenerate));
}

#[test]
fn trace_histograms_feed_the_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = common::random_model(&mut rng, &common::ACCEPTANCE);
    let x = common::random_input(&mut rng, &model, 16);
    let trace = ann_forward(&model, &x).unwrap();
    let hs: Vec<(String, LevelHistogram)> = trace
        .qcfs
        .iter()
        .map(|t| (t.id.clone(), LevelHistogram::from_trace(t).unwrap()))
        .collect();
    for (t, (_, h)) in trace.qcfs.iter().zip(&hs) {
        assert_eq!(h.counts, t.histogram);
        assert_eq!(h.total() as usize, t.post.len());
    }
    let alpha = default_alpha(model.matmul_count());
    let rep = analyze(
        &hs,
        AlConfig {
            alpha,
            chi: 1,
            cluster_levels: vec![4],
            images: 16,
        },
    )
    .unwrap();
    assert_eq!(rep.layers.len(), hs.len());
    for row in &rep.layers {
        assert_eq!(row.cluster.is_some(), row.m.is_some());
    }
}

#[test]
fn all_degenerate_layers_skip_clustering() {
    let layers = vec![("a".to_string(), hist(&[9, 0, 0])), ("b".to_string(), hist(&[0, 4, 0]))];
    let rep = analyze(&layers, config(1, vec![4])).unwrap();
    assert!(rep.layers.iter().all(|r| r.flag.is_some() && r.cluster.is_none()));
    assert_eq!(rep.warnings.len(), 1);
}

#[test]
fn default_alpha_matches_layer_count() {
    assert_eq!(default_alpha(16), 1.0 / 32.0);
}
