//! Random model and input generators shared by the integration tests.
#![allow(dead_code)]

use pasc_core::graph::parse_manifest;
use pasc_core::{ModelGraph, Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const LEVELS: [u32; 4] = [1, 2, 4, 8];

/// Shape bounds of generated models.
pub struct Bounds {
    pub max_channels: usize,
    pub max_spatial: usize,
    pub matmuls: (usize, usize),
}

pub const ACCEPTANCE: Bounds = Bounds {
    max_channels: 16,
    max_spatial: 16,
    matmuls: (2, 5),
};

pub const SMALL: Bounds = Bounds {
    max_channels: 6,
    max_spatial: 6,
    matmuls: (2, 4),
};

fn affine_fields(rng: &mut impl Rng, layer: &mut Value) {
    layer["bias"] = json!(rng.gen_bool(0.5));
    if rng.gen_bool(0.5) {
        layer["bn"] = json!({"eps": 1e-5});
    }
}

/// Manifest for a random conv/pool/residual chain ending in an fc classifier.
///
/// Every hidden MatMul is followed by a QCFS layer with `L` drawn from
/// `LEVELS`; residual blocks add a same-width conv branch onto the previous
/// activation and reuse its `L` so the merge is convertible.
pub fn random_manifest(rng: &mut impl Rng, b: &Bounds) -> String {
    let mut layers = Vec::new();
    let mut c = rng.gen_range(1..=3usize);
    let mut hw = rng.gen_range(2..=b.max_spatial);
    layers.push(json!({"id": "in", "kind": "input", "shape": [c, hw, hw]}));
    let mut prev = "in".to_string();
    let mut prev_levels: Option<u32> = None;
    let matmuls = rng.gen_range(b.matmuls.0..=b.matmuls.1);
    let mut made = 0;
    let mut k = 0;
    while made < matmuls - 1 {
        k += 1;
        let residual = prev_levels.is_some() && made + 1 < matmuls - 1 && rng.gen_bool(0.3);
        let co = if residual { c } else { rng.gen_range(1..=b.max_channels) };
        let kernel = if residual || rng.gen_bool(0.6) { 3 } else { 1 };
        let mut conv = json!({
            "id": format!("conv{k}"), "kind": "conv", "pred": [prev],
            "in_channels": c, "out_channels": co,
            "kernel": [kernel, kernel], "padding": [kernel / 2, kernel / 2],
        });
        affine_fields(rng, &mut conv);
        layers.push(conv);
        made += 1;
        let mut act_in = format!("conv{k}");
        let levels = if residual {
            layers.push(json!({"id": format!("add{k}"), "kind": "residual_add",
                               "pred": [format!("conv{k}"), prev]}));
            act_in = format!("add{k}");
            prev_levels.unwrap()
        } else {
            *LEVELS.choose(rng).unwrap()
        };
        let theta: f64 = rng.gen_range(0.25..2.0);
        layers.push(json!({"id": format!("act{k}"), "kind": "qcfs_act", "pred": [act_in],
                           "L": levels, "theta": (theta as f32) as f64}));
        prev = format!("act{k}");
        prev_levels = Some(levels);
        c = co;
        if hw % 2 == 0 && hw > 2 && rng.gen_bool(0.3) {
            layers.push(json!({"id": format!("pool{k}"), "kind": "avg_pool", "window": 2,
                               "pred": [prev]}));
            prev = format!("pool{k}");
            hw /= 2;
        }
    }
    let classes = rng.gen_range(2..=10usize);
    let mut fc = json!({"id": "fc", "kind": "fc", "pred": [prev],
                        "in_features": c * hw * hw, "out_features": classes});
    affine_fields(rng, &mut fc);
    layers.push(fc);
    json!({"name": "random", "classes": classes, "layers": layers}).to_string()
}

pub fn random_model(rng: &mut impl Rng, b: &Bounds) -> ModelGraph {
    let text = random_manifest(rng, b);
    let seed = rng.gen();
    parse_manifest(&text)
        .unwrap_or_else(|e| panic!("generated manifest is invalid: {e}\n{text}"))
        .init_random(seed)
}

/// `n` inputs drawn uniform in `[0, 1]`.
pub fn random_input(rng: &mut impl Rng, model: &ModelGraph, n: usize) -> Tensor {
    let [c, h, w] = model.input_shape();
    let data = (0..n * c * h * w).map(|_| rng.gen::<Real>()).collect();
    Tensor::new([n, c, h, w], data).unwrap()
}
