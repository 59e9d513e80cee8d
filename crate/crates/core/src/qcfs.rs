//! The ANN reference path: QCFS activation, traced forward pass and the
//! classification map.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, QcfsConfig};
use crate::tensor::{self, Tensor};
use crate::Real;

/// Quantization level `k ∈ 0..=L` of a pre-activation.
///
/// `k = clamp(⌊z·L/θ + ½⌋, 0, L)`. Inputs exactly on a level edge
/// `(k−½)·θ/L` land on level `k`.
#[inline]
pub fn qcfs_level(z: Real, cfg: QcfsConfig) -> u32 {
    let v = (z * cfg.levels as Real / cfg.theta + 0.5).floor();
    if v <= 0.0 {
        0
    } else if v >= cfg.levels as Real {
        cfg.levels
    } else {
        v as u32
    }
}

#[inline]
pub fn level_value(k: u32, cfg: QcfsConfig) -> Real {
    k as Real * cfg.theta_star()
}

#[inline]
pub fn qcfs_scalar(z: Real, cfg: QcfsConfig) -> Real {
    level_value(qcfs_level(z, cfg), cfg)
}

pub fn qcfs(z: &Tensor, cfg: QcfsConfig) -> Tensor {
    z.map(|v| qcfs_scalar(v, cfg))
}

/// Activations captured at one QCFS layer.
#[derive(Clone, Debug)]
pub struct QcfsTrace {
    pub id: String,
    pub layer: usize,
    pub config: QcfsConfig,
    pub pre: Tensor,
    pub post: Tensor,
    /// `histogram[k]` counts elements on level `k`.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Output of every layer, indexed like `ModelGraph::layers`.
    pub outputs: Vec<Tensor>,
    pub qcfs: Vec<QcfsTrace>,
}

impl LayerTrace {
    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("graph has layers")
    }
}

/// Runs the QCFS network on `input`, keeping every intermediate tensor.
pub fn ann_forward(model: &ModelGraph, input: &Tensor) -> Result<LayerTrace> {
    let [c, h, w] = model.input_shape();
    let d = input.dims();
    if d[1..] != [c, h, w] || d[0] == 0 {
        return Err(Error::Validation {
            layer: Some(model.layers[0].id.clone()),
            reason: format!("input dims {d:?} do not match model input (N, {c}, {h}, {w})"),
        });
    }
    let mut outputs: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    let mut traces = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let arg = |k: usize| &outputs[layer.preds[k]];
        let out = match &layer.kind {
            LayerKind::Input { .. } => input.clone(),
            LayerKind::Conv(_) | LayerKind::Fc(_) => model
                .matmul(&layer.id)?
                .forward(arg(0), 1.0)
                .map_err(|e| e.in_layer(&layer.id))?,
            LayerKind::AvgPool { window } => {
                tensor::avg_pool2d(arg(0), *window).map_err(|e| e.in_layer(&layer.id))?
            }
            LayerKind::MaxPool { window } => {
                tensor::max_pool2d(arg(0), *window).map_err(|e| e.in_layer(&layer.id))?
            }
            LayerKind::ResidualAdd => arg(0).add(arg(1)).map_err(|e| e.in_layer(&layer.id))?,
            LayerKind::Qcfs(cfg) => {
                let pre = arg(0).clone();
                let mut histogram = vec![0u64; cfg.levels as usize + 1];
                let post = qcfs(&pre, *cfg);
                for &v in pre.data() {
                    histogram[qcfs_level(v, *cfg) as usize] += 1;
                }
                traces.push(QcfsTrace {
                    id: layer.id.clone(),
                    layer: i,
                    config: *cfg,
                    pre,
                    post: post.clone(),
                    histogram,
                });
                post
            }
        };
        if !out.is_finite() {
            return Err(Error::Runtime {
                layer: layer.id.clone(),
                reason: "non-finite activation".into(),
            });
        }
        outputs.push(out);
    }
    Ok(LayerTrace {
        outputs,
        qcfs: traces,
    })
}

/// Normalized class scores `f(c) = z[c] / Σ z` with an independent argmax.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationMap {
    /// `None` when the logits sum to zero.
    pub probabilities: Option<Vec<f64>>,
    pub argmax: usize,
}

impl ClassificationMap {
    pub fn is_undefined(&self) -> bool {
        self.probabilities.is_none()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classification_map(logits: &[Real]) -> Result<ClassificationMap> {
    if logits.is_empty() {
        return Err(Error::shape("classification map needs at least one class"));
    }
    let total: f64 = logits.iter().map(|&v| v as f64).sum();
    let probabilities = if total == 0.0 {
        None
    } else {
        Some(logits.iter().map(|&v| v as f64 / total).collect())
    };
    Ok(ClassificationMap {
        probabilities,
        argmax: argmax(logits),
    })
}
