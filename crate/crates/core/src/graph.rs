//! Model manifests, weight blobs and structural validation.
//!
//! A manifest is a JSON document listing layers in any order; parsing resolves
//! predecessors, fuses standalone batch-norm layers into the MatMul they
//! follow, topologically sorts the result and infers every layer's output
//! shape. See `schema/manifest.schema.json` for the field reference.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, BatchNorm, BnAffine, ConvParams, FcParams, Tensor};
use crate::Real;

const DEFAULT_BN_EPS: Real = 1e-5;

/// Quantization step and trained threshold of one QCFS activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QcfsConfig {
    pub levels: u32,
    pub theta: Real,
}

impl QcfsConfig {
    /// Shift term. Fixed: only ½ gives zero expected conversion error.
    pub const PHI: Real = 0.5;

    pub fn new(levels: u32, theta: Real) -> Result<Self> {
        if levels == 0 {
            return Err(Error::shape("quantization step L must be at least 1"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::shape(format!(
                "threshold theta must be positive and finite, got {theta}"
            )));
        }
        Ok(Self { levels, theta })
    }

    /// Spike amplitude `θ/L`.
    pub fn theta_star(&self) -> Real {
        self.theta / self.levels as Real
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnSpec {
    pub eps: Real,
    /// Id of the standalone `bn` layer this was fused from, if any.
    pub fused_from: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: bool,
    pub bn: Option<BnSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
    pub bn: Option<BnSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input { shape: [usize; 3] },
    Conv(ConvSpec),
    Fc(FcSpec),
    AvgPool { window: usize },
    MaxPool { window: usize },
    Qcfs(QcfsConfig),
    ResidualAdd,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc(_) => "fc",
            LayerKind::AvgPool { .. } => "avg_pool",
            LayerKind::MaxPool { .. } => "max_pool",
            LayerKind::Qcfs(_) => "qcfs_act",
            LayerKind::ResidualAdd => "residual_add",
        }
    }

    pub fn is_matmul(&self) -> bool {
        matches!(self, LayerKind::Conv(_) | LayerKind::Fc(_))
    }

    fn bn(&self) -> Option<&BnSpec> {
        match self {
            LayerKind::Conv(c) => c.bn.as_ref(),
            LayerKind::Fc(f) => f.bn.as_ref(),
            _ => None,
        }
    }

    fn has_bias(&self) -> bool {
        match self {
            LayerKind::Conv(c) => c.bias,
            LayerKind::Fc(f) => f.bias,
            _ => false,
        }
    }

    fn out_channels(&self) -> usize {
        match self {
            LayerKind::Conv(c) => c.out_channels,
            LayerKind::Fc(f) => f.out_features,
            _ => 0,
        }
    }

    fn weight_len(&self) -> usize {
        match self {
            LayerKind::Conv(c) => c.out_channels * c.in_channels * c.kernel.0 * c.kernel.1,
            LayerKind::Fc(f) => f.out_features * f.in_features,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerKind::Conv(c) => c.in_channels * c.kernel.0 * c.kernel.1,
            LayerKind::Fc(f) => f.in_features,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Indices into `ModelGraph::layers`, always smaller than this layer's own.
    pub preds: Vec<usize>,
    /// Output shape `(C, H, W)` per batch item.
    pub out_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatMulKernel {
    Conv(ConvParams),
    Fc(FcParams),
}

impl MatMulKernel {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            MatMulKernel::Conv(p) => tensor::conv2d(x, p),
            MatMulKernel::Fc(p) => tensor::fully_connected(x, p),
        }
    }

    pub fn weights(&self) -> &[Real] {
        match self {
            MatMulKernel::Conv(p) => &p.weights,
            MatMulKernel::Fc(p) => &p.weights,
        }
    }
}

/// Weights and additive constants of one MatMul(+BN) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MatMulParams {
    pub kernel: MatMulKernel,
    pub affine: BnAffine,
}

impl MatMulParams {
    /// Dense MatMul followed by the affine with constant scale `l_scale`.
    pub fn forward(&self, x: &Tensor, l_scale: Real) -> Result<Tensor> {
        let y = self.kernel.apply(x)?;
        tensor::fused_bn_affine(&y, &self.affine, l_scale)
    }
}

/// Validated layer graph in topological order, plus weights once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub seed: Option<u64>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    pub weights: BTreeMap<String, MatMulParams>,
}

impl ModelGraph {
    pub fn input_shape(&self) -> [usize; 3] {
        match self.layers[0].kind {
            LayerKind::Input { shape } => shape,
            _ => unreachable!("validated graphs start with their input layer"),
        }
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Number of MatMul layers, `|L_tot|`.
    pub fn matmul_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_matmul()).count()
    }

    /// Quantization steps of the QCFS layers in execution order.
    pub fn levels(&self) -> Vec<u32> {
        self.qcfs_layers().map(|(_, cfg)| cfg.levels).collect()
    }

    pub fn qcfs_layers(&self) -> impl Iterator<Item = (&LayerSpec, QcfsConfig)> {
        self.layers.iter().filter_map(|l| match l.kind {
            LayerKind::Qcfs(cfg) => Some((l, cfg)),
            _ => None,
        })
    }

    pub fn is_weighted(&self) -> bool {
        self.layers
            .iter()
            .filter(|l| l.kind.is_matmul())
            .all(|l| self.weights.contains_key(&l.id))
    }

    pub fn matmul(&self, id: &str) -> Result<&MatMulParams> {
        self.weights.get(id).ok_or_else(|| Error::Load {
            layer: id.to_string(),
            reason: "no weights loaded".into(),
        })
    }

    /// Installs weights for one MatMul layer after checking them against its spec.
    pub fn set_weights(&mut self, id: &str, blob: &[Real]) -> Result<()> {
        let layer = self
            .layers
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::Load {
                layer: id.into(),
                reason: "no such layer".into(),
            })?;
        let params = params_from_blob(layer, blob)?;
        self.weights.insert(id.to_string(), params);
        Ok(())
    }

    /// Loads `<layer_id>.f32` for every MatMul layer from `dir`.
    ///
    /// A MatMul whose batch norm came from a standalone `bn` layer may keep the
    /// four statistics vectors in a separate `<bn_id>.f32` blob.
    pub fn load_weights(mut self, dir: &Path) -> Result<Self> {
        let matmuls: Vec<LayerSpec> = self
            .layers
            .iter()
            .filter(|l| l.kind.is_matmul())
            .cloned()
            .collect();
        for layer in matmuls {
            let mut blob = read_blob(&dir.join(format!("{}.f32", layer.id)), &layer.id)?;
            if let Some(BnSpec {
                fused_from: Some(bn_id),
                ..
            }) = layer.kind.bn()
            {
                let without_bn = blob_len(&layer.kind) - 4 * layer.kind.out_channels();
                let bn_path = dir.join(format!("{bn_id}.f32"));
                if blob.len() == without_bn && bn_path.exists() {
                    blob.extend(read_blob(&bn_path, bn_id)?);
                }
            }
            let params = params_from_blob(&layer, &blob)?;
            self.weights.insert(layer.id.clone(), params);
        }
        Ok(self)
    }

    /// Writes one fused blob per MatMul layer.
    pub fn save_weights(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for layer in self.layers.iter().filter(|l| l.kind.is_matmul()) {
            let params = self.matmul(&layer.id)?;
            let blob = blob_from_params(params, layer.kind.has_bias());
            let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(format!("{}.f32", layer.id)), bytes)?;
        }
        Ok(())
    }

    /// Seeded random weights.
    ///
    /// The stream is ChaCha8 seeded with `seed`, consumed in layer order. For
    /// each MatMul: weights then bias drawn uniform in `[−r, r]` with
    /// `r = sqrt(1/fan_in)`; batch-norm γ ~ U[0.5, 1.5], β ~ U[−0.25, 0.25],
    /// μ ~ U[−0.25, 0.25], σ² ~ U[0.5, 1.5].
    pub fn init_random(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in self.layers.iter().filter(|l| l.kind.is_matmul()) {
            let r = (1.0 / layer.kind.fan_in() as f64).sqrt() as f32;
            let co = layer.kind.out_channels();
            let mut blob: Vec<Real> = (0..layer.kind.weight_len())
                .map(|_| rng.gen_range(-r..=r) as Real)
                .collect();
            if layer.kind.has_bias() {
                blob.extend((0..co).map(|_| rng.gen_range(-r..=r) as Real));
            }
            if layer.kind.bn().is_some() {
                blob.extend((0..co).map(|_| rng.gen_range(0.5f32..=1.5) as Real));
                blob.extend((0..co).map(|_| rng.gen_range(-0.25f32..=0.25) as Real));
                blob.extend((0..co).map(|_| rng.gen_range(-0.25f32..=0.25) as Real));
                blob.extend((0..co).map(|_| rng.gen_range(0.5f32..=1.5) as Real));
            }
            let params = params_from_blob(layer, &blob).expect("generated blob matches layer");
            self.weights.insert(layer.id.clone(), params);
        }
        self.seed = Some(seed);
        self
    }

    /// Manifest JSON for this graph (predecessors always explicit).
    pub fn to_manifest(&self) -> String {
        let doc = ManifestDoc {
            name: self.name.clone(),
            seed: self.seed,
            classes: self.classes,
            layers: self
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    id: l.id.clone(),
                    pred: Some(self.pred_ids(l)),
                    kind: manifest_kind(&l.kind),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("manifest serializes")
    }

    pub fn pred_ids(&self, layer: &LayerSpec) -> Vec<String> {
        layer
            .preds
            .iter()
            .map(|&p| self.layers[p].id.clone())
            .collect()
    }
}

/// Number of blob elements for a MatMul layer.
pub fn blob_len(kind: &LayerKind) -> usize {
    let co = kind.out_channels();
    kind.weight_len()
        + if kind.has_bias() { co } else { 0 }
        + if kind.bn().is_some() { 4 * co } else { 0 }
}

fn read_blob(path: &Path, layer: &str) -> Result<Vec<Real>> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        layer: layer.into(),
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Load {
            layer: layer.into(),
            reason: format!("blob size {} is not a multiple of 4 bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real)
        .collect())
}

fn params_from_blob(layer: &LayerSpec, blob: &[Real]) -> Result<MatMulParams> {
    let load_err = |reason: String| Error::Load {
        layer: layer.id.clone(),
        reason,
    };
    if !layer.kind.is_matmul() {
        return Err(load_err(format!("{} layers carry no weights", layer.kind.name())));
    }
    let expected = blob_len(&layer.kind);
    if blob.len() != expected {
        return Err(load_err(format!(
            "expected {expected} elements, got {}",
            blob.len()
        )));
    }
    if let Some(i) = blob.iter().position(|v| !v.is_finite()) {
        return Err(load_err(format!("non-finite value at element {i}")));
    }
    let co = layer.kind.out_channels();
    let (weights, mut rest) = blob.split_at(layer.kind.weight_len());
    let bias = if layer.kind.has_bias() {
        let (b, r) = rest.split_at(co);
        rest = r;
        b.to_vec()
    } else {
        vec![0.0; co]
    };
    let norm = layer.kind.bn().map(|spec| BatchNorm {
        gamma: rest[..co].to_vec(),
        beta: rest[co..2 * co].to_vec(),
        mean: rest[2 * co..3 * co].to_vec(),
        var: rest[3 * co..4 * co].to_vec(),
        eps: spec.eps,
    });
    let affine = BnAffine { bias, norm };
    affine.validate().map_err(|e| load_err(e.to_string()))?;
    let kernel = match &layer.kind {
        LayerKind::Conv(c) => MatMulKernel::Conv(ConvParams {
            weights: weights.to_vec(),
            out_channels: c.out_channels,
            in_channels: c.in_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
        }),
        LayerKind::Fc(f) => MatMulKernel::Fc(FcParams {
            weights: weights.to_vec(),
            out_features: f.out_features,
            in_features: f.in_features,
        }),
        _ => unreachable!(),
    };
    Ok(MatMulParams { kernel, affine })
}

fn blob_from_params(p: &MatMulParams, bias: bool) -> Vec<Real> {
    let mut blob = p.kernel.weights().to_vec();
    if bias {
        blob.extend_from_slice(&p.affine.bias);
    }
    if let Some(bn) = &p.affine.norm {
        blob.extend_from_slice(&bn.gamma);
        blob.extend_from_slice(&bn.beta);
        blob.extend_from_slice(&bn.mean);
        blob.extend_from_slice(&bn.var);
    }
    blob
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    classes: usize,
    layers: Vec<ManifestLayer>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLayer {
    id: String,
    #[serde(flatten)]
    kind: ManifestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pred: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize, Clone)]
struct BnField {
    #[serde(default = "default_eps")]
    eps: Real,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    from: Option<String>,
}

fn default_eps() -> Real {
    DEFAULT_BN_EPS
}

fn default_stride() -> [usize; 2] {
    [1, 1]
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestKind {
    Input {
        shape: [usize; 3],
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
        #[serde(default)]
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bn: Option<BnField>,
    },
    Fc {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bn: Option<BnField>,
    },
    Bn {
        #[serde(default = "default_eps")]
        eps: Real,
    },
    AvgPool {
        window: usize,
    },
    MaxPool {
        window: usize,
    },
    QcfsAct {
        #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
        levels: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Real>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi: Option<Real>,
    },
    ResidualAdd,
}

fn manifest_kind(kind: &LayerKind) -> ManifestKind {
    let bn_field = |bn: &Option<BnSpec>| {
        bn.as_ref().map(|b| BnField {
            eps: b.eps,
            from: b.fused_from.clone(),
        })
    };
    match kind {
        LayerKind::Input { shape } => ManifestKind::Input { shape: *shape },
        LayerKind::Conv(c) => ManifestKind::Conv {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: [c.kernel.0, c.kernel.1],
            stride: [c.stride.0, c.stride.1],
            padding: [c.padding.0, c.padding.1],
            bias: c.bias,
            bn: bn_field(&c.bn),
        },
        LayerKind::Fc(f) => ManifestKind::Fc {
            in_features: f.in_features,
            out_features: f.out_features,
            bias: f.bias,
            bn: bn_field(&f.bn),
        },
        LayerKind::AvgPool { window } => ManifestKind::AvgPool { window: *window },
        LayerKind::MaxPool { window } => ManifestKind::MaxPool { window: *window },
        LayerKind::Qcfs(cfg) => ManifestKind::QcfsAct {
            levels: Some(cfg.levels as i64),
            theta: Some(cfg.theta),
            phi: None,
        },
        LayerKind::ResidualAdd => ManifestKind::ResidualAdd,
    }
}

struct RawLayer {
    id: String,
    kind: ManifestKind,
    preds: Vec<String>,
}

/// Parses and validates a manifest. The result carries no weights.
pub fn parse_manifest(text: &str) -> Result<ModelGraph> {
    let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| Error::Manifest {
        layer: None,
        reason: format!("schema violation: {e}"),
    })?;
    if doc.layers.is_empty() {
        return Err(Error::Manifest {
            layer: None,
            reason: "manifest has no layers".into(),
        });
    }
    if doc.classes == 0 {
        return Err(Error::Manifest {
            layer: None,
            reason: "class count must be positive".into(),
        });
    }

    // Resolve implicit predecessors (previous layer in listing order).
    let mut raw: Vec<RawLayer> = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        if l.id.is_empty() {
            return Err(Error::Manifest {
                layer: None,
                reason: format!("layer #{i} has an empty id"),
            });
        }
        let preds = match (&l.kind, l.pred) {
            (_, Some(p)) => p,
            (ManifestKind::Input { .. }, None) => vec![],
            (_, None) if i == 0 => vec![],
            (_, None) => vec![raw[i - 1].id.clone()],
        };
        raw.push(RawLayer {
            id: l.id,
            kind: l.kind,
            preds,
        });
    }
    let mut seen = HashMap::new();
    for l in &raw {
        if seen.insert(l.id.clone(), ()).is_some() {
            return Err(Error::manifest(&l.id, "duplicate layer id"));
        }
    }
    for l in &raw {
        for p in &l.preds {
            if !seen.contains_key(p) {
                return Err(Error::manifest(
                    &l.id,
                    format!("dangling predecessor `{p}`"),
                ));
            }
        }
    }

    let raw = fuse_batch_norms(raw)?;
    let order = topological_order(&raw)?;

    let position: HashMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (raw[i].id.as_str(), pos))
        .collect();
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(raw.len());
    for &i in &order {
        let r = &raw[i];
        let preds: Vec<usize> = r.preds.iter().map(|p| position[p.as_str()]).collect();
        let kind = layer_kind(r)?;
        layers.push(LayerSpec {
            id: r.id.clone(),
            kind,
            preds,
            out_shape: [0; 3],
        });
    }

    validate_structure(&layers)?;
    for i in 0..layers.len() {
        let shape = infer_shape(&layers, i).map_err(|e| e.in_layer(&layers[i].id))?;
        layers[i].out_shape = shape;
    }
    let out = layers.last().expect("non-empty");
    let out_len: usize = out.out_shape.iter().product();
    if out_len != doc.classes {
        return Err(Error::manifest(
            &out.id,
            format!(
                "output has {out_len} elements but the manifest declares {} classes",
                doc.classes
            ),
        ));
    }

    Ok(ModelGraph {
        name: doc.name,
        seed: doc.seed,
        classes: doc.classes,
        layers,
        weights: BTreeMap::new(),
    })
}

fn fuse_batch_norms(mut raw: Vec<RawLayer>) -> Result<Vec<RawLayer>> {
    loop {
        let Some(bi) = raw.iter().position(|l| matches!(l.kind, ManifestKind::Bn { .. })) else {
            return Ok(raw);
        };
        let bn = raw.remove(bi);
        let ManifestKind::Bn { eps } = bn.kind else { unreachable!() };
        if bn.preds.len() != 1 {
            return Err(Error::manifest(&bn.id, "bn must follow exactly one MatMul layer"));
        }
        let target = bn.preds[0].clone();
        let consumers = raw.iter().filter(|l| l.preds.contains(&target)).count();
        if consumers > 0 {
            return Err(Error::manifest(
                &bn.id,
                format!("cannot fuse bn: `{target}` has other consumers"),
            ));
        }
        let mm = raw
            .iter_mut()
            .find(|l| l.id == target)
            .expect("predecessor resolved");
        let field = BnField {
            eps,
            from: Some(bn.id.clone()),
        };
        match &mut mm.kind {
            ManifestKind::Conv { bn: slot, .. } | ManifestKind::Fc { bn: slot, .. } => {
                if slot.is_some() {
                    return Err(Error::manifest(
                        &bn.id,
                        format!("`{target}` already has a batch norm"),
                    ));
                }
                *slot = Some(field);
            }
            _ => {
                return Err(Error::manifest(
                    &bn.id,
                    "bn must directly follow a conv or fc layer",
                ))
            }
        }
        for l in raw.iter_mut() {
            for p in l.preds.iter_mut() {
                if *p == bn.id {
                    *p = target.clone();
                }
            }
        }
    }
}

/// Kahn's algorithm; ties broken by listing order.
fn topological_order(raw: &[RawLayer]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = raw
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect();
    let mut indegree: Vec<usize> = raw.iter().map(|l| l.preds.len()).collect();
    let mut consumers: Vec<Vec<usize>> = vec![vec![]; raw.len()];
    for (i, l) in raw.iter().enumerate() {
        for p in &l.preds {
            consumers[index[p.as_str()]].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..raw.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(raw.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != raw.len() {
        let stuck = (0..raw.len()).find(|&i| indegree[i] > 0).unwrap();
        return Err(Error::manifest(&raw[stuck].id, "cycle in layer graph"));
    }
    Ok(order)
}

fn bn_spec(field: &Option<BnField>, id: &str) -> Result<Option<BnSpec>> {
    match field {
        None => Ok(None),
        Some(f) if !(f.eps > 0.0) => Err(Error::manifest(id, "batch-norm eps must be positive")),
        Some(f) => Ok(Some(BnSpec {
            eps: f.eps,
            fused_from: f.from.clone(),
        })),
    }
}

fn layer_kind(r: &RawLayer) -> Result<LayerKind> {
    let positive = |v: usize, what: &str| {
        if v == 0 {
            Err(Error::manifest(&r.id, format!("{what} must be positive")))
        } else {
            Ok(v)
        }
    };
    Ok(match &r.kind {
        ManifestKind::Input { shape } => {
            for d in shape {
                positive(*d, "input shape entries")?;
            }
            LayerKind::Input { shape: *shape }
        }
        ManifestKind::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias,
            bn,
        } => LayerKind::Conv(ConvSpec {
            in_channels: positive(*in_channels, "in_channels")?,
            out_channels: positive(*out_channels, "out_channels")?,
            kernel: (positive(kernel[0], "kernel")?, positive(kernel[1], "kernel")?),
            stride: (positive(stride[0], "stride")?, positive(stride[1], "stride")?),
            padding: (padding[0], padding[1]),
            bias: *bias,
            bn: bn_spec(bn, &r.id)?,
        }),
        ManifestKind::Fc {
            in_features,
            out_features,
            bias,
            bn,
        } => LayerKind::Fc(FcSpec {
            in_features: positive(*in_features, "in_features")?,
            out_features: positive(*out_features, "out_features")?,
            bias: *bias,
            bn: bn_spec(bn, &r.id)?,
        }),
        ManifestKind::AvgPool { window } => LayerKind::AvgPool {
            window: positive(*window, "window")?,
        },
        ManifestKind::MaxPool { window } => LayerKind::MaxPool {
            window: positive(*window, "window")?,
        },
        ManifestKind::QcfsAct { levels, theta, phi } => {
            let levels = levels.ok_or_else(|| Error::manifest(&r.id, "qcfs_act is missing L"))?;
            let theta = theta.ok_or_else(|| Error::manifest(&r.id, "qcfs_act is missing theta"))?;
            if levels < 1 || levels > u32::MAX as i64 {
                return Err(Error::manifest(&r.id, format!("L must be at least 1, got {levels}")));
            }
            if let Some(phi) = phi {
                if *phi != QcfsConfig::PHI {
                    return Err(Error::manifest(&r.id, format!("phi is fixed at 0.5, got {phi}")));
                }
            }
            LayerKind::Qcfs(QcfsConfig::new(levels as u32, theta).map_err(|e| e.in_layer(&r.id))?)
        }
        ManifestKind::ResidualAdd => LayerKind::ResidualAdd,
        ManifestKind::Bn { .. } => unreachable!("fused before kind resolution"),
    })
}

fn validate_structure(layers: &[LayerSpec]) -> Result<()> {
    let inputs: Vec<&LayerSpec> = layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Input { .. }))
        .collect();
    if inputs.len() != 1 {
        return Err(Error::Manifest {
            layer: None,
            reason: format!("graph needs exactly one input layer, found {}", inputs.len()),
        });
    }
    let mut consumer_count = vec![0usize; layers.len()];
    for l in layers {
        for &p in &l.preds {
            consumer_count[p] += 1;
        }
    }
    let outputs: Vec<&LayerSpec> = layers
        .iter()
        .zip(&consumer_count)
        .filter(|(_, &c)| c == 0)
        .map(|(l, _)| l)
        .collect();
    if outputs.len() != 1 {
        return Err(Error::Manifest {
            layer: None,
            reason: format!(
                "graph needs exactly one output, found {}: {}",
                outputs.len(),
                outputs.iter().map(|l| l.id.as_str()).collect::<Vec<_>>().join(", ")
            ),
        });
    }
    for l in layers {
        let arity = l.preds.len();
        match &l.kind {
            LayerKind::Input { .. } => {
                if arity != 0 {
                    return Err(Error::manifest(&l.id, "input layer takes no predecessors"));
                }
            }
            LayerKind::ResidualAdd => {
                if arity != 2 {
                    return Err(Error::manifest(
                        &l.id,
                        format!("residual_add arity: needs exactly 2 predecessors, got {arity}"),
                    ));
                }
            }
            _ => {
                if arity != 1 {
                    return Err(Error::manifest(
                        &l.id,
                        format!("{} arity: needs exactly 1 predecessor, got {arity}", l.kind.name()),
                    ));
                }
            }
        }
        if let LayerKind::Qcfs(_) = l.kind {
            let pred = &layers[l.preds[0]];
            let ok = pred.kind.is_matmul()
                || matches!(pred.kind, LayerKind::ResidualAdd | LayerKind::Input { .. });
            if !ok {
                return Err(Error::manifest(
                    &l.id,
                    format!(
                        "qcfs_act must follow a MatMul(+BN) or residual_add layer, found {} `{}`",
                        pred.kind.name(),
                        pred.id
                    ),
                ));
            }
        }
    }
    Ok(())
}

fn infer_shape(layers: &[LayerSpec], i: usize) -> Result<[usize; 3]> {
    let l = &layers[i];
    let input = |k: usize| layers[l.preds[k]].out_shape;
    Ok(match &l.kind {
        LayerKind::Input { shape } => *shape,
        LayerKind::Conv(c) => {
            let [ci, h, w] = input(0);
            if ci != c.in_channels {
                return Err(Error::shape(format!(
                    "conv expects {} input channels, predecessor yields {ci}",
                    c.in_channels
                )));
            }
            let p = ConvParams {
                weights: vec![],
                out_channels: c.out_channels,
                in_channels: c.in_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            };
            let (ho, wo) = p.output_hw(h, w)?;
            [c.out_channels, ho, wo]
        }
        LayerKind::Fc(f) => {
            let features: usize = input(0).iter().product();
            if features != f.in_features {
                return Err(Error::shape(format!(
                    "fc expects {} input features, predecessor yields {features}",
                    f.in_features
                )));
            }
            [f.out_features, 1, 1]
        }
        LayerKind::AvgPool { window } | LayerKind::MaxPool { window } => {
            let [c, h, w] = input(0);
            if h % window != 0 || w % window != 0 {
                return Err(Error::shape(format!(
                    "pooling window {window} does not divide {h}x{w}"
                )));
            }
            [c, h / window, w / window]
        }
        LayerKind::Qcfs(_) => input(0),
        LayerKind::ResidualAdd => {
            let (a, b) = (input(0), input(1));
            if a != b {
                return Err(Error::shape(format!(
                    "residual_add operands have shapes {a:?} and {b:?}"
                )));
            }
            a
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"{
        "name": "toy",
        "classes": 3,
        "layers": [
            {"id": "in", "kind": "input", "shape": [3, 4, 4]},
            {"id": "c1", "kind": "conv", "in_channels": 3, "out_channels": 4,
             "kernel": [3, 3], "padding": [1, 1], "bias": true},
            {"id": "a1", "kind": "qcfs_act", "L": 4, "theta": 1.0},
            {"id": "f1", "kind": "fc", "in_features": 64, "out_features": 3, "bias": true}
        ]
    }"#;

    #[test]
    fn parses_toy_chain() {
        let g = parse_manifest(TOY).unwrap();
        assert_eq!(g.layers.len(), 4);
        assert_eq!(g.layers[1].out_shape, [4, 4, 4]);
        assert_eq!(g.layers[3].out_shape, [3, 1, 1]);
        assert_eq!(g.levels(), vec![4]);
        assert_eq!(g.matmul_count(), 2);
    }

    #[test]
    fn residual_arity_error() {
        let text = r#"{"name":"r","classes":4,"layers":[
            {"id":"in","kind":"input","shape":[4,1,1]},
            {"id":"add","kind":"residual_add","pred":["in"]}
        ]}"#;
        let err = parse_manifest(text).unwrap_err().to_string();
        assert!(err.contains("residual_add arity"), "{err}");
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn rejects_cycle_and_dangling() {
        let cyc = r#"{"name":"c","classes":2,"layers":[
            {"id":"in","kind":"input","shape":[2,1,1]},
            {"id":"f1","kind":"fc","in_features":2,"out_features":2,"pred":["f2"]},
            {"id":"f2","kind":"fc","in_features":2,"out_features":2,"pred":["f1"]},
            {"id":"out","kind":"residual_add","pred":["in","f2"]}
        ]}"#;
        assert!(parse_manifest(cyc).unwrap_err().to_string().contains("cycle"));
        let dangling = r#"{"name":"d","classes":2,"layers":[
            {"id":"in","kind":"input","shape":[2,1,1]},
            {"id":"f1","kind":"fc","in_features":2,"out_features":2,"pred":["nope"]}
        ]}"#;
        assert!(parse_manifest(dangling).unwrap_err().to_string().contains("dangling"));
    }

    #[test]
    fn qcfs_must_follow_matmul() {
        let text = r#"{"name":"q","classes":4,"layers":[
            {"id":"in","kind":"input","shape":[1,4,4]},
            {"id":"c","kind":"conv","in_channels":1,"out_channels":1,"kernel":[1,1]},
            {"id":"p","kind":"avg_pool","window":2},
            {"id":"a","kind":"qcfs_act","L":2,"theta":1.0}
        ]}"#;
        let err = parse_manifest(text).unwrap_err().to_string();
        assert!(err.contains("`a`") && err.contains("qcfs_act must follow"), "{err}");
    }

    #[test]
    fn qcfs_missing_or_bad_params() {
        for (body, needle) in [
            (r#""theta": 1.0"#, "missing L"),
            (r#""L": 4"#, "missing theta"),
            (r#""L": 0, "theta": 1.0"#, "at least 1"),
            (r#""L": 4, "theta": -1.0"#, "theta"),
            (r#""L": 4, "theta": 1.0, "phi": 0.25"#, "phi"),
        ] {
            let text = format!(
                r#"{{"name":"q","classes":2,"layers":[
                {{"id":"in","kind":"input","shape":[2,1,1]}},
                {{"id":"f","kind":"fc","in_features":2,"out_features":2}},
                {{"id":"a","kind":"qcfs_act",{body}}}]}}"#
            );
            let err = parse_manifest(&text).unwrap_err().to_string();
            assert!(err.contains(needle), "{body}: {err}");
        }
    }

    #[test]
    fn standalone_bn_is_fused() {
        let text = r#"{"name":"b","classes":2,"layers":[
            {"id":"in","kind":"input","shape":[2,1,1]},
            {"id":"f","kind":"fc","in_features":2,"out_features":2,"bias":true},
            {"id":"bn","kind":"bn","eps":0.001},
            {"id":"a","kind":"qcfs_act","L":2,"theta":1.0}
        ]}"#;
        let g = parse_manifest(text).unwrap();
        assert_eq!(g.layers.len(), 3);
        let LayerKind::Fc(f) = &g.layers[1].kind else { panic!() };
        let bn = f.bn.as_ref().unwrap();
        assert_eq!(bn.eps, 0.001);
        assert_eq!(bn.fused_from.as_deref(), Some("bn"));
        assert_eq!(g.layers[2].preds, vec![1]);
    }

    #[test]
    fn schema_violation_is_reported() {
        let err = parse_manifest(r#"{"name": 3}"#).unwrap_err().to_string();
        assert!(err.contains("schema violation"), "{err}");
    }

    #[test]
    fn class_count_must_match_output() {
        let text = TOY.replace(r#""classes": 3"#, r#""classes": 5"#);
        assert!(parse_manifest(&text).unwrap_err().to_string().contains("classes"));
    }

    #[test]
    fn manifest_round_trip() {
        let g = parse_manifest(TOY).unwrap();
        let again = parse_manifest(&g.to_manifest()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn init_random_is_deterministic_and_bounded() {
        let g = parse_manifest(TOY).unwrap();
        let a = g.clone().init_random(11);
        let b = g.clone().init_random(11);
        let c = g.clone().init_random(12);
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
        let text = r#"{"name":"k","classes":2,"layers":[
            {"id":"in","kind":"input","shape":[1,3,3]},
            {"id":"c","kind":"conv","in_channels":1,"out_channels":2,"kernel":[3,3]}
        ]}"#;
        let g = parse_manifest(text).unwrap().init_random(5);
        let w = g.matmul("c").unwrap().kernel.weights();
        assert!(w.iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn blob_length_error_names_counts() {
        let mut g = parse_manifest(TOY).unwrap();
        let err = g.set_weights("c1", &[0.0; 10]).unwrap_err().to_string();
        assert!(err.contains("expected 112 elements, got 10"), "{err}");
        let mut blob = vec![0.0; 112];
        blob[3] = Real::NAN;
        let err = g.set_weights("c1", &blob).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }
}
