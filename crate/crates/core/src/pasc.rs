//! Conversion to the spike-count network and its simulator.
//!
//! Every MatMul is unrolled over the timesteps of its input signal. Its
//! additive constants (bias, BN mean and BN shift) are divided by that
//! timestep count at conversion time, so the per-timestep outputs sum to the
//! ANN pre-activation. QCFS layers become three-stage IF layers.

use std::borrow::Cow;

use bitvec::vec::BitVec;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, MatMulParams, ModelGraph, QcfsConfig};
use crate::qcfs::{self, argmax};
use crate::tensor::{self, Tensor};
use crate::Real;

/// Binary spike train over `T` timesteps sharing one amplitude `θ*`.
///
/// Only spike bits are stored, so every materialized element is exactly
/// `0` or `θ*`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    steps: usize,
    dims: [usize; 4],
    theta_star: Real,
    bits: BitVec,
}

impl SpikeTrain {
    pub fn silent(steps: usize, dims: [usize; 4], theta_star: Real) -> Self {
        let len = steps * dims.iter().product::<usize>();
        Self {
            steps,
            dims,
            theta_star,
            bits: BitVec::repeat(false, len),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn theta_star(&self) -> Real {
        self.theta_star
    }

    pub fn neurons(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn spike(&self, t: usize, i: usize) -> bool {
        self.bits[t * self.neurons() + i]
    }

    fn set(&mut self, t: usize, i: usize) {
        let n = self.neurons();
        self.bits.set(t * n + i, true);
    }

    /// Timestep `t` as a dense tensor of `0`/`θ*` values.
    pub fn step(&self, t: usize) -> Tensor {
        let n = self.neurons();
        let data = self.bits[t * n..(t + 1) * n]
            .iter()
            .map(|b| if *b { self.theta_star } else { 0.0 })
            .collect();
        Tensor::new(self.dims, data).expect("dims match bit count")
    }

    /// Spikes per neuron across all timesteps.
    pub fn counts(&self) -> Vec<u32> {
        let n = self.neurons();
        let mut counts = vec![0u32; n];
        for t in 0..self.steps {
            for i in self.bits[t * n..(t + 1) * n].iter_ones() {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn total_spikes(&self) -> u64 {
        self.bits.count_ones() as u64
    }

    /// `Σ_t s(t)`, evaluated as `count · θ*` per neuron.
    pub fn sum(&self) -> Tensor {
        let data = self
            .counts()
            .into_iter()
            .map(|c| c as Real * self.theta_star)
            .collect();
        Tensor::new(self.dims, data).expect("dims match count length")
    }
}

/// What flows between layers of the spiking network.
#[derive(Clone, Debug)]
pub enum Signal {
    Train(SpikeTrain),
    /// Real-valued per-timestep tensors (MatMul, pool and residual outputs).
    Stack(Vec<Tensor>),
}

impl Signal {
    pub fn steps(&self) -> usize {
        match self {
            Signal::Train(s) => s.steps(),
            Signal::Stack(s) => s.len(),
        }
    }

    pub fn step(&self, t: usize) -> Cow<'_, Tensor> {
        match self {
            Signal::Train(s) => Cow::Owned(s.step(t)),
            Signal::Stack(s) => Cow::Borrowed(&s[t]),
        }
    }

    pub fn sum(&self) -> Tensor {
        match self {
            Signal::Train(s) => s.sum(),
            Signal::Stack(s) => Tensor::sum_stack(s).expect("stacks are non-empty and uniform"),
        }
    }
}

/// An IF layer of the converted network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PascLayer {
    pub id: String,
    pub l_in: u32,
    pub l_out: u32,
    pub theta: Real,
    pub theta_star: Real,
    /// First IF layer on its path: fed real values once, runs the input-layer rule.
    pub input_layer: bool,
}

impl PascLayer {
    pub fn new(id: &str, l_in: u32, cfg: QcfsConfig, input_layer: bool) -> Self {
        Self {
            id: id.to_string(),
            l_in,
            l_out: cfg.levels,
            theta: cfg.theta,
            theta_star: cfg.theta_star(),
            input_layer,
        }
    }

    pub fn config(&self) -> QcfsConfig {
        QcfsConfig {
            levels: self.l_out,
            theta: self.theta,
        }
    }

    /// Number of input-free steps between integration and emission.
    pub fn stage2_len(&self) -> u32 {
        self.l_in.max(self.l_out) - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PascOp {
    Input,
    /// MatMul with constants pre-divided by `steps`.
    MatMul { params: MatMulParams, steps: u32 },
    AvgPool { window: usize },
    ResidualAdd,
    If(PascLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PascNode {
    pub id: String,
    pub op: PascOp,
    pub preds: Vec<usize>,
    /// Timesteps of this node's output signal.
    pub steps: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PascModel {
    pub name: String,
    pub classes: usize,
    pub input_shape: [usize; 3],
    pub nodes: Vec<PascNode>,
}

impl PascModel {
    pub fn if_layers(&self) -> impl Iterator<Item = &PascLayer> {
        self.nodes.iter().filter_map(|n| match &n.op {
            PascOp::If(l) => Some(l),
            _ => None,
        })
    }

    pub fn final_steps(&self) -> u32 {
        self.nodes.last().expect("model has nodes").steps
    }
}

/// Builds the spiking network from a weighted QCFS network.
pub fn convert(ann: &ModelGraph) -> Result<PascModel> {
    let mut nodes: Vec<PascNode> = Vec::with_capacity(ann.layers.len());
    let mut after_if: Vec<bool> = Vec::with_capacity(ann.layers.len());
    for layer in &ann.layers {
        let conv_err = |reason: String| Error::Conversion {
            layer: layer.id.clone(),
            reason,
        };
        let pred_steps = layer.preds.first().map(|&p| nodes[p].steps).unwrap_or(1);
        let upstream_if = layer.preds.iter().any(|&p| after_if[p]);
        let (op, steps, is_if) = match &layer.kind {
            LayerKind::Input { .. } => (PascOp::Input, 1, false),
            LayerKind::Conv(_) | LayerKind::Fc(_) => {
                let params = ann.matmul(&layer.id)?;
                let scaled = MatMulParams {
                    kernel: params.kernel.clone(),
                    affine: params.affine.scaled(1.0 / pred_steps as Real),
                };
                (
                    PascOp::MatMul {
                        params: scaled,
                        steps: pred_steps,
                    },
                    pred_steps,
                    false,
                )
            }
            LayerKind::AvgPool { window } => (PascOp::AvgPool { window: *window }, pred_steps, false),
            LayerKind::MaxPool { .. } => {
                return Err(conv_err(
                    "unsupported nonlinearity in certified path: max_pool".into(),
                ))
            }
            LayerKind::ResidualAdd => {
                let (a, b) = (&nodes[layer.preds[0]], &nodes[layer.preds[1]]);
                if a.steps != b.steps {
                    return Err(conv_err(format!(
                        "residual branches carry unequal timestep counts: `{}` has {}, `{}` has {}",
                        a.id, a.steps, b.id, b.steps
                    )));
                }
                (PascOp::ResidualAdd, pred_steps, false)
            }
            LayerKind::Qcfs(cfg) => {
                let l = PascLayer::new(&layer.id, pred_steps, *cfg, !upstream_if);
                (PascOp::If(l), cfg.levels, true)
            }
        };
        nodes.push(PascNode {
            id: layer.id.clone(),
            op,
            preds: layer.preds.clone(),
            steps,
        });
        after_if.push(is_if || upstream_if);
    }
    Ok(PascModel {
        name: ann.name.clone(),
        classes: ann.classes,
        input_shape: ann.input_shape(),
        nodes,
    })
}

/// Spike kind at one timestep of one neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Spike {
    None,
    Excitatory,
    Inhibitory,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Tally {
    count: i32,
    excitatory: u32,
    inhibitory: u32,
}

/// Stages 1 and 2 for one neuron. `x(t)` yields the input at timestep `t`.
#[inline]
fn integrate(
    x: impl Fn(usize) -> Real,
    layer: &PascLayer,
    mut observe: impl FnMut(u8, Spike, Real),
) -> Tally {
    let theta = layer.theta_star;
    let mut mem = theta * 0.5;
    let mut tally = Tally::default();
    for t in 0..layer.l_in as usize {
        mem += x(t);
        let mut s = Spike::None;
        if mem >= theta {
            mem -= theta;
            tally.count += 1;
            tally.excitatory += 1;
            s = Spike::Excitatory;
        }
        observe(1, s, mem);
    }
    for _ in 0..layer.stage2_len() {
        let mut s = Spike::None;
        if mem >= theta {
            mem -= theta;
            tally.count += 1;
            tally.excitatory += 1;
            s = Spike::Excitatory;
        } else if mem < 0.0 {
            mem += theta;
            tally.count -= 1;
            tally.inhibitory += 1;
            s = Spike::Inhibitory;
        }
        observe(2, s, mem);
    }
    tally
}

/// Stage 3: membrane reset to the net count, then `l_out` Heaviside steps
/// with soft reset. Runs in units of `θ*`, so the number of spikes is exactly
/// `clamp(count, 0, l_out)` and they occupy the first timesteps.
#[inline]
fn emit(count: i32, l_out: u32, mut fire: impl FnMut(usize)) -> u32 {
    let mut mem = count;
    let mut fired = 0;
    for t in 0..l_out as usize {
        if mem >= 1 {
            mem -= 1;
            fired += 1;
            fire(t);
        }
    }
    fired
}

/// Step-by-step record of one neuron through the three stages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronTrace {
    pub stage1: Vec<Spike>,
    pub stage2: Vec<Spike>,
    /// Membrane potential after each stage-1 and stage-2 step.
    pub membrane: Vec<Real>,
    /// Net spike count entering stage 3.
    pub count: i32,
    pub output: Vec<bool>,
}

/// Runs a single neuron of a generic IF layer with full tracing.
pub fn if_neuron_trace(inputs: &[Real], layer: &PascLayer) -> Result<NeuronTrace> {
    if inputs.len() != layer.l_in as usize {
        return Err(Error::Runtime {
            layer: layer.id.clone(),
            reason: format!("expected {} input timesteps, got {}", layer.l_in, inputs.len()),
        });
    }
    let mut stage1 = Vec::new();
    let mut stage2 = Vec::new();
    let mut membrane = Vec::new();
    let tally = integrate(
        |t| inputs[t],
        layer,
        |stage, s, mem| {
            if stage == 1 {
                stage1.push(s);
            } else {
                stage2.push(s);
            }
            membrane.push(mem);
        },
    );
    let mut output = vec![false; layer.l_out as usize];
    emit(tally.count, layer.l_out, |t| output[t] = true);
    Ok(NeuronTrace {
        stage1,
        stage2,
        membrane,
        count: tally.count,
        output,
    })
}

/// Per-layer counters of one IF layer run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IfStats {
    pub id: String,
    pub neurons: u64,
    /// Steps executed in stages 1, 2 and 3.
    pub stage_steps: [u32; 3],
    /// Spikes emitted in stage 3.
    pub output_spikes: u64,
    pub excitatory_spikes: u64,
    pub inhibitory_spikes: u64,
    pub timesteps: u32,
}

impl IfStats {
    /// Output spikes per neuron across all timesteps.
    pub fn spike_rate(&self) -> f64 {
        if self.neurons == 0 {
            0.0
        } else {
            self.output_spikes as f64 / self.neurons as f64
        }
    }

    /// Adds the counters of another shard of the same layer.
    pub fn merge(&mut self, other: &IfStats) {
        self.neurons += other.neurons;
        self.output_spikes += other.output_spikes;
        self.excitatory_spikes += other.excitatory_spikes;
        self.inhibitory_spikes += other.inhibitory_spikes;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SpikeStats {
    pub layers: Vec<IfStats>,
}

impl SpikeStats {
    pub fn inhibitory_spikes(&self) -> u64 {
        self.layers.iter().map(|l| l.inhibitory_spikes).sum()
    }

    pub fn merge(&mut self, other: &SpikeStats) {
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
            return;
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.merge(b);
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.layers.iter().map(IfStats::spike_rate).collect()
    }
}

/// Input-layer rule: quantize the real-valued input once, then emit that
/// many spikes in the first timesteps.
pub fn if_input_layer(x: &Tensor, layer: &PascLayer) -> (SpikeTrain, IfStats) {
    let cfg = layer.config();
    let mut train = SpikeTrain::silent(layer.l_out as usize, x.dims(), layer.theta_star);
    let mut stats = IfStats {
        id: layer.id.clone(),
        neurons: x.len() as u64,
        stage_steps: [0, 0, layer.l_out],
        timesteps: layer.l_out,
        ..IfStats::default()
    };
    for (i, &v) in x.data().iter().enumerate() {
        let c = qcfs::qcfs_level(v, cfg);
        let fired = emit(c as i32, layer.l_out, |t| train.set(t, i));
        stats.output_spikes += fired as u64;
        stats.excitatory_spikes += c as u64;
    }
    (train, stats)
}

/// Generic three-stage IF layer over an `l_in`-step input.
pub fn if_generic_layer(x: &[Tensor], layer: &PascLayer) -> Result<(SpikeTrain, IfStats)> {
    let runtime = |reason: String| Error::Runtime {
        layer: layer.id.clone(),
        reason,
    };
    if x.len() != layer.l_in as usize {
        return Err(runtime(format!(
            "expected {} input timesteps, got {}",
            layer.l_in,
            x.len()
        )));
    }
    let dims = x[0].dims();
    if x.iter().any(|t| t.dims() != dims) {
        return Err(runtime("input timesteps differ in shape".into()));
    }
    let mut train = SpikeTrain::silent(layer.l_out as usize, dims, layer.theta_star);
    let mut stats = IfStats {
        id: layer.id.clone(),
        neurons: x[0].len() as u64,
        stage_steps: [layer.l_in, layer.stage2_len(), layer.l_out],
        timesteps: layer.l_out,
        ..IfStats::default()
    };
    let data: Vec<&[Real]> = x.iter().map(Tensor::data).collect();
    for i in 0..x[0].len() {
        let tally = integrate(|t| data[t][i], layer, |_, _, _| {});
        let fired = emit(tally.count, layer.l_out, |t| train.set(t, i));
        stats.output_spikes += fired as u64;
        stats.excitatory_spikes += tally.excitatory as u64;
        stats.inhibitory_spikes += tally.inhibitory as u64;
    }
    Ok((train, stats))
}

/// MatMul applied separately to each timestep of `x`. `params` must already
/// carry constants divided by the step count.
pub fn unrolled_matmul(x: &Signal, params: &MatMulParams) -> Result<Vec<Tensor>> {
    (0..x.steps())
        .map(|t| params.forward(&x.step(t), 1.0))
        .collect()
}

pub fn unrolled_residual_add(a: &Signal, b: &Signal) -> Result<Vec<Tensor>> {
    if a.steps() != b.steps() {
        return Err(Error::shape(format!(
            "residual operands carry {} and {} timesteps",
            a.steps(),
            b.steps()
        )));
    }
    (0..a.steps()).map(|t| a.step(t).add(&b.step(t))).collect()
}

/// Result of one spiking forward pass.
#[derive(Clone, Debug)]
pub struct SnnOutput {
    /// `(1/T_final)·Σ_t` of the final layer.
    pub logits: Tensor,
    /// `Σ_t` of the final layer; matches the ANN logits.
    pub summed_logits: Tensor,
    /// `Σ_t` of every node's output, indexed like `PascModel::nodes`.
    pub layer_sums: Vec<Tensor>,
    /// Output spike train of every IF layer, in execution order.
    pub trains: Vec<SpikeTrain>,
    pub stats: SpikeStats,
}

pub fn snn_forward(model: &PascModel, input: &Tensor) -> Result<SnnOutput> {
    let [c, h, w] = model.input_shape;
    let d = input.dims();
    if d[1..] != [c, h, w] || d[0] == 0 {
        return Err(Error::Validation {
            layer: Some(model.nodes[0].id.clone()),
            reason: format!("input dims {d:?} do not match model input (N, {c}, {h}, {w})"),
        });
    }
    let mut signals: Vec<Signal> = Vec::with_capacity(model.nodes.len());
    let mut trains = Vec::new();
    let mut stats = SpikeStats::default();
    for node in &model.nodes {
        let tag = |e: Error| match e {
            Error::Validation { .. } => e.in_layer(&node.id),
            other => other,
        };
        let arg = |k: usize| &signals[node.preds[k]];
        let out = match &node.op {
            PascOp::Input => Signal::Stack(vec![input.clone()]),
            PascOp::MatMul { params, .. } => Signal::Stack(unrolled_matmul(arg(0), params).map_err(tag)?),
            PascOp::AvgPool { window } => {
                let x = arg(0);
                let stack = (0..x.steps())
                    .map(|t| tensor::avg_pool2d(&x.step(t), *window))
                    .collect::<Result<Vec<_>>>()
                    .map_err(tag)?;
                Signal::Stack(stack)
            }
            PascOp::ResidualAdd => Signal::Stack(unrolled_residual_add(arg(0), arg(1)).map_err(tag)?),
            PascOp::If(layer) => {
                let (train, st) = match arg(0) {
                    Signal::Stack(s) if layer.input_layer && s.len() == 1 => {
                        if_input_layer(&s[0], layer)
                    }
                    Signal::Stack(s) => if_generic_layer(s, layer)?,
                    Signal::Train(t) => {
                        let s: Vec<Tensor> = (0..t.steps()).map(|k| t.step(k)).collect();
                        if_generic_layer(&s, layer)?
                    }
                };
                stats.layers.push(st);
                trains.push(train.clone());
                Signal::Train(train)
            }
        };
        signals.push(out);
    }
    let layer_sums: Vec<Tensor> = signals.iter().map(Signal::sum).collect();
    let summed_logits = layer_sums.last().expect("model has nodes").clone();
    let logits = summed_logits.scale(1.0 / model.final_steps() as Real);
    Ok(SnnOutput {
        logits,
        summed_logits,
        layer_sums,
        trains,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerDeviation {
    pub id: String,
    pub max_abs_dev: f64,
    pub rel_dev: f64,
}

/// Outcome of running both paths on the same inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub per_layer: Vec<LayerDeviation>,
    /// Fraction of batch items whose ANN and SNN argmax agree.
    pub argmax_agreement: f64,
    /// Largest `|Σ_t SNN − ANN|` over the logits.
    pub max_logit_dev: f64,
    /// Largest relative deviation over all layer boundaries.
    pub max_rel_dev: f64,
    pub inhibitory_spikes: u64,
    pub samples: usize,
}

/// `max |a − b| / max(‖b‖∞, tiny)`, zero when both tensors are zero.
pub fn relative_deviation(snn: &Tensor, ann: &Tensor) -> Result<(f64, f64)> {
    let abs = snn.max_abs_diff(ann)? as f64;
    if abs == 0.0 {
        return Ok((0.0, 0.0));
    }
    let scale = (ann.max_abs() as f64).max(f64::MIN_POSITIVE);
    Ok((abs, abs / scale))
}

/// Converts `ann`, runs both paths on `inputs` and compares them layer by layer.
pub fn check_equivalence(ann: &ModelGraph, inputs: &Tensor) -> Result<EquivalenceReport> {
    let pasc = convert(ann)?;
    let trace = qcfs::ann_forward(ann, inputs)?;
    let snn = snn_forward(&pasc, inputs)?;
    compare(&pasc, &trace, &snn)
}

/// Builds the report from already computed traces.
pub fn compare(pasc: &PascModel, trace: &qcfs::LayerTrace, snn: &SnnOutput) -> Result<EquivalenceReport> {
    let mut per_layer = Vec::with_capacity(pasc.nodes.len());
    let mut max_rel_dev: f64 = 0.0;
    for (i, node) in pasc.nodes.iter().enumerate() {
        let (max_abs_dev, rel_dev) = relative_deviation(&snn.layer_sums[i], &trace.outputs[i])
            .map_err(|e| e.in_layer(&node.id))?;
        max_rel_dev = max_rel_dev.max(rel_dev);
        per_layer.push(LayerDeviation {
            id: node.id.clone(),
            max_abs_dev,
            rel_dev,
        });
    }
    let ann_logits = trace.logits();
    let n = ann_logits.batch();
    let agree = (0..n)
        .filter(|&b| argmax(ann_logits.item(b)) == argmax(snn.logits.item(b)))
        .count();
    Ok(EquivalenceReport {
        max_logit_dev: per_layer.last().map(|l| l.max_abs_dev).unwrap_or(0.0),
        per_layer,
        argmax_agreement: agree as f64 / n as f64,
        max_rel_dev,
        inhibitory_spikes: snn.stats.inhibitory_spikes(),
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(l_in: u32, l_out: u32, theta: Real) -> PascLayer {
        PascLayer::new("if", l_in, QcfsConfig::new(l_out, theta).unwrap(), false)
    }

    #[test]
    fn saturating_neuron_emits_every_step() {
        let t = if_neuron_trace(&[0.3, 0.3, 0.2, 0.1], &layer(4, 4, 1.0)).unwrap();
        assert_eq!(t.count, 4);
        assert_eq!(t.output, vec![true; 4]);
        assert_eq!(t.stage1.len(), 4);
        assert_eq!(t.stage2.len(), 3);
    }

    #[test]
    fn inhibitory_spike_cancels_early_excitation() {
        let t = if_neuron_trace(&[0.6, -0.5], &layer(2, 2, 1.0)).unwrap();
        assert_eq!(t.stage1, vec![Spike::Excitatory, Spike::None]);
        assert!((t.membrane[1] - -0.15).abs() < 1e-6);
        assert_eq!(t.stage2, vec![Spike::Inhibitory]);
        assert_eq!(t.count, 0);
        assert_eq!(t.output, vec![false, false]);
    }

    #[test]
    fn zero_input_never_spikes() {
        let t = if_neuron_trace(&[0.0; 4], &layer(4, 2, 1.0)).unwrap();
        assert_eq!(t.count, 0);
        assert!(t.stage1.iter().chain(&t.stage2).all(|s| *s == Spike::None));
    }

    #[test]
    fn wrong_step_count_is_rejected() {
        let x = vec![Tensor::zeros([1, 1, 1, 1]); 3];
        let err = if_generic_layer(&x, &layer(4, 4, 1.0)).unwrap_err().to_string();
        assert!(err.contains("expected 4 input timesteps, got 3"), "{err}");
    }

    #[test]
    fn input_layer_places_spikes_first() {
        let cfg = QcfsConfig::new(4, 1.0).unwrap();
        let l = PascLayer::new("in", 1, cfg, true);
        let x = Tensor::new([1, 4, 1, 1], vec![0.75, 0.0, 1.0, 0.3]).unwrap();
        let (train, stats) = if_input_layer(&x, &l);
        let bits = |i: usize| (0..4).map(|t| train.spike(t, i)).collect::<Vec<_>>();
        assert_eq!(bits(0), vec![true, true, true, false]);
        assert_eq!(bits(1), vec![false; 4]);
        assert_eq!(bits(2), vec![true; 4]);
        assert_eq!(bits(3), vec![true, false, false, false]);
        assert_eq!(stats.output_spikes, 8);
        assert_eq!(train.sum().data(), &[0.75, 0.0, 1.0, 0.25]);
    }

    #[test]
    fn residual_step_mismatch() {
        let a = Signal::Stack(vec![Tensor::zeros([1, 1, 1, 1]); 2]);
        let b = Signal::Stack(vec![Tensor::zeros([1, 1, 1, 1]); 4]);
        assert!(unrolled_residual_add(&a, &b).is_err());
        let z = Signal::Stack(vec![Tensor::zeros([1, 1, 1, 1]); 2]);
        let a = Signal::Stack(vec![Tensor::filled([1, 1, 1, 1], 1.5); 2]);
        assert_eq!(unrolled_residual_add(&a, &z).unwrap(), vec![Tensor::filled([1, 1, 1, 1], 1.5); 2]);
    }
}
