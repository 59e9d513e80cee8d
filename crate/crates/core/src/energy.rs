//! Analytic operation and energy accounting.
//!
//! Layers are described by their MatMul geometry only. IF-layer work is
//! costed as additions: each IF neuron performs `L` operations in a plain
//! soft-reset SNN and `5L − 2` in the three-stage layer.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};

/// Per-operation energy in picojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyConstants {
    pub add: f64,
    pub mul: f64,
    pub mac: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Int8,
}

impl Precision {
    /// 45 nm CMOS figures.
    pub fn constants(self) -> EnergyConstants {
        match self {
            Precision::Fp32 => EnergyConstants {
                add: 0.9,
                mul: 3.7,
                mac: 4.6,
            },
            Precision::Int8 => EnergyConstants {
                add: 0.03,
                mul: 0.2,
                mac: 0.23,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Int8 => "int8",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Conv {
        ci: u64,
        co: u64,
        kh: u64,
        kw: u64,
        ho: u64,
        wo: u64,
    },
    Fc {
        ci: u64,
        co: u64,
    },
    Pool,
}

impl Geometry {
    pub fn conv(ci: u64, co: u64, k: u64, out_hw: u64) -> Self {
        Geometry::Conv {
            ci,
            co,
            kh: k,
            kw: k,
            ho: out_hw,
            wo: out_hw,
        }
    }

    pub fn is_matmul(&self) -> bool {
        !matches!(self, Geometry::Pool)
    }

    /// Dense multiply-accumulates of one inference.
    pub fn macs(&self) -> u64 {
        match *self {
            Geometry::Conv {
                ci,
                co,
                kh,
                kw,
                ho,
                wo,
            } => ci * co * kh * kw * ho * wo,
            Geometry::Fc { ci, co } => ci * co,
            Geometry::Pool => 0,
        }
    }

    /// Output neurons `C_o·H_o·W_o`.
    pub fn outputs(&self) -> u64 {
        match *self {
            Geometry::Conv { co, ho, wo, .. } => co * ho * wo,
            Geometry::Fc { co, .. } => co,
            Geometry::Pool => 0,
        }
    }

    /// Synapses per output neuron: `C_i·K_h·K_w` or `C_i`.
    pub fn fan_in(&self) -> u64 {
        match *self {
            Geometry::Conv { ci, kh, kw, .. } => ci * kh * kw,
            Geometry::Fc { ci, .. } => ci,
            Geometry::Pool => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchLayer {
    pub name: String,
    pub geometry: Geometry,
    /// Residual projection off the main path.
    pub shortcut: bool,
    pub input_size: String,
    pub output_size: String,
}

impl ArchLayer {
    pub fn new(name: &str, geometry: Geometry, input: &str, output: &str) -> Self {
        Self {
            name: name.into(),
            geometry,
            shortcut: false,
            input_size: input.into(),
            output_size: output.into(),
        }
    }

    pub fn shortcut(mut self) -> Self {
        self.shortcut = true;
        self
    }

    pub fn is_main_matmul(&self) -> bool {
        self.geometry.is_matmul() && !self.shortcut
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Architecture {
    pub name: String,
    pub layers: Vec<ArchLayer>,
}

impl Architecture {
    pub fn matmuls(&self) -> impl Iterator<Item = &ArchLayer> {
        self.layers.iter().filter(|l| l.geometry.is_matmul())
    }

    /// MatMul layers on the main path, including the classifier: `L_tot`.
    pub fn main_matmuls(&self) -> impl Iterator<Item = &ArchLayer> {
        self.layers.iter().filter(|l| l.is_main_matmul())
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.geometry.macs()).sum()
    }

    /// MACs of the first MatMul over the total, `c` of the ANN/SNN ratio.
    pub fn first_layer_fraction(&self) -> f64 {
        let first = self.matmuls().next().map_or(0, |l| l.geometry.macs());
        first as f64 / self.total_macs() as f64
    }

    /// Expands one `L` per IF layer to one per main MatMul; the classifier,
    /// which has no IF layer after it, runs for as many steps as the last one.
    pub fn expand_if_levels(&self, per_if: &[u32]) -> Result<Vec<u32>> {
        let n = self.main_matmuls().count();
        if per_if.len() + 1 != n {
            return Err(Error::Energy(format!(
                "{} has {} IF layers, got {} quantization steps",
                self.name,
                n - 1,
                per_if.len()
            )));
        }
        let mut v = per_if.to_vec();
        v.push(*per_if.last().expect("at least one IF layer"));
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ann,
    Snn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub macs: u64,
    pub acs: u64,
    /// Multiplies scaling spikes by the threshold; reported, not costed.
    pub threshold_mults: u64,
}

/// Operation counts of one layer. In SNN mode, every layer but the first
/// performs `MACs × rate` accumulates (rounded to the nearest integer); the
/// first layer sees real-valued pixels and keeps its MACs.
pub fn op_counts(layer: &ArchLayer, mode: Mode, spike_rate: f64, first: bool) -> Result<OpCount> {
    let macs = layer.geometry.macs();
    match mode {
        Mode::Ann => Ok(OpCount {
            macs,
            ..OpCount::default()
        }),
        Mode::Snn => {
            if !(spike_rate >= 0.0 && spike_rate.is_finite()) {
                return Err(Error::Energy(format!(
                    "layer {}: spike rate must be non-negative, got {spike_rate}",
                    layer.name
                )));
            }
            let threshold_mults = (layer.geometry.outputs() as f64 * spike_rate).round() as u64;
            if first {
                Ok(OpCount {
                    macs,
                    acs: 0,
                    threshold_mults,
                })
            } else {
                Ok(OpCount {
                    macs: 0,
                    acs: (macs as f64 * spike_rate).round() as u64,
                    threshold_mults,
                })
            }
        }
    }
}

fn r_prime_at(layer: &ArchLayer, rate: f64) -> Result<f64> {
    r_prime(&layer.geometry, rate).map_err(|e| match e {
        Error::Energy(m) => Error::Energy(format!("layer `{}`: {m}", layer.name)),
        other => other,
    })
}

/// IF operations relative to MatMul operations of one layer.
pub fn r_prime(geometry: &Geometry, spike_rate: f64) -> Result<f64> {
    if !(spike_rate > 0.0) {
        return Err(Error::Energy(format!(
            "r' is undefined for spike rate {spike_rate}"
        )));
    }
    match geometry {
        Geometry::Pool => Err(Error::Energy("r' is undefined for pooling layers".into())),
        g => Ok(1.0 / (g.fan_in() as f64 * spike_rate)),
    }
}

/// `(1 + (5L−2)·r′) / (1 + L·r′)`.
pub fn r_e_layer(levels: u32, r_prime: f64) -> f64 {
    let l = levels as f64;
    (1.0 + (5.0 * l - 2.0) * r_prime) / (1.0 + l * r_prime)
}

fn main_rates(arch: &Architecture, rates: &[f64]) -> Result<Vec<f64>> {
    let all: Vec<&ArchLayer> = arch.matmuls().collect();
    if rates.len() != all.len() {
        return Err(Error::Energy(format!(
            "{} has {} MatMul layers, got {} spike rates",
            arch.name,
            all.len(),
            rates.len()
        )));
    }
    Ok(all
        .iter()
        .zip(rates)
        .filter(|(l, _)| !l.shortcut)
        .map(|(_, &r)| r)
        .collect())
}

/// One rate per MatMul layer (shortcuts included), all equal to `rate`.
pub fn uniform_rates(arch: &Architecture, rate: f64) -> Vec<f64> {
    vec![rate; arch.matmuls().count()]
}

/// `(1/|L_tot|)·Σ_l r_E^l · T` with one spike rate for every layer.
pub fn t_norm(arch: &Architecture, t: u32, spike_rate: f64) -> Result<f64> {
    let levels = vec![t; arch.main_matmuls().count()];
    t_eff(arch, &levels, &uniform_rates(arch, spike_rate))
}

/// `(1/|L_tot|)·Σ_l r_E^l · L_l` over the main-path MatMul layers.
///
/// `levels` has one entry per main MatMul; `rates` one per MatMul including
/// shortcut projections.
pub fn t_eff(arch: &Architecture, levels: &[u32], rates: &[f64]) -> Result<f64> {
    let main: Vec<&ArchLayer> = arch.main_matmuls().collect();
    if main.is_empty() {
        return Err(Error::Energy(format!("{} has no MatMul layers", arch.name)));
    }
    if levels.len() != main.len() {
        return Err(Error::Energy(format!(
            "layerwise L has {} entries, {} needs {}",
            levels.len(),
            arch.name,
            main.len()
        )));
    }
    let rates = main_rates(arch, rates)?;
    let mut sum = 0.0;
    for ((layer, &l), &rate) in main.iter().zip(levels).zip(&rates) {
        sum += r_e_layer(l, r_prime_at(layer, rate)?) * l as f64;
    }
    Ok(sum / main.len() as f64)
}

/// `a·mac / (c·mac + (1−c)·b·add)`.
pub fn ann_snn_energy_ratio(a: f64, b: f64, c: f64, precision: Precision) -> Result<f64> {
    let k = precision.constants();
    let den = c * k.mac + (1.0 - c) * b * k.add;
    if den == 0.0 {
        return Err(Error::Energy("energy ratio denominator is zero".into()));
    }
    Ok(a * k.mac / den)
}

/// Energy terms of one MatMul layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerEnergy {
    pub e_ac: f64,
    /// One timestep of IF work; zero for shortcut projections.
    pub e_if: f64,
}

fn layer_energy(layer: &ArchLayer, rate: f64, first: bool, k: EnergyConstants) -> Result<LayerEnergy> {
    let ops = op_counts(layer, Mode::Snn, rate, first)?;
    Ok(LayerEnergy {
        e_ac: ops.macs as f64 * k.mac + ops.acs as f64 * k.add,
        e_if: if layer.shortcut {
            0.0
        } else {
            layer.geometry.outputs() as f64 * k.add
        },
    })
}

/// `Σ_l (E_AC + (5L−2)·E_IF) / Σ_l (E_AC + L·E_IF)`.
pub fn overall_r_e(arch: &Architecture, levels: &[u32], rates: &[f64], precision: Precision) -> Result<f64> {
    let k = precision.constants();
    let all: Vec<&ArchLayer> = arch.matmuls().collect();
    if all.is_empty() {
        return Err(Error::Energy(format!("{} has no MatMul layers", arch.name)));
    }
    if rates.len() != all.len() {
        return Err(Error::Energy(format!(
            "{} has {} MatMul layers, got {} spike rates",
            arch.name,
            all.len(),
            rates.len()
        )));
    }
    if levels.len() != arch.main_matmuls().count() {
        return Err(Error::Energy(format!(
            "layerwise L has {} entries, {} needs {}",
            levels.len(),
            arch.name,
            arch.main_matmuls().count()
        )));
    }
    let (mut pasc, mut plain) = (0.0, 0.0);
    let mut main_idx = 0;
    for (i, (layer, &rate)) in all.iter().zip(rates).enumerate() {
        let e = layer_energy(layer, rate, i == 0, k)?;
        let l = if layer.shortcut {
            0.0
        } else {
            main_idx += 1;
            levels[main_idx - 1] as f64
        };
        pasc += e.e_ac + (5.0 * l - 2.0).max(0.0) * e.e_if;
        plain += e.e_ac + l * e.e_if;
    }
    Ok(pasc / plain)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub layer: String,
    pub kind: &'static str,
    pub shortcut: bool,
    pub ann: OpCount,
    pub snn: OpCount,
    pub spike_rate: Option<f64>,
    pub levels: Option<u32>,
    pub r_prime: Option<f64>,
    pub r_e: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub model: String,
    pub precision: Precision,
    /// How spike rates were obtained.
    pub rate_mode: String,
    pub layers: Vec<EnergyRow>,
    pub matmul_layers: usize,
    /// Set when every main MatMul runs the same number of steps.
    pub t_norm: Option<f64>,
    pub t_eff: f64,
    pub overall_r_e: f64,
    pub total_macs: u64,
    pub snn_macs: u64,
    pub snn_acs: u64,
    pub snn_threshold_mults: u64,
    pub energy_ann_pj: f64,
    pub energy_snn_pj: f64,
    /// `a`, `b`, `c` of the closed-form ANN/SNN ratio.
    pub ratio_inputs: [f64; 3],
    pub ann_snn_ratio: f64,
}

/// Full per-layer and aggregate accounting.
pub fn energy_report(
    arch: &Architecture,
    levels: &[u32],
    rates: &[f64],
    rate_mode: &str,
    precision: Precision,
) -> Result<EnergyReport> {
    let k = precision.constants();
    let t = t_eff(arch, levels, rates)?;
    let overall = overall_r_e(arch, levels, rates, precision)?;
    let mut rows = Vec::with_capacity(arch.layers.len());
    let (mut snn_macs, mut snn_acs, mut thr) = (0, 0, 0);
    let mut mm = 0;
    let mut main_idx = 0;
    for layer in &arch.layers {
        let kind = match layer.geometry {
            Geometry::Conv { .. } => "conv",
            Geometry::Fc { .. } => "fc",
            Geometry::Pool => "pool",
        };
        if !layer.geometry.is_matmul() {
            rows.push(EnergyRow {
                layer: layer.name.clone(),
                kind,
                shortcut: false,
                ann: OpCount::default(),
                snn: OpCount::default(),
                spike_rate: None,
                levels: None,
                r_prime: None,
                r_e: None,
            });
            continue;
        }
        let rate = rates[mm];
        let snn = op_counts(layer, Mode::Snn, rate, mm == 0)?;
        snn_macs += snn.macs;
        snn_acs += snn.acs;
        thr += snn.threshold_mults;
        let (lv, rp, re) = if layer.shortcut {
            (None, None, None)
        } else {
            let l = levels[main_idx];
            main_idx += 1;
            let rp = r_prime_at(layer, rate)?;
            (Some(l), Some(rp), Some(r_e_layer(l, rp)))
        };
        rows.push(EnergyRow {
            layer: layer.name.clone(),
            kind,
            shortcut: layer.shortcut,
            ann: op_counts(layer, Mode::Ann, rate, mm == 0)?,
            snn,
            spike_rate: Some(rate),
            levels: lv,
            r_prime: rp,
            r_e: re,
        });
        mm += 1;
    }
    let main_rates = main_rates(arch, rates)?;
    let b = main_rates.iter().sum::<f64>() / main_rates.len() as f64;
    let c = arch.first_layer_fraction();
    let uniform = levels.iter().all(|&l| l == levels[0]);
    Ok(EnergyReport {
        model: arch.name.clone(),
        precision,
        rate_mode: rate_mode.to_string(),
        layers: rows,
        matmul_layers: levels.len(),
        t_norm: uniform.then_some(t),
        t_eff: t,
        overall_r_e: overall,
        total_macs: arch.total_macs(),
        snn_macs,
        snn_acs,
        snn_threshold_mults: thr,
        energy_ann_pj: arch.total_macs() as f64 * k.mac,
        energy_snn_pj: snn_macs as f64 * k.mac + snn_acs as f64 * k.add,
        ratio_inputs: [1.0, b, c],
        ann_snn_ratio: ann_snn_energy_ratio(1.0, b, c, precision)?,
    })
}

impl EnergyReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(crate::fmt::sig6).unwrap_or_default();
        let mut out = String::from(
            "layer,kind,shortcut,ann_macs,snn_macs,snn_acs,snn_threshold_mults,spike_rate,L,r_prime,r_E\n",
        );
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.layer,
                r.kind,
                r.shortcut,
                r.ann.macs,
                r.snn.macs,
                r.snn.acs,
                r.snn.threshold_mults,
                opt(r.spike_rate),
                r.levels.map(|l| l.to_string()).unwrap_or_default(),
                opt(r.r_prime),
                opt(r.r_e),
            ));
        }
        out
    }
}

/// Architecture view of a model graph plus what the energy formulas need.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEnergyView {
    pub arch: Architecture,
    /// Steps of every main MatMul: the `L` of the IF layer it feeds, or of
    /// its input for the classifier.
    pub levels: Vec<u32>,
    /// For each MatMul (shortcuts included) the IF layer whose spikes it
    /// consumes; the first layer, fed with pixels, uses the IF layer it feeds.
    pub rate_sources: Vec<Option<String>>,
}

impl GraphEnergyView {
    pub fn from_graph(g: &ModelGraph) -> Result<Self> {
        let n = g.layers.len();
        let mut consumers = vec![vec![]; n];
        for (i, l) in g.layers.iter().enumerate() {
            for &p in &l.preds {
                consumers[p].push(i);
            }
        }
        let mut ancestors: Vec<Vec<bool>> = Vec::with_capacity(n);
        for l in &g.layers {
            let mut a = vec![false; n];
            for &p in &l.preds {
                a[p] = true;
                for (k, &x) in ancestors[p].iter().enumerate() {
                    a[k] |= x;
                }
            }
            ancestors.push(a);
        }
        let mut steps = vec![1u32; n];
        for (i, l) in g.layers.iter().enumerate() {
            steps[i] = match &l.kind {
                LayerKind::Input { .. } => 1,
                LayerKind::Qcfs(c) => c.levels,
                LayerKind::ResidualAdd => steps[l.preds[0]].max(steps[l.preds[1]]),
                _ => steps[l.preds[0]],
            };
        }
        // Nearest IF layer upstream, looking through pools and merges.
        let upstream_if = |mut i: usize| -> Option<usize> {
            loop {
                match g.layers[i].kind {
                    LayerKind::Qcfs(_) => return Some(i),
                    LayerKind::Input { .. } => return None,
                    _ => i = g.layers[i].preds[0],
                }
            }
        };
        let downstream_if = |mut i: usize| -> Option<usize> {
            loop {
                let c = consumers[i].first().copied()?;
                if let LayerKind::Qcfs(_) = g.layers[c].kind {
                    return Some(c);
                }
                if g.layers[c].kind.is_matmul() {
                    return None;
                }
                i = c;
            }
        };
        let mut layers = Vec::new();
        let mut levels = Vec::new();
        let mut rate_sources = Vec::new();
        let size = |s: [usize; 3]| format!("{}x{}x{}", s[0], s[1], s[2]);
        for (i, l) in g.layers.iter().enumerate() {
            let input = l.preds.first().map(|&p| size(g.layers[p].out_shape)).unwrap_or_default();
            let geometry = match &l.kind {
                LayerKind::Conv(c) => Geometry::Conv {
                    ci: c.in_channels as u64,
                    co: c.out_channels as u64,
                    kh: c.kernel.0 as u64,
                    kw: c.kernel.1 as u64,
                    ho: l.out_shape[1] as u64,
                    wo: l.out_shape[2] as u64,
                },
                LayerKind::Fc(f) => Geometry::Fc {
                    ci: f.in_features as u64,
                    co: f.out_features as u64,
                },
                LayerKind::AvgPool { .. } | LayerKind::MaxPool { .. } => Geometry::Pool,
                _ => continue,
            };
            let mut layer = ArchLayer::new(&l.id, geometry, &input, &size(l.out_shape));
            if geometry.is_matmul() {
                let shortcut = consumers[i].len() == 1 && {
                    let r = &g.layers[consumers[i][0]];
                    matches!(r.kind, LayerKind::ResidualAdd) && {
                        let other = if r.preds[0] == i { r.preds[1] } else { r.preds[0] };
                        let other_in = g.layers[other].preds.first().copied();
                        let mine = l.preds[0];
                        g.layers[other].kind.is_matmul()
                            && other_in.is_some_and(|o| ancestors[o][mine])
                    }
                };
                if shortcut {
                    layer = layer.shortcut();
                } else {
                    let next = downstream_if(i);
                    levels.push(match next {
                        Some(q) => steps[q],
                        None => steps[l.preds[0]],
                    });
                }
                let src = upstream_if(l.preds[0]).or_else(|| downstream_if(i));
                rate_sources.push(src.map(|q| g.layers[q].id.clone()));
            }
            layers.push(layer);
        }
        Ok(Self {
            arch: Architecture {
                name: g.name.clone(),
                layers,
            },
            levels,
            rate_sources,
        })
    }

    /// Per-MatMul rates looked up from measured per-IF-layer rates.
    pub fn rates_from(&self, measured: &HashMap<String, f64>) -> Result<Vec<f64>> {
        self.rate_sources
            .iter()
            .zip(self.arch.matmuls())
            .map(|(src, layer)| {
                src.as_ref()
                    .and_then(|id| measured.get(id).copied())
                    .ok_or_else(|| {
                        Error::Energy(format!("no measured spike rate for layer {}", layer.name))
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_prime_examples() {
        let conv = Geometry::conv(3, 64, 3, 32);
        assert!((r_prime(&conv, 0.75).unwrap() - 1.0 / 20.25).abs() < 1e-15);
        let fc = Geometry::Fc { ci: 512, co: 10 };
        assert!((r_prime(&fc, 0.75).unwrap() - 1.0 / 384.0).abs() < 1e-15);
        assert!(r_prime(&fc, 0.0).is_err());
    }

    #[test]
    fn r_e_examples() {
        assert_eq!(r_e_layer(4, 0.0), 1.0);
        let v = r_e_layer(4, 1.0 / 20.25);
        assert!((v - (1.0 + 18.0 / 20.25) / (1.0 + 4.0 / 20.25)).abs() < 1e-15);
        assert!((v - 1.5773).abs() < 1e-4);
        assert_eq!(r_e_layer(1, 0.5), (1.0 + 3.0 * 0.5) / 1.5);
    }

    #[test]
    fn energy_ratio_boundaries() {
        let v = ann_snn_energy_ratio(1.0, 1.0, 0.0, Precision::Fp32).unwrap();
        assert!((v - 4.6 / 0.9).abs() < 1e-12);
        assert!(ann_snn_energy_ratio(1.0, 0.0, 0.0, Precision::Fp32).is_err());
    }

    #[test]
    fn constants_add_up() {
        for p in [Precision::Fp32, Precision::Int8] {
            let k = p.constants();
            assert!((k.add + k.mul - k.mac).abs() < 1e-12);
        }
    }

    #[test]
    fn snn_counts() {
        let l = ArchLayer::new("c", Geometry::conv(4, 8, 3, 2), "", "");
        let ann = op_counts(&l, Mode::Ann, 0.5, false).unwrap();
        assert_eq!(ann, OpCount { macs: 1152, acs: 0, threshold_mults: 0 });
        let snn = op_counts(&l, Mode::Snn, 0.5, false).unwrap();
        assert_eq!(snn, OpCount { macs: 0, acs: 576, threshold_mults: 16 });
        let first = op_counts(&l, Mode::Snn, 0.5, true).unwrap();
        assert_eq!(first.macs, 1152);
        assert!(op_counts(&l, Mode::Snn, -1.0, false).is_err());
    }

    #[test]
    fn single_layer_overall_matches_layer_ratio() {
        // The only layer is the first one, so its work is costed as MACs.
        let arch = Architecture {
            name: "one".into(),
            layers: vec![ArchLayer::new("fc", Geometry::Fc { ci: 64, co: 10 }, "", "")],
        };
        let k = Precision::Fp32.constants();
        let rate = 0.5;
        let overall = overall_r_e(&arch, &[4], &[rate], Precision::Fp32).unwrap();
        let e_ac = 640.0 * k.mac;
        let e_if = 10.0 * k.add;
        let rp = e_if / e_ac;
        assert!((overall - r_e_layer(4, rp)).abs() < 1e-12);
    }

    #[test]
    fn t_eff_mean_of_levels() {
        let arch = Architecture {
            name: "x".into(),
            layers: (0..3)
                .map(|i| ArchLayer::new(&i.to_string(), Geometry::Fc { ci: 1 << 40, co: 1 }, "", ""))
                .collect(),
        };
        let v = t_eff(&arch, &[4, 2, 2], &uniform_rates(&arch, 1.0)).unwrap();
        assert!((v - 8.0 / 3.0).abs() < 1e-9);
        assert!(t_eff(&arch, &[4, 2], &uniform_rates(&arch, 1.0)).is_err());
    }
}
