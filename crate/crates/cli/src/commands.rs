use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pasc_core::al::{analyze, default_alpha, AlConfig, AlMetricReport, LevelHistogram};
use pasc_core::energy::{energy_report, uniform_rates, Architecture, EnergyReport, GraphEnergyView, Precision};
use pasc_core::fmt::sig6;
use pasc_core::golden::{self, golden_tables, GoldenTable, GOLDEN_TARGETS};
use pasc_core::graph::{parse_manifest, MatMulParams};
use pasc_core::pasc::{self, LayerDeviation, PascModel, PascOp, SpikeStats};
use pasc_core::{ann_forward, convert, snn_forward, ModelGraph, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{emit, to_json};
use crate::{Command, InputArgs, ModelArgs, Outcome};

/// Batch items simulated together.
const CHUNK: usize = 16;
const DEFAULT_CHECK_INPUTS: usize = 100;
const DEFAULT_STAT_INPUTS: usize = 16;

/// Run parameters echoed into every report.
#[derive(Default, Serialize)]
struct ConfigEcho {
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inputs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chi: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_levels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    arch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    precision: Option<Precision>,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

impl ConfigEcho {
    fn new(command: &'static str, model: &ModelArgs) -> Self {
        Self {
            command,
            manifest: Some(path_str(&model.manifest)),
            weights: model.weights.as_deref().map(path_str),
            seed: model.seed,
            ..Self::default()
        }
    }

    fn with_inputs(mut self, inputs: &InputArgs, n: usize) -> Self {
        match &inputs.inputs {
            Some(p) => self.inputs = Some(path_str(p)),
            None => self.n = Some(n),
        }
        self
    }
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Convert { model, out } => cmd_convert(&model, &out),
        Command::CheckEquiv {
            model,
            inputs,
            tol,
            out,
        } => cmd_check_equiv(&model, &inputs, tol, out.as_deref()),
        Command::AlMetric {
            model,
            inputs,
            alpha,
            chi,
            cluster_levels,
            out,
        } => cmd_al_metric(&model, &inputs, alpha, chi, cluster_levels, out.as_deref()),
        Command::Energy {
            manifest,
            weights,
            seed,
            arch,
            levels,
            inputs,
            rate,
            precision,
            golden,
            out,
        } => {
            if let Some(target) = golden {
                return cmd_golden(&target, out.as_deref());
            }
            let model = manifest.map(|manifest| ModelArgs {
                manifest,
                weights,
                seed,
            });
            cmd_energy(EnergyArgs {
                model,
                arch,
                levels,
                inputs,
                rate,
                precision: precision.into(),
                out,
            })
        }
    }
}

fn read_manifest(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(parse_manifest(&text)?)
}

fn load_model(args: &ModelArgs) -> Result<ModelGraph> {
    let graph = read_manifest(&args.manifest)?;
    match (&args.weights, args.seed) {
        (Some(dir), _) => Ok(graph.load_weights(dir)?),
        (None, Some(seed)) => Ok(graph.init_random(seed)),
        (None, None) => bail!("one of --weights or --seed is required"),
    }
}

/// Inputs from a raw f32 file, or `n` values uniform in `[0, 1)` drawn from
/// the seed's input stream (seed 0 when weights come from disk).
fn load_inputs(args: &InputArgs, model: &ModelGraph, seed: Option<u64>, default_n: usize) -> Result<Tensor> {
    let [c, h, w] = model.input_shape();
    let item = c * h * w;
    if let Some(path) = &args.inputs {
        let bytes = fs::read(path).with_context(|| format!("reading inputs {}", path.display()))?;
        if bytes.is_empty() || bytes.len() % (4 * item) != 0 {
            bail!(
                "input file {} has {} bytes, not a whole number of {c}x{h}x{w} f32 items",
                path.display(),
                bytes.len()
            );
        }
        let data: Vec<Real> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as Real)
            .collect();
        return Ok(Tensor::new([data.len() / item, c, h, w], data)?);
    }
    let n = args.n.unwrap_or(default_n);
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    rng.set_stream(1);
    let data = (0..n * item).map(|_| rng.gen::<Real>()).collect();
    Ok(Tensor::new([n, c, h, w], data)?)
}

fn chunks(x: &Tensor) -> impl Iterator<Item = Tensor> + '_ {
    let [n, c, h, w] = x.dims();
    let item = x.item_len();
    (0..n).step_by(CHUNK).map(move |start| {
        let end = (start + CHUNK).min(n);
        let data = x.data()[start * item..end * item].to_vec();
        Tensor::new([end - start, c, h, w], data).expect("chunk matches dims")
    })
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BundleNode {
    id: String,
    op: &'static str,
    preds: Vec<String>,
    steps: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    constant_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_in: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_out: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_star: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_layer: Option<bool>,
}

#[derive(Serialize)]
struct Bundle {
    config: ConfigEcho,
    name: String,
    classes: usize,
    input_shape: [usize; 3],
    final_steps: u32,
    nodes: Vec<BundleNode>,
}

fn bundle(pasc: &PascModel, config: ConfigEcho) -> Bundle {
    let nodes = pasc
        .nodes
        .iter()
        .map(|n| {
            let mut b = BundleNode {
                id: n.id.clone(),
                op: "",
                preds: n.preds.iter().map(|&p| pasc.nodes[p].id.clone()).collect(),
                steps: n.steps,
                constant_scale: None,
                l_in: None,
                l_out: None,
                theta: None,
                theta_star: None,
                input_layer: None,
            };
            match &n.op {
                PascOp::Input => b.op = "input",
                PascOp::MatMul { steps, .. } => {
                    b.op = "matmul";
                    b.constant_scale = Some(1.0 / *steps as f64);
                }
                PascOp::AvgPool { .. } => b.op = "avg_pool",
                PascOp::ResidualAdd => b.op = "residual_add",
                PascOp::If(l) => {
                    b.op = "if";
                    b.l_in = Some(l.l_in);
                    b.l_out = Some(l.l_out);
                    b.theta = Some(l.theta);
                    b.theta_star = Some(l.theta_star);
                    b.input_layer = Some(l.input_layer);
                }
            }
            b
        })
        .collect();
    Bundle {
        config,
        name: pasc.name.clone(),
        classes: pasc.classes,
        input_shape: pasc.input_shape,
        final_steps: pasc.final_steps(),
        nodes,
    }
}

fn cmd_convert(args: &ModelArgs, out: &Path) -> Result<Outcome> {
    let model = load_model(args)?;
    let pasc = convert(&model)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    // Same graph, constants replaced by their per-step versions.
    let mut scaled = model.clone();
    scaled.weights = pasc
        .nodes
        .iter()
        .filter_map(|n| match &n.op {
            PascOp::MatMul { params, .. } => Some((n.id.clone(), params.clone())),
            _ => None,
        })
        .collect::<BTreeMap<String, MatMulParams>>();
    scaled.save_weights(out)?;
    fs::write(out.join("manifest.json"), model.to_manifest())?;
    let b = bundle(&pasc, ConfigEcho::new("convert", args));
    fs::write(out.join("pasc.json"), to_json(&b)?)?;
    eprintln!(
        "converted {} IF layers, {} MatMul layers into {}",
        pasc.if_layers().count(),
        model.matmul_count(),
        out.display()
    );
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// check-equiv
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct IfSummary {
    id: String,
    l_in: u32,
    l_out: u32,
    theta_star: Real,
    spike_rate: f64,
    excitatory_spikes: u64,
    inhibitory_spikes: u64,
}

#[derive(Serialize)]
struct CheckReport {
    config: ConfigEcho,
    passed: bool,
    samples: usize,
    argmax_agreement: f64,
    max_rel_dev: f64,
    max_logit_dev: f64,
    worst_layer: String,
    inhibitory_spikes: u64,
    per_layer: Vec<LayerDeviation>,
    if_layers: Vec<IfSummary>,
}

impl CheckReport {
    fn to_csv(&self) -> String {
        let mut s = String::from("layer,max_abs_dev,rel_dev\n");
        for l in &self.per_layer {
            s.push_str(&format!("{},{},{}\n", l.id, sig6(l.max_abs_dev), sig6(l.rel_dev)));
        }
        s
    }
}

/// Runs the spiking network over all inputs in chunks, merging spike counts.
fn measure(pasc: &PascModel, inputs: &Tensor) -> Result<SpikeStats> {
    let mut stats = SpikeStats::default();
    for x in chunks(inputs) {
        stats.merge(&snn_forward(pasc, &x)?.stats);
    }
    Ok(stats)
}

fn cmd_check_equiv(args: &ModelArgs, inputs: &InputArgs, tol: f64, out: Option<&Path>) -> Result<Outcome> {
    if !(tol >= 0.0) {
        bail!("--tol must be non-negative, got {tol}");
    }
    let model = load_model(args)?;
    let x = load_inputs(inputs, &model, args.seed, DEFAULT_CHECK_INPUTS)?;
    let pasc = convert(&model)?;
    let mut per_layer: Vec<LayerDeviation> = Vec::new();
    let mut agree = 0.0;
    let mut stats = SpikeStats::default();
    for chunk in chunks(&x) {
        let trace = ann_forward(&model, &chunk)?;
        let snn = snn_forward(&pasc, &chunk)?;
        let rep = pasc::compare(&pasc, &trace, &snn)?;
        agree += rep.argmax_agreement * rep.samples as f64;
        stats.merge(&snn.stats);
        if per_layer.is_empty() {
            per_layer = rep.per_layer;
        } else {
            for (a, b) in per_layer.iter_mut().zip(rep.per_layer) {
                a.max_abs_dev = a.max_abs_dev.max(b.max_abs_dev);
                a.rel_dev = a.rel_dev.max(b.rel_dev);
            }
        }
    }
    let samples = x.batch();
    let worst = per_layer
        .iter()
        .max_by(|a, b| a.rel_dev.total_cmp(&b.rel_dev))
        .expect("model has layers");
    let argmax_agreement = agree / samples as f64;
    let max_rel_dev = worst.rel_dev;
    let passed = argmax_agreement == 1.0 && max_rel_dev <= tol;
    let if_layers = pasc
        .if_layers()
        .zip(&stats.layers)
        .map(|(l, s)| IfSummary {
            id: l.id.clone(),
            l_in: l.l_in,
            l_out: l.l_out,
            theta_star: l.theta_star,
            spike_rate: s.spike_rate(),
            excitatory_spikes: s.excitatory_spikes,
            inhibitory_spikes: s.inhibitory_spikes,
        })
        .collect();
    let mut config = ConfigEcho::new("check-equiv", args).with_inputs(inputs, samples);
    config.tol = Some(tol);
    let report = CheckReport {
        config,
        passed,
        samples,
        argmax_agreement,
        max_rel_dev,
        max_logit_dev: per_layer.last().map_or(0.0, |l| l.max_abs_dev),
        worst_layer: worst.id.clone(),
        inhibitory_spikes: stats.inhibitory_spikes(),
        if_layers,
        per_layer,
    };
    emit(&report, Some(&report.to_csv()), out)?;
    let summary = format!(
        "{} samples, argmax agreement {}, max relative deviation {} at layer `{}` (tol {}), {} inhibitory spikes",
        samples,
        sig6(argmax_agreement),
        sig6(max_rel_dev),
        report.worst_layer,
        sig6(tol),
        report.inhibitory_spikes
    );
    if passed {
        eprintln!("equivalence check passed: {summary}");
        Ok(Outcome::Success)
    } else {
        eprintln!("equivalence check failed: {summary}");
        Ok(Outcome::CheckFailed)
    }
}

// ---------------------------------------------------------------------------
// al-metric
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AlOutput {
    config: ConfigEcho,
    #[serde(flatten)]
    report: AlMetricReport,
}

fn cmd_al_metric(
    args: &ModelArgs,
    inputs: &InputArgs,
    alpha: Option<f64>,
    chi: usize,
    cluster_levels: Option<Vec<u32>>,
    out: Option<&Path>,
) -> Result<Outcome> {
    let model = load_model(args)?;
    let x = load_inputs(inputs, &model, args.seed, DEFAULT_STAT_INPUTS)?;
    let alpha = alpha.unwrap_or_else(|| default_alpha(model.matmul_count()));
    let cluster_levels = cluster_levels.unwrap_or_else(|| {
        let top = model.levels().into_iter().max().unwrap_or(1);
        (0..chi).map(|i| (top >> i.min(31)).max(1)).collect()
    });
    let mut hists: Vec<(String, LevelHistogram)> = Vec::new();
    for chunk in chunks(&x) {
        let trace = ann_forward(&model, &chunk)?;
        for (i, t) in trace.qcfs.iter().enumerate() {
            let h = LevelHistogram::from_trace(t)?;
            match hists.get_mut(i) {
                Some((_, acc)) => acc.merge(&h),
                None => hists.push((t.id.clone(), h)),
            }
        }
    }
    if hists.is_empty() {
        bail!("model has no qcfs_act layers");
    }
    let report = analyze(
        &hists,
        AlConfig {
            alpha,
            chi,
            cluster_levels: cluster_levels.clone(),
            images: x.batch(),
        },
    )
    .context("clustering the layers with a defined metric")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let flagged = report.layers.iter().filter(|r| r.flag.is_some()).count();
    let mut config = ConfigEcho::new("al-metric", args).with_inputs(inputs, x.batch());
    config.alpha = Some(alpha);
    config.chi = Some(chi);
    config.cluster_levels = Some(cluster_levels);
    let csv = report.to_csv();
    emit(&AlOutput { config, report }, Some(&csv), out)?;
    eprintln!("analyzed {} layers over {} inputs, {flagged} flagged", hists.len(), x.batch());
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// energy
// ---------------------------------------------------------------------------

struct EnergyArgs {
    model: Option<ModelArgs>,
    arch: Option<String>,
    levels: Option<Vec<u32>>,
    inputs: InputArgs,
    rate: String,
    precision: Precision,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EnergyOutput {
    config: ConfigEcho,
    #[serde(flatten)]
    report: EnergyReport,
}

#[derive(Serialize)]
struct GoldenOutput {
    target: String,
    tables: Vec<GoldenTable>,
}

fn cmd_golden(target: &str, out: Option<&Path>) -> Result<Outcome> {
    let tables = golden_tables(target)
        .ok_or_else(|| anyhow!("unknown golden target `{target}`; expected one of {}", GOLDEN_TARGETS.join(", ")))?;
    let csv: Vec<String> = tables.iter().map(|t| format!("# {}\n{}", t.name, t.to_csv())).collect();
    let csv = csv.join("\n");
    print!("{csv}");
    if let Some(path) = out {
        let doc = GoldenOutput {
            target: target.into(),
            tables,
        };
        emit(&doc, Some(&csv), Some(path))?;
    }
    Ok(Outcome::Success)
}

fn resolve_levels(arch: &Architecture, given: &[u32]) -> Result<Vec<u32>> {
    let main = arch.main_matmuls().count();
    if given.iter().any(|&l| l == 0) {
        bail!("every L must be at least 1");
    }
    match given.len() {
        1 => Ok(vec![given[0]; main]),
        n if n == main => Ok(given.to_vec()),
        _ => Ok(arch.expand_if_levels(given)?),
    }
}

fn cmd_energy(a: EnergyArgs) -> Result<Outcome> {
    let mut config = ConfigEcho {
        command: "energy",
        rate: Some(a.rate.clone()),
        precision: Some(a.precision),
        levels: a.levels.clone(),
        ..ConfigEcho::default()
    };
    let (arch, default_levels, view, graph) = match (&a.model, &a.arch) {
        (Some(_), Some(_)) => bail!("--manifest and --arch are mutually exclusive"),
        (None, None) => bail!("one of --manifest, --arch or --golden is required"),
        (None, Some(name)) => {
            config.arch = Some(name.clone());
            let arch = golden::architecture(name).ok_or_else(|| anyhow!("unknown architecture `{name}`"))?;
            (arch, None, None, None)
        }
        (Some(m), None) => {
            config.manifest = Some(path_str(&m.manifest));
            config.weights = m.weights.as_deref().map(path_str);
            config.seed = m.seed;
            let graph = read_manifest(&m.manifest)?;
            let view = GraphEnergyView::from_graph(&graph)?;
            (view.arch.clone(), Some(view.levels.clone()), Some(view), Some(graph))
        }
    };
    let levels = match (&a.levels, default_levels) {
        (Some(l), _) => resolve_levels(&arch, l)?,
        (None, Some(l)) => l,
        (None, None) => bail!("--levels is required with --arch"),
    };
    let (rates, mode) = if a.rate == "measured" {
        let (Some(m), Some(view), Some(_)) = (&a.model, &view, &graph) else {
            bail!("--rate measured needs --manifest with --weights or --seed");
        };
        let model = load_model(m)?;
        let x = load_inputs(&a.inputs, &model, m.seed, DEFAULT_STAT_INPUTS)?;
        let stats = measure(&convert(&model)?, &x)?;
        let measured: HashMap<String, f64> = stats.layers.iter().map(|s| (s.id.clone(), s.spike_rate())).collect();
        config = config.with_inputs(&a.inputs, x.batch());
        (view.rates_from(&measured)?, format!("measured over {} inputs", x.batch()))
    } else {
        let r: f64 = a
            .rate
            .parse()
            .map_err(|_| anyhow!("--rate must be `measured` or a number, got `{}`", a.rate))?;
        if !(r > 0.0 && r.is_finite()) {
            bail!("--rate must be positive, got {r}");
        }
        (uniform_rates(&arch, r), format!("fixed {}", sig6(r)))
    };
    let report = energy_report(&arch, &levels, &rates, &mode, a.precision)?;
    eprintln!(
        "{}: T_eff {}, overall r_E {}, ANN/SNN energy ratio {} ({})",
        report.model,
        sig6(report.t_eff),
        sig6(report.overall_r_e),
        sig6(report.ann_snn_ratio),
        a.precision.name()
    );
    let csv = report.to_csv();
    emit(&EnergyOutput { config, report }, Some(&csv), a.out.as_deref())?;
    Ok(Outcome::Success)
}
