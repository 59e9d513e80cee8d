//! Reference architectures and their published per-layer MAC tables.
//!
//! Each table keeps the printed layer names, sizes and MAC counts verbatim
//! next to the geometry used for recomputation, so the two can be diffed.

use serde::Serialize;
use serde_json::json;

use crate::energy::{ArchLayer, Architecture, Geometry};
use crate::graph::{parse_manifest, ModelGraph};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoldenRow {
    pub layer: String,
    pub input: String,
    pub output: String,
    /// Printed count; `None` for rows printed without one.
    pub printed_macs: Option<u64>,
    pub computed_macs: u64,
}

impl GoldenRow {
    pub fn matches(&self) -> bool {
        self.printed_macs.unwrap_or(0) == self.computed_macs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoldenTable {
    pub name: String,
    pub arch: Architecture,
    pub rows: Vec<GoldenRow>,
    pub printed_total: u64,
}

impl GoldenTable {
    pub fn computed_total(&self) -> u64 {
        self.arch.total_macs()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,input,output,printed_macs,computed_macs,match\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.layer,
                r.input,
                r.output,
                r.printed_macs.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
                r.computed_macs,
                r.matches()
            ));
        }
        out.push_str(&format!(
            "Total,,,{},{},{}\n",
            self.printed_total,
            self.computed_total(),
            self.printed_total == self.computed_total()
        ));
        out
    }
}

struct RowDef<'a> {
    name: &'a str,
    input: &'a str,
    output: &'a str,
    geometry: Geometry,
    shortcut: bool,
    printed: Option<u64>,
}

fn row<'a>(name: &'a str, input: &'a str, output: &'a str, g: Geometry, printed: Option<u64>) -> RowDef<'a> {
    RowDef {
        name,
        input,
        output,
        geometry: g,
        shortcut: false,
        printed,
    }
}

fn build(name: &str, specs: Vec<RowDef<'_>>, printed_total: u64) -> GoldenTable {
    let layers: Vec<ArchLayer> = specs
        .iter()
        .map(|s| {
            let l = ArchLayer::new(s.name, s.geometry, s.input, s.output);
            if s.shortcut {
                l.shortcut()
            } else {
                l
            }
        })
        .collect();
    let rows = specs
        .iter()
        .map(|s| GoldenRow {
            layer: s.name.into(),
            input: s.input.into(),
            output: s.output.into(),
            printed_macs: s.printed,
            computed_macs: s.geometry.macs(),
        })
        .collect();
    GoldenTable {
        name: name.into(),
        arch: Architecture {
            name: name.into(),
            layers,
        },
        rows,
        printed_total,
    }
}

/// VGG-16 on 32×32 inputs with a 10- or 100-way head.
pub fn vgg16_cifar(classes: u64) -> GoldenTable {
    let c = Geometry::conv;
    let p = Geometry::Pool;
    let (head, total, out) = match classes {
        100 => (409_600, 332_480_512, "100"),
        _ => (40_960, 332_111_872, "10"),
    };
    let specs = vec![
        row("Conv1_1", "32x32x3", "32x32x64", c(3, 64, 3, 32), Some(1_769_472)),
        row("Conv1_2", "32x32x64", "32x32x64", c(64, 64, 3, 32), Some(37_748_736)),
        row("MaxPool1", "32x32x64", "16x16x64", p, None),
        row("Conv2_1", "16x16x64", "16x16x128", c(64, 128, 3, 16), Some(18_874_368)),
        row("Conv2_2", "16x16x128", "16x16x128", c(128, 128, 3, 16), Some(37_748_736)),
        row("MaxPool2", "16x16x128", "8x8x128", p, None),
        row("Conv3_1", "8x8x128", "8x8x256", c(128, 256, 3, 8), Some(18_874_368)),
        row("Conv3_2", "8x8x256", "8x8x256", c(256, 256, 3, 8), Some(37_748_736)),
        row("Conv3_3", "8x8x256", "8x8x256", c(256, 256, 3, 8), Some(37_748_736)),
        row("MaxPool3", "8x8x256", "4x4x256", p, None),
        row("Conv4_1", "4x4x256", "4x4x512", c(256, 512, 3, 4), Some(18_874_368)),
        row("Conv4_2", "4x4x512", "4x4x512", c(512, 512, 3, 4), Some(37_748_736)),
        row("Conv4_3", "4x4x512", "4x4x512", c(512, 512, 3, 4), Some(37_748_736)),
        row("MaxPool4", "4x4x512", "2x2x512", p, None),
        row("Conv5_1", "2x2x512", "2x2x512", c(512, 512, 3, 2), Some(9_437_184)),
        row("Conv5_2", "2x2x512", "2x2x512", c(512, 512, 3, 2), Some(9_437_184)),
        row("Conv5_3", "2x2x512", "2x2x512", c(512, 512, 3, 2), Some(9_437_184)),
        row("MaxPool5", "2x2x512", "1x1x512", p, None),
        row("FC1", "512", "4096", Geometry::Fc { ci: 512, co: 4096 }, Some(2_097_152)),
        row("FC2", "4096", "4096", Geometry::Fc { ci: 4096, co: 4096 }, Some(16_777_216)),
        row("FC3", "4096", out, Geometry::Fc { ci: 4096, co: classes }, Some(head)),
    ];
    build(&format!("vgg16-cifar{classes}"), specs, total)
}

pub fn vgg16_imagenet() -> GoldenTable {
    let c = Geometry::conv;
    let p = Geometry::Pool;
    let specs = vec![
        row("Conv1_1", "224x224x3", "224x224x64", c(3, 64, 3, 224), Some(86_704_128)),
        row("Conv1_2", "224x224x64", "224x224x64", c(64, 64, 3, 224), Some(1_849_688_064)),
        row("MaxPool1", "224x224x64", "112x112x64", p, None),
        row("Conv2_1", "112x112x64", "112x112x128", c(64, 128, 3, 112), Some(924_844_032)),
        row("Conv2_2", "112x112x128", "112x112x128", c(128, 128, 3, 112), Some(1_849_688_064)),
        row("MaxPool2", "112x112x128", "56x56x128", p, None),
        row("Conv3_1", "56x56x128", "56x56x256", c(128, 256, 3, 56), Some(924_844_032)),
        row("Conv3_2", "56x56x256", "56x56x256", c(256, 256, 3, 56), Some(1_849_688_064)),
        row("Conv3_3", "56x56x256", "56x56x256", c(256, 256, 3, 56), Some(1_849_688_064)),
        row("MaxPool3", "56x56x256", "28x28x256", p, None),
        row("Conv4_1", "28x28x256", "28x28x512", c(256, 512, 3, 28), Some(924_844_032)),
        row("Conv4_2", "28x28x512", "28x28x512", c(512, 512, 3, 28), Some(1_849_688_064)),
        row("Conv4_3", "28x28x512", "28x28x512", c(512, 512, 3, 28), Some(1_849_688_064)),
        row("MaxPool4", "28x28x512", "14x14x512", p, None),
        row("Conv5_1", "14x14x512", "14x14x512", c(512, 512, 3, 14), Some(462_422_016)),
        row("Conv5_2", "14x14x512", "14x14x512", c(512, 512, 3, 14), Some(462_422_016)),
        row("Conv5_3", "14x14x512", "14x14x512", c(512, 512, 3, 14), Some(462_422_016)),
        row("MaxPool5", "14x14x512", "7x7x512", p, None),
        row("FC1", "25088", "4096", Geometry::Fc { ci: 25088, co: 4096 }, Some(102_760_448)),
        row("FC2", "4096", "4096", Geometry::Fc { ci: 4096, co: 4096 }, Some(16_777_216)),
        row("FC3", "4096", "1000", Geometry::Fc { ci: 4096, co: 1000 }, Some(4_096_000)),
    ];
    build("vgg16-imagenet", specs, 15_470_264_320)
}

/// ResNet-18 on 32×32 inputs, geometry taken from the printed sizes.
pub fn resnet18_cifar(classes: u64) -> GoldenTable {
    let c = Geometry::conv;
    let (head, total, out) = match classes {
        100 => (51_200, 217_630_720, "100"),
        _ => (5_120, 217_584_640, "10"),
    };
    let sc = |mut s: RowDef<'static>| {
        s.shortcut = true;
        s
    };
    let specs = vec![
        row("Initial Conv", "3x32x32", "64x32x32", c(3, 64, 3, 32), Some(1_769_472)),
        row("Residual Block 1.1 Conv1", "64x32x32", "64x32x32", c(64, 64, 3, 32), Some(37_748_736)),
        row("Residual Block 1.1 Conv2", "64x32x32", "64x32x32", c(64, 64, 3, 32), Some(37_748_736)),
        row("Residual Block 1.2 Conv1", "64x32x32", "64x32x32", c(64, 64, 3, 32), Some(37_748_736)),
        row("Residual Block 1.2 Conv2", "64x32x32", "64x32x32", c(64, 64, 3, 32), Some(37_748_736)),
        row("Residual Block 2.1 Conv1", "64x32x32", "128x16x16", c(64, 128, 3, 16), Some(18_874_368)),
        row("Residual Block 2.1 Conv2", "128x16x16", "128x16x16", c(128, 128, 3, 16), Some(9_437_184)),
        sc(row("Residual Block 2.1 Shortcut", "64x32x32", "128x16x16", c(64, 128, 1, 16), Some(2_097_152))),
        row("Residual Block 2.2 Conv1", "128x16x16", "128x16x16", c(128, 128, 3, 16), Some(9_437_184)),
        row("Residual Block 2.2 Conv2", "128x16x16", "128x16x16", c(128, 128, 3, 16), Some(9_437_184)),
        row("Residual Block 3.1 Conv1", "128x16x16", "256x8x8", c(128, 256, 3, 8), Some(4_718_592)),
        row("Residual Block 3.1 Conv2", "256x8x8", "256x8x8", c(256, 256, 3, 8), Some(2_359_296)),
        sc(row("Residual Block 3.1 Shortcut", "128x16x16", "256x8x8", c(128, 256, 1, 8), Some(524_288))),
        row("Residual Block 3.2 Conv1", "256x8x8", "256x8x8", c(256, 256, 3, 8), Some(2_359_296)),
        row("Residual Block 3.2 Conv2", "256x8x8", "256x8x8", c(256, 256, 3, 8), Some(2_359_296)),
        row("Residual Block 4.1 Conv1", "256x8x8", "512x4x4", c(256, 512, 3, 4), Some(1_179_648)),
        row("Residual Block 4.1 Conv2", "512x4x4", "512x4x4", c(512, 512, 3, 4), Some(589_824)),
        sc(row("Residual Block 4.1 Shortcut", "256x8x8", "512x4x4", c(256, 512, 1, 4), Some(262_144))),
        row("Residual Block 4.2 Conv1", "512x4x4", "512x4x4", c(512, 512, 3, 4), Some(589_824)),
        row("Residual Block 4.2 Conv2", "512x4x4", "512x4x4", c(512, 512, 3, 4), Some(589_824)),
        row("Final FC Layer", "512", out, Geometry::Fc { ci: 512, co: classes }, Some(head)),
    ];
    build(&format!("resnet18-cifar{classes}"), specs, total)
}

/// Standard ResNet-34 on 224×224 inputs (no published per-layer table).
pub fn resnet34_imagenet() -> Architecture {
    let mut layers = vec![
        ArchLayer::new("conv1", Geometry::conv(3, 64, 7, 112), "3x224x224", "64x112x112"),
        ArchLayer::new("maxpool", Geometry::Pool, "64x112x112", "64x56x56"),
    ];
    let stages = [(64u64, 56u64, 3usize), (128, 28, 4), (256, 14, 6), (512, 7, 3)];
    let mut cin = 64;
    let mut hin = 56;
    for (s, &(width, hw, blocks)) in stages.iter().enumerate() {
        for b in 0..blocks {
            let first_in = if b == 0 { cin } else { width };
            let in_size = |c: u64, h: u64| format!("{c}x{h}x{h}");
            let out = in_size(width, hw);
            let inp = if b == 0 { in_size(cin, hin) } else { out.clone() };
            let name = |part: &str| format!("layer{}.{}.{part}", s + 1, b);
            layers.push(ArchLayer::new(&name("conv1"), Geometry::conv(first_in, width, 3, hw), &inp, &out));
            layers.push(ArchLayer::new(&name("conv2"), Geometry::conv(width, width, 3, hw), &out, &out));
            if b == 0 && first_in != width {
                layers.push(
                    ArchLayer::new(&name("shortcut"), Geometry::conv(first_in, width, 1, hw), &inp, &out)
                        .shortcut(),
                );
            }
        }
        cin = width;
        hin = hw;
    }
    layers.push(ArchLayer::new("avgpool", Geometry::Pool, "512x7x7", "512x1x1"));
    layers.push(ArchLayer::new("fc", Geometry::Fc { ci: 512, co: 1000 }, "512", "1000"));
    Architecture {
        name: "resnet34-imagenet".into(),
        layers,
    }
}

/// Tables emitted for a `--golden` target; one per classifier head.
pub fn golden_tables(target: &str) -> Option<Vec<GoldenTable>> {
    match target {
        "vgg16-cifar" => Some(vec![vgg16_cifar(10), vgg16_cifar(100)]),
        "vgg16-imagenet" => Some(vec![vgg16_imagenet()]),
        "resnet18-cifar" => Some(vec![resnet18_cifar(10), resnet18_cifar(100)]),
        _ => None,
    }
}

pub const GOLDEN_TARGETS: [&str; 3] = ["vgg16-cifar", "vgg16-imagenet", "resnet18-cifar"];

/// Architectures accepted by name where a manifest is not given.
pub fn architecture(name: &str) -> Option<Architecture> {
    Some(match name {
        "vgg16-cifar10" => vgg16_cifar(10).arch,
        "vgg16-cifar100" => vgg16_cifar(100).arch,
        "vgg16-imagenet" => vgg16_imagenet().arch,
        "resnet18-cifar10" => resnet18_cifar(10).arch,
        "resnet18-cifar100" => resnet18_cifar(100).arch,
        "resnet34-imagenet" => resnet34_imagenet(),
        _ => return None,
    })
}

/// One printed row of the ANN/SNN energy comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyRatioRow {
    pub model: &'static str,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub fp32: f64,
    pub int8: f64,
}

pub const ENERGY_RATIO_ROWS: [EnergyRatioRow; 5] = [
    EnergyRatioRow { model: "VGG-16 (L=4) CIFAR-10", a: 1.0, b: 0.66, c: 0.005, fp32: 7.49, int8: 11.03 },
    EnergyRatioRow { model: "VGG-16 (L=4) CIFAR-100", a: 1.0, b: 0.62, c: 0.005, fp32: 7.96, int8: 11.70 },
    EnergyRatioRow { model: "VGG-16 (L=16) ImageNet", a: 1.0, b: 0.73, c: 0.006, fp32: 6.76, int8: 9.94 },
    EnergyRatioRow { model: "ResNet-18 (L=8) CIFAR-10", a: 1.0, b: 0.86, c: 0.008, fp32: 5.72, int8: 8.38 },
    EnergyRatioRow { model: "ResNet-18 (L=8) CIFAR-100", a: 1.0, b: 0.91, c: 0.008, fp32: 5.42, int8: 7.95 },
];

/// Manifest of VGG-16 with average pooling, batch norm after every hidden
/// MatMul and one QCFS layer per hidden MatMul (15 in total).
///
/// `levels` holds one `L` per QCFS layer.
pub fn vgg16_manifest(input_hw: usize, classes: usize, levels: &[u32], theta: f32) -> String {
    assert_eq!(levels.len(), 15, "VGG-16 has 15 QCFS layers");
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut layers = vec![json!({"id": "input", "kind": "input", "shape": [3, input_hw, input_hw]})];
    let mut c = 3;
    let mut hw = input_hw;
    let mut q = 0;
    for (b, widths) in blocks.iter().enumerate() {
        for (i, &w) in widths.iter().enumerate() {
            let id = format!("conv{}_{}", b + 1, i + 1);
            layers.push(json!({"id": id, "kind": "conv", "in_channels": c, "out_channels": w,
                               "kernel": [3, 3], "padding": [1, 1], "bn": {"eps": 1e-5}}));
            layers.push(json!({"id": format!("act{}_{}", b + 1, i + 1), "kind": "qcfs_act",
                               "L": levels[q], "theta": theta}));
            q += 1;
            c = w;
        }
        layers.push(json!({"id": format!("pool{}", b + 1), "kind": "avg_pool", "window": 2}));
        hw /= 2;
    }
    let mut features = c * hw * hw;
    for (i, width) in [4096, 4096].into_iter().enumerate() {
        layers.push(json!({"id": format!("fc{}", i + 1), "kind": "fc", "in_features": features,
                           "out_features": width, "bias": true}));
        layers.push(json!({"id": format!("act_fc{}", i + 1), "kind": "qcfs_act",
                           "L": levels[q], "theta": theta}));
        q += 1;
        features = width;
    }
    layers.push(json!({"id": "fc3", "kind": "fc", "in_features": features,
                       "out_features": classes, "bias": true}));
    serde_json::to_string_pretty(&json!({
        "name": format!("vgg16-{input_hw}px-{classes}"),
        "classes": classes,
        "layers": layers,
    }))
    .expect("manifest serializes")
}

/// Small weighted network whose second IF layer receives a positive then a
/// negative input and has to cancel an early spike with an inhibitory one.
///
/// For the input `[1.0]` the neuron `act2[0]` sees `[0.6, −0.5]` with
/// `θ* = 1`: it fires once in integration, falls below zero and fires an
/// inhibitory spike, ending with count 0 like the ANN (`z = 0.1` → level 0).
pub fn inhibitory_fixture() -> ModelGraph {
    let manifest = json!({
        "name": "inhibitory-fixture",
        "classes": 2,
        "layers": [
            {"id": "input", "kind": "input", "shape": [1, 1, 1]},
            {"id": "fc1", "kind": "fc", "in_features": 1, "out_features": 2},
            {"id": "act1", "kind": "qcfs_act", "L": 2, "theta": 1.0},
            {"id": "fc2", "kind": "fc", "in_features": 2, "out_features": 2},
            {"id": "act2", "kind": "qcfs_act", "L": 2, "theta": 2.0},
            {"id": "fc3", "kind": "fc", "in_features": 2, "out_features": 2},
        ],
    });
    let mut g = parse_manifest(&manifest.to_string()).expect("fixture manifest is valid");
    let blobs: [(&str, &[Real]); 3] = [
        ("fc1", &[1.0, 0.5]),
        ("fc2", &[-1.0, 2.2, 1.0, 0.0]),
        ("fc3", &[1.0, -1.0, 1.0, 1.0]),
    ];
    for (id, blob) in blobs {
        g.set_weights(id, blob).expect("fixture blob matches layer");
    }
    g
}
