//! Layer sensitivity statistics over QCFS level histograms and the
//! clustering step that turns them into a layerwise `L` vector.
//!
//! Per layer: Van Der Eijk's agreement `A`, skewness `g`, kurtosis `K` and the
//! composite `M = A·(g²+1)·K`. Layers with a higher `M` tolerate a smaller
//! quantization step.

use serde::Serialize;

use crate::error::{Error, Result, StatsError};
use crate::graph::QcfsConfig;
use crate::qcfs::{level_value, qcfs_level, QcfsTrace};
use crate::Real;

/// Element counts per quantization level `0..=L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelHistogram {
    pub counts: Vec<u64>,
    pub levels: u32,
    pub theta: Real,
}

impl LevelHistogram {
    pub fn new(counts: Vec<u64>, cfg: QcfsConfig) -> Result<Self, StatsError> {
        if counts.len() != cfg.levels as usize + 1 {
            return Err(StatsError::TooFewCategories(counts.len()));
        }
        Ok(Self {
            counts,
            levels: cfg.levels,
            theta: cfg.theta,
        })
    }

    /// Tallies activation values, which must sit exactly on the level grid.
    pub fn from_values(id: &str, values: &[Real], cfg: QcfsConfig) -> Result<Self> {
        let mut counts = vec![0u64; cfg.levels as usize + 1];
        for &v in values {
            let k = qcfs_level(v, cfg);
            if level_value(k, cfg) != v {
                return Err(Error::Integrity {
                    layer: id.to_string(),
                    reason: format!("activation {v} is not a multiple of θ/L = {}", cfg.theta_star()),
                });
            }
            counts[k as usize] += 1;
        }
        Ok(Self {
            counts,
            levels: cfg.levels,
            theta: cfg.theta,
        })
    }

    pub fn from_trace(trace: &QcfsTrace) -> Result<Self> {
        Self::from_values(&trace.id, trace.post.data(), trace.config)
    }

    /// Adds another histogram of the same layer (e.g. another image batch).
    pub fn merge(&mut self, other: &LevelHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of categories `K = L + 1`.
    pub fn categories(&self) -> usize {
        self.counts.len()
    }

    fn level_values(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let step = self.theta as f64 / self.levels as f64;
        self.counts
            .iter()
            .enumerate()
            .map(move |(k, &c)| (k as f64 * step, c as f64))
    }

    /// Sums of the 2nd, 3rd and 4th powers of deviations from the mean.
    fn central_sums(&self) -> (f64, f64, f64) {
        let n = self.total() as f64;
        let mean = self.level_values().map(|(x, c)| x * c).sum::<f64>() / n;
        let mut s = (0.0, 0.0, 0.0);
        for (x, c) in self.level_values() {
            let d = x - mean;
            let d2 = d * d;
            s.0 += c * d2;
            s.1 += c * d2 * d;
            s.2 += c * d2 * d2;
        }
        s
    }
}

/// Van Der Eijk's agreement with its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Agreement {
    pub a: f64,
    /// Non-empty categories: counts at or above `α·n`.
    pub s: usize,
    pub k: usize,
    /// Every bin fell below the threshold; `a` is reported as 1.
    pub no_full_bins: bool,
}

pub fn van_der_eijk_a(h: &LevelHistogram, alpha: f64) -> Result<Agreement, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    let k = h.categories();
    if k < 2 {
        return Err(StatsError::TooFewCategories(k));
    }
    let n = h.total();
    if n == 0 {
        return Err(StatsError::Empty);
    }
    let threshold = alpha * n as f64;
    let s = h.counts.iter().filter(|&&c| c as f64 >= threshold).count();
    if s == 0 {
        return Ok(Agreement {
            a: 1.0,
            s,
            k,
            no_full_bins: true,
        });
    }
    Ok(Agreement {
        a: 1.0 - (s as f64 - 1.0) / (k as f64 - 1.0),
        s,
        k,
        no_full_bins: false,
    })
}

/// `g = (m₃/n) / (m₂/(n−1))^{3/2}` over the level values.
pub fn skewness(h: &LevelHistogram) -> Result<f64, StatsError> {
    let n = h.total();
    if n < 2 {
        return Err(StatsError::TooFewSamples {
            stat: "skewness",
            need: 2,
            got: n,
        });
    }
    let (m2, m3, _) = h.central_sums();
    if !(m2 > 0.0) {
        return Err(StatsError::Degenerate);
    }
    let n = n as f64;
    Ok((m3 / n) / (m2 / (n - 1.0)).powf(1.5))
}

/// `K = (n+1)n / ((n−1)(n−2)(n−3)) · Σ(x−x̄)⁴ / k₂²` with the unbiased
/// variance `k₂ = Σ(x−x̄)² / (n−1)`.
pub fn kurtosis(h: &LevelHistogram) -> Result<f64, StatsError> {
    let n = h.total();
    if n < 4 {
        return Err(StatsError::TooFewSamples {
            stat: "kurtosis",
            need: 4,
            got: n,
        });
    }
    let (m2, _, m4) = h.central_sums();
    if !(m2 > 0.0) {
        return Err(StatsError::Degenerate);
    }
    let n = n as f64;
    let k2 = m2 / (n - 1.0);
    let coef = (n + 1.0) * n / ((n - 1.0) * (n - 2.0) * (n - 3.0));
    Ok(coef * m4 / (k2 * k2))
}

/// All statistics of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerStats {
    pub agreement: Agreement,
    pub g: f64,
    pub kurtosis: f64,
    pub m: f64,
}

pub fn composite(a: f64, g: f64, kurtosis: f64) -> f64 {
    a * (g * g + 1.0) * kurtosis
}

pub fn al_metric(h: &LevelHistogram, alpha: f64) -> Result<LayerStats, StatsError> {
    let agreement = van_der_eijk_a(h, alpha)?;
    let g = skewness(h)?;
    let kurtosis = kurtosis(h)?;
    Ok(LayerStats {
        agreement,
        g,
        kurtosis,
        m: composite(agreement.a, g, kurtosis),
    })
}

/// `α = 1 / (2·|L_tot|)`.
pub fn default_alpha(matmul_layers: usize) -> f64 {
    1.0 / (2.0 * matmul_layers as f64)
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Optimal 1-D k-means over `values` into `chi` clusters.
///
/// Returns a cluster id per input value, with id 0 for the lowest-valued
/// cluster. Clusters are contiguous runs of the sorted values (ties in value
/// keep input order). The partition minimizes the total within-cluster sum of
/// squared deviations via dynamic programming; among equal-cost partitions the
/// higher-valued clusters get fewer elements.
pub fn cluster_1d(values: &[f64], chi: usize) -> Result<Vec<usize>, StatsError> {
    let n = values.len();
    if chi == 0 || chi > n {
        return Err(StatsError::TooManyClusters { chi, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let starts = optimal_starts(&sorted, chi);
    let mut ids = vec![0; n];
    for (cluster, w) in starts.iter().enumerate() {
        let end = starts.get(cluster + 1).copied().unwrap_or(n);
        for &i in &order[*w..end] {
            ids[i] = cluster;
        }
    }
    Ok(ids)
}

/// Sum of squared deviations of `xs`.
pub fn sse(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum()
}

/// Start index of every cluster in the optimal partition of sorted `xs`.
fn optimal_starts(xs: &[f64], chi: usize) -> Vec<usize> {
    let n = xs.len();
    // cost[i][j]: SSE of xs[i..j], computed from the slice itself rather than
    // prefix sums so that equal runs cost exactly zero.
    let mut cost = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in i + 1..=n {
            cost[i][j] = sse(&xs[i..j]);
        }
    }
    // best[m][j]: optimal cost of xs[..j] in m+1 clusters; from[m][j]: start
    // of the last of those clusters.
    let mut best = vec![vec![f64::INFINITY; n + 1]; chi];
    let mut from = vec![vec![0usize; n + 1]; chi];
    for j in 1..=n {
        best[0][j] = cost[0][j];
    }
    for m in 1..chi {
        for j in m + 1..=n {
            for i in m..j {
                let c = best[m - 1][i] + cost[i][j];
                // Later start wins ties: fewer elements in the higher cluster.
                let cur = best[m][j];
                if cur.is_infinite() || ties(c, cur) || c < cur {
                    best[m][j] = c;
                    from[m][j] = i;
                }
            }
        }
    }
    let mut starts = vec![0; chi];
    let mut j = n;
    for m in (1..chi).rev() {
        starts[m] = from[m][j];
        j = starts[m];
    }
    starts
}

/// Analysis settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlConfig {
    pub alpha: f64,
    pub chi: usize,
    /// Quantization step per cluster id (id 0 is the lowest-`M` cluster).
    pub cluster_levels: Vec<u32>,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRow {
    pub id: String,
    pub a: Option<f64>,
    pub g: Option<f64>,
    pub kurtosis: Option<f64>,
    pub m: Option<f64>,
    pub cluster: Option<usize>,
    pub assigned_l: Option<u32>,
    /// Reason the layer's statistics are missing or need a caveat.
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlMetricReport {
    pub config: AlConfig,
    pub layers: Vec<LayerRow>,
    pub warnings: Vec<String>,
}

/// Runs the statistics on every histogram, clusters the layers with a
/// defined `M` and assigns each its cluster's quantization step.
pub fn analyze(histograms: &[(String, LevelHistogram)], config: AlConfig) -> Result<AlMetricReport> {
    let mut layers = Vec::with_capacity(histograms.len());
    for (id, h) in histograms {
        let row = match al_metric(h, config.alpha) {
            Ok(s) => LayerRow {
                id: id.clone(),
                a: Some(s.agreement.a),
                g: Some(s.g),
                kurtosis: Some(s.kurtosis),
                m: Some(s.m),
                cluster: None,
                assigned_l: None,
                flag: if s.agreement.no_full_bins {
                    Some("no bin reaches alpha·n; agreement reported as 1".into())
                } else if s.kurtosis < 0.0 {
                    Some("negative kurtosis".into())
                } else {
                    None
                },
            },
            Err(e) => LayerRow {
                id: id.clone(),
                a: van_der_eijk_a(h, config.alpha).ok().map(|a| a.a),
                g: None,
                kurtosis: None,
                m: None,
                cluster: None,
                assigned_l: None,
                flag: Some(e.to_string()),
            },
        };
        layers.push(row);
    }
    let defined: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].m.is_some()).collect();
    let values: Vec<f64> = defined.iter().map(|&i| layers[i].m.unwrap()).collect();
    if !values.is_empty() {
        let ids = cluster_1d(&values, config.chi)?;
        for (&i, &c) in defined.iter().zip(&ids) {
            layers[i].cluster = Some(c);
        }
    }
    let mut report = AlMetricReport {
        config,
        layers,
        warnings: vec![],
    };
    let (levels, mut warnings) = assign_layerwise_l(&report.layers, &report.config.cluster_levels)?;
    for (row, l) in report.layers.iter_mut().zip(levels) {
        row.assigned_l = l;
    }
    if values.is_empty() {
        warnings.push("no layer has a defined metric; clustering skipped".into());
    }
    report.warnings = warnings;
    Ok(report)
}

/// Maps each clustered layer to its cluster's `L`.
///
/// Layers without a cluster get `None`. A warning is produced for every pair
/// of clusters where the higher-`M` one receives the larger `L`.
pub fn assign_layerwise_l(
    rows: &[LayerRow],
    cluster_levels: &[u32],
) -> Result<(Vec<Option<u32>>, Vec<String>), StatsError> {
    let used = rows.iter().filter_map(|r| r.cluster).max().map_or(0, |m| m + 1);
    if cluster_levels.len() < used {
        return Err(StatsError::MissingClusterL(cluster_levels.len()));
    }
    if let Some(c) = cluster_levels.iter().position(|&l| l == 0) {
        return Err(StatsError::MissingClusterL(c));
    }
    let mut warnings = Vec::new();
    for lo in 0..used {
        for hi in lo + 1..used {
            if cluster_levels[hi] > cluster_levels[lo] {
                warnings.push(format!(
                    "cluster {hi} has higher M than cluster {lo} but a larger L ({} > {})",
                    cluster_levels[hi], cluster_levels[lo]
                ));
            }
        }
    }
    let levels = rows
        .iter()
        .map(|r| r.cluster.map(|c| cluster_levels[c]))
        .collect();
    Ok((levels, warnings))
}

fn opt(v: Option<f64>) -> String {
    v.map(crate::fmt::sig6).unwrap_or_default()
}

impl AlMetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,A,g,kurtosis,M,cluster,assigned_L,flag\n");
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.id,
                opt(r.a),
                opt(r.g),
                opt(r.kurtosis),
                opt(r.m),
                r.cluster.map(|c| c.to_string()).unwrap_or_default(),
                r.assigned_l.map(|c| c.to_string()).unwrap_or_default(),
                r.flag.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out
    }

    /// Assigned `L` of every clustered layer, in layer order.
    pub fn levels(&self) -> Vec<Option<u32>> {
        self.layers.iter().map(|r| r.assigned_l).collect()
    }
}
