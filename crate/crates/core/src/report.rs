//! Experiment protocols: layerwise geometry, quantization, sequence-length
//! and training-trajectory sweeps, and family comparison.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_margin_exact, bootstrap_quantile, BootstrapInterval};
use crate::collision::{
    default_pair_budget, exact_collisions, near_collision_sweep, near_collision_sweep_with_nn,
    NearCollisionSweep, SweepMode,
};
use crate::error::{Error, Result};
use crate::metrics::{
    colip_ratios, nn_distances, norm_stats, quantile, sample_pairs, LayerDiagnostics, Normalized,
    PairSample, Points, QUANTILE_RULE, TRIM_FRACTION,
};
use crate::quant::{critical_bitwidth, dynamic_range, quantize_cloud, safety_check, QuantSpec, Verdict};
use crate::rng;
use crate::store::{Matrix, Run};

pub const TOOL_NAME: &str = "injx";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub q: f64,
    pub d_min: u32,
    pub pairs: usize,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub bootstrap: usize,
    pub exact_bootstrap: bool,
    /// `None` picks exact sweeps when all pairs fit the budget.
    pub sweep_mode: Option<SweepMode>,
    pub exact_pair_budget: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            q: 1.0,
            d_min: 1,
            pairs: 50_000,
            seed: 0,
            epsilons: vec![1e-6, 1e-4, 1e-2],
            bootstrap: crate::bootstrap::DEFAULT_RESAMPLES,
            exact_bootstrap: false,
            sweep_mode: None,
            exact_pair_budget: default_pair_budget(),
        }
    }
}

pub const DEFAULT_BITS: [u32; 2] = [8, 4];

/// Everything needed to recompute a report from its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub config: Config,
    pub bits: Vec<u32>,
    pub quantile_rule: String,
    pub prng: String,
    pub trim_fraction: f64,
    pub bootstrap_mode: String,
}

impl ConfigEcho {
    fn new(config: &Config, bits: &[u32]) -> Self {
        Self {
            config: config.clone(),
            bits: bits.to_vec(),
            quantile_rule: QUANTILE_RULE.into(),
            prng: rng::PRNG_NAME.into(),
            trim_fraction: TRIM_FRACTION,
            bootstrap_mode: if config.exact_bootstrap {
                "margin: resample prompts, recompute nearest neighbors; colip: resample pair ratios"
            } else {
                "margin: resample nearest-neighbor distances; colip: resample pair ratios"
            }
            .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub model_id: String,
    pub k: usize,
    pub n: usize,
    pub hidden_dim: usize,
    pub layers: Vec<usize>,
    pub token_digest: String,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ManifestSummary {
    fn of(run: &Run) -> Self {
        Self {
            model_id: run.manifest.model_id.clone(),
            k: run.manifest.k,
            n: run.manifest.n,
            hidden_dim: run.manifest.hidden_dim,
            layers: run.layers().iter().map(|(l, _)| *l).collect(),
            token_digest: run.tokens.digest(),
            meta: run.manifest.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub requested: usize,
    pub retained: usize,
    pub d_min: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub diagnostics: LayerDiagnostics,
    /// Interval on the raw margin; normalized intervals divide by the layer's
    /// norm statistic.
    pub margin_ci: Option<BootstrapInterval>,
    pub colip_ci: Option<BootstrapInterval>,
    pub collision_groups: Vec<Vec<usize>>,
    pub near_collisions: Option<NearCollisionSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub layer: usize,
    pub spec: QuantSpec,
    /// Full-precision exact margin used for the safety verdict.
    pub fp_min_margin: f64,
    pub verdict: Verdict,
    /// `None` when the full-precision layer already has exact duplicates.
    pub b_crit: Option<u32>,
    pub quantized: LayerDiagnostics,
    pub near_collisions: Option<NearCollisionSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSection {
    pub bits: u32,
    pub layers: Vec<QuantLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub tool: String,
    pub version: String,
    pub manifest: ManifestSummary,
    pub config: ConfigEcho,
    pub pairs: PairSummary,
    pub layers: Vec<LayerReport>,
    pub quantization: Option<Vec<QuantSection>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Seqlen,
    Trajectory,
    Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub axis: String,
    pub model_id: String,
    pub k: usize,
    pub token_digest: String,
    pub params: Option<serde_json::Value>,
    pub pairs: PairSummary,
    pub layer: LayerReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tool: String,
    pub version: String,
    pub kind: SweepKind,
    pub config: ConfigEcho,
    pub entries: Vec<SweepEntry>,
}

fn check_config(config: &Config) -> Result<()> {
    if !(config.q > 0.0 && config.q < 100.0) {
        return Err(Error::PercentOutOfRange(config.q));
    }
    if config.pairs == 0 {
        return Err(Error::InvalidArgument("pair count must be ≥ 1".into()));
    }
    if config.d_min == 0 {
        return Err(Error::InvalidArgument(
            "d_min must be ≥ 1 so co-Lipschitz ratios are finite".into(),
        ));
    }
    Ok(())
}

fn shared_pairs(run: &Run, config: &Config) -> Result<(PairSample, PairSummary)> {
    let sample = sample_pairs(
        run.tokens.len(),
        config.pairs,
        config.seed,
        &run.tokens,
        config.d_min,
    )?;
    let summary = PairSummary {
        requested: config.pairs,
        retained: sample.len(),
        d_min: config.d_min,
        seed: config.seed,
    };
    Ok((sample, summary))
}

fn sweep_for(
    points: &Points,
    nn: &crate::metrics::NnDistances,
    sample: &PairSample,
    config: &Config,
) -> Result<Option<NearCollisionSweep>> {
    if config.epsilons.is_empty() {
        return Ok(None);
    }
    let n = points.len() as u64;
    let mode = config.sweep_mode.unwrap_or(if n * (n - 1) / 2 <= config.exact_pair_budget {
        SweepMode::Exact
    } else {
        SweepMode::Sampled
    });
    let sweep = match mode {
        SweepMode::Exact => {
            near_collision_sweep_with_nn(points, &config.epsilons, nn, config.exact_pair_budget)?
        }
        SweepMode::Sampled => near_collision_sweep(
            points,
            &config.epsilons,
            SweepMode::Sampled,
            Some(sample),
            config.exact_pair_budget,
        )?,
    };
    Ok(Some(sweep))
}

/// Core per-layer computation shared by every protocol.
pub fn analyze_layer(
    layer: usize,
    cloud: &Matrix,
    run: &Run,
    sample: &PairSample,
    config: &Config,
) -> Result<LayerReport> {
    let inner = || -> Result<LayerReport> {
        let points = Points::from(cloud);
        let nn = nn_distances(&points)?;
        let norms = norm_stats(&points)?;
        let margin_raw = quantile(&nn.dist, config.q)?;
        let ratios = colip_ratios(&points, &run.tokens, sample)?;
        let colip_raw = quantile(&ratios, config.q)?;
        let collisions = exact_collisions(cloud);
        let diagnostics = LayerDiagnostics {
            layer,
            q: config.q,
            norms,
            margin_q: Normalized::new(margin_raw, &norms)?,
            colip_q: Normalized::new(colip_raw, &norms)?,
            min_margin: nn.min_with_witness().0,
            collisions: collisions.colliding_pairs,
        };
        let (margin_ci, colip_ci) = if config.bootstrap > 0 {
            let m = if config.exact_bootstrap {
                bootstrap_margin_exact(&points, config.q, config.bootstrap, config.seed)?
            } else {
                bootstrap_quantile(
                    &nn.dist,
                    config.q,
                    config.bootstrap,
                    config.seed,
                    rng::tags::BOOTSTRAP_MARGIN,
                )?
            };
            let c = bootstrap_quantile(
                &ratios,
                config.q,
                config.bootstrap,
                config.seed,
                rng::tags::BOOTSTRAP_COLIP,
            )?;
            (Some(m), Some(c))
        } else {
            (None, None)
        };
        let near_collisions = sweep_for(&points, &nn, sample, config)?;
        Ok(LayerReport {
            diagnostics,
            margin_ci,
            colip_ci,
            collision_groups: collisions.groups,
            near_collisions,
        })
    };
    inner().map_err(|e| e.in_layer(layer))
}

pub fn run_layerwise(run: &Run, config: &Config) -> Result<DiagnosticsReport> {
    check_config(config)?;
    let (sample, pairs) = shared_pairs(run, config)?;
    let layers = run
        .layers()
        .par_iter()
        .map(|(l, m)| analyze_layer(*l, m, run, &sample, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        manifest: ManifestSummary::of(run),
        config: ConfigEcho::new(config, &[]),
        pairs,
        layers,
        quantization: None,
    })
}

fn quantized_layer(
    layer: usize,
    points: &Points,
    spec: &QuantSpec,
    fp_min_margin: f64,
    run: &Run,
    sample: &PairSample,
    config: &Config,
) -> Result<QuantLayer> {
    let q = quantize_cloud(points, spec)?;
    let values = &q.values;
    let nn = nn_distances(values)?;
    let norms = norm_stats(values)?;
    let ratios = colip_ratios(values, &run.tokens, sample)?;
    let quantized = LayerDiagnostics {
        layer,
        q: config.q,
        norms,
        margin_q: Normalized::new(quantile(&nn.dist, config.q)?, &norms)?,
        colip_q: Normalized::new(quantile(&ratios, config.q)?, &norms)?,
        min_margin: nn.min_with_witness().0,
        collisions: q.collisions().colliding_pairs,
    };
    let b_crit = match critical_bitwidth(fp_min_margin, points.dim(), spec.range) {
        Ok(b) => Some(b),
        Err(Error::NoSafeBitwidth) => None,
        Err(e) => return Err(e),
    };
    Ok(QuantLayer {
        layer,
        spec: *spec,
        fp_min_margin,
        verdict: safety_check(fp_min_margin, points.dim(), spec.step),
        b_crit,
        quantized,
        near_collisions: sweep_for(values, &nn, sample, config)?,
    })
}

pub fn run_quantization(run: &Run, bits: &[u32], config: &Config) -> Result<DiagnosticsReport> {
    check_config(config)?;
    if bits.is_empty() {
        return Err(Error::InvalidArgument("at least one bitwidth required".into()));
    }
    // Resolve every quantizer up front so degenerate layers fail fast.
    let specs: Vec<Vec<QuantSpec>> = run
        .layers()
        .iter()
        .map(|(l, m)| {
            let r = dynamic_range(&Points::from(m));
            bits.iter()
                .map(|&b| QuantSpec::new(r, b).map_err(|e| e.in_layer(*l)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut report = run_layerwise(run, config)?;
    let (sample, _) = shared_pairs(run, config)?;
    let per_layer: Vec<Vec<QuantLayer>> = run
        .layers()
        .par_iter()
        .zip(&specs)
        .zip(&report.layers)
        .map(|(((l, m), layer_specs), base)| {
            let points = Points::from(m);
            layer_specs
                .iter()
                .map(|spec| {
                    quantized_layer(
                        *l,
                        &points,
                        spec,
                        base.diagnostics.min_margin,
                        run,
                        &sample,
                        config,
                    )
                    .map_err(|e| e.in_layer(*l))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let sections = bits
        .iter()
        .enumerate()
        .map(|(k, &b)| QuantSection {
            bits: b,
            layers: per_layer.iter().map(|v| v[k].clone()).collect(),
        })
        .collect();
    report.config = ConfigEcho::new(config, bits);
    report.quantization = Some(sections);
    Ok(report)
}

fn last_layer_entry(axis: String, run: &Run, config: &Config) -> Result<SweepEntry> {
    let (sample, pairs) = shared_pairs(run, config)?;
    let (l, m) = run.last_layer();
    Ok(SweepEntry {
        axis,
        model_id: run.manifest.model_id.clone(),
        k: run.manifest.k,
        token_digest: run.tokens.digest(),
        params: run.manifest.meta.get("params").cloned(),
        pairs,
        layer: analyze_layer(l, m, run, &sample, config)?,
    })
}

fn sweep_report(kind: SweepKind, config: &Config, entries: Vec<SweepEntry>) -> SweepReport {
    SweepReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        kind,
        config: ConfigEcho::new(config, &[]),
        entries,
    }
}

/// Last-layer diagnostics per context length, ordered by ascending K.
pub fn run_seqlen(runs: Vec<(usize, Run)>, config: &Config) -> Result<SweepReport> {
    check_config(config)?;
    if runs.len() < 2 {
        return Err(Error::SweepTooShort);
    }
    let mut runs = runs;
    runs.sort_by_key(|(k, _)| *k);
    if let Some(w) = runs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument(format!("duplicate K = {}", w[0].0)));
    }
    for (k, run) in &runs {
        if run.manifest.k != *k {
            return Err(Error::InvalidArgument(format!(
                "K = {k} given for a manifest with k = {}",
                run.manifest.k
            )));
        }
    }
    let entries = runs
        .par_iter()
        .map(|(k, run)| last_layer_entry(k.to_string(), run, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep_report(SweepKind::Seqlen, config, entries))
}

/// Last-layer diagnostics per checkpoint over one shared token set. Labels
/// must be unique; when every label is an integer they must be ascending.
pub fn run_trajectory(checkpoints: Vec<(String, Run)>, config: &Config) -> Result<SweepReport> {
    check_config(config)?;
    if checkpoints.len() < 2 {
        return Err(Error::SweepTooShort);
    }
    let mut seen = HashSet::new();
    if let Some((dup, _)) = checkpoints.iter().find(|(l, _)| !seen.insert(l.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate checkpoint label {dup:?}")));
    }
    let numeric: Option<Vec<i64>> = checkpoints.iter().map(|(l, _)| l.parse().ok()).collect();
    if let Some(steps) = numeric {
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "numeric checkpoint labels must be strictly ascending".into(),
            ));
        }
    }
    let digest = checkpoints[0].1.tokens.digest();
    if let Some((label, _)) = checkpoints.iter().find(|(_, r)| r.tokens.digest() != digest) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {label:?} uses a different token set"
        )));
    }
    let entries = checkpoints
        .par_iter()
        .map(|(label, run)| last_layer_entry(label.clone(), run, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep_report(SweepKind::Trajectory, config, entries))
}

/// All-layer diagnostics per model, joined into one table. Models are ordered
/// by `meta.params` when every manifest provides a numeric value.
pub fn run_family(runs: Vec<Run>, config: &Config) -> Result<SweepReport> {
    check_config(config)?;
    if runs.len() < 2 {
        return Err(Error::SweepTooShort);
    }
    let mut runs = runs;
    let params: Option<Vec<f64>> = runs
        .iter()
        .map(|r| r.manifest.meta.get("params").and_then(|v| v.as_f64()))
        .collect();
    if let Some(p) = params {
        let mut order: Vec<usize> = (0..runs.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        let mut slots: Vec<Option<Run>> = runs.into_iter().map(Some).collect();
        runs = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
    }
    let mut entries = Vec::new();
    for run in &runs {
        let report = run_layerwise(run, config)?;
        for layer in report.layers {
            entries.push(SweepEntry {
                axis: run.manifest.model_id.clone(),
                model_id: run.manifest.model_id.clone(),
                k: run.manifest.k,
                token_digest: report.manifest.token_digest.clone(),
                params: run.manifest.meta.get("params").cloned(),
                pairs: report.pairs.clone(),
                layer,
            });
        }
    }
    Ok(sweep_report(SweepKind::Family, config, entries))
}
