use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::stage_base;
use super::Dataset;
use crate::config::RunConfig;
use crate::io::write_json;
use crate::model::{load_mscr, prepare_records, CrNet, ModelConfig};
use crate::scene::SceneLabel;
use crate::Error;

/// Multiply-accumulates of one encoder pass.
fn encoder_macs(c: &ModelConfig) -> u64 {
    let (n, h, t, ff, f) = (c.n_paths as u64, c.stem_hidden as u64, c.token_dim as u64, c.ff_dim as u64, c.feature_dim as u64);
    let stems = n * (h + h * t) + n * (2 * h + h * t) + n * 2 * t * t;
    let layer = 4 * n * t * t + 2 * n * n * t + n * 2 * t * ff;
    stems + c.layers as u64 * layer + t * f
}

/// Matrix-product FLOPs (2 per multiply-accumulate) of one full cascade
/// inference for a given routed label.
pub fn flops_per_inference(c: &ModelConfig, label: SceneLabel) -> u64 {
    let (f, sh, hp, n) = (c.feature_dim as u64, c.scene_hidden as u64, c.point_hidden as u64, c.n_points as u64);
    let scene = f * sh + sh * 2;
    let center = f * 6;
    let mut point = (f + 6) * hp + hp * hp + hp * 3 * n;
    if label == SceneLabel::Mixed {
        point += c.mixed_layers as u64 * hp * hp;
    }
    2 * (3 * encoder_macs(c) + scene + center + point)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub params_total: usize,
    pub params_encoders: usize,
    pub params_decoders: usize,
    pub params_crnet: usize,
    pub flops_single: u64,
    pub flops_mixed: u64,
    pub runs: usize,
    pub latency_median_ms: f64,
    pub latency_p95_ms: f64,
    pub reference_params: f64,
    pub reference_gflops: f64,
    pub reference_latency_ms: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Parameter counts, analytic FLOPs and single-sample latency of the
/// trained cascade.
pub fn cmd_bench(cfg: &RunConfig, data: &Path, models: &Path, out: &Path, runs: usize) -> Result<BenchReport, Error> {
    cfg.validate()?;
    let (net, store, meta) = load_mscr(&stage_base(models, 3), &cfg.model, &cfg.hash())?;
    let ds = Dataset::load(data, cfg)?;
    let recs = prepare_records(&ds.validation, &meta.norm, cfg.model.n_paths)?;
    if recs.is_empty() {
        return Err(Error::Config("bench needs validation samples".into()));
    }
    let runs = runs.max(1);
    let mut times = Vec::with_capacity(runs);
    for i in 0..runs {
        let input = &recs[i % recs.len()].input;
        let t0 = Instant::now();
        let p = net.predict(&store, &meta.norm, input)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(p);
    }
    times.sort_by(f64::total_cmp);
    let (crnet, _) = CrNet::new(&cfg.model, 0)?;
    let params_encoders = net.encoders.iter().map(|e| e.num_params()).sum();
    let report = BenchReport {
        config_hash: cfg.hash(),
        params_total: store.numel(),
        params_encoders,
        params_decoders: net.decoder_params(),
        params_crnet: crnet.num_params(),
        flops_single: flops_per_inference(&cfg.model, SceneLabel::Single),
        flops_mixed: flops_per_inference(&cfg.model, SceneLabel::Mixed),
        runs,
        latency_median_ms: percentile(&times, 50.0),
        latency_p95_ms: percentile(&times, 95.0),
        reference_params: 15.53e6,
        reference_gflops: 0.53,
        reference_latency_ms: 3.0,
    };
    if report.params_total != net.num_params() {
        return Err(Error::Contract(format!(
            "stored parameter count {} differs from the layer sum {}",
            report.params_total,
            net.num_params()
        )));
    }
    std::fs::create_dir_all(out)?;
    write_json(&out.join("bench.json"), &report)?;
    Ok(report)
}
