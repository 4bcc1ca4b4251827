use std::path::Path;

use rayon::prelude::*;

use crate::channel::{paths_from_scene, synthesize_cir};
use crate::config::RunConfig;
use crate::io::{sample_file_name, save_sample, GenerationStats, Manifest, ManifestEntry, Sample, MANIFEST_SCHEMA_VERSION};
use crate::prep::prepare;
use crate::sage::{filter_outliers, pad_snapshot, ChannelSnapshot, Sage};
use crate::scene::{cluster_centers, generate_scene, plan_dataset, rasterize, SceneLabel, SamplePlan};
use crate::seed;
use crate::Error;

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}

/// Rotate every non-padding path's azimuth by `yaw`.
pub fn rotate_snapshot(snapshot: &ChannelSnapshot, yaw: f64) -> ChannelSnapshot {
    let mut out = snapshot.clone();
    for c in out.components.iter_mut().filter(|c| !c.is_sentinel()) {
        c.azimuth = wrap_angle(c.azimuth + yaw);
    }
    out
}

/// Why a generation attempt produced no sample.
#[derive(Debug)]
pub enum Rejection {
    NoPaths,
    EmptyCrop,
    MissingCluster,
}

/// One attempt of the full per-sample pipeline: scene, surface samples,
/// paths, noisy response, estimation, filtering, padding and preparation.
pub fn build_sample(cfg: &RunConfig, sage: &Sage, id: u64, label: SceneLabel, seed_value: u64) -> Result<Result<Sample, Rejection>, Error> {
    let spec = generate_scene(seed_value, label, &cfg.scene)?;
    let raw = rasterize(&spec, cfg.raw_points, cfg.scene.facade_jitter)?;
    let paths = paths_from_scene(&spec, &raw, &cfg.channel, seed::derive(seed_value, "paths", 0))?;
    let geom = cfg.channel.geometry();
    let cir = synthesize_cir(&paths, &cfg.channel.waveform, &geom, cfg.channel.snr_db, seed::derive(seed_value, "noise", 0))?;
    let snap = filter_outliers(&sage.extract(&cir)?, &cfg.sage);
    if snap.is_empty() {
        return Ok(Err(Rejection::NoPaths));
    }
    let snap = pad_snapshot(&snap, cfg.channel.n_paths, cfg.sage.pad_floor_db);
    let Some(prepared) = prepare(&raw, &cfg.prep, seed::derive(seed_value, "prep", 0))? else {
        return Ok(Err(Rejection::EmptyCrop));
    };
    let centers = cluster_centers(&prepared.cloud);
    let expected = if label == SceneLabel::Mixed { 2 } else { 1 };
    if centers.len() != expected {
        return Ok(Err(Rejection::MissingCluster));
    }
    Ok(Ok(Sample {
        id,
        label,
        centers,
        cloud: crate::geometry::PointCloud::new(prepared.cloud.points),
        snapshot: rotate_snapshot(&snap, prepared.yaw),
    }))
}

/// Attempt a plan, re-seeding on rejection. Returns the sample and the seed
/// that produced it.
pub fn build_with_retries(cfg: &RunConfig, sage: &Sage, plan: &SamplePlan) -> Result<Option<(Sample, u64)>, Error> {
    for attempt in 0..=cfg.max_retries {
        let s = if attempt == 0 { plan.seed } else { seed::derive(plan.seed, "retry", attempt as u64) };
        match build_sample(cfg, sage, plan.id, plan.label, s)? {
            Ok(sample) => return Ok(Some((sample, s))),
            Err(why) => log::debug!("sample {} attempt {attempt} rejected: {why:?}", plan.id),
        }
    }
    Ok(None)
}

/// Generate the dataset into `out` and write its manifest.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest, Error> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let sage = Sage::new(&cfg.channel.waveform, &cfg.channel.geometry(), &cfg.sage)?;
    let plans = plan_dataset(cfg.n_samples, cfg.seed, &cfg.split)?;
    let built: Vec<Result<Option<(Sample, u64)>, Error>> = plans.par_iter().map(|p| build_with_retries(cfg, &sage, p)).collect();
    let mut entries = Vec::new();
    let mut stats = GenerationStats { requested: plans.len(), ..Default::default() };
    let mut path_total = 0usize;
    for (plan, result) in plans.iter().zip(built) {
        let outcome = result.and_then(|o| match o {
            Some((sample, s)) => {
                let file = sample_file_name(plan.id);
                save_sample(&out.join(&file), &sample)?;
                Ok(Some((sample, s, file)))
            }
            None => Ok(None),
        });
        match outcome {
            Ok(Some((sample, s, file))) => {
                path_total += sample.snapshot.components.iter().filter(|c| !c.is_sentinel()).count();
                match sample.label {
                    SceneLabel::Single => stats.single += 1,
                    SceneLabel::Mixed => stats.mixed += 1,
                }
                entries.push(ManifestEntry { id: plan.id, file, label: plan.label as u8, split: plan.split, seed: s });
            }
            Ok(None) => {
                log::warn!("sample {} skipped after {} attempts", plan.id, cfg.max_retries + 1);
                stats.skipped += 1;
            }
            Err(e) => {
                log::warn!("sample {} skipped: {e}", plan.id);
                stats.skipped += 1;
            }
        }
    }
    stats.written = entries.len();
    stats.mean_paths = path_total as f64 / entries.len().max(1) as f64;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        samples: entries,
        stats,
    };
    manifest.save(out)?;
    log::info!(
        "generated {} samples ({} single, {} mixed, {} skipped, {:.1} paths each)",
        manifest.stats.written,
        manifest.stats.single,
        manifest.stats.mixed,
        manifest.stats.skipped,
        manifest.stats.mean_paths
    );
    if manifest.stats.skipped * 100 > manifest.stats.requested {
        return Err(Error::Contract(format!(
            "{} of {} samples were skipped (more than 1%)",
            manifest.stats.skipped, manifest.stats.requested
        )));
    }
    Ok(manifest)
}
