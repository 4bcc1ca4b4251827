use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{reconstruct, Method};
use super::Dataset;
use crate::config::RunConfig;
use crate::geometry::Point3;
use crate::io::{write_json, write_xyz};
use crate::kdtree::KdTree;
use crate::metrics::chamfer;
use crate::Error;

/// Fraction of `pred` farther than `radius` from every point of `gt`.
pub fn ghost_score(pred: &[Point3], gt: &[Point3], radius: f64) -> Result<f64, Error> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Contract("ghost score needs non-empty clouds".into()));
    }
    let tree = KdTree::new(gt);
    let r2 = radius * radius;
    let far = pred.iter().filter(|p| tree.nearest(p).expect("non-empty").1 > r2).count();
    Ok(far as f64 / pred.len() as f64)
}

/// Translate frame `t` by `(0, speed·interval·t, 0)` and concatenate.
pub fn accumulate(frames: &[Vec<Point3>], speed: f64, interval: f64) -> Vec<Point3> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(t, f)| {
            let dy = speed * interval * t as f64;
            f.iter().map(move |p| [p[0], p[1] + dy, p[2]])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub sample_id: u64,
    pub offset_y: f64,
    pub chamfer: Vec<(Method, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub config_hash: String,
    pub speed: f64,
    pub interval: f64,
    pub ghost_radius: f64,
    pub frames: Vec<FrameReport>,
    pub accumulated_points: Vec<(Method, usize)>,
    pub ghost_score: Vec<(Method, f64)>,
}

impl SequenceReport {
    pub fn ghost(&self, m: Method) -> Option<f64> {
        self.ghost_score.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

/// Reconstruct the first `sequence.frames` validation samples in id order,
/// accumulate them along y and score ghost points.
pub fn cmd_sequence(cfg: &RunConfig, data: &Path, models: &Path, out: &Path, methods: &[Method]) -> Result<SequenceReport, Error> {
    cfg.validate()?;
    let ds = Dataset::load(data, cfg)?;
    let mut val = ds.validation;
    val.sort_by_key(|s| s.id);
    val.truncate(cfg.sequence.frames);
    if val.is_empty() {
        return Err(Error::Config("sequence needs at least one validation sample".into()));
    }
    std::fs::create_dir_all(out)?;
    let sq = &cfg.sequence;
    let gt_frames: Vec<Vec<Point3>> = val.iter().map(|s| s.cloud.points.clone()).collect();
    let gt = accumulate(&gt_frames, sq.speed, sq.interval);
    write_xyz(&out.join("sequence_gt.xyz"), &gt)?;
    let mut frames: Vec<FrameReport> = val
        .iter()
        .enumerate()
        .map(|(t, s)| FrameReport { sample_id: s.id, offset_y: sq.speed * sq.interval * t as f64, chamfer: Vec::new() })
        .collect();
    let mut sizes = Vec::new();
    let mut ghosts = Vec::new();
    for &m in methods {
        let recon: Vec<Vec<Point3>> = reconstruct(cfg, &val, models, m)?.into_iter().map(|r| r.cloud).collect();
        for ((f, r), g) in frames.iter_mut().zip(&recon).zip(&gt_frames) {
            f.chamfer.push((m, chamfer(r, g)?));
        }
        let acc = accumulate(&recon, sq.speed, sq.interval);
        write_xyz(&out.join(format!("sequence_{}.xyz", m.as_str())), &acc)?;
        sizes.push((m, acc.len()));
        let g = ghost_score(&acc, &gt, sq.ghost_radius)?;
        log::info!("{} ghost score {g:.4}", m.as_str());
        ghosts.push((m, g));
    }
    let report = SequenceReport {
        config_hash: cfg.hash(),
        speed: sq.speed,
        interval: sq.interval,
        ghost_radius: sq.ghost_radius,
        frames,
        accumulated_points: sizes,
        ghost_score: ghosts,
    };
    write_json(&out.join("sequence.json"), &report)?;
    Ok(report)
}
