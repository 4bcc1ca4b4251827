//! Point-cloud preparation: voxel downsampling, heading correction, sensing
//! sector crop and fixed-size resampling.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotate_z, Point3, PointCloud};
use crate::{seed, Error};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub voxel: f64,
    pub x_max: f64,
    pub sector_half_angle_deg: f64,
    pub z_floor: f64,
    pub m: usize,
    /// Standard deviation of the jitter on duplicated points (m).
    pub jitter: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { voxel: 0.3, x_max: 50.0, sector_half_angle_deg: 45.0, z_floor: 0.2, m: 1000, jitter: 0.02 }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.voxel > 0.0) || !(self.x_max > 0.0) || self.m == 0 {
            return Err(Error::Config(format!(
                "prep needs voxel > 0, x_max > 0 and m >= 1 (got {}, {}, {})",
                self.voxel, self.x_max, self.m
            )));
        }
        Ok(())
    }
}

/// One centroid per occupied voxel, ordered by voxel index. Each output
/// point takes the most common label of its voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, Error> {
    if !(voxel > 0.0) {
        return Err(Error::Config(format!("voxel size {voxel} must be positive")));
    }
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = [(p[0] / voxel).floor() as i64, (p[1] / voxel).floor() as i64, (p[2] / voxel).floor() as i64];
        cells.entry(key).or_default().push(i);
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut labels = Vec::with_capacity(cells.len());
    for members in cells.values() {
        let mut c = [0.0; 3];
        for &i in members {
            for a in 0..3 {
                c[a] += cloud.points[i][a];
            }
        }
        let n = members.len() as f64;
        points.push([c[0] / n, c[1] / n, c[2] / n]);
        if let Some(l) = &cloud.labels {
            let mut counts = [0usize; 256];
            for &i in members {
                counts[l[i] as usize] += 1;
            }
            let (best, _) = counts.iter().enumerate().fold((0, 0), |b, (j, &c)| if c > b.1 { (j, c) } else { b });
            labels.push(best as u8);
        }
    }
    Ok(match cloud.labels {
        Some(_) => PointCloud::with_labels(points, labels),
        None => PointCloud::new(points),
    })
}

/// 3×3 rotation about z.
pub fn yaw_matrix(yaw: f64) -> [[f64; 3]; 3] {
    let (s, c) = yaw.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Yaw that turns the dominant horizontal axis onto +y with the centroid on
/// the +x side. `None` when the horizontal covariance has no dominant axis.
pub fn pca_yaw(points: &[Point3]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let half_gap = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let top = (sxx + syy) / 2.0 + half_gap;
    if !(top > 1e-12) || 2.0 * half_gap <= 1e-9 * top {
        return None;
    }
    let major = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut yaw = std::f64::consts::FRAC_PI_2 - major;
    let (s, c) = yaw.sin_cos();
    if c * mx - s * my < 0.0 {
        yaw += std::f64::consts::PI;
    }
    // Wrap into (-π, π].
    let two_pi = 2.0 * std::f64::consts::PI;
    yaw = yaw.rem_euclid(two_pi);
    if yaw > std::f64::consts::PI {
        yaw -= two_pi;
    }
    Some(yaw)
}

/// Rotate about z so the dominant horizontal direction lies along +y and the
/// centroid has positive x. Returns the cloud, the applied rotation and its
/// yaw angle.
pub fn pca_align(cloud: &PointCloud) -> (PointCloud, [[f64; 3]; 3], f64) {
    match pca_yaw(&cloud.points) {
        Some(yaw) => (cloud.rotated_z(yaw), yaw_matrix(yaw), yaw),
        None => {
            log::warn!("horizontal covariance has no dominant axis; heading left unchanged");
            (cloud.clone(), yaw_matrix(0.0), 0.0)
        }
    }
}

/// Keep points with `x ∈ (0, x_max]`, `z ≥ z_floor` and azimuth inside the
/// sector.
pub fn crop_fov(cloud: &PointCloud, cfg: &PrepConfig) -> PointCloud {
    let sector = cfg.sector_half_angle_deg.to_radians();
    let mut out = cloud.clone();
    out.retain(|p| p[0] > 0.0 && p[0] <= cfg.x_max && p[2] >= cfg.z_floor && p[1].atan2(p[0]).abs() <= sector);
    if out.is_empty() {
        log::warn!("crop removed every point");
    }
    out
}

/// Exactly `m` points: a random subset without replacement when there are
/// more, or every point plus jittered duplicates when there are fewer.
pub fn resample_fixed(cloud: &PointCloud, m: usize, jitter: f64, seed: u64) -> Result<PointCloud, Error> {
    if cloud.is_empty() {
        return Err(Error::Contract("cannot resample an empty cloud".into()));
    }
    let mut rng = seed::rng(seed, "resample", m as u64);
    let n = cloud.len();
    if n >= m {
        let idx = sample(&mut rng, n, m).into_vec();
        return Ok(cloud.select(&idx));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let extra: Vec<usize> = (0..m - n).map(|_| rng.gen_range(0..n)).collect();
    let mut out = cloud.select(&idx);
    let noise = Normal::new(0.0, jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for &i in &extra {
        let p = cloud.points[i];
        out.points.push([p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng), p[2] + noise.sample(&mut rng)]);
        if let (Some(dst), Some(src)) = (&mut out.labels, &cloud.labels) {
            dst.push(src[i]);
        }
    }
    Ok(out)
}

/// Output of [`prepare`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cloud: PointCloud,
    /// Heading correction applied, in radians.
    pub yaw: f64,
}

/// Downsample, align, crop and resample. `None` when nothing survives the
/// crop.
pub fn prepare(cloud: &PointCloud, cfg: &PrepConfig, seed: u64) -> Result<Option<Prepared>, Error> {
    cfg.validate()?;
    let down = voxel_downsample(cloud, cfg.voxel)?;
    let (aligned, _, yaw) = pca_align(&down);
    let cropped = crop_fov(&aligned, cfg);
    if cropped.is_empty() {
        return Ok(None);
    }
    Ok(Some(Prepared { cloud: resample_fixed(&cropped, cfg.m, cfg.jitter, seed)?, yaw }))
}

/// Rotate a single point by the heading correction.
pub fn apply_yaw(p: &Point3, yaw: f64) -> Point3 {
    rotate_z(p, yaw)
}
