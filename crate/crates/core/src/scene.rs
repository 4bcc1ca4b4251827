//! Procedural street scenes: building facades and tree clusters with their
//! ground-truth surface samples.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud};
use crate::{seed, Error};

/// Cluster id carried by facade points.
pub const FACADE: u8 = 0;
/// Cluster id carried by tree points.
pub const TREE: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SceneLabel {
    /// Facades only or trees only.
    Single = 1,
    /// Facades and trees together.
    Mixed = 2,
}

impl SceneLabel {
    pub fn from_u8(v: u8) -> Result<Self, Error> {
        match v {
            1 => Ok(Self::Single),
            2 => Ok(Self::Mixed),
            _ => Err(Error::Format(format!("scene label {v} is not 1 or 2"))),
        }
    }

    /// Class index used by the classifier: 0 for Single, 1 for Mixed.
    pub fn class(self) -> usize {
        self as usize - 1
    }

    pub fn from_class(c: usize) -> Self {
        if c == 0 {
            Self::Single
        } else {
            Self::Mixed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Facade {
    /// Bottom centre of the wall (m).
    pub origin: Point3,
    pub width: f64,
    pub height: f64,
    /// Rotation of the wall about z; 0 means the wall runs along y.
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeCluster {
    pub center: Point3,
    pub radius: f64,
    pub vertical_extent: f64,
}

impl TreeCluster {
    /// Per-axis standard deviation of the canopy blob.
    pub fn sigma(&self) -> Point3 {
        [self.radius / 2.0, self.radius, self.vertical_extent / 4.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub category: SceneLabel,
    pub facades: Vec<Facade>,
    pub tree_clusters: Vec<TreeCluster>,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub facade_x: [f64; 2],
    pub facade_y: [f64; 2],
    pub facade_width: [f64; 2],
    pub facade_height: [f64; 2],
    /// Maximum absolute facade yaw in degrees.
    pub facade_yaw_deg: f64,
    pub tree_x: [f64; 2],
    pub tree_y: [f64; 2],
    pub tree_radius: [f64; 2],
    pub tree_vertical: [f64; 2],
    /// Minimum gap between a tree centre and the facade in Mixed scenes (m).
    pub tree_facade_margin: f64,
    /// Fraction of Single scenes that hold a facade rather than trees.
    pub single_facade_fraction: f64,
    /// Surface jitter of facade samples (m).
    pub facade_jitter: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            facade_x: [8.0, 30.0],
            facade_y: [-5.0, 5.0],
            facade_width: [10.0, 40.0],
            facade_height: [6.0, 20.0],
            facade_yaw_deg: 5.0,
            tree_x: [4.0, 12.0],
            tree_y: [-6.0, 6.0],
            tree_radius: [1.5, 4.0],
            tree_vertical: [3.0, 8.0],
            tree_facade_margin: 2.0,
            single_facade_fraction: 0.5,
            facade_jitter: 0.05,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), Error> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} is empty")));
    }
    Ok(())
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<(), Error> {
        for (n, r) in [
            ("facade_x", self.facade_x),
            ("facade_y", self.facade_y),
            ("facade_width", self.facade_width),
            ("facade_height", self.facade_height),
            ("tree_x", self.tree_x),
            ("tree_y", self.tree_y),
            ("tree_radius", self.tree_radius),
            ("tree_vertical", self.tree_vertical),
        ] {
            check_range(n, r)?;
        }
        if self.facade_x[0] <= 0.0 || self.tree_x[0] <= 0.0 {
            return Err(Error::Config("scatterers must lie at x > 0".into()));
        }
        if self.facade_width[0] <= 0.0 || self.facade_height[0] <= 0.0 || self.tree_radius[0] <= 0.0 || self.tree_vertical[0] <= 0.0 {
            return Err(Error::Config("scatterer sizes must be positive".into()));
        }
        if self.facade_x[0] - self.tree_facade_margin < self.tree_x[0] {
            return Err(Error::Config(format!(
                "nearest facade at x={} leaves no room for a tree at x>={} with margin {}",
                self.facade_x[0], self.tree_x[0], self.tree_facade_margin
            )));
        }
        if !(0.0..=1.0).contains(&self.single_facade_fraction) {
            return Err(Error::Config("single_facade_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn sample_facade(rng: &mut impl Rng, cfg: &SceneGenConfig) -> Facade {
    let x = uniform(rng, cfg.facade_x);
    let y = uniform(rng, cfg.facade_y);
    let yaw = uniform(rng, [-cfg.facade_yaw_deg, cfg.facade_yaw_deg]).to_radians();
    Facade {
        origin: [x, y, 0.0],
        width: uniform(rng, cfg.facade_width),
        height: uniform(rng, cfg.facade_height),
        yaw,
    }
}

fn sample_tree(rng: &mut impl Rng, cfg: &SceneGenConfig, x_max: f64) -> TreeCluster {
    let x = uniform(rng, [cfg.tree_x[0], cfg.tree_x[1].min(x_max)]);
    let y = uniform(rng, cfg.tree_y);
    let radius = uniform(rng, cfg.tree_radius);
    let vertical = uniform(rng, cfg.tree_vertical);
    TreeCluster { center: [x, y, vertical / 2.0 + 1.0], radius, vertical_extent: vertical }
}

/// Deterministic scene for `seed` and `category`.
pub fn generate_scene(seed: u64, category: SceneLabel, cfg: &SceneGenConfig) -> Result<SceneSpec, Error> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, "scene", 0);
    let mut spec = SceneSpec { category, facades: Vec::new(), tree_clusters: Vec::new(), rng_seed: seed };
    match category {
        SceneLabel::Single => {
            if rng.gen_bool(cfg.single_facade_fraction) {
                spec.facades.push(sample_facade(&mut rng, cfg));
            } else {
                spec.tree_clusters.push(sample_tree(&mut rng, cfg, f64::INFINITY));
            }
        }
        SceneLabel::Mixed => {
            let f = sample_facade(&mut rng, cfg);
            let limit = f.origin[0] - cfg.tree_facade_margin;
            spec.tree_clusters.push(sample_tree(&mut rng, cfg, limit));
            spec.facades.push(f);
        }
    }
    Ok(spec)
}

/// Approximate surface area of an ellipsoid with semi-axes `a, b, c`.
fn ellipsoid_area(a: f64, b: f64, c: f64) -> f64 {
    const P: f64 = 1.6075;
    let t = ((a * b).powf(P) + (a * c).powf(P) + (b * c).powf(P)) / 3.0;
    4.0 * std::f64::consts::PI * t.powf(1.0 / P)
}

enum Surface<'a> {
    Facade(&'a Facade),
    Tree(&'a TreeCluster),
}

impl Surface<'_> {
    fn area(&self) -> f64 {
        match self {
            Surface::Facade(f) => f.width * f.height,
            Surface::Tree(t) => {
                let s = t.sigma();
                ellipsoid_area(2.0 * s[0], 2.0 * s[1], 2.0 * s[2])
            }
        }
    }

    fn label(&self) -> u8 {
        match self {
            Surface::Facade(_) => FACADE,
            Surface::Tree(_) => TREE,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, jitter: f64) -> Point3 {
        match self {
            Surface::Facade(f) => {
                let s = rng.gen_range(-0.5..0.5) * f.width;
                let z = rng.gen_range(0.0..1.0) * f.height;
                let n = if jitter > 0.0 { Normal::new(0.0, jitter).unwrap().sample(rng) } else { 0.0 };
                let (sy, cy) = f.yaw.sin_cos();
                // Wall direction (-sin, cos), normal (cos, sin).
                [f.origin[0] - s * sy + n * cy, f.origin[1] + s * cy + n * sy, f.origin[2] + z]
            }
            Surface::Tree(t) => {
                let sg = t.sigma();
                let unit = Normal::new(0.0, 1.0).unwrap();
                loop {
                    let u: [f64; 3] = [unit.sample(rng), unit.sample(rng), unit.sample(rng)];
                    if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 4.0 {
                        return [
                            t.center[0] + u[0] * sg[0],
                            t.center[1] + u[1] * sg[1],
                            t.center[2] + u[2] * sg[2],
                        ];
                    }
                }
            }
        }
    }
}

/// Sample exactly `m` labelled surface points, split across clusters in
/// proportion to surface area.
pub fn rasterize(spec: &SceneSpec, m: usize, facade_jitter: f64) -> Result<PointCloud, Error> {
    let surfaces: Vec<Surface> = spec
        .facades
        .iter()
        .map(Surface::Facade)
        .chain(spec.tree_clusters.iter().map(Surface::Tree))
        .collect();
    if surfaces.is_empty() {
        return Err(Error::Contract("scene has no scatterers".into()));
    }
    if m == 0 {
        return Err(Error::Contract("rasterize needs m >= 1".into()));
    }
    let mut rng = seed::rng(spec.rng_seed, "raster", m as u64);
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    let mut counts: Vec<usize> = areas.iter().map(|a| ((a / total) * m as f64).round() as usize).collect();
    let assigned: usize = counts[..counts.len() - 1].iter().sum::<usize>().min(m);
    *counts.last_mut().unwrap() = m - assigned;
    let mut points = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for (s, &n) in surfaces.iter().zip(&counts) {
        for _ in 0..n {
            points.push(s.sample(&mut rng, facade_jitter));
            labels.push(s.label());
        }
    }
    // Shuffle so point order carries no cluster information.
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    Ok(PointCloud::with_labels(points, labels).select(&order))
}

/// One centroid per labelled cluster present in `cloud`, sorted by
/// ascending x.
pub fn cluster_centers(cloud: &PointCloud) -> Vec<Point3> {
    let mut centers: Vec<Point3> = [FACADE, TREE]
        .iter()
        .map(|&id| cloud.cluster(id))
        .filter(|pts| !pts.is_empty())
        .map(|pts| crate::geometry::centroid(&pts))
        .collect();
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
    centers
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Share of the training pool held out as the test split.
    pub test_fraction: f64,
    /// Size of the separately seeded validation pool; defaults to n/10.
    pub validation_size: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.1, validation_size: None }
    }
}

/// What to generate for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub id: u64,
    pub label: SceneLabel,
    pub split: Split,
    pub seed: u64,
}

/// Label for sample `id`: Single and Mixed alternate.
pub fn label_for(id: u64) -> SceneLabel {
    if id % 2 == 0 {
        SceneLabel::Single
    } else {
        SceneLabel::Mixed
    }
}

/// Plan `n` training-pool samples plus a validation pool drawn from a
/// separate seed stream.
pub fn plan_dataset(n: usize, base_seed: u64, split: &SplitConfig) -> Result<Vec<SamplePlan>, Error> {
    if n < 10 {
        return Err(Error::Config(format!("dataset needs at least 10 samples, got {n}")));
    }
    if !(split.test_fraction > 0.0 && split.test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {} must lie in (0, 1)", split.test_fraction)));
    }
    let n_test = ((n as f64) * split.test_fraction).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng(base_seed, "split", 0));
    let mut is_test = vec![false; n];
    for &i in &ids[..n_test] {
        is_test[i] = true;
    }
    let mut plans: Vec<SamplePlan> = (0..n)
        .map(|i| SamplePlan {
            id: i as u64,
            label: label_for(i as u64),
            split: if is_test[i] { Split::Test } else { Split::Train },
            seed: seed::derive(base_seed, "pool", i as u64),
        })
        .collect();
    let n_val = split.validation_size.unwrap_or(n / 10);
    plans.extend((0..n_val).map(|j| {
        let id = (n + j) as u64;
        SamplePlan { id, label: label_for(id), split: Split::Validation, seed: seed::derive(base_seed, "validation", j as u64) }
    }));
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn facade_plane_is_respected() {
        let spec = SceneSpec {
            category: SceneLabel::Single,
            facades: vec![Facade { origin: [10.0, 0.0, 0.0], width: 20.0, height: 8.0, yaw: 0.0 }],
            tree_clusters: vec![],
            rng_seed: 1,
        };
        let pc = rasterize(&spec, 1000, 0.05).unwrap();
        assert_eq!(pc.len(), 1000);
        assert!(pc.points.iter().all(|p| (p[0] - 10.0).abs() < 0.05 * 6.0));
    }

    #[test]
    fn empty_scene_is_a_contract_error() {
        let spec = SceneSpec { category: SceneLabel::Single, facades: vec![], tree_clusters: vec![], rng_seed: 0 };
        assert!(matches!(rasterize(&spec, 10, 0.05), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_ranges_are_config_errors() {
        let cfg = SceneGenConfig { facade_width: [5.0, 1.0], ..Default::default() };
        assert!(matches!(generate_scene(1, SceneLabel::Single, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn splits_have_requested_sizes() {
        let plans = plan_dataset(2000, 9, &SplitConfig { validation_size: Some(300), ..Default::default() }).unwrap();
        let count = |s| plans.iter().filter(|p| p.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Test), count(Split::Validation)), (1800, 200, 300));
        assert!(matches!(plan_dataset(9, 9, &SplitConfig::default()), Err(Error::Config(_))));
    }
}
