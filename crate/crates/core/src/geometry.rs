//! Point and point-cloud primitives shared by every stage.

use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];

/// Speed of light in m/s.
pub const C0: f64 = 299_792_458.0;

#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Arithmetic mean of `points`, summed in index order.
pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        c[0] += p[0];
        c[1] += p[1];
        c[2] += p[2];
    }
    let n = points.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Rotate about +z by `yaw` radians.
pub fn rotate_z(p: &Point3, yaw: f64) -> Point3 {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// An unordered set of points with optional per-point cluster ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Cluster id per point, kept in sync with `points` when present.
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, labels: None }
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<u8>) -> Self {
        assert_eq!(points.len(), labels.len(), "one label per point");
        Self { points, labels: Some(labels) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    /// Keep the points for which `keep` is true, carrying labels along.
    pub fn retain(&mut self, mut keep: impl FnMut(&Point3) -> bool) {
        let mask: Vec<bool> = self.points.iter().map(&mut keep).collect();
        let mut it = mask.iter();
        self.points.retain(|_| *it.next().unwrap());
        if let Some(labels) = &mut self.labels {
            let mut it = mask.iter();
            labels.retain(|_| *it.next().unwrap());
        }
    }

    /// Points selected by index (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn rotated_z(&self, yaw: f64) -> Self {
        Self { points: self.points.iter().map(|p| rotate_z(p, yaw)).collect(), labels: self.labels.clone() }
    }

    /// Points carrying cluster id `id`.
    pub fn cluster(&self, id: u8) -> Vec<Point3> {
        match &self.labels {
            Some(l) => self.points.iter().zip(l).filter(|(_, &c)| c == id).map(|(p, _)| *p).collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retain_keeps_labels_aligned() {
        let mut pc = PointCloud::with_labels(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![0, 1, 2]);
        pc.retain(|p| p[0] > 0.0);
        assert_eq!(pc.points, vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(pc.labels, Some(vec![0, 2]));
    }

    #[test]
    fn rotate_quarter_turn() {
        let p = rotate_z(&[1.0, 0.0, 3.0], std::f64::consts::FRAC_PI_2);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2] == 3.0);
    }
}
