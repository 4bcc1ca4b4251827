use crate::channel::direction;
use crate::geometry::{Point3, PointCloud, C0};
use crate::prep::resample_fixed;
use crate::sage::ChannelSnapshot;
use crate::Error;

/// Place one point per estimated path at half the round-trip range along its
/// arrival direction, then resample to `m` points.
pub fn back_projection(snapshot: &ChannelSnapshot, m: usize, jitter: f64, seed: u64) -> Result<Vec<Point3>, Error> {
    let points: Vec<Point3> = snapshot
        .components
        .iter()
        .filter(|c| !c.is_sentinel())
        .map(|c| {
            let u = direction(c.azimuth, c.elevation);
            let r = 0.5 * C0 * c.delay;
            [r * u[0], r * u[1], r * u[2]]
        })
        .collect();
    if points.is_empty() {
        return Ok(vec![[0.0; 3]; m]);
    }
    Ok(resample_fixed(&PointCloud::new(points), m, jitter, seed)?.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sage::PathComponent;

    #[test]
    fn broadside_path_lands_on_the_x_axis() {
        let snap = ChannelSnapshot {
            components: vec![
                PathComponent { delay: 2.0 * 15.0 / C0, azimuth: 0.0, elevation: 0.0, power_db: -10.0 },
                PathComponent { delay: 0.0, azimuth: 0.0, elevation: 0.0, power_db: -50.0 },
            ],
        };
        let pts = back_projection(&snap, 4, 0.0, 1).unwrap();
        assert_eq!(pts.len(), 4);
        for p in pts {
            assert!((p[0] - 15.0).abs() < 1e-9 && p[1].abs() < 1e-9 && p[2].abs() < 1e-9);
        }
    }
}
