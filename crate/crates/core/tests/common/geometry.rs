use isac_recon::channel::{path_geometry, synthesize_cir, PropagationPath};
use isac_recon::geometry::{dist, Point3, PointCloud};
use isac_recon::model::back_projection;
use isac_recon::prep::pca_align;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::planted::standard_sage;

/// Facade-like slab mirrored in y, so its principal axis is exactly +y.
pub fn reference_facade(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for _ in 0..300 {
        let p = [rng.gen_range(11.8..12.2), rng.gen_range(0.0..14.0), rng.gen_range(0.0..9.0)];
        pts.push(p);
        pts.push([p[0], -p[1], p[2]]);
    }
    PointCloud::new(pts)
}

/// Largest per-coordinate difference between the reference facade and the
/// aligned copy of it rotated by `yaw_deg`.
pub fn yaw_residual(yaw_deg: f64, seed: u64) -> f64 {
    let reference = reference_facade(seed);
    let (aligned, _, _) = pca_align(&reference.rotated_z(yaw_deg.to_radians()));
    reference
        .points
        .iter()
        .zip(&aligned.points)
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
        .fold(0.0, f64::max)
}

/// Scatter point inside the sensing sector.
pub fn scatter_point(rng: &mut impl Rng) -> Point3 {
    let r: f64 = rng.gen_range(6.0..45.0);
    let az: f64 = rng.gen_range(-35f64..35.0).to_radians();
    let el: f64 = rng.gen_range(-25f64..25.0).to_radians();
    [r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin()]
}

/// Worst distance from a planted scatter point to its back-projected
/// estimate, over `n` noiseless single-bounce responses from monostatic
/// geometry.
pub fn backprojection_error(n: usize, seed: u64) -> f64 {
    let (wf, geom, sage) = standard_sage();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = scatter_point(&mut rng);
        let (delay, azimuth, elevation) = path_geometry(&p, 0.0);
        let path = PropagationPath {
            delay,
            azimuth,
            elevation,
            amplitude: Complex64::from_polar(rng.gen_range(0.01..0.1), rng.gen_range(0.0..6.28)),
            origin: None,
        };
        let cir = synthesize_cir(&[path], &wf, &geom, f64::INFINITY, 0).unwrap();
        let mut snap = sage.extract(&cir).unwrap();
        snap.components.truncate(1);
        let pts = back_projection(&snap, 1, 0.0, 0).unwrap();
        worst = worst.max(dist(&pts[0], &p));
    }
    worst
}
