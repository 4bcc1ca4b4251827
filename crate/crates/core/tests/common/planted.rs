use std::f64::consts::PI;

use isac_recon::channel::{synthesize_cir, ArrayGeometry, PropagationPath, WaveformConfig};
use isac_recon::sage::{PathEstimate, Sage, SageConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn planted_path(rng: &mut impl Rng, delay: f64) -> PropagationPath {
    PropagationPath {
        delay,
        azimuth: rng.gen_range(-40f64..40.0).to_radians(),
        elevation: rng.gen_range(-40f64..40.0).to_radians(),
        amplitude: Complex64::from_polar(rng.gen_range(0.01..0.1), rng.gen_range(0.0..2.0 * PI)),
        origin: None,
    }
}

pub fn standard_sage() -> (WaveformConfig, ArrayGeometry, Sage) {
    let wf = WaveformConfig::default();
    let geom = ArrayGeometry::standard(&wf);
    let sage = Sage::new(&wf, &geom, &SageConfig::default()).unwrap();
    (wf, geom, sage)
}

/// Worst delay error (s) and worst angle error (degrees) over `n` noiseless
/// single-path responses.
pub fn single_path_errors(n: usize, seed: u64) -> (f64, f64) {
    let (wf, geom, sage) = standard_sage();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut delay_err, mut angle_err) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let d = rng.gen_range(30e-9..380e-9);
        let p = planted_path(&mut rng, d);
        let cir = synthesize_cir(&[p.clone()], &wf, &geom, f64::INFINITY, 0).unwrap();
        let est = sage.estimate(&cir).unwrap();
        let Some(e) = est.first() else {
            return (f64::INFINITY, f64::INFINITY);
        };
        delay_err = delay_err.max((e.delay - p.delay).abs());
        angle_err = angle_err
            .max((e.azimuth - p.azimuth).abs().to_degrees())
            .max((e.elevation - p.elevation).abs().to_degrees());
    }
    (delay_err, angle_err)
}

/// Largest set of true paths matched one-to-one within 1 ns and 3° by the
/// first eight estimates.
pub fn matched(truth: &[PropagationPath], est: &[PathEstimate]) -> usize {
    fn rec(i: usize, truth: &[PropagationPath], est: &[PathEstimate], used: &mut Vec<bool>) -> usize {
        if i == truth.len() {
            return 0;
        }
        let mut best = rec(i + 1, truth, est, used);
        for j in 0..est.len() {
            if used[j] {
                continue;
            }
            let (t, e) = (&truth[i], &est[j]);
            let ok = (t.delay - e.delay).abs() < 1e-9
                && (t.azimuth - e.azimuth).abs().to_degrees() < 3.0
                && (t.elevation - e.elevation).abs().to_degrees() < 3.0;
            if ok {
                used[j] = true;
                best = best.max(1 + rec(i + 1, truth, est, used));
                used[j] = false;
            }
        }
        best
    }
    let k = est.len().min(8);
    rec(0, truth, &est[..k], &mut vec![false; k])
}

/// `(matched, planted)` over `n` five-path responses at 20 dB SNR with at
/// least three delay bins between paths.
pub fn five_path_matches(n: usize, seed: u64) -> (usize, usize) {
    let (wf, geom, sage) = standard_sage();
    let bin = 1.0 / wf.bw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut total) = (0, 0);
    for case in 0..n {
        let mut delays: Vec<f64> = Vec::new();
        while delays.len() < 5 {
            let d = rng.gen_range(30e-9..380e-9);
            if delays.iter().all(|x| (x - d).abs() >= 3.0 * bin) {
                delays.push(d);
            }
        }
        let paths: Vec<PropagationPath> = delays.iter().map(|&d| planted_path(&mut rng, d)).collect();
        let cir = synthesize_cir(&paths, &wf, &geom, 20.0, case as u64).unwrap();
        let est = sage.estimate(&cir).unwrap();
        total += paths.len();
        hits += matched(&paths, &est);
    }
    (hits, total)
}
